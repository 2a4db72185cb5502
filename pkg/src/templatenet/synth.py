"""Synthetic EEG-like epochs with planted template waveforms.

Each epoch is Gaussian background noise. Epochs of a class that has
templates assigned also carry a few scaled, non-overlapping copies of
those templates. Where every copy sits is recorded, so the copies serve
as ground truth for filter recovery and saliency checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, PlacementOverflow
from .signal import EPOCH_LEN, TARGET_HZ, EpochSet, Occurrence, SleepStage

# Sleep-EDF 2013 class totals (W, N1, N2, N3, REM)
EDF2013_COUNTS = {
    SleepStage.W: 8285,
    SleepStage.N1: 2804,
    SleepStage.N2: 17799,
    SleepStage.N3: 5703,
    SleepStage.REM: 7717,
}

DEFAULT_AMPLITUDE = (0.5, 5.0)


@dataclass(frozen=True)
class TemplateSpec:
    name: str
    waveform: np.ndarray
    classes: frozenset
    occurrences_per_epoch: tuple[int, int] = (1, 2)
    amplitude_range: tuple[float, float] = DEFAULT_AMPLITUDE

    def __post_init__(self):
        w = np.asarray(self.waveform, dtype=np.float64)
        object.__setattr__(self, "waveform", w)
        object.__setattr__(self, "classes", frozenset(SleepStage(c) for c in self.classes))
        if abs(np.linalg.norm(w) - 1.0) > 1e-9:
            raise InvalidConfig(f"template {self.name!r} is not unit norm")
        if not 0 < w.size < EPOCH_LEN:
            raise InvalidConfig(f"template {self.name!r} has length {w.size}")
        lo, hi = self.occurrences_per_epoch
        if not 0 <= lo <= hi:
            raise InvalidConfig(f"bad occurrence range {self.occurrences_per_epoch}")
        a_min, a_max = self.amplitude_range
        if not 0 < a_min <= a_max:
            raise InvalidConfig(f"bad amplitude range {self.amplitude_range}")

    @property
    def length(self) -> int:
        return self.waveform.size

    @property
    def peak_shape(self) -> np.ndarray:
        """Waveform rescaled to unit peak magnitude; amplitudes multiply this."""
        return self.waveform / np.max(np.abs(self.waveform))


@dataclass(frozen=True)
class SynthSpec:
    class_counts: dict
    templates: tuple = ()
    background_noise_std: float = 1.0
    seed: int = 0
    n_subjects: int = 10

    def __post_init__(self):
        counts = {SleepStage(k): int(v) for k, v in dict(self.class_counts).items()}
        object.__setattr__(self, "class_counts", counts)
        object.__setattr__(self, "templates", tuple(self.templates))
        if any(v < 0 for v in counts.values()):
            raise InvalidConfig("class counts must be >= 0")
        if sum(counts.values()) == 0:
            raise InvalidConfig("at least one class needs a positive count")
        if self.background_noise_std < 0:
            raise InvalidConfig("background_noise_std must be >= 0")
        if self.n_subjects < 1:
            raise InvalidConfig("n_subjects must be >= 1")


def _unit(w: np.ndarray) -> np.ndarray:
    return w / np.linalg.norm(w)


def spindle_waveform(freq_hz: float = 13.0, duration_s: float = 1.0, fs: float = TARGET_HZ):
    t = np.arange(int(round(duration_s * fs))) / fs
    centre = duration_s / 2
    envelope = np.exp(-0.5 * ((t - centre) / (duration_s / 6)) ** 2)
    return _unit(envelope * np.sin(2 * np.pi * freq_hz * (t - centre)))


def k_complex_waveform(duration_s: float = 0.7, fs: float = TARGET_HZ, sharp_s: float = 0.06,
                       slow_s: float = 0.1):
    # sharp negative deflection followed by a broader positive one
    t = np.arange(int(round(duration_s * fs))) / fs
    sharp = -np.exp(-0.5 * ((t - 0.2) / sharp_s) ** 2)
    slow = 0.6 * np.exp(-0.5 * ((t - 0.45) / slow_s) ** 2)
    return _unit(sharp + slow)


def slow_wave_waveform(freq_hz: float = 2.0, duration_s: float = 1.5, fs: float = TARGET_HZ):
    t = np.arange(int(round(duration_s * fs))) / fs
    return _unit(np.sin(2 * np.pi * freq_hz * t))


def builtin_templates() -> list[TemplateSpec]:
    """Spindle-like burst and K-complex-like transient (N2), slow wave (N3)."""
    return [
        TemplateSpec("spindle", spindle_waveform(), {SleepStage.N2}, (2, 4)),
        TemplateSpec("k_complex", k_complex_waveform(), {SleepStage.N2}, (1, 3)),
        TemplateSpec("slow_wave", slow_wave_waveform(), {SleepStage.N3}, (2, 4)),
    ]


def scaled_counts(counts: dict, divisor: int = 100) -> dict:
    """Class counts divided by ``divisor``, rounded half up (EDF-2013 / 100 -> 83, 28, 178, 57, 77)."""
    return {SleepStage(k): (2 * int(v) + divisor) // (2 * divisor) for k, v in counts.items()}


def default_spec(seed: int = 0, divisor: int = 100, **kw) -> SynthSpec:
    return SynthSpec(scaled_counts(EDF2013_COUNTS, divisor), tuple(builtin_templates()), seed=seed, **kw)


def _place(lengths: list[int], rng: np.random.Generator, total: int = EPOCH_LEN) -> list[int]:
    """Uniformly random non-overlapping offsets for blocks of the given lengths.

    Shuffles block order, then splits the free space into ``n + 1`` gaps
    with a uniformly random composition.
    """
    n = len(lengths)
    free = total - sum(lengths)
    if free < 0:
        raise PlacementOverflow(f"{sum(lengths)} template samples do not fit into {total}")
    if n == 0:
        return []
    order = rng.permutation(n)
    # n + 1 gaps summing to ``free``: stars and bars over free + n slots
    bars = np.sort(rng.choice(free + n, size=n, replace=False))
    gaps = bars - np.arange(n)
    offsets = [0] * n
    cursor = 0
    prev = 0
    for rank, idx in enumerate(order):
        cursor += gaps[rank] - prev
        prev = gaps[rank]
        offsets[idx] = int(cursor)
        cursor += lengths[idx]
    return offsets


def generate(spec: SynthSpec) -> EpochSet:
    """Generate a labelled :class:`EpochSet` with occurrence metadata.

    Epochs are shuffled and assigned round-robin to ``spec.n_subjects``
    synthetic subjects, so every subject sees every class.
    """
    rng = np.random.default_rng(spec.seed)
    labels = np.concatenate(
        [np.full(spec.class_counts.get(s, 0), int(s), dtype=np.int64) for s in SleepStage]
    )
    labels = labels[rng.permutation(labels.size)]
    n = labels.size
    values = np.zeros((n, EPOCH_LEN))
    if spec.background_noise_std > 0:
        values += rng.normal(0.0, spec.background_noise_std, size=values.shape)

    occurrences = []
    for i in range(n):
        stage = SleepStage(int(labels[i]))
        chosen = []
        for tpl in spec.templates:
            if stage in tpl.classes:
                lo, hi = tpl.occurrences_per_epoch
                chosen.extend([tpl] * int(rng.integers(lo, hi + 1)))
        offsets = _place([t.length for t in chosen], rng)
        occ = []
        for tpl, off in zip(chosen, offsets):
            amp = float(rng.uniform(*tpl.amplitude_range))
            values[i, off : off + tpl.length] += amp * tpl.peak_shape
            occ.append(Occurrence(tpl.name, off, tpl.length, amp))
        occurrences.append(sorted(occ, key=lambda o: o.offset))

    width = len(str(spec.n_subjects - 1))
    subjects = np.array([f"synth{i % spec.n_subjects:0{width}d}" for i in range(n)], dtype=object)
    return EpochSet(values, labels, subjects, occurrences)
