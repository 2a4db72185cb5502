"""Core signal types and preprocessing.

Recordings are single-channel. Everything downstream of ``epoch_split``
works on an :class:`EpochSet`, which stores epochs as one ``(N, 3000)``
array plus per-epoch labels, subject ids and (for synthetic data) the
ground-truth template occurrences.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps

from .errors import ConstantSignal, InvalidRate, NoCompleteEpoch, TooShort

EPOCH_SECONDS = 30
TARGET_HZ = 100
EPOCH_LEN = EPOCH_SECONDS * TARGET_HZ

RESAMPLE_TAPS_PER_PHASE = 64


class SleepStage(enum.IntEnum):
    W = 0
    N1 = 1
    N2 = 2
    N3 = 3
    REM = 4


STAGES = tuple(SleepStage)
NUM_CLASSES = len(STAGES)


@dataclass(frozen=True)
class Occurrence:
    """A planted template instance inside one epoch."""

    template: str
    offset: int
    length: int
    amplitude: float

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class Recording:
    """Raw single-channel signal with one label per 30 s epoch.

    ``None`` entries in ``stage_labels`` mark excluded epochs (movement,
    unscored); they are dropped together with their samples by
    :func:`epoch_split`.
    """

    samples: np.ndarray
    sample_rate_hz: float
    subject_id: str
    stage_labels: tuple[Optional[SleepStage], ...] = ()

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise TooShort("recording needs at least one sample")
        if not self.sample_rate_hz > 0:
            raise InvalidRate(f"sample rate must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "stage_labels", tuple(self.stage_labels))
        max_labels = int(self.duration_s // EPOCH_SECONDS)
        if len(self.stage_labels) > max_labels:
            # the label stream may run past the signal; keep what fits
            object.__setattr__(self, "stage_labels", self.stage_labels[:max_labels])

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class Epoch:
    values: np.ndarray
    label: SleepStage


@dataclass
class EpochSet:
    """Fixed-length labelled segments.

    ``values`` has shape ``(N, length)``; ``labels`` holds integer stage
    codes; ``subjects`` the subject id of every epoch. ``occurrences`` is
    either empty or one list of :class:`Occurrence` per epoch.
    """

    values: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    occurrences: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[None, :]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.subjects = np.asarray(self.subjects, dtype=object).reshape(-1)
        n = self.values.shape[0]
        if self.labels.size != n or self.subjects.size != n:
            raise ValueError("values, labels and subjects must have the same length")
        if self.occurrences and len(self.occurrences) != n:
            raise ValueError("occurrences must be empty or one entry per epoch")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> Epoch:
        return Epoch(self.values[i], SleepStage(int(self.labels[i])))

    @property
    def epoch_len(self) -> int:
        return self.values.shape[1]

    @property
    def source_subjects(self) -> frozenset:
        return frozenset(self.subjects.tolist())

    def subset(self, index) -> "EpochSet":
        index = np.asarray(index)
        if index.dtype == bool:
            index = np.flatnonzero(index)
        occ = [self.occurrences[i] for i in index] if self.occurrences else []
        return EpochSet(self.values[index], self.labels[index], self.subjects[index], occ)

    def for_subjects(self, subjects) -> "EpochSet":
        wanted = set(subjects)
        return self.subset([s in wanted for s in self.subjects])

    def with_values(self, values: np.ndarray) -> "EpochSet":
        return EpochSet(values, self.labels.copy(), self.subjects.copy(), list(self.occurrences))

    @staticmethod
    def concat(sets: Sequence["EpochSet"]) -> "EpochSet":
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        occ: list = []
        if all(s.occurrences for s in sets):
            for s in sets:
                occ.extend(s.occurrences)
        return EpochSet(
            np.concatenate([s.values for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate([s.subjects for s in sets]),
            occ,
        )


def quantile_scale(samples) -> np.ndarray:
    """Shift to median 0 and scale to interquartile range 1.

    Quantiles use linear interpolation at rank ``(n - 1) * q``. Extreme
    values are kept as they are.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 4:
        raise TooShort(f"need at least 4 samples, got {x.size}")
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75], method="linear")
    iqr = q3 - q1
    if iqr <= 1e-12:
        raise ConstantSignal(f"interquartile range {iqr!r} is degenerate")
    return (x - med) / iqr


def _resample_filter(up: int, down: int) -> np.ndarray:
    # Hann windowed sinc, cutoff at the lower of the two Nyquist rates
    numtaps = RESAMPLE_TAPS_PER_PHASE * max(up, down) + 1
    # resample_poly applies the gain of ``up`` itself
    return sps.firwin(numtaps, 1.0 / max(up, down), window="hann")


def resample(samples, src_hz: float, dst_hz: float) -> np.ndarray:
    """Polyphase windowed-sinc resampling from ``src_hz`` to ``dst_hz``."""
    if not (src_hz > 0 and dst_hz > 0):
        raise InvalidRate(f"rates must be positive, got {src_hz} -> {dst_hz}")
    x = np.asarray(samples, dtype=np.float64)
    n_out = int(round(x.size * dst_hz / src_hz))
    if src_hz == dst_hz:
        return x.copy()
    ratio = Fraction(dst_hz / src_hz).limit_denominator(1000)
    up, down = ratio.numerator, ratio.denominator
    y = sps.resample_poly(x, up, down, window=_resample_filter(up, down))
    if y.size >= n_out:
        return y[:n_out]
    return np.concatenate([y, np.full(n_out - y.size, y[-1] if y.size else 0.0)])


def epoch_split(rec: Recording) -> EpochSet:
    """Cut a 100 Hz recording into labelled 30 s epochs.

    Trailing partial segments and epochs without a label are dropped, as
    are epochs whose label is ``None`` (excluded).
    """
    if rec.sample_rate_hz != TARGET_HZ:
        raise InvalidRate(f"epoch_split expects {TARGET_HZ} Hz input, got {rec.sample_rate_hz}")
    n_full = rec.samples.size // EPOCH_LEN
    if n_full == 0:
        raise NoCompleteEpoch(f"recording of {rec.duration_s:.1f} s holds no complete epoch")
    n = min(n_full, len(rec.stage_labels))
    blocks = rec.samples[: n * EPOCH_LEN].reshape(n, EPOCH_LEN)
    keep = [i for i in range(n) if rec.stage_labels[i] is not None]
    labels = [int(rec.stage_labels[i]) for i in keep]
    return EpochSet(
        blocks[keep].reshape(len(keep), EPOCH_LEN),
        np.asarray(labels, dtype=np.int64),
        np.full(len(keep), rec.subject_id, dtype=object),
    )


def add_gaussian_noise(epochs: EpochSet, scale: float, ref_std: float, seed: int) -> EpochSet:
    """Add white Gaussian noise with standard deviation ``scale * ref_std``.

    ``ref_std`` should be the standard deviation of the clean set, computed
    once, so that noise scales are comparable across epochs.
    """
    if scale < 0:
        raise ValueError(f"noise scale must be >= 0, got {scale}")
    if not ref_std > 0:
        raise ValueError(f"ref_std must be > 0, got {ref_std}")
    if scale == 0:
        return epochs.with_values(epochs.values.copy())
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, scale * ref_std, size=epochs.values.shape)
    return epochs.with_values(epochs.values + noise)


def reference_std(epochs: EpochSet) -> float:
    """Standard deviation over every sample of every epoch."""
    return float(np.std(epochs.values))
