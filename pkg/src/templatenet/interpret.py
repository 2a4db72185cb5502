"""Gradient saliency, top-region extraction and filter spectra."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSaliency, InsufficientLength, ShapeMismatch, ZeroFilter
from .nn import ModelGraph, softmax
from .signal import TARGET_HZ, EpochSet, SleepStage, add_gaussian_noise

BAND_EDGES = (4.0, 8.0, 12.0)
BANDS = ("delta", "theta", "alpha", "fast")
MIN_DFT = 256


@dataclass
class SaliencyMap:
    values: np.ndarray
    target_class: SleepStage

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["sample_idx", "value"])
        for i, v in enumerate(self.values):
            writer.writerow([i, repr(float(v))])
        return buf.getvalue()

    def to_svg(self, signal=None, regions=(), width: int = 1200, height: int = 240) -> str:
        """Saliency (red) over the optional input signal (grey), regions shaded."""
        n = self.values.size
        xs = np.arange(n) * (width / max(n - 1, 1))

        def polyline(y, colour):
            y = np.asarray(y, dtype=np.float64)
            lo, hi = float(y.min()), float(y.max())
            span = hi - lo if hi > lo else 1.0
            ys = height - 4 - (y - lo) / span * (height - 8)
            pts = " ".join(f"{a:.1f},{b:.1f}" for a, b in zip(xs, ys))
            return f'<polyline fill="none" stroke="{colour}" stroke-width="1" points="{pts}"/>'

        parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
        for start, end in regions:
            x0, x1 = start * width / n, end * width / n
            parts.append(f'<rect x="{x0:.1f}" y="0" width="{x1 - x0:.1f}" height="{height}" fill="#ffe9a8"/>')
        if signal is not None:
            parts.append(polyline(signal, "#999999"))
        parts.append(polyline(self.values, "#c0392b"))
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def _input_of(model: ModelGraph, epoch) -> np.ndarray:
    x = np.asarray(getattr(epoch, "values", epoch), dtype=np.float64)
    if x.ndim != 1:
        raise ShapeMismatch(f"saliency expects one epoch, got shape {x.shape}")
    return x


def saliency(model: ModelGraph, epoch, target=None, post_softmax: bool = False) -> SaliencyMap:
    """``|d f / d x|`` with ``f`` the target logit (or probability).

    ``target`` defaults to the predicted class.
    """
    x = _input_of(model, epoch)
    logits = model.forward(x[None, :])
    if target is None:
        target = int(np.argmax(logits[0]))
    target = int(target)
    upstream = np.zeros_like(logits)
    if post_softmax:
        p = softmax(logits)[0]
        upstream[0] = -p[target] * p
        upstream[0, target] += p[target]
    else:
        upstream[0, target] = 1.0
    grad = model.backward(upstream).reshape(-1)
    if grad.size != x.size:
        raise ShapeMismatch("input gradient does not match the epoch length")
    return SaliencyMap(np.abs(grad), SleepStage(target))


def top_k_regions(s: SaliencyMap, k: int = 10, window: int = 50) -> list[tuple[int, int]]:
    """Greedy disjoint half-open windows ``[start, end)`` by descending saliency sum.

    Ties go to the lowest start index.
    """
    v = np.asarray(s.values if isinstance(s, SaliencyMap) else s, dtype=np.float64)
    if k < 1 or window < 1:
        raise ValueError("k and window must be >= 1")
    if k * window > v.size:
        raise InsufficientLength(f"{k} windows of {window} do not fit into {v.size} samples")
    csum = np.concatenate([[0.0], np.cumsum(v)])
    sums = csum[window:] - csum[:-window]
    free = np.ones(sums.size, dtype=bool)
    regions = []
    for _ in range(k):
        cand = np.where(free, sums, -np.inf)
        if not np.isfinite(cand.max()):
            raise InsufficientLength("no disjoint window left for the greedy selection")
        start = int(np.argmax(cand))
        regions.append((start, start + window))
        free[max(0, start - window + 1) : start + window] = False
    return regions


def saliency_overlap(regions, occurrences) -> float:
    """Fraction of planted-occurrence samples covered by the union of regions."""
    occurrences = list(occurrences)
    if not occurrences:
        return 0.0
    end = max([o.offset + o.length for o in occurrences] + [e for _, e in regions] + [0])
    covered = np.zeros(end, dtype=bool)
    for start, stop in regions:
        covered[start:stop] = True
    truth = np.zeros(end, dtype=bool)
    for o in occurrences:
        truth[o.offset : o.offset + o.length] = True
    return float((covered & truth).sum() / truth.sum())


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.linalg.norm(da), np.linalg.norm(db)
    if na == 0 or nb == 0:
        raise DegenerateSaliency("saliency map is constant")
    return float(np.clip(da @ db / (na * nb), -1.0, 1.0))


def saliency_stability(model: ModelGraph, epoch, scale: float, ref_std: float, seed: int) -> float:
    """Correlation of clean and noisy saliency, both for the clean predicted class."""
    x = _input_of(model, epoch)
    clean = saliency(model, x)
    single = EpochSet(x[None, :], np.zeros(1, dtype=np.int64), np.array(["_"], dtype=object))
    noisy_x = add_gaussian_noise(single, scale, ref_std, seed).values[0]
    noisy = saliency(model, noisy_x, clean.target_class)
    return pearson(clean.values, noisy.values)


@dataclass
class FilterSpectrum:
    freqs: np.ndarray
    power: np.ndarray
    dominant_band: str

    @property
    def peak_hz(self) -> float:
        return float(self.freqs[int(np.argmax(self.power))])


def band_of(freq_hz: float) -> str:
    return BANDS[int(np.searchsorted(BAND_EDGES, freq_hz, side="right"))]


def filter_spectrum(filt, fs: float = TARGET_HZ) -> FilterSpectrum:
    """Power spectrum of a filter, zero-padded to at least 256 points."""
    w = np.asarray(filt, dtype=np.float64).reshape(-1)
    if w.size < 8:
        raise ValueError("filter must have at least 8 taps")
    if not np.any(w):
        raise ZeroFilter("filter is all zeros")
    n = max(MIN_DFT, int(2 ** np.ceil(np.log2(w.size))))
    power = np.abs(np.fft.rfft(w, n)) ** 2
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    return FilterSpectrum(freqs, power, band_of(freqs[int(np.argmax(power))]))


def spectra_csv(filters, fs: float = TARGET_HZ) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["filter", "peak_hz", "dominant_band"])
    for k, f in enumerate(np.atleast_2d(filters)):
        spec = filter_spectrum(f, fs)
        writer.writerow([k, repr(spec.peak_hz), spec.dominant_band])
    return buf.getvalue()


def mean_overlap(model: ModelGraph, epochs: EpochSet, k: int = 10, window: int = 50) -> float:
    """Average top-region overlap with planted occurrences over epochs that have any."""
    scores = []
    for i in range(len(epochs)):
        occ = epochs.occurrences[i] if epochs.occurrences else []
        if not occ:
            continue
        s = saliency(model, epochs.values[i])
        scores.append(saliency_overlap(top_k_regions(s, k, window), occ))
    return float(np.mean(scores)) if scores else float("nan")
