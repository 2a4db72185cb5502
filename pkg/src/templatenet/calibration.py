"""Calibration metrics, temperature scaling and robustness sweeps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig
from .nn import log_softmax
from .signal import EpochSet, add_gaussian_noise, reference_std
from .stager import PredictionSet, macro_f1, predict

DEFAULT_BINS = 15
MIN_BIN_COUNT = 50
T_BOUNDS = (0.05, 20.0)
T_TOL = 1e-4


def confidence(p: PredictionSet) -> np.ndarray:
    return p.probabilities.max(axis=1)


@dataclass
class CalibrationReport:
    ece: float
    bins: list
    num_bins: int
    temperature: float | None = None

    @property
    def ece_x100(self) -> float:
        return 100.0 * self.ece

    def bins_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count", "conf", "acc", "included"])
        for lo, hi, n, conf, acc, inc in self.bins:
            writer.writerow([repr(lo), repr(hi), n, repr(conf), repr(acc), int(inc)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "ece": self.ece,
            "ece_x100": self.ece_x100,
            "num_bins": self.num_bins,
            "temperature": self.temperature,
            "n": int(sum(b[2] for b in self.bins)),
        }


def bin_index(conf: np.ndarray, m: int) -> np.ndarray:
    """Bin of each confidence for ``m`` right-closed bins ``((i-1)/m, i/m]``."""
    idx = np.ceil(np.asarray(conf) * m).astype(np.int64) - 1
    return np.clip(idx, 0, m - 1)


def ece(p: PredictionSet, num_bins: int = DEFAULT_BINS) -> CalibrationReport:
    if num_bins < 1:
        raise InvalidConfig("num_bins must be >= 1")
    n = len(p)
    if n == 0:
        raise InvalidConfig("ECE needs at least one prediction")
    conf = confidence(p)
    correct = (p.predicted == p.truth).astype(np.float64)
    idx = bin_index(conf, num_bins)
    counts = np.bincount(idx, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=num_bins)
    bins = []
    total = 0.0
    for i in range(num_bins):
        c = int(counts[i])
        mc = conf_sum[i] / c if c else 0.0
        ma = acc_sum[i] / c if c else 0.0
        total += c / n * abs(ma - mc)
        bins.append((i / num_bins, (i + 1) / num_bins, c, float(mc), float(ma), c >= MIN_BIN_COUNT))
    return CalibrationReport(float(total), bins, num_bins)


def mean_nll(logits: np.ndarray, truth: np.ndarray, t: float = 1.0) -> float:
    lp = log_softmax(np.asarray(logits) / t)
    return float(-lp[np.arange(truth.size), truth].mean())


def fit_temperature(val: PredictionSet, bounds=T_BOUNDS, tol: float = T_TOL) -> float:
    """Golden-section minimisation of validation NLL over ``T``.

    The bounds and ``T = 1`` are scored as extra candidates, so the result
    never has a higher NLL than the uncalibrated model.
    """
    if len(val) == 0:
        raise InvalidConfig("temperature fitting needs validation predictions")
    if not np.all(np.isfinite(val.logits)):
        raise InvalidConfig("logits must be finite")
    f = lambda t: mean_nll(val.logits, val.truth, t)
    invphi = (math.sqrt(5) - 1) / 2
    a, b = bounds
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    candidates = [(a + b) / 2, 1.0, bounds[0], bounds[1]]
    scores = [f(t) for t in candidates]
    return float(candidates[int(np.argmin(scores))])


def apply_temperature(p: PredictionSet, t: float) -> PredictionSet:
    if not t > 0:
        raise InvalidConfig("temperature must be positive")
    scaled = PredictionSet.from_logits(p.logits / t, p.truth)
    # argmax of logits/T can only differ through rounding ties; keep the original labels
    return PredictionSet(p.logits, scaled.probabilities, p.predicted.copy(), p.truth)


@dataclass
class SweepTable:
    """One row per (condition, model) with seed means and per-seed values."""

    condition_name: str
    rows: list = field(default_factory=list)

    def add(self, condition, model: str, f1s, eces):
        f1s, eces = [float(v) for v in f1s], [float(v) for v in eces]
        self.rows.append({
            "condition": condition,
            "model": model,
            "macro_f1": float(np.mean(f1s)),
            "ece": float(np.mean(eces)),
            "seed_count": len(f1s),
            "per_seed_macro_f1": f1s,
            "per_seed_ece": eces,
        })

    def lookup(self, condition, model: str) -> dict:
        for r in self.rows:
            if r["condition"] == condition and r["model"] == model:
                return r
        raise KeyError((condition, model))

    def add_ratios(self, reference):
        """Ratio columns relative to the rows at condition ``reference``."""
        for r in self.rows:
            ref = self.lookup(reference, r["model"])
            r["ratio_macro_f1"] = r["macro_f1"] / ref["macro_f1"] if ref["macro_f1"] else float("nan")
            r["ratio_ece"] = r["ece"] / ref["ece"] if ref["ece"] else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        ratios = any("ratio_macro_f1" in r for r in self.rows)
        head = [self.condition_name, "model", "macro_f1", "ece", "ece_x100", "seed_count",
                "per_seed_macro_f1", "per_seed_ece"]
        writer.writerow(head + (["ratio_macro_f1", "ratio_ece"] if ratios else []))
        for r in self.rows:
            row = [r["condition"], r["model"], repr(r["macro_f1"]), repr(r["ece"]), repr(100 * r["ece"]),
                   r["seed_count"], ";".join(map(repr, r["per_seed_macro_f1"])),
                   ";".join(map(repr, r["per_seed_ece"]))]
            if ratios:
                row += [repr(r["ratio_macro_f1"]), repr(r["ratio_ece"])]
            writer.writerow(row)
        return buf.getvalue()


def evaluate(model, epochs: EpochSet, num_bins: int = DEFAULT_BINS) -> tuple[float, float]:
    p = predict(model, epochs)
    return macro_f1(p), ece(p, num_bins).ece


def _per_seed(value, seeds, what):
    if isinstance(value, (list, tuple)):
        if len(value) != len(seeds):
            raise InvalidConfig(f"{what} list does not match the seeds")
        return list(value)
    return [value] * len(seeds)


def noise_sweep(models: dict, test, scales, seeds, num_bins: int = DEFAULT_BINS) -> SweepTable:
    """Macro-F1 and ECE of each model under additive Gaussian noise.

    ``models`` maps a name to a model, or to a list with one model per
    seed; ``test`` is one set or one set per seed. Noise std is ``scale``
    times the std of the clean test set; the noise draw uses the seed.
    """
    scales = [float(s) for s in scales]
    seeds = [int(s) for s in seeds]
    if 0.0 not in scales:
        raise InvalidConfig("noise scales must include 0")
    tests = _per_seed(test, seeds, "test set")
    per_model = {name: _per_seed(m, seeds, f"model {name!r}") for name, m in models.items()}
    table = SweepTable("noise_scale")
    for scale in scales:
        noisy = [add_gaussian_noise(t, scale, reference_std(t), s) for t, s in zip(tests, seeds)]
        for name, per_seed in per_model.items():
            res = [evaluate(model, data, num_bins) for model, data in zip(per_seed, noisy)]
            table.add(scale, name, [r[0] for r in res], [r[1] for r in res])
    return table


def train_size_sweep(run, train, sizes, seeds, num_bins: int = DEFAULT_BINS) -> SweepTable:
    """Re-run a pipeline on seeded subject subsets of the training split.

    ``run(train_subset, seed)`` returns ``{model_name: PredictionSet}``;
    ``train`` is one set or one set per seed. Ratio columns are relative
    to the largest size.
    """
    sizes = sorted({int(s) for s in sizes}, reverse=True)
    seeds = [int(s) for s in seeds]
    trains = _per_seed(train, seeds, "training set")
    n_min = min(len(t.source_subjects) for t in trains)
    if not sizes or sizes[-1] < 1 or sizes[0] > n_min:
        raise InvalidConfig(f"sizes must lie in [1, {n_min}]")
    table = SweepTable("train_subjects")
    for size in sizes:
        results: dict = {}
        for tr, seed in zip(trains, seeds):
            pick = subsample_subjects(tr.source_subjects, size, seed)
            for name, p in run(tr.for_subjects(pick), seed).items():
                results.setdefault(name, []).append((macro_f1(p), ece(p, num_bins).ece))
        for name, res in results.items():
            table.add(size, name, [r[0] for r in res], [r[1] for r in res])
    table.add_ratios(sizes[0])
    return table


def subsample_subjects(subjects, size: int, seed: int) -> list:
    rng = np.random.default_rng(seed)
    subjects = sorted(subjects)
    return sorted(subjects[i] for i in rng.choice(len(subjects), size=size, replace=False))
