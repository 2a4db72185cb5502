"""Template pre-training and first-layer transfer.

A cosine-similarity convolution followed by 1-max pooling and a single
dense layer is trained to classify stages. Each pooled channel only sees
its best-matching window, so the filters drift towards recurring
waveforms. Those filters then initialise the first convolution of a
target network (with its stride set to 1 and the following pool window
widened by the original stride, keeping the parameter count).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, NonFinite, ShapeMismatch, WaveformTooLong
from .nn import CosineConv1d, Dense, ModelGraph, OneMaxPool
from .signal import EPOCH_LEN, NUM_CLASSES, TARGET_HZ, EpochSet
from .stager import TargetSpec, TrainConfig, build_layers, train

UNIT_NORM_TOL = 1e-6


@dataclass
class PretrainConfig:
    num_filters: int = 8
    filter_len: int = 150
    lr: float = 0.3
    momentum: float = 0.9
    max_epochs: int = 60
    batch_size: int = 32
    patience: int = 10
    init: str = "gaussian_unit_norm"
    seed: int = 0
    lr_decay: float = 1.0

    def __post_init__(self):
        if self.num_filters < 1:
            raise InvalidConfig("num_filters must be >= 1")
        if not 1 < self.filter_len <= EPOCH_LEN:
            raise InvalidConfig(f"filter_len must be in (1, {EPOCH_LEN}]")
        if self.init != "gaussian_unit_norm":
            raise InvalidConfig(f"unknown init {self.init!r}")

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.lr, self.momentum, self.batch_size, self.max_epochs, self.patience, self.seed, self.lr_decay)


@dataclass
class FilterBank:
    filters: np.ndarray
    sample_rate_hz: float = float(TARGET_HZ)
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.filters = np.array(self.filters, dtype=np.float64, ndmin=2)
        norms = np.linalg.norm(self.filters, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise InvalidConfig("filter bank rows must have unit norm")

    @property
    def shape(self):
        return self.filters.shape

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["filter"] + [f"w{i}" for i in range(self.filters.shape[1])])
        for k, row in enumerate(self.filters):
            writer.writerow([k] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def checkpoint_section(self) -> dict:
        return {"filterbank": (self.filters, {"sample_rate_hz": self.sample_rate_hz, **self.training_meta})}

    @classmethod
    def from_sections(cls, sections: dict) -> "FilterBank":
        if "filterbank" not in sections:
            raise InvalidConfig("checkpoint has no filterbank section")
        filters, meta = sections["filterbank"]
        meta = dict(meta)
        fs = meta.pop("sample_rate_hz", float(TARGET_HZ))
        return cls(filters, fs, meta)


def build_pretrain_net(cfg: PretrainConfig) -> ModelGraph:
    """CosineConv(K, L, normalized) -> OneMaxPool -> Dense(K -> 5)."""
    rng = np.random.default_rng(cfg.seed)
    conv = CosineConv1d.init(rng, cfg.num_filters, cfg.filter_len, "cosine_normalized")
    head = Dense.init(rng, cfg.num_filters, NUM_CLASSES)
    return ModelGraph([conv, OneMaxPool(), head], cfg.seed)


def check_unit_norm(model: ModelGraph, tol: float = UNIT_NORM_TOL):
    w = model.layers[0].weight
    err = np.max(np.abs(np.linalg.norm(w, axis=1) - 1.0))
    if not np.isfinite(err):
        raise NonFinite("filter weights became non-finite")
    if err > tol:
        raise AssertionError(f"filter norms drifted from 1 by {err:.3g}")


def pretrain(train_set: EpochSet, val_set: EpochSet, cfg: PretrainConfig, return_history: bool = False):
    """Train the template net and return the filters of the best-validation snapshot."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidConfig("pre-training needs non-empty train and validation sets")
    if train_set.epoch_len < cfg.filter_len:
        raise ShapeMismatch("epochs shorter than the filter")
    model = build_pretrain_net(cfg)
    model, history = train(model, train_set, val_set, cfg.train_config(),
                           on_epoch=lambda _e, m: check_unit_norm(m))
    last = history.rows[-1]
    meta = {
        "epochs_trained": int(last["epoch"]),
        "best_epoch": int(history.best_epoch),
        "best_val_macro_f1": float(history.best_val_f1),
        "final_loss": float(last["train_loss"]) if last["epoch"] else None,
        "seed": int(cfg.seed),
    }
    bank = FilterBank(model.layers[0].weight.copy(), float(TARGET_HZ), meta)
    return (bank, history) if return_history else bank


def match_template(bank: FilterBank, waveform) -> tuple[int, float, int]:
    """Best ``|cos|`` between ``waveform`` and any same-length window of any filter.

    Returns ``(filter index, score, lag)``; ties resolve to the lowest
    filter, then the lowest lag.
    """
    wf = np.asarray(waveform, dtype=np.float64)
    taps = bank.filters.shape[1]
    if wf.size > taps:
        raise WaveformTooLong(f"waveform of {wf.size} samples exceeds filter length {taps}")
    wf_norm = np.linalg.norm(wf)
    if wf_norm == 0:
        raise ValueError("waveform has zero norm")
    win = np.lib.stride_tricks.sliding_window_view(bank.filters, wf.size, axis=1)
    win_norm = np.linalg.norm(win, axis=-1)
    dots = win @ wf
    scores = np.abs(dots) / np.maximum(win_norm * wf_norm, 1e-12)
    k, lag = np.unravel_index(int(np.argmax(scores)), scores.shape)
    return int(k), float(scores[k, lag]), int(lag)


def transferred_geometry(spec: TargetSpec) -> tuple[int, int]:
    """First-layer stride and pool window after transfer: ``(1, pool * stride)``."""
    _, _, stride = spec.first_conv
    return 1, spec.first_pool * stride


def transfer_filters(bank: FilterBank, spec: TargetSpec) -> ModelGraph:
    """Build ``spec`` with the bank as first-layer weights.

    The remaining layers are drawn from the same seeded stream as the
    random baseline, so only the first layer differs.
    """
    k, taps, _ = spec.first_conv
    if bank.filters.shape != (k, taps):
        raise ShapeMismatch(f"bank {bank.filters.shape} does not fit a first layer of {(k, taps)}")
    stride, pool = transferred_geometry(spec)
    rng = np.random.default_rng(spec.seed)
    layers = build_layers(spec, rng, stride, pool, first_weight=bank.filters)
    return ModelGraph(layers, spec.seed)
