"""Target sleep-staging CNN, supervised training, prediction and F1 metrics."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged, InvalidConfig
from .nn import SGD, Conv1d, Dense, MaxPool1d, ModelGraph, ReLU, softmax
from .signal import EPOCH_LEN, NUM_CLASSES, STAGES, EpochSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TargetSpec:
    """Single-branch CNN: first conv block, trunk conv blocks, dense head.

    ``first_conv`` is ``(filters, taps, stride)``; each trunk block is
    ``(filters, taps, stride, pool_window)``. Every conv is followed by
    ReLU then max pooling. ``head`` lists dense widths and must end in 5.
    """

    first_conv: tuple = (8, 150, 6)
    first_pool: int = 8
    trunk: tuple = ((16, 7, 1, 4),)
    head: tuple = (64, NUM_CLASSES)
    seed: int = 0
    input_len: int = EPOCH_LEN

    def __post_init__(self):
        object.__setattr__(self, "first_conv", tuple(int(v) for v in self.first_conv))
        object.__setattr__(self, "trunk", tuple(tuple(int(v) for v in b) for b in self.trunk))
        object.__setattr__(self, "head", tuple(int(v) for v in self.head))
        if len(self.first_conv) != 3 or min(self.first_conv) < 1:
            raise InvalidConfig(f"first_conv must be (filters, taps, stride), got {self.first_conv}")
        if not self.head or self.head[-1] != NUM_CLASSES:
            raise InvalidConfig(f"head must end in {NUM_CLASSES} outputs, got {self.head}")
        if any(len(b) != 4 or min(b) < 1 for b in self.trunk):
            raise InvalidConfig(f"trunk blocks must be (filters, taps, stride, pool), got {self.trunk}")
        self.flat_features(self.first_conv[2], self.first_pool)

    def flat_features(self, first_stride: int, first_pool: int) -> int:
        """Flattened size entering the dense head; validates the shape chain."""
        k, taps, _ = self.first_conv
        n = (self.input_len - taps) // first_stride + 1
        n //= first_pool
        channels = k
        for filters, t, s, pool in self.trunk:
            if n < t:
                raise InvalidConfig(f"feature length {n} shorter than trunk filter {t}")
            n = ((n - t) // s + 1) // pool
            channels = filters
        if n < 1:
            raise InvalidConfig("shape chain collapses to zero length")
        return channels * n


def build_layers(spec: TargetSpec, rng: np.random.Generator, first_stride: int, first_pool: int,
                 first_weight: np.ndarray | None = None) -> list:
    k, taps, _ = spec.first_conv
    conv0 = Conv1d.init(rng, k, 1, taps, first_stride)
    if first_weight is not None:
        conv0.params["weight"][...] = np.asarray(first_weight).reshape(k, 1, taps)
    layers = [conv0, ReLU(), MaxPool1d(first_pool)]
    channels = k
    for filters, t, s, pool in spec.trunk:
        layers += [Conv1d.init(rng, filters, channels, t, s), ReLU(), MaxPool1d(pool)]
        channels = filters
    width = spec.flat_features(first_stride, first_pool)
    for i, size in enumerate(spec.head):
        layers.append(Dense.init(rng, width, size))
        if i < len(spec.head) - 1:
            layers.append(ReLU())
        width = size
    return layers


def build_target(spec: TargetSpec, init="random") -> ModelGraph:
    """Baseline (``init="random"``) or template-initialised (``init=FilterBank``) target.

    Both conditions draw every randomly initialised parameter from the
    same seeded stream, so they differ only in the first layer.
    """
    if isinstance(init, str):
        if init != "random":
            raise InvalidConfig(f"unknown init {init!r}")
        rng = np.random.default_rng(spec.seed)
        k, taps, stride = spec.first_conv
        return ModelGraph(build_layers(spec, rng, stride, spec.first_pool), spec.seed)
    from .pretrain import transfer_filters

    return transfer_filters(init, spec)


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    lr_decay: float = 1.0

    def __post_init__(self):
        if not 0 < self.lr_decay <= 1:
            raise InvalidConfig("lr_decay must be in (0, 1]")
        if self.lr < 0 or not 0 <= self.momentum < 1:
            raise InvalidConfig("need lr >= 0 and 0 <= momentum < 1")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise InvalidConfig("batch_size >= 1, max_epochs >= 0 and patience >= 1 required")


@dataclass
class PredictionSet:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted: np.ndarray
    truth: np.ndarray

    def __len__(self):
        return self.truth.size

    @classmethod
    def from_logits(cls, logits, truth) -> "PredictionSet":
        logits = np.asarray(logits, dtype=np.float64).reshape(-1, NUM_CLASSES)
        probs = softmax(logits)
        return cls(logits, probs, probs.argmax(axis=1), np.asarray(truth, dtype=np.int64))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        names = [s.name for s in STAGES]
        writer.writerow(["epoch_idx", "truth", "pred"] + [f"logit_{n}" for n in names] + [f"prob_{n}" for n in names])
        for i in range(len(self)):
            writer.writerow(
                [i, STAGES[self.truth[i]].name, STAGES[self.predicted[i]].name]
                + [repr(float(v)) for v in self.logits[i]]
                + [repr(float(v)) for v in self.probabilities[i]]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PredictionSet":
        """Rebuild from CSV; probabilities are recomputed from the logits."""
        rows = list(csv.DictReader(io.StringIO(text)))
        names = [s.name for s in STAGES]
        logits = np.array([[float(r[f"logit_{n}"]) for n in names] for r in rows]).reshape(-1, NUM_CLASSES)
        truth = np.array([names.index(r["truth"]) for r in rows], dtype=np.int64)
        return cls.from_logits(logits, truth)


def predict(model: ModelGraph, epochs: EpochSet, chunk: int = 64) -> PredictionSet:
    """Deterministic forward pass in chunks; shape errors surface as ShapeMismatch."""
    logits = [model.forward(epochs.values[i : i + chunk]) for i in range(0, len(epochs), chunk)]
    logits = np.concatenate(logits) if logits else np.zeros((0, NUM_CLASSES))
    return PredictionSet.from_logits(logits, epochs.labels)


def confusion_matrix(truth, pred, n: int = NUM_CLASSES) -> np.ndarray:
    cm = np.zeros((n, n), dtype=np.int64)
    np.add.at(cm, (np.asarray(truth), np.asarray(pred)), 1)
    return cm


def per_class_f1(p: PredictionSet):
    """One-vs-rest F1 per class and a flag marking undefined classes (scored 0)."""
    cm = confusion_matrix(p.truth, p.predicted)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    undefined = (support == 0) & (predicted == 0)
    denom = support + predicted
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    return f1, undefined


def macro_f1(p: PredictionSet) -> float:
    return float(per_class_f1(p)[0].mean())


def accuracy(p: PredictionSet) -> float:
    return float(np.mean(p.truth == p.predicted))


@dataclass
class History:
    rows: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = float("-inf")

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_macro_f1"])
        for r in self.rows:
            writer.writerow([r["epoch"], repr(r["train_loss"]), repr(r["val_macro_f1"])])
        return buf.getvalue()


def train(model: ModelGraph, train_set: EpochSet, val_set: EpochSet, cfg: TrainConfig,
          on_epoch=None):
    """Minibatch SGD on softmax cross-entropy, keeping the best-validation snapshot.

    Epoch 0 is the untrained model. Training stops after ``cfg.patience``
    epochs without a strictly better validation macro-F1. ``on_epoch`` is
    called with ``(epoch, model)`` after every update epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise InvalidConfig("training and validation sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(cfg.lr, cfg.momentum) if cfg.lr > 0 else None
    history = History()

    def evaluate(epoch, loss):
        f1 = macro_f1(predict(model, val_set))
        history.rows.append({"epoch": epoch, "train_loss": loss, "val_macro_f1": f1})
        if f1 > history.best_val_f1:
            history.best_val_f1, history.best_epoch = f1, epoch
            return True
        return False

    evaluate(0, float("nan"))
    best = model.state()
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss = model.loss_and_grads(train_set.values[idx], train_set.labels[idx])
            if not np.isfinite(loss):
                raise Diverged(f"non-finite loss at epoch {epoch}")
            losses.append(loss * idx.size)
            if opt is not None:
                opt.step(model)
        mean_loss = float(np.sum(losses) / order.size)
        if opt is not None:
            opt.lr *= cfg.lr_decay
        if on_epoch is not None:
            on_epoch(epoch, model)
        if evaluate(epoch, mean_loss):
            best = model.state()
            stale = 0
        else:
            stale += 1
        log.debug("epoch %d loss %.4f val F1 %.4f", epoch, mean_loss, history.rows[-1]["val_macro_f1"])
        if stale >= cfg.patience:
            break
    model.load_state(best)
    return model, history
