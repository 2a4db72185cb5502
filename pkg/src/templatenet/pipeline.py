"""Experiment configuration and the template-vs-baseline pipeline.

Every random draw in an experiment derives from one root seed. Each
component gets its own stream from ``numpy.random.SeedSequence``, so a
partial re-run of one stage reproduces exactly.
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .edf import load_manifest_epochs, read_manifest, split_subjects
from .errors import DataMissing, InvalidConfig, Malformed
from .pretrain import FilterBank, PretrainConfig, pretrain
from .signal import EpochSet, Occurrence, SleepStage
from .stager import TargetSpec, TrainConfig, build_target, predict, train
from .synth import EDF2013_COUNTS, SynthSpec, builtin_templates, generate, scaled_counts

COMPONENTS = ("synth", "split", "pretrain", "target", "train", "noise", "heldout")
DATA_SOURCES = ("synth", "manifest", "npz")


def derive_seed(root: int, component: str) -> int:
    """Deterministic 32-bit seed for ``component`` under ``root``."""
    if component not in COMPONENTS:
        raise InvalidConfig(f"unknown seed component {component!r}")
    ss = np.random.SeedSequence([int(root), COMPONENTS.index(component)])
    return int(ss.generate_state(1)[0])


@dataclass
class DataConfig:
    source: str = "synth"
    divisor: int = 100
    noise_std: float = 1.0
    n_subjects: int = 10
    path: str | None = None
    quantile: bool = True

    def __post_init__(self):
        if self.source not in DATA_SOURCES:
            raise InvalidConfig(f"data.source must be one of {DATA_SOURCES}, got {self.source!r}")
        if self.source != "synth" and not self.path:
            raise InvalidConfig(f"data.path is required when data.source is {self.source}")
        if self.divisor < 1:
            raise InvalidConfig("data.divisor must be >= 1")


@dataclass
class EvalConfig:
    num_bins: int = 15
    noise_scales: tuple = (0.0, 0.1, 0.2, 0.3, 0.5)
    train_sizes: tuple = (8, 4, 2)
    seeds: tuple = (0, 1, 2, 3, 4)
    saliency_k: int = 10
    saliency_window: int = 50
    saliency_epochs: int = 50

    def __post_init__(self):
        self.noise_scales = tuple(float(s) for s in self.noise_scales)
        self.train_sizes = tuple(int(s) for s in self.train_sizes)
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.num_bins < 1:
            raise InvalidConfig("eval.num_bins must be >= 1")
        if any(s < 0 for s in self.noise_scales):
            raise InvalidConfig("noise scales must be >= 0")


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if isinstance(self.data, dict):
            self.data = _build(DataConfig, self.data, "data")
        if isinstance(self.eval, dict):
            self.eval = _build(EvalConfig, self.eval, "eval")
        # validate eagerly so bad keys fail before any computation
        self.pretrain_config(0)
        self.target_spec(0)
        self.train_config(0)

    def pretrain_config(self, seed: int) -> PretrainConfig:
        return _build(PretrainConfig, {**self.pretrain, "seed": derive_seed(seed, "pretrain")}, "pretrain")

    def target_spec(self, seed: int) -> TargetSpec:
        return _build(TargetSpec, {**self.target, "seed": derive_seed(seed, "target")}, "target")

    def train_config(self, seed: int) -> TrainConfig:
        return _build(TrainConfig, {**self.train, "seed": derive_seed(seed, "train")}, "train")

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "out": self.out,
            "data": dataclasses.asdict(self.data),
            "pretrain": dict(self.pretrain),
            "target": dict(self.target),
            "train": dict(self.train),
            "eval": {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self.eval).items()},
        }

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output directory excluded)."""
        d = self.as_dict()
        d.pop("out")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d, "config")


def _build(cls, values: dict, where: str):
    values = dict(values or {})
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise InvalidConfig(f"unknown key(s) in {where}: {', '.join(unknown)}")
    if cls is ExperimentConfig:
        for key in ("pretrain", "target", "train"):
            if key in values and not isinstance(values[key], dict):
                raise InvalidConfig(f"{key} must be a mapping")
            sub = {"pretrain": PretrainConfig, "target": TargetSpec, "train": TrainConfig}[key]
            names = {f.name for f in dataclasses.fields(sub)} - {"seed"}
            bad = sorted(set(values.get(key) or {}) - names)
            if bad:
                raise InvalidConfig(f"unknown key(s) in {key}: {', '.join(bad)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise InvalidConfig(f"{where}: {exc}") from None


def synth_spec(cfg: ExperimentConfig, seed: int) -> SynthSpec:
    d = cfg.data
    return SynthSpec(scaled_counts(EDF2013_COUNTS, d.divisor), tuple(builtin_templates()),
                     d.noise_std, derive_seed(seed, "synth"), d.n_subjects)


def load_dataset(cfg: ExperimentConfig, seed: int) -> EpochSet:
    if cfg.data.source == "synth":
        return generate(synth_spec(cfg, seed))
    path = Path(cfg.data.path)
    if not path.exists():
        raise DataMissing(f"data file {path} does not exist")
    if cfg.data.source == "npz":
        return load_epochs_npz(path)
    return load_manifest_epochs(read_manifest(path), path.parent, scale=cfg.data.quantile)


def heldout_n2(cfg: ExperimentConfig, seed: int, count: int) -> EpochSet:
    """Fresh synthetic N2 epochs (with planted occurrences) from an independent stream."""
    spec = synth_spec(cfg, seed)
    spec = SynthSpec({SleepStage.N2: count}, spec.templates, spec.background_noise_std,
                     derive_seed(seed, "heldout"), spec.n_subjects)
    return generate(spec)


def save_epochs_npz(path, epochs: EpochSet) -> None:
    """Write an ``.npz`` archive with fixed zip timestamps (byte-reproducible)."""
    occ = [(i, o.template, o.offset, o.length, o.amplitude)
           for i, lst in enumerate(epochs.occurrences) for o in lst]
    arrays = {
        "values": epochs.values,
        "labels": epochs.labels,
        "subjects": np.array([str(s) for s in epochs.subjects]),
        "occ_epoch": np.array([o[0] for o in occ], dtype=np.int64),
        "occ_template": np.array([o[1] for o in occ], dtype="<U32"),
        "occ_offset": np.array([o[2] for o in occ], dtype=np.int64),
        "occ_length": np.array([o[3] for o in occ], dtype=np.int64),
        "occ_amplitude": np.array([o[4] for o in occ], dtype=np.float64),
        "has_occurrences": np.array(bool(epochs.occurrences)),
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_epochs_npz(path) -> EpochSet:
    try:
        with np.load(path, allow_pickle=False) as z:
            d = {k: z[k] for k in z.files}
    except (OSError, ValueError, zipfile.BadZipFile) as exc:
        raise Malformed(f"{path}: {exc}") from None
    occurrences = []
    if bool(d["has_occurrences"]):
        occurrences = [[] for _ in range(d["labels"].size)]
        for i, t, off, n, a in zip(d["occ_epoch"], d["occ_template"], d["occ_offset"],
                                   d["occ_length"], d["occ_amplitude"]):
            occurrences[int(i)].append(Occurrence(str(t), int(off), int(n), float(a)))
    return EpochSet(d["values"], d["labels"], d["subjects"].astype(object), occurrences)


@dataclass
class Splits:
    train: EpochSet
    val: EpochSet
    test: EpochSet


def split_dataset(data: EpochSet, seed: int) -> Splits:
    tr, va, te = split_subjects(sorted(data.source_subjects), derive_seed(seed, "split"))
    return Splits(data.for_subjects(tr), data.for_subjects(va), data.for_subjects(te))


@dataclass
class RunResult:
    bank: FilterBank
    models: dict
    predictions: dict
    histories: dict
    timings: dict = field(default_factory=dict)


def run_pipeline(cfg: ExperimentConfig, splits: Splits, seed: int, train_set: EpochSet | None = None) -> RunResult:
    """Pre-train, then train the template and baseline targets; predict on test.

    Pre-training uses the same training split as the target networks.
    """
    train_set = splits.train if train_set is None else train_set
    started = time.perf_counter()
    bank, ph = pretrain(train_set, splits.val, cfg.pretrain_config(seed), return_history=True)
    timings = {"pretrain_s": time.perf_counter() - started}
    spec = cfg.target_spec(seed)
    tcfg = cfg.train_config(seed)
    models, histories, preds = {}, {"pretrain": ph}, {}
    for name, init in (("template", bank), ("baseline", "random")):
        started = time.perf_counter()
        model, hist = train(build_target(spec, init), train_set, splits.val, tcfg)
        timings[f"train_{name}_s"] = time.perf_counter() - started
        models[name], histories[name] = model, hist
        preds[name] = predict(model, splits.test)
    return RunResult(bank, models, preds, histories, timings)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
