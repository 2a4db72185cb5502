"""Command-line entry point: ``templatenet <command> [--config FILE] [--seed N] [--out DIR]``.

CSV reports are deterministic given the config and seed; wall-clock time
only appears in ``summary.json``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import shutil
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .calibration import apply_temperature, ece, fit_temperature, noise_sweep, train_size_sweep
from .edf import DatasetManifest, ManifestEntry, dump_hypnogram, single_channel_header, write_edf, write_manifest
from .errors import DegenerateSaliency, InvalidConfig, NumericalError, TemplateNetError
from .interpret import saliency, saliency_overlap, saliency_stability, spectra_csv, top_k_regions
from .nn import checkpoint, layer_grad_check, softmax_ce_check, standard_cases
from .pipeline import (
    ExperimentConfig,
    derive_seed,
    heldout_n2,
    load_dataset,
    run_pipeline,
    save_epochs_npz,
    split_dataset,
    synth_spec,
    write_json,
)
from .pretrain import FilterBank, match_template, pretrain
from .signal import STAGES, EpochSet, SleepStage, reference_std
from .stager import PredictionSet, accuracy, build_target, macro_f1, per_class_f1, predict, train
from .synth import builtin_templates, generate

log = logging.getLogger("templatenet")

GRADCHECK_TOL = 1e-5


def _csv(rows, header) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


class Run:
    """Output directory plus report bookkeeping for one command invocation."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path):
        self.command, self.cfg, self.out = command, cfg, out
        self.started = time.perf_counter()
        self.summary: dict = {}
        out.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str):
        (self.out / name).write_text(text)

    def finish(self):
        report = {
            "command": self.command,
            "config_hash": self.cfg.digest(),
            "seed": self.cfg.seed,
            "version": __version__,
            "wall_clock_s": round(time.perf_counter() - self.started, 3),
            "results": self.summary,
        }
        write_json(self.out / "summary.json", report)
        # structured text without the wall-clock, stable across re-runs
        text = yaml.safe_dump({k: v for k, v in report.items() if k != "wall_clock_s"}, sort_keys=True)
        self.write("summary.yaml", text)


def _prediction_metrics(p: PredictionSet, num_bins: int) -> dict:
    f1, undefined = per_class_f1(p)
    out = {"macro_f1": macro_f1(p), "accuracy": accuracy(p), "ece": ece(p, num_bins).ece, "n": len(p)}
    for s in STAGES:
        out[f"f1_{s.name}"] = float(f1[s])
    out["undefined_classes"] = [s.name for s in STAGES if undefined[s]]
    return out


METRIC_COLUMNS = ["macro_f1", "accuracy", "ece"] + [f"f1_{s.name}" for s in STAGES]


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: ExperimentConfig, out: Path, args) -> dict:
    spec = synth_spec(cfg, cfg.seed)  # validated before anything touches the disk
    data = generate(spec)
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".synth-", dir=out.parent))
    try:
        (staging / "edf").mkdir()
        save_epochs_npz(staging / "epochs.npz", data)
        occ_rows = [[i, data.subjects[i], o.template, o.offset, o.length, repr(o.amplitude)]
                    for i, lst in enumerate(data.occurrences) for o in lst]
        (staging / "occurrences.csv").write_text(
            _csv(occ_rows, ["epoch_idx", "subject_id", "template", "offset", "length", "amplitude"]))
        entries = []
        peak = float(np.ceil(np.abs(data.values).max() + 1.0))
        for subject in sorted(data.source_subjects):
            idx = np.flatnonzero(data.subjects == subject)
            signal = data.values[idx].reshape(-1)
            header = single_channel_header("EEG", idx.size, 100.0, phys_range=(-peak, peak))
            (staging / "edf" / f"{subject}.edf").write_bytes(write_edf(header, [signal]))
            labels = [SleepStage(int(l)) for l in data.labels[idx]]
            (staging / "edf" / f"{subject}.hyp.txt").write_text(dump_hypnogram(labels))
            entries.append(ManifestEntry(subject, f"edf/{subject}.edf", f"edf/{subject}.hyp.txt", "EEG"))
        write_manifest(DatasetManifest(tuple(entries)), staging / "manifest.csv")
        out.mkdir(parents=True, exist_ok=True)
        for item in staging.iterdir():
            target = out / item.name
            if target.is_dir():
                shutil.rmtree(target)
            shutil.move(str(item), str(target))
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    counts = {s.name: int(np.sum(data.labels == s)) for s in STAGES}
    return {"epochs": len(data), "class_counts": counts, "subjects": len(data.source_subjects),
            "occurrences": sum(len(o) for o in data.occurrences)}


def _template_match_rows(bank: FilterBank) -> list:
    rows = []
    for tpl in builtin_templates():
        k, score, lag = match_template(bank, tpl.waveform)
        rows.append([tpl.name, k, repr(score), lag])
    return rows


def cmd_pretrain(cfg, out, args, run: Run) -> dict:
    splits = split_dataset(load_dataset(cfg, cfg.seed), cfg.seed)
    bank, hist = pretrain(splits.train, splits.val, cfg.pretrain_config(cfg.seed), return_history=True)
    checkpoint.save(out / "filterbank.ckpt", None, bank.checkpoint_section())
    run.write("filters.csv", bank.to_csv())
    run.write("filter_spectra.csv", spectra_csv(bank.filters, bank.sample_rate_hz))
    run.write("pretrain_history.csv", hist.to_csv())
    rows = _template_match_rows(bank)
    run.write("template_match.csv", _csv(rows, ["template", "filter", "abs_cosine", "lag"]))
    return {**bank.training_meta, "template_match": {r[0]: float(r[2]) for r in rows}}


def _load_bank(path) -> FilterBank:
    _, sections = checkpoint.load(path)
    return FilterBank.from_sections(sections)


def cmd_train(cfg, out, args, run: Run) -> dict:
    splits = split_dataset(load_dataset(cfg, cfg.seed), cfg.seed)
    names = ["template", "baseline"] if args.init == "both" else [args.init]
    bank = None
    if "template" in names:
        if args.filterbank:
            bank = _load_bank(args.filterbank)
        else:
            bank = pretrain(splits.train, splits.val, cfg.pretrain_config(cfg.seed))
            checkpoint.save(out / "filterbank.ckpt", None, bank.checkpoint_section())
    spec, tcfg = cfg.target_spec(cfg.seed), cfg.train_config(cfg.seed)
    result = {}
    for name in names:
        model, hist = train(build_target(spec, bank if name == "template" else "random"), splits.train, splits.val, tcfg)
        checkpoint.save(out / f"model_{name}.ckpt", model)
        run.write(f"history_{name}.csv", hist.to_csv())
        p = predict(model, splits.test)
        run.write(f"predictions_{name}.csv", p.to_csv())
        run.write(f"val_predictions_{name}.csv", predict(model, splits.val).to_csv())
        result[name] = {"params": model.param_count(), "best_epoch": hist.best_epoch,
                        **_prediction_metrics(p, cfg.eval.num_bins)}
    return result


def _seed_worker(payload):
    cfg_dict, seed = payload
    cfg = ExperimentConfig.from_dict(cfg_dict)
    splits = split_dataset(load_dataset(cfg, seed), seed)
    res = run_pipeline(cfg, splits, seed)
    return seed, splits, res


def _run_seeds(cfg: ExperimentConfig, seeds, threads: int):
    payloads = [(cfg.as_dict(), s) for s in seeds]
    if threads > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_seed_worker, payloads))
    else:
        results = [_seed_worker(p) for p in payloads]
    return sorted(results, key=lambda r: r[0])


def cmd_eval(cfg, out, args, run: Run) -> dict:
    m = cfg.eval.num_bins
    if args.predictions:
        rows, result = [], {}
        for path in args.predictions:
            p = PredictionSet.from_csv(Path(path).read_text())
            met = _prediction_metrics(p, m)
            rows.append([Path(path).name] + [_fmt(met[c]) for c in METRIC_COLUMNS])
            result[Path(path).name] = met
        run.write("eval.csv", _csv(rows, ["source"] + METRIC_COLUMNS))
        return result
    rows = []
    per_model: dict = {}
    params = {}
    for seed, _, res in _run_seeds(cfg, cfg.eval.seeds, args.threads):
        for name, p in res.predictions.items():
            met = _prediction_metrics(p, m)
            params[name] = res.models[name].param_count()
            per_model.setdefault(name, []).append(met)
            rows.append([seed, name, params[name]] + [_fmt(met[c]) for c in METRIC_COLUMNS])
    for name, mets in per_model.items():
        rows.append(["mean", name, params[name]] + [_fmt(np.mean([x[c] for x in mets])) for c in METRIC_COLUMNS])
    run.write("eval.csv", _csv(rows, ["seed", "model", "params"] + METRIC_COLUMNS))
    means = {name: float(np.mean([x["macro_f1"] for x in mets])) for name, mets in per_model.items()}
    return {
        "mean_macro_f1": means,
        "params": params,
        "equal_params": len(set(params.values())) == 1,
        "template_ge_baseline": means.get("template", 0) >= means.get("baseline", 0),
    }


def _calibration_block(run: Run, name: str, val: PredictionSet, test: PredictionSet, m: int) -> dict:
    t = fit_temperature(val)
    pre, post = ece(test, m), ece(apply_temperature(test, t), m)
    pre.temperature, post.temperature = 1.0, t
    run.write(f"reliability_{name}_pre.csv", pre.bins_csv())
    run.write(f"reliability_{name}_post.csv", post.bins_csv())
    return {"temperature": t, "ece_pre": pre.ece, "ece_post": post.ece,
            "ece_pre_x100": pre.ece_x100, "ece_post_x100": post.ece_x100}


def cmd_calibrate(cfg, out, args, run: Run) -> dict:
    m = args.bins or cfg.eval.num_bins
    blocks = {}
    if args.predictions:
        val = PredictionSet.from_csv(Path(args.predictions).read_text())
        test = PredictionSet.from_csv(Path(args.test).read_text()) if args.test else val
        blocks["predictions"] = _calibration_block(run, "predictions", val, test, m)
    else:
        splits = split_dataset(load_dataset(cfg, cfg.seed), cfg.seed)
        res = run_pipeline(cfg, splits, cfg.seed)
        for name, model in res.models.items():
            blocks[name] = _calibration_block(run, name, predict(model, splits.val), res.predictions[name], m)
    rows = [[name, repr(b["temperature"]), repr(b["ece_pre"]), repr(b["ece_post"])] for name, b in blocks.items()]
    run.write("calibration.csv", _csv(rows, ["source", "temperature", "ece_pre", "ece_post"]))
    return {"num_bins": m, **blocks}


def _saliency_epochs(cfg, splits, seed) -> EpochSet:
    n = cfg.eval.saliency_epochs
    if cfg.data.source == "synth":
        return heldout_n2(cfg, seed, n)
    test = splits.test
    idx = np.flatnonzero(test.labels == SleepStage.N2)[:n]
    return test.subset(idx)


def cmd_saliency(cfg, out, args, run: Run) -> dict:
    splits = split_dataset(load_dataset(cfg, cfg.seed), cfg.seed)
    res = run_pipeline(cfg, splits, cfg.seed)
    epochs = _saliency_epochs(cfg, splits, cfg.seed)
    k, window = cfg.eval.saliency_k, cfg.eval.saliency_window
    ref = reference_std(epochs)
    noise_seed = derive_seed(cfg.seed, "noise")
    rows, result = [], {}
    for name, model in res.models.items():
        overlaps, stab = [], []
        for i in range(len(epochs)):
            s = saliency(model, epochs.values[i])
            regions = top_k_regions(s, k, window)
            ov = saliency_overlap(regions, epochs.occurrences[i]) if epochs.occurrences else float("nan")
            try:
                st = saliency_stability(model, epochs.values[i], args.noise_scale, ref, noise_seed + i)
            except DegenerateSaliency:
                # a constant map (e.g. every ReLU dead) has no defined correlation
                st = float("nan")
            overlaps.append(ov)
            stab.append(st)
            rows.append([i, name, s.target_class.name, repr(ov), repr(st)])
            if i == 0:
                run.write(f"saliency_{name}_epoch0.csv", s.to_csv())
                run.write(f"saliency_{name}_epoch0.svg", s.to_svg(epochs.values[0], regions))
        defined = [v for v in stab if not np.isnan(v)]
        result[name] = {"mean_overlap": float(np.mean(overlaps)),
                        "mean_stability": float(np.mean(defined)) if defined else None,
                        "degenerate_epochs": len(stab) - len(defined)}
    run.write("saliency.csv", _csv(rows, ["epoch_idx", "model", "target", "overlap", "stability"]))
    return {"epochs": len(epochs), "noise_scale": args.noise_scale, **result}


def cmd_noise_sweep(cfg, out, args, run: Run) -> dict:
    seeds = list(cfg.eval.seeds)
    runs = _run_seeds(cfg, seeds, args.threads)
    models = {name: [r[2].models[name] for r in runs] for name in ("template", "baseline")}
    table = noise_sweep(models, [r[1].test for r in runs], cfg.eval.noise_scales, seeds, cfg.eval.num_bins)
    run.write("noise_sweep.csv", table.to_csv())
    drops = {}
    hi = max(cfg.eval.noise_scales)
    for name in models:
        clean = table.lookup(0.0, name)["macro_f1"]
        drops[name] = {str(s): clean - table.lookup(s, name)["macro_f1"] for s in cfg.eval.noise_scales}
        drops[name]["monotone_clean_ge_max"] = clean >= table.lookup(hi, name)["macro_f1"]
    return {"macro_f1_drop": drops}


def cmd_size_sweep(cfg, out, args, run: Run) -> dict:
    seeds = list(cfg.eval.seeds)
    per_seed_splits = {s: split_dataset(load_dataset(cfg, s), s) for s in seeds}

    def pipeline(train_subset, seed):
        return run_pipeline(cfg, per_seed_splits[seed], seed, train_set=train_subset).predictions

    table = train_size_sweep(pipeline, [per_seed_splits[s].train for s in seeds], cfg.eval.train_sizes,
                             seeds, cfg.eval.num_bins)
    run.write("size_sweep.csv", table.to_csv())
    return {"sizes": list(cfg.eval.train_sizes)}


def cmd_gradcheck(cfg, out, args, run: Run) -> dict:
    rng = np.random.default_rng(cfg.seed)
    rows, worst = [], {}
    for i, (name, layer, x) in enumerate(standard_cases(rng, args.instances)):
        err, checked, skipped = layer_grad_check(layer, x, rng)
        worst[name] = max(worst.get(name, 0.0), err)
        rows.append([name, i, repr(err), checked, skipped])
    for i in range(args.instances):
        b = int(rng.integers(1, 5))
        err, checked = softmax_ce_check(rng.normal(size=(b, 5)), rng.integers(0, 5, size=b))
        worst["softmax_ce"] = max(worst.get("softmax_ce", 0.0), err)
        rows.append(["softmax_ce", i, repr(err), checked, 0])
    run.write("gradcheck.csv", _csv(rows, ["layer", "instance", "max_rel_error", "checked", "skipped"]))
    passed = all(v <= GRADCHECK_TOL for v in worst.values())
    run.summary.update({"max_rel_error": worst, "tolerance": GRADCHECK_TOL, "passed": passed})
    if not passed:
        raise NumericalError(f"gradient check failed: {worst}")
    return run.summary


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "calibrate": cmd_calibrate,
    "saliency": cmd_saliency,
    "noise-sweep": cmd_noise_sweep,
    "size-sweep": cmd_size_sweep,
    "gradcheck": cmd_gradcheck,
}


def load_config(path, seed=None, out=None) -> ExperimentConfig:
    """YAML config file plus flag overrides (flags > file > defaults)."""
    raw = {}
    if path:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise InvalidConfig("config must be a mapping at the top level")
    if seed is not None:
        raw["seed"] = seed
    if out is not None:
        raw["out"] = out
    return ExperimentConfig.from_dict(raw)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="parallel seeds for multi-seed commands")

    parser = argparse.ArgumentParser(prog="templatenet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset (EDF, hypnograms, npz)")
    sub.add_parser("pretrain", parents=[common], help="pre-train template filters")
    p = sub.add_parser("train", parents=[common], help="train target networks")
    p.add_argument("--init", choices=["template", "baseline", "both"], default="both")
    p.add_argument("--filterbank", help="filter bank checkpoint from `pretrain`")
    p = sub.add_parser("eval", parents=[common], help="template vs baseline over the eval seeds")
    p.add_argument("--predictions", nargs="+", help="score existing prediction CSVs instead")
    p = sub.add_parser("calibrate", parents=[common], help="ECE and temperature scaling")
    p.add_argument("--predictions", help="validation prediction CSV (fits T)")
    p.add_argument("--test", help="prediction CSV to evaluate (defaults to --predictions)")
    p.add_argument("--bins", type=int, help="number of ECE bins")
    p = sub.add_parser("saliency", parents=[common], help="saliency overlap and stability")
    p.add_argument("--noise-scale", type=float, default=0.1)
    sub.add_parser("noise-sweep", parents=[common], help="macro-F1/ECE under Gaussian noise")
    sub.add_parser("size-sweep", parents=[common], help="macro-F1/ECE versus training subjects")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--instances", type=int, default=20)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("TEMPLATENET_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise InvalidConfig("--threads must be >= 1")
        cfg = load_config(args.config, args.seed, args.out)
        out = Path(cfg.out)
        if args.command == "synth":
            started = time.perf_counter()
            summary = cmd_synth(cfg, out, args)
            run = Run("synth", cfg, out)
            run.started = started
            run.summary = summary
        else:
            run = Run(args.command, cfg, out)
            run.summary = COMMANDS[args.command](cfg, out, args, run)
        run.finish()
    except TemplateNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return NumericalError.exit_code if isinstance(exc, FloatingPointError) else 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
