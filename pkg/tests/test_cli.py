import json

import numpy as np
import pytest
import yaml

from templatenet import __version__
from templatenet.cli import main
from templatenet.stager import PredictionSet

TINY = {
    "data": {"divisor": 1000, "n_subjects": 5},
    "pretrain": {"num_filters": 4, "max_epochs": 2, "batch_size": 8},
    "target": {"first_conv": [4, 150, 6], "trunk": [[4, 7, 1, 4]], "head": [16, 5]},
    "train": {"max_epochs": 2, "batch_size": 8, "lr": 0.01},
    "eval": {"seeds": [0, 1], "noise_scales": [0.0, 0.3], "train_sizes": [3, 2], "saliency_epochs": 3},
}


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return path


def _run(*argv):
    return main([str(a) for a in argv])


def _csvs(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*.csv"))}


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_synth_outputs_and_determinism(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("synth", "--config", config, "--out", a, "--seed", 3) == 0
    assert _run("synth", "--config", config, "--out", b, "--seed", 3) == 0
    for name in ("epochs.npz", "occurrences.csv", "manifest.csv", "summary.json", "summary.yaml"):
        assert (a / name).exists()
    assert len(list((a / "edf").glob("*.edf"))) == 5
    assert _csvs(a) == _csvs(b)
    assert (a / "epochs.npz").read_bytes() == (b / "epochs.npz").read_bytes()
    assert (a / "summary.yaml").read_bytes() == (b / "summary.yaml").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert summary["command"] == "synth" and summary["results"]["class_counts"]["N2"] == 18


def test_synth_output_loads_back(tmp_path, config):
    out = tmp_path / "s"
    assert _run("synth", "--config", config, "--out", out) == 0
    cfg = tmp_path / "manifest.yaml"
    cfg.write_text(yaml.safe_dump({**TINY, "data": {"source": "manifest", "path": str(out / "manifest.csv")}}))
    assert _run("pretrain", "--config", cfg, "--out", tmp_path / "p") == 0
    cfg.write_text(yaml.safe_dump({**TINY, "data": {"source": "npz", "path": str(out / "epochs.npz")}}))
    assert _run("pretrain", "--config", cfg, "--out", tmp_path / "q") == 0


def test_unknown_config_key_is_exit_1(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"pretrain": {"num_filter": 3}}))
    out = tmp_path / "never"
    assert _run("synth", "--config", bad, "--out", out) == 1
    assert not out.exists()
    bad.write_text(yaml.safe_dump({"bogus": 1}))
    assert _run("gradcheck", "--config", bad, "--out", out) == 1
    assert not out.exists()


def test_invalid_spec_leaves_no_partial_files(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"data": {"divisor": 0}}))
    assert _run("synth", "--config", bad, "--out", tmp_path / "x") == 1
    assert list(tmp_path.iterdir()) == [bad]


def test_missing_data_is_exit_2(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"data": {"source": "npz", "path": str(tmp_path / "nope.npz")}}))
    assert _run("pretrain", "--config", cfg, "--out", tmp_path / "o") == 2


def test_gradcheck_passes(tmp_path):
    out = tmp_path / "g"
    assert _run("gradcheck", "--out", out, "--instances", 3) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"]["passed"]
    assert set(summary["results"]["max_rel_error"]) >= {"conv", "cosine_full", "cosine_normalized", "softmax_ce"}


def _perfect_csv(path, n=200):
    truth = np.arange(n) % 5
    path.write_text(PredictionSet.from_logits(np.eye(5)[truth] * 8.0, truth).to_csv())
    return path


def test_eval_on_prediction_files(tmp_path):
    src = _perfect_csv(tmp_path / "perfect.csv")
    assert _run("eval", "--predictions", src, "--out", tmp_path / "e") == 0
    summary = json.loads((tmp_path / "e" / "summary.json").read_text())
    assert summary["results"]["perfect.csv"]["macro_f1"] == 1.0


def test_calibrate_hand_case(tmp_path):
    probs = np.full((4, 5), 0.025)
    probs[:, 0] = 0.9
    p = PredictionSet(np.log(probs), probs, np.zeros(4, dtype=int), np.array([0, 0, 0, 1]))
    src = tmp_path / "hand.csv"
    src.write_text(p.to_csv())
    assert _run("calibrate", "--predictions", src, "--bins", 10, "--out", tmp_path / "c") == 0
    res = json.loads((tmp_path / "c" / "summary.json").read_text())["results"]["predictions"]
    assert res["ece_pre"] == pytest.approx(0.15, abs=1e-12)
    assert (tmp_path / "c" / "reliability_predictions_pre.csv").exists()


@pytest.mark.slow
@pytest.mark.parametrize("command", ["pretrain", "train", "eval", "calibrate", "saliency", "noise-sweep", "size-sweep"])
def test_commands_are_deterministic(tmp_path, config, command):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(command, "--config", config, "--out", a) == 0
    assert _run(command, "--config", config, "--out", b) == 0
    csvs = _csvs(a)
    assert csvs and csvs == _csvs(b)
    assert (a / "summary.yaml").read_bytes() == (b / "summary.yaml").read_bytes()


@pytest.mark.slow
def test_eval_reports_equal_params(tmp_path, config):
    assert _run("eval", "--config", config, "--out", tmp_path / "e") == 0
    res = json.loads((tmp_path / "e" / "summary.json").read_text())["results"]
    assert res["equal_params"]
    rows = (tmp_path / "e" / "eval.csv").read_text().splitlines()
    assert rows[0].startswith("seed,model,params,macro_f1")
    assert sum(r.startswith("mean,") for r in rows) == 2


@pytest.mark.slow
def test_train_with_saved_filterbank(tmp_path, config):
    assert _run("pretrain", "--config", config, "--out", tmp_path / "p") == 0
    assert _run("train", "--config", config, "--out", tmp_path / "t", "--init", "template",
                "--filterbank", tmp_path / "p" / "filterbank.ckpt") == 0
    assert (tmp_path / "t" / "model_template.ckpt").exists()
    assert not (tmp_path / "t" / "model_baseline.ckpt").exists()


def test_threads_must_be_positive(tmp_path):
    assert _run("gradcheck", "--threads", 0, "--out", tmp_path / "g") == 1
