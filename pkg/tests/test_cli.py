import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from distillbox.builtins import default_registry
from distillbox.cli import main, run_dir
from distillbox.config.experiment import build_experiment, load_config_file
from distillbox.config.parser import parse_config
from distillbox.training.checkpoint import load_checkpoint
from distillbox.training.loop import read_log

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _json_line(out: str) -> dict:
    return json.loads(out.strip().splitlines()[0])


def test_validate_prints_components(capsys):
    assert main(["validate", str(CONFIGS / "blobs_kd.yaml")]) == 0
    out = capsys.readouterr().out
    assert "ok (distillation box" in out
    assert "teacher" in out and "kd_kl" in out


def test_validate_flag_on_train(capsys, tmp_path):
    assert main(["train", "--config", str(CONFIGS / "blobs_ce.yaml"), "--validate", "--out", str(tmp_path)]) == 0
    assert "single-model trainer" in capsys.readouterr().out
    assert not any(tmp_path.iterdir())


def test_train_then_eval_matches_logged_test_metric(capsys, tmp_path):
    cfg = str(CONFIGS / "blobs_kd.yaml")
    args = ["--out", str(tmp_path), "--set", "train.num_epochs=3"]
    assert main(["distill", cfg, *args]) == 0
    out_dir = Path(_json_line(capsys.readouterr().out)["run_dir"])
    assert out_dir == run_dir(tmp_path, Path(cfg), 0)
    for name in ("train.log", "student.kdf", "checkpoint.kdf", "metrics.json", "config.yaml"):
        assert (out_dir / name).is_file()
    logged = [r for r in read_log(out_dir / "train.log") if r["split"] == "test"]
    assert main(["eval", cfg, *args]) == 0
    scores = _json_line(capsys.readouterr().out)
    assert scores["split"] == "test"
    assert scores["accuracy"] == logged[-1]["value"]
    # the saved resolved config reproduces the same plan
    assert parse_config((out_dir / "config.yaml").read_text())["train"]["num_epochs"] == 3


def test_lr_zero_override_leaves_params_unchanged(capsys, tmp_path):
    cfg = CONFIGS / "blobs_ce.yaml"
    assert main(["train", str(cfg), "--out", str(tmp_path), "--set", "train.optimizer.init.kwargs.lr=0",
                 "--set", "train.num_epochs=2"]) == 0
    out_dir = Path(_json_line(capsys.readouterr().out)["run_dir"])
    plan = build_experiment(load_config_file(cfg), default_registry())
    trained = load_checkpoint(out_dir / "student.kdf").params
    for name, p in plan.student.named_parameters():
        assert trained[name].tobytes() == p.data.tobytes()


def test_seed_override_names_run_dir(capsys, tmp_path):
    assert main(["train", str(CONFIGS / "blobs_ce.yaml"), "--out", str(tmp_path), "--seed", "7",
                 "--set", "train.num_epochs=1"]) == 0
    assert _json_line(capsys.readouterr().out)["run_dir"].endswith("blobs_ce-seed7")


@pytest.mark.parametrize("argv, needle", [
    (["validate", "nope.yaml"], "config error"),
    (["validate", str(CONFIGS / "blobs_ce.yaml"), "--set", "train.bogus.x=1"], "train.bogus"),
    (["validate", str(CONFIGS / "blobs_ce.yaml"), "--set", "train.batch_size=0"], "batch_size"),
    (["distill", str(CONFIGS / "blobs_ce.yaml")], "teacher"),
    (["sweep", str(CONFIGS / "blobs_ce.yaml")], "grid"),
    (["validate"], "config file is required"),
])
def test_config_errors_exit_1(capsys, argv, needle, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("config error") and needle in err


def test_bad_syntax_exit_1(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 0\ndataset:\n  kind: [blobs\n")
    assert main(["validate", str(bad)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_missing_checkpoint_exit_1(capsys, tmp_path):
    assert main(["eval", str(CONFIGS / "blobs_ce.yaml"), "--checkpoint", str(tmp_path / "x.kdf")]) == 1


def test_non_finite_loss_exit_2(capsys, tmp_path):
    with np.errstate(all="ignore"):
        code = main(["train", str(CONFIGS / "linreg_mse.yaml"), "--out", str(tmp_path),
                     "--set", "train.optimizer.init.kwargs.lr=1e200"])
    assert code == 2
    assert "runtime error" in capsys.readouterr().err


def test_sweep_writes_table_and_best_config(capsys, tmp_path):
    cfg = tmp_path / "toy.yaml"
    text = (CONFIGS / "blobs_kd.yaml").read_text()
    cfg.write_text(text + "grid:\n  axes:\n    tau: [1.0, 4.0]\n    alpha: [0.2, 0.8]\n  metric: accuracy\n")
    assert main(["sweep", str(cfg), "--out", str(tmp_path), "--set", "train.num_epochs=2"]) == 0
    out = capsys.readouterr().out
    summary = _json_line(out)
    out_dir = Path(summary["run_dir"])
    with open(out_dir / "results.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 4
    best = parse_config((out_dir / "best_config.yaml").read_text())
    kd = best["train"]["criterion"]["terms"][1]
    assert kd["tau"] == summary["tau"] and kd["weight"] == pytest.approx(1 - summary["alpha"])
    assert "best_config" not in out and "criterion:" in out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "distillbox.cli", "validate", str(CONFIGS / "linreg_kd.yaml")],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert "regression_kd" in proc.stdout
