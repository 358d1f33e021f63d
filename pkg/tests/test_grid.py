import csv
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillbox.config.experiment import get_path, load_config_file
from distillbox.training.grid import GridError, GridSpec, apply_cell, run_grid, select_best

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _small(name="blobs_kd", epochs=3):
    cfg = load_config_file(CONFIGS / f"{name}.yaml")
    cfg["train"]["num_epochs"] = epochs
    return cfg


def test_cells_row_major():
    g = GridSpec({"a": [1, 2], "b": ["x", "y", "z"]})
    assert g.cells() == [{"a": 1, "b": "x"}, {"a": 1, "b": "y"}, {"a": 1, "b": "z"},
                         {"a": 2, "b": "x"}, {"a": 2, "b": "y"}, {"a": 2, "b": "z"}]


def test_grid_spec_validation():
    with pytest.raises(GridError):
        GridSpec({})
    with pytest.raises(GridError, match="non-empty"):
        GridSpec({"lr": []})
    with pytest.raises(GridError, match="selection metric"):
        GridSpec({"lr": [1]}, metric="f1")
    assert GridSpec.from_config({"axes": {"lr": [1]}, "metric": "mse"}).mode == "min"


def test_apply_cell_aliases_and_shorthands():
    cfg = _small()
    out = apply_cell(cfg, {"tau": 7, "alpha": 0.25, "lr": 0.5, "epochs": 9})
    terms = out["train"]["criterion"]["terms"]
    assert terms[0] == {"kind": "cross_entropy", "weight": 0.25}
    assert terms[1] == {"kind": "kd_kl", "weight": 0.75, "tau": 7}
    assert get_path(out, "train.optimizer.init.kwargs.lr") == 0.5
    assert out["train"]["num_epochs"] == 9
    assert cfg["train"]["criterion"]["terms"][1]["tau"] == 3.0  # base untouched


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.floats(1e-3, 1e3))
def test_selection_invariant_to_positive_scaling(values, c):
    rows = [{"dev_accuracy": v} for v in values]
    scaled = [{"dev_accuracy": v * c} for v in values]
    assert select_best(rows, "accuracy") == select_best(scaled, "accuracy")
    assert select_best(rows, "accuracy", "min") == select_best(scaled, "accuracy", "min")


def test_tie_break_row_major_first():
    rows = [{"dev_accuracy": v} for v in (0.5, 0.9, 0.7, 0.9)]
    assert select_best(rows, "accuracy") == 1
    assert select_best([{"dev_mse": v} for v in (0.2, 0.1, 0.1)], "mse", "min") == 1
    assert select_best([{"dev_accuracy": float("nan")}, {"dev_accuracy": 0.1}], "accuracy") == 1


def test_two_by_two_grid(tmp_path):
    grid = GridSpec({"tau": [1.0, 4.0], "alpha": [0.2, 0.8]})
    result = run_grid(grid, _small(), table_path=tmp_path / "results.csv")
    with open(tmp_path / "results.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == len(result.rows) == 4
    assert [(float(r["tau"]), float(r["alpha"])) for r in table] == [(1, 0.2), (1, 0.8), (4, 0.2), (4, 0.8)]
    devs = [r["dev_accuracy"] for r in result.rows]
    assert result.best_index == devs.index(max(devs))
    assert result.best_cell == grid.cells()[result.best_index]


def test_one_by_one_grid_returns_sole_cell():
    result = run_grid(GridSpec({"lr": [0.05]}), _small("blobs_ce"))
    assert result.best_index == 0 and result.best_cell == {"lr": 0.05}
    assert get_path(result.best_config, "train.optimizer.init.kwargs.lr") == 0.05


def test_tiny_lr_loses():
    result = run_grid(GridSpec({"lr": [0.1, 1e-9]}), _small("blobs_ce", epochs=5))
    assert result.best_cell == {"lr": 0.1}
    assert result.rows[0]["dev_accuracy"] > result.rows[1]["dev_accuracy"]


def test_parallel_matches_serial():
    grid = GridSpec({"alpha": [0.2, 0.8]})
    serial = run_grid(grid, _small(epochs=2), jobs=1)
    parallel = run_grid(grid, _small(epochs=2), jobs=2)
    assert serial.rows == parallel.rows


def test_shorthand_needs_terms():
    cfg = load_config_file(CONFIGS / "linreg_kd.yaml")
    with pytest.raises(GridError, match="terms"):
        apply_cell(cfg, {"tau": 2})
