"""Exhaustive hyperparameter sweeps with dev-set selection.

Every cell of the Cartesian product is trained from the same base config
and seed.  The selected cell has the best final-epoch dev metric; ties go to
the earliest cell in row-major order (the last axis varies fastest).

Axis names are config dot paths, plus a few shorthands:

* ``lr`` -> ``train.optimizer.init.kwargs.lr``
* ``batch_size`` -> ``train.batch_size``
* ``epochs`` / ``num_epochs`` -> ``train.num_epochs``
* ``tau`` -> the ``tau`` of every ``kd_kl`` criterion term
* ``alpha`` -> weight ``alpha`` on ``cross_entropy`` terms and ``1 - alpha`` on ``kd_kl`` terms
"""
from __future__ import annotations

import copy
import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from ..config.experiment import ConfigError, apply_overrides, build_experiment, get_path, set_path
from ..config.parser import Tagged
from .loop import Runner
from .metrics import HIGHER_IS_BETTER

ALIASES = {
    "lr": "train.optimizer.init.kwargs.lr",
    "batch_size": "train.batch_size",
    "epochs": "train.num_epochs",
    "num_epochs": "train.num_epochs",
}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    axes: dict
    metric: str = "accuracy"
    mode: str = "max"

    def __post_init__(self):
        if not self.axes:
            raise GridError("grid needs at least one axis")
        for name, values in self.axes.items():
            if not isinstance(values, (list, tuple)) or not values:
                raise GridError(f"grid axis {name!r} must be a non-empty list")
        if self.mode not in ("max", "min"):
            raise GridError(f"mode must be max or min, got {self.mode!r}")
        if self.metric not in HIGHER_IS_BETTER:
            raise GridError(f"unknown selection metric {self.metric!r}")

    @classmethod
    def from_config(cls, section: dict) -> GridSpec:
        if not isinstance(section, dict) or "axes" not in section:
            raise GridError("grid section needs 'axes'")
        metric = section.get("metric", "accuracy")
        mode = section.get("mode", "max" if HIGHER_IS_BETTER.get(metric, True) else "min")
        return cls(dict(section["axes"]), metric, mode)

    def cells(self) -> list[dict]:
        names = list(self.axes)
        return [dict(zip(names, combo)) for combo in itertools.product(*self.axes.values())]


def _criterion_terms(config) -> list:
    crit = get_path(config, "train.criterion")
    while isinstance(crit, Tagged):
        crit = crit.value
    if isinstance(crit, dict) and "terms" in crit:
        return crit["terms"]
    if isinstance(crit, dict) and "key" in crit:
        raise GridError("tau/alpha axes need train.criterion written as {terms: [...]}")
    raise GridError("train.criterion has no terms")


def apply_cell(config, cell: dict):
    config = copy.deepcopy(config)
    config.pop("grid", None)
    for name, value in cell.items():
        if name in ("tau", "alpha"):
            for term in _criterion_terms(config):
                # plain {kind, weight, tau} mappings or loss.term calls
                fields = term.value.get("init", {}).get("kwargs", {}) if isinstance(term, Tagged) else term
                kind = fields.get("kind")
                if name == "tau" and kind == "kd_kl":
                    fields["tau"] = value
                elif name == "alpha" and kind == "cross_entropy":
                    fields["weight"] = value
                elif name == "alpha" and kind == "kd_kl":
                    fields["weight"] = 1.0 - value
        else:
            set_path(config, ALIASES.get(name, name), value)
    return config


def _run_cell(args):
    index, cell, config, registry_factory, out_root = args
    from ..builtins import default_registry

    registry = (registry_factory or default_registry)()
    plan = build_experiment(config, registry, name=f"cell{index}")
    out_dir = Path(out_root) / f"cell{index:03d}" if out_root is not None else None
    result = Runner(plan, out_dir).run()
    return index, result.dev, result.test


def select_best(rows: list[dict], metric: str, mode: str = "max") -> int:
    """Index of the best row by ``dev_<metric>``; earliest wins ties."""
    if not rows:
        raise GridError("empty result table")
    key = f"dev_{metric}"
    best = 0
    for i, row in enumerate(rows):
        v, b = row[key], rows[best][key]
        if math.isnan(b) and not math.isnan(v):
            best = i
        elif (mode == "max" and v > b) or (mode == "min" and v < b):
            best = i
    return best


@dataclass
class GridResult:
    best_index: int
    best_cell: dict
    best_config: object
    rows: list[dict]


def run_grid(grid: GridSpec, base_config, jobs: int = 1, registry_factory=None,
             table_path: str | Path | None = None, overrides=(),
             out_root: str | Path | None = None) -> GridResult:
    """Train every cell; with ``out_root`` each cell keeps its artifacts in ``cellNNN/``."""
    base = apply_overrides(base_config, overrides)
    cells = grid.cells()
    if not cells:
        raise GridError("empty grid")
    configs = [apply_cell(base, c) for c in cells]
    work = [(i, c, cfg, registry_factory, out_root) for i, (c, cfg) in enumerate(zip(cells, configs))]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_cell, work))
    else:
        outcomes = [_run_cell(w) for w in work]
    by_index = {i: (dev, test) for i, dev, test in outcomes}
    rows = []
    for i, cell in enumerate(cells):
        dev, test = by_index[i]
        row = {"cell": i, **cell}
        row.update({f"dev_{k}": v for k, v in dev.items()})
        row.update({f"test_{k}": v for k, v in test.items()})
        rows.append(row)
    if f"dev_{grid.metric}" not in rows[0]:
        raise ConfigError(f"selection metric {grid.metric!r} is not among the dev metrics")
    best = select_best(rows, grid.metric, grid.mode)
    if table_path is not None:
        write_table(rows, table_path)
    return GridResult(best, cells[best], configs[best], rows)


def write_table(rows: list[dict], path: str | Path) -> None:
    fields = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
