"""Command-line entry point: every experiment is driven by a config file.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .builtins import default_registry
from .config.experiment import ConfigError, ExperimentPlan, apply_overrides, build_experiment, load_config_file
from .config.instantiate import InstantiationError
from .config.parser import ConfigSyntaxError, serialize_config
from .config.registry import RegistryError
from .datasets import DatasetError
from .distillation import NonFiniteLossError
from .training.checkpoint import CheckpointError, load_checkpoint, load_into
from .training.grid import GridError, GridSpec, run_grid
from .training.loop import Runner
from .training.metrics import evaluate

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

CONFIG_ERRORS = (ConfigError, ConfigSyntaxError, InstantiationError, RegistryError, DatasetError,
                 GridError, FileNotFoundError, IsADirectoryError)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distillbox", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [("train", "train the configured model (or distillation box)"),
                            ("distill", "train a teacher-student distillation box"),
                            ("sweep", "run the config's hyperparameter grid"),
                            ("eval", "evaluate a saved student checkpoint"),
                            ("validate", "parse and build the experiment without training")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config_path", nargs="?", help="config file (same as --config)")
        p.add_argument("--config", dest="config_flag", help="config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", default="runs", help="root directory for run outputs (default: runs)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="A.B=C",
                       help="override a config value (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="parallel grid cells")
        if name in ("train", "distill"):
            p.add_argument("--resume", help="checkpoint to resume from")
            p.add_argument("--validate", action="store_true", help="build the plan and stop (like 'validate')")
        if name == "eval":
            p.add_argument("--checkpoint", help="student checkpoint (default: <run dir>/student.kdf)")
            p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    return parser


def _load(args) -> tuple[object, Path]:
    path = args.config_flag or args.config_path
    if not path:
        raise ConfigError("a config file is required (--config PATH)")
    config = load_config_file(path)
    if not isinstance(config, dict):
        raise ConfigError("config must be a mapping of sections")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    return apply_overrides(config, overrides), Path(path)


def run_dir(out: str | Path, config_path: Path, seed: int) -> Path:
    return Path(out) / f"{config_path.stem}-seed{seed}"


def _build(config, config_path: Path) -> ExperimentPlan:
    return build_experiment(config, default_registry(), name=config_path.stem)


def cmd_validate(args) -> int:
    config, path = _load(args)
    plan = _build(config, path)
    kind = "distillation box" if plan.box.is_distillation else "single-model trainer"
    print(f"{path}: ok ({kind}, {plan.num_epochs} epochs, batch size {plan.batch_size}, seed {plan.seed})")
    for line in plan.components:
        print(f"  {line}")
    for term in plan.box.criterion.terms:
        extra = f", tau={term.tau:g}" if term.tau is not None else ""
        print(f"  loss term {term.kind} (weight={term.weight:g}{extra})")
    return EXIT_OK


def cmd_train(args, require_teacher: bool = False) -> int:
    if args.validate:
        return cmd_validate(args)
    config, path = _load(args)
    plan = _build(config, path)
    if require_teacher and not plan.box.is_distillation:
        raise ConfigError("'distill' needs models.teacher", "models")
    out = run_dir(args.out, path, plan.seed)
    out.mkdir(parents=True, exist_ok=True)
    if not args.resume:
        (out / "train.log").unlink(missing_ok=True)
    runner = Runner(plan, out)
    if args.resume:
        runner.resume(args.resume)
    result = runner.run()
    (out / "config.yaml").write_text(serialize_config(config), encoding="utf-8")
    print(json.dumps({"run_dir": str(out), "dev": result.dev, "test": result.test}))
    return EXIT_OK


def cmd_eval(args) -> int:
    config, path = _load(args)
    plan = _build(config, path)
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir(args.out, path, plan.seed) / "student.kdf"
    state = load_checkpoint(ckpt)
    load_into(dict(plan.student.named_parameters()), state.params, "student")
    split = plan.dataset.splits[args.split]
    scores = evaluate(plan.student, split, plan.test_metrics)
    print(json.dumps({"split": args.split, **scores}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    config, path = _load(args)
    if "grid" not in config:
        raise ConfigError("sweep needs a 'grid' section", "grid")
    grid = GridSpec.from_config(config["grid"])
    seed = config.get("seed")
    # validate the base experiment before spending time on cells
    _build({k: v for k, v in config.items() if k != "grid"}, path)
    out = run_dir(args.out, path, seed)
    out.mkdir(parents=True, exist_ok=True)
    result = run_grid(grid, config, jobs=args.jobs, table_path=out / "results.csv", out_root=out)
    (out / "best_config.yaml").write_text(serialize_config(result.best_config), encoding="utf-8")
    print(json.dumps({"run_dir": str(out), "best_cell": result.best_index, **result.best_cell,
                      **{k: v for k, v in result.rows[result.best_index].items() if k.startswith(("dev_", "test_"))}}))
    print(serialize_config(result.best_config), end="")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {
        "validate": cmd_validate,
        "train": cmd_train,
        "distill": lambda a: cmd_train(a, require_teacher=True),
        "eval": cmd_eval,
        "sweep": cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
