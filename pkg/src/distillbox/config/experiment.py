"""Turn a parsed experiment config into a fully resolved, validated plan.

Top-level sections::

    seed: int                      # required
    datasets: !import_call ...     # required; a dataset.* builder
    models:                        # required
      student: {model: !import_call ..., hooks: [...]}
      teacher: {model: ..., hooks: [...], checkpoint: path, pretrain: {...}}   # optional
      adapters: [{name, side, slot, out_dim, trainable, init}]                # optional
    train:                         # required
      num_epochs, batch_size, optimizer, scheduler, criterion, metrics
    test: {metrics: [...]}         # optional
    requires: [registry keys]      # optional, checked up front
    grid: {axes: {...}, metric, mode}   # optional, used by sweeps
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from pathlib import Path

from ..builtins import as_term, default_registry
from ..datasets import Dataset, DatasetSpec, generate
from ..distillation import DistillationBox, LossTermSpec, TrainingBox, WeightedSumLoss
from ..modeling import HookHandle, Model, ModelSide, attach_adapter, init_parameters
from ..rng import stream
from ..training.checkpoint import load_checkpoint, load_into
from ..training.metrics import METRICS
from ..training.optim import AdamConfig, ConstantSchedule, SGDConfig, StepSchedule
from .instantiate import InstantiationError, resolve_config
from .parser import Tagged, parse_config
from .registry import Registry

log = logging.getLogger(__name__)

REQUIRED_SECTIONS = ("seed", "datasets", "models", "train")
OPTIONAL_SECTIONS = ("test", "requires", "grid", "name")


class ConfigError(ValueError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class PretrainSpec:
    num_epochs: int
    batch_size: int
    optimizer_spec: object


@dataclass
class ExperimentPlan:
    name: str
    seed: int
    dataset: Dataset
    box: TrainingBox
    optimizer_spec: object
    scheduler_spec: object
    num_epochs: int
    batch_size: int
    metrics: list[str]
    test_metrics: list[str]
    teacher_pretrain: PretrainSpec | None = None
    config: object = None
    log_path: Path | None = None
    checkpoint_path: Path | None = None
    components: list[str] = field(default_factory=list)

    @property
    def datasets(self) -> dict:
        return self.dataset.splits

    @property
    def student(self) -> Model:
        return self.box.student.model

    @property
    def teacher(self) -> Model | None:
        return self.box.teacher.model if self.box.teacher is not None else None

    @property
    def selection_metric(self) -> str:
        return self.metrics[0]


def load_config_file(path: str | Path):
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _components(node, path: str = "") -> list[str]:
    """List ``path -> key`` for every !import_call node, in post-order."""
    out = []
    if isinstance(node, Tagged):
        if node.tag == "import_call" and isinstance(node.value, dict):
            out += _components(node.value.get("init"), f"{path}.init" if path else "init")
            out.append(f"{path or '<root>'} -> {node.value.get('key')}")
        return out
    if isinstance(node, dict):
        for k, v in node.items():
            out += _components(v, f"{path}.{k}" if path else str(k))
    elif isinstance(node, list):
        for i, v in enumerate(node):
            out += _components(v, f"{path}.{i}")
    return out


def _positive_int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 1:
        raise ConfigError(f"must be an integer >= 1, got {value!r}", path)
    return value


def _expect(value, types, path: str, what: str):
    if not isinstance(value, types):
        raise ConfigError(f"expected {what}, got {type(value).__name__}", path)
    return value


def _metric_list(value, registry: Registry, path: str) -> list[str]:
    if isinstance(value, str):
        value = [value]
    _expect(value, list, path, "a list of metric names")
    for m in value:
        if f"metric.{m}" not in registry or m not in METRICS:
            raise ConfigError(f"unknown metric {m!r}", path)
    if not value:
        raise ConfigError("at least one metric is required", path)
    return list(value)


def _criterion(value, path: str) -> WeightedSumLoss:
    if isinstance(value, WeightedSumLoss):
        return value
    if isinstance(value, LossTermSpec):
        return WeightedSumLoss((value,))
    if isinstance(value, dict) and set(value) == {"terms"}:
        try:
            return WeightedSumLoss(tuple(as_term(t) for t in _expect(value["terms"], list, path, "terms")))
        except ValueError as exc:
            raise ConfigError(str(exc), path) from None
    raise ConfigError("criterion must be {terms: [...]} or a loss.* component", path)


def _hooks(value, path: str) -> list[HookHandle]:
    if value is None:
        return []
    out = []
    for i, h in enumerate(_expect(value, list, path, "a list of hooks")):
        _expect(h, dict, f"{path}.{i}", "a hook mapping {path, slot, capture}")
        unknown = set(h) - {"path", "slot", "capture"}
        if unknown or "slot" not in h:
            raise ConfigError(f"hook needs 'slot' (+ 'path', 'capture'); unknown {sorted(unknown)}",
                              f"{path}.{i}")
        out.append(HookHandle(str(h.get("path", "")), str(h["slot"]), str(h.get("capture", "output"))))
    return out


def _optimizer(value, path: str):
    if not isinstance(value, (SGDConfig, AdamConfig)):
        raise ConfigError("optimizer must be an optimizer.* component", path)
    return value


def _side(section, name: str, path: str):
    _expect(section, dict, path, f"a mapping with '{name}' model settings")
    allowed = {"model", "hooks"} | ({"checkpoint", "pretrain"} if name == "teacher" else set())
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)}", path)
    model = section.get("model")
    if not isinstance(model, Model):
        raise ConfigError("'model' must be a model.* component", f"{path}.model")
    return model, _hooks(section.get("hooks"), f"{path}.hooks")


def _check_head(model: Model, data: Dataset, path: str) -> None:
    if model.task != data.task:
        raise ConfigError(f"model task {model.task!r} does not match dataset task {data.task!r}", path)
    if model.out_dim != data.output_dim:
        raise ConfigError(f"model head width {model.out_dim} != dataset output size {data.output_dim}"
                          f" ({'classes' if data.task == 'classification' else 'target dims'})", path)
    in_dim = getattr(model, "in_dim", None)
    features = int(data.train.inputs[0].size)
    if in_dim is not None and in_dim != features:
        raise ConfigError(f"model input width {in_dim} != dataset feature count {features}", path)


def build_experiment(config, registry: Registry | None = None, name: str = "experiment") -> ExperimentPlan:
    """Resolve ``config`` against ``registry`` and validate it into an :class:`ExperimentPlan`."""
    registry = registry if registry is not None else default_registry()
    registry.freeze()
    _expect(config, dict, "<root>", "a mapping of sections")
    for section in REQUIRED_SECTIONS:
        if section not in config:
            raise ConfigError(f"missing required section {section!r}")
    unknown = set(config) - set(REQUIRED_SECTIONS) - set(OPTIONAL_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level sections {sorted(unknown)}")
    for key in config.get("requires") or []:
        if key not in registry:
            raise ConfigError(f"required component {key!r} is not registered", "requires")

    try:
        resolved = resolve_config(config, registry)
    except InstantiationError as exc:
        raise ConfigError(str(exc)) from exc

    seed = resolved["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}", "seed")

    data = resolved["datasets"]
    if isinstance(data, DatasetSpec):
        data = generate(data, seed)
    if not isinstance(data, Dataset):
        raise ConfigError("must be a dataset.* component", "datasets")

    models = _expect(resolved["models"], dict, "models", "a mapping")
    unknown = set(models) - {"student", "teacher", "adapters"}
    if unknown:
        raise ConfigError(f"unknown fields {sorted(unknown)}", "models")
    if "student" not in models:
        raise ConfigError("missing 'student'", "models")
    student_model, student_hooks = _side(models["student"], "student", "models.student")
    _check_head(student_model, data, "models.student.model")
    init_parameters(student_model, stream(seed, "init.student"))
    student = ModelSide.build("student", student_model, student_hooks)

    teacher = None
    pretrain = None
    if "teacher" in models:
        tcfg = models["teacher"]
        teacher_model, teacher_hooks = _side(tcfg, "teacher", "models.teacher")
        _check_head(teacher_model, data, "models.teacher.model")
        init_parameters(teacher_model, stream(seed, "init.teacher"))
        if tcfg.get("checkpoint"):
            state = load_checkpoint(tcfg["checkpoint"])
            load_into(dict(teacher_model.named_parameters()), state.params, "teacher")
        elif tcfg.get("pretrain") is not None:
            pcfg = _expect(tcfg["pretrain"], dict, "models.teacher.pretrain", "a mapping")
            pretrain = PretrainSpec(
                _positive_int(pcfg.get("num_epochs"), "models.teacher.pretrain.num_epochs"),
                _positive_int(pcfg.get("batch_size"), "models.teacher.pretrain.batch_size"),
                _optimizer(pcfg.get("optimizer"), "models.teacher.pretrain.optimizer"),
            )
        teacher_model.freeze()
        teacher = ModelSide.build("teacher", teacher_model, teacher_hooks)

    adapters = []
    for i, acfg in enumerate(models.get("adapters") or []):
        path = f"models.adapters.{i}"
        _expect(acfg, dict, path, "an adapter mapping")
        side_name = acfg.get("side", "student")
        side = {"student": student, "teacher": teacher}.get(side_name)
        if side is None:
            raise ConfigError(f"adapter side {side_name!r} is not available", path)
        name = acfg.get("name") or f"{side_name}_{acfg.get('slot')}_adapter"
        try:
            adapters.append(attach_adapter(
                side, acfg.get("slot"), _positive_int(acfg.get("out_dim"), f"{path}.out_dim"),
                name=name, trainable=acfg.get("trainable"),
                rng=stream(seed, f"init.adapter.{name}"),
                identity=acfg.get("init") == "identity"))
        except ValueError as exc:
            raise ConfigError(str(exc), path) from None

    train = _expect(resolved["train"], dict, "train", "a mapping")
    num_epochs = _positive_int(train.get("num_epochs"), "train.num_epochs")
    batch_size = _positive_int(train.get("batch_size"), "train.batch_size")
    optimizer_spec = _optimizer(train.get("optimizer"), "train.optimizer")
    scheduler_spec = train.get("scheduler") or ConstantSchedule()
    if not isinstance(scheduler_spec, (ConstantSchedule, StepSchedule)):
        raise ConfigError("scheduler must be a scheduler.* component", "train.scheduler")
    default_metric = "accuracy" if data.task == "classification" else "mse"
    metrics = _metric_list(train.get("metrics", [default_metric]), registry, "train.metrics")
    test = resolved.get("test") or {}
    test_metrics = _metric_list(test.get("metrics", metrics), registry, "test.metrics")

    if "criterion" in train:
        criterion = _criterion(train["criterion"], "train.criterion")
    elif teacher is None:
        kind = "cross_entropy" if data.task == "classification" else "mse"
        criterion = WeightedSumLoss((LossTermSpec(kind),))
    else:
        raise ConfigError("a distillation experiment needs an explicit criterion", "train.criterion")

    try:
        if teacher is None:
            box = TrainingBox(student, criterion, adapters)
        else:
            box = DistillationBox(teacher, student, criterion, adapters)
    except ValueError as exc:
        raise ConfigError(str(exc), "train.criterion") from None

    return ExperimentPlan(
        name=str(config.get("name") or name), seed=seed, dataset=data, box=box,
        optimizer_spec=optimizer_spec, scheduler_spec=scheduler_spec,
        num_epochs=num_epochs, batch_size=batch_size, metrics=metrics, test_metrics=test_metrics,
        teacher_pretrain=pretrain, config=copy.deepcopy(config), components=_components(config),
    )


# ---------------------------------------------------------------------------
# overrides


def set_path(config, dotted: str, value) -> None:
    """Set ``a.b.c`` inside a parsed config, stepping through tagged nodes transparently.

    Every intermediate node must exist; the final key may be new only in a mapping.
    """
    parts = dotted.split(".")
    node = config
    for i, part in enumerate(parts):
        while isinstance(node, Tagged):
            node = node.value
        last = i == len(parts) - 1
        where = ".".join(parts[:i + 1])
        if isinstance(node, dict):
            if last:
                node[part] = value
                return
            if part not in node:
                raise ConfigError(f"override path does not exist in config", where)
            if node[part] is None and not last:
                node[part] = {}
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            if last:
                node[int(part)] = value
                return
            node = node[int(part)]
        else:
            raise ConfigError("override path does not exist in config", where)


def get_path(config, dotted: str):
    node = config
    for part in dotted.split("."):
        while isinstance(node, Tagged):
            node = node.value
        if isinstance(node, dict) and part in node:
            node = node[part]
        elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
            node = node[int(part)]
        else:
            raise ConfigError("path does not exist in config", dotted)
    return node


def parse_override(text: str) -> tuple[str, object]:
    """``a.b.c=value`` with ``value`` read by the config scalar/flow rules."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form a.b.c=value")
    path, raw = text.split("=", 1)
    path = path.strip()
    if not path:
        raise ConfigError(f"override {text!r} has an empty path")
    value = parse_config(f"v: {raw.strip()}")["v"] if raw.strip() else None
    return path, value


def apply_overrides(config, overrides) -> object:
    config = copy.deepcopy(config)
    for item in overrides:
        path, value = parse_override(item) if isinstance(item, str) else item
        set_path(config, path, value)
    return config
