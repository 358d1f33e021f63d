"""The epoch loop that every config-driven run goes through.

Random streams are derived from the experiment seed per epoch
(``shuffle/<epoch>``, ``teacher-shuffle/<epoch>``), so a run resumed from
a checkpoint at epoch k replays exactly the batches an uninterrupted run
would have seen.
"""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..datasets import iterate_batches
from ..distillation import LossTermSpec, NonFiniteLossError, TrainingBox, WeightedSumLoss
from ..modeling import ModelSide
from ..rng import stream
from .checkpoint import TrainingState, load_checkpoint, load_into, save_checkpoint
from .metrics import HIGHER_IS_BETTER, evaluate
from .optim import lr_at_epoch

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "split", "metric", "value", "lr", "seconds")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    terms: dict[str, float]
    dev: dict[str, float]
    lr: float
    seconds: float


@dataclass
class RunResult:
    history: list[EpochStats] = field(default_factory=list)
    dev: dict[str, float] = field(default_factory=dict)
    test: dict[str, float] = field(default_factory=dict)


class TrainingLog:
    """Append-only tab-separated log: epoch, split, metric, value, lr, seconds."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self.records: list[tuple] = []

    def write(self, epoch: int, split: str, metric: str, value: float, lr: float, seconds: float) -> None:
        record = (epoch, split, metric, value, lr, seconds)
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write("\t".join([str(epoch), split, metric, repr(float(value)),
                                    repr(float(lr)), f"{seconds:.6f}"]) + "\n")


def read_log(path: str | Path) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        epoch, split, metric, value, lr, seconds = line.split("\t")
        rows.append({"epoch": int(epoch), "split": split, "metric": metric, "value": float(value),
                     "lr": float(lr), "seconds": float(seconds)})
    return rows


class Runner:
    def __init__(self, plan, out_dir: str | Path | None = None):
        self.plan = plan
        self.box: TrainingBox = plan.box
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            plan.log_path = self.out_dir / "train.log"
            plan.checkpoint_path = self.out_dir / "checkpoint.kdf"
        self.log = TrainingLog(plan.log_path)
        self.base_lr = plan.optimizer_spec.lr
        self.optimizer = plan.optimizer_spec.build(self.box.trainable_parameters())
        self.epoch = 0
        self.best_metric = math.nan
        self.teacher_ready = plan.teacher_pretrain is None

    # -- teacher ----------------------------------------------------------
    def pretrain_teacher(self) -> None:
        spec = self.plan.teacher_pretrain
        if spec is None or self.teacher_ready:
            return
        teacher = self.box.teacher.model
        kind = "cross_entropy" if teacher.task == "classification" else "mse"
        slot = "student.logits" if kind == "cross_entropy" else "student.prediction"
        target = "batch.label" if kind == "cross_entropy" else "batch.target"
        teacher.unfreeze()
        try:
            solo = TrainingBox(ModelSide("student", teacher, self.box.teacher.cache, {}),
                               WeightedSumLoss((LossTermSpec(kind, 1.0, {"input": slot, "target": target}),)))
            opt = spec.optimizer_spec.build(solo.trainable_parameters())
            for epoch in range(spec.num_epochs):
                rng = stream(self.plan.seed, f"teacher-shuffle/{epoch}")
                for batch in iterate_batches(self.plan.dataset.train, spec.batch_size, rng):
                    opt.zero_grad()
                    solo.step(batch)
                    opt.step()
        finally:
            teacher.freeze()
        self.teacher_ready = True
        if self.plan.teacher is not None:
            scores = evaluate(teacher, self.plan.dataset.test, self.plan.test_metrics)
            for m, v in scores.items():
                self.log.write(0, "teacher-test", m, v, spec.optimizer_spec.lr, 0.0)

    # -- epochs -----------------------------------------------------------
    def train_epoch(self, epoch: int) -> EpochStats:
        start = time.perf_counter()
        lr = lr_at_epoch(self.plan.scheduler_spec, self.base_lr, epoch)
        self.optimizer.lr = lr
        rng = stream(self.plan.seed, f"shuffle/{epoch}")
        total, count = 0.0, 0
        term_sums: dict[str, float] = {}
        for batch in iterate_batches(self.plan.dataset.train, self.plan.batch_size, rng):
            n = len(batch["input"].data)
            self.optimizer.zero_grad()
            loss, terms = self.box.step(batch)
            if not math.isfinite(loss):
                raise NonFiniteLossError("total", loss)
            self.optimizer.step()
            total += loss * n
            count += n
            for k, v in terms.items():
                term_sums[k] = term_sums.get(k, 0.0) + v * n
        dev = evaluate(self.box.student.model, self.plan.dataset.dev, self.plan.metrics)
        seconds = time.perf_counter() - start
        stats = EpochStats(epoch, total / count, {k: v / count for k, v in term_sums.items()},
                           dev, lr, seconds)
        self.log.write(epoch, "train", "loss", stats.loss, lr, seconds)
        for k, v in stats.terms.items():
            self.log.write(epoch, "train", k, v, lr, seconds)
        for k, v in dev.items():
            self.log.write(epoch, "dev", k, v, lr, seconds)
        log.info("epoch %d loss %.6f dev %s", epoch, stats.loss, dev)
        metric = self.plan.selection_metric
        better = max if HIGHER_IS_BETTER[metric] else min
        self.best_metric = dev[metric] if math.isnan(self.best_metric) else better(self.best_metric, dev[metric])
        self.epoch = epoch + 1
        return stats

    def run(self, stop_after: int | None = None) -> RunResult:
        """Train up to ``stop_after`` completed epochs (default: all), then score dev/test."""
        self.pretrain_teacher()
        result = RunResult()
        end = self.plan.num_epochs if stop_after is None else min(stop_after, self.plan.num_epochs)
        while self.epoch < end:
            result.history.append(self.train_epoch(self.epoch))
            if self.plan.checkpoint_path is not None:
                save_checkpoint(self.plan.checkpoint_path, self.state())
        result.dev = evaluate(self.box.student.model, self.plan.dataset.dev, self.plan.metrics)
        if self.epoch >= self.plan.num_epochs:
            result.test = evaluate(self.box.student.model, self.plan.dataset.test, self.plan.test_metrics)
            lr = lr_at_epoch(self.plan.scheduler_spec, self.base_lr, self.plan.num_epochs - 1)
            for k, v in result.test.items():
                self.log.write(self.epoch, "test", k, v, lr, 0.0)
            if self.out_dir is not None:
                self.write_outputs(result)
        return result

    def write_outputs(self, result: RunResult) -> None:
        save_checkpoint(self.out_dir / "student.kdf", self.student_state())
        metrics = {f"dev_{k}": v for k, v in result.dev.items()}
        metrics.update({f"test_{k}": v for k, v in result.test.items()})
        (self.out_dir / "metrics.json").write_text(json.dumps(metrics) + "\n", encoding="utf-8")

    # -- state ------------------------------------------------------------
    def student_state(self) -> TrainingState:
        params = {n: p.data.copy() for n, p in self.box.student.model.named_parameters()}
        return TrainingState(self.plan.seed, self.epoch, self.best_metric, params, {}, {})

    def state(self) -> TrainingState:
        state = self.student_state()
        state.optimizer = self.optimizer.state_dict()
        aux = {}
        if self.box.teacher is not None:
            aux.update({f"teacher.{n}": p.data.copy() for n, p in self.box.teacher.model.named_parameters()})
        for name, a in self.box.adapters.items():
            aux.update({f"adapter.{name}.{n}": p.data.copy() for n, p in a.named_parameters()})
        state.auxiliary = aux
        return state

    def restore(self, state: TrainingState) -> None:
        if state.seed != self.plan.seed:
            log.warning("checkpoint seed %d differs from plan seed %d", state.seed, self.plan.seed)
        load_into(dict(self.box.student.model.named_parameters()), state.params, "student")
        aux = state.auxiliary
        if self.box.teacher is not None:
            prefix = "teacher."
            load_into(dict(self.box.teacher.model.named_parameters()),
                      {k[len(prefix):]: v for k, v in aux.items() if k.startswith(prefix)}, "teacher")
            self.teacher_ready = True
        for name, a in self.box.adapters.items():
            prefix = f"adapter.{name}."
            load_into(dict(a.named_parameters()),
                      {k[len(prefix):]: v for k, v in aux.items() if k.startswith(prefix)}, f"adapter {name}")
        self.optimizer.load_state_dict(state.optimizer)
        self.epoch = state.epoch
        self.best_metric = state.best_metric

    def resume(self, path: str | Path) -> None:
        self.restore(load_checkpoint(path))


def train_epoch(runner: Runner, epoch: int) -> EpochStats:
    return runner.train_epoch(epoch)


def run_experiment(plan, out_dir: str | Path | None = None) -> RunResult:
    return Runner(plan, out_dir).run()


def params_snapshot(model) -> dict[str, np.ndarray]:
    return {n: p.data.copy() for n, p in model.named_parameters()}
