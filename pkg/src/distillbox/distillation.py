"""Distillation losses and the box that pairs a frozen teacher with a student.

Conventions shared by every loss here:

* natural logarithms;
* the batch mean is taken over examples;
* the teacher side is the *target* of the KL term, i.e. ``KL(teacher || student)``,
  and its tensors never carry gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .modeling import AuxiliaryAdapter, ModelSide, forward
from .tensor import Tensor, no_grad


class LossError(ValueError):
    pass


class NonFiniteLossError(ArithmeticError):
    def __init__(self, term: str, value: float):
        super().__init__(f"loss term {term!r} is not finite ({value})")
        self.term = term
        self.value = value


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise LossError(f"temperature must be > 0, got {tau}")


def _as_detached(x) -> Tensor:
    return Tensor(x.data) if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class SoftenedDistribution:
    probs: Tensor
    temperature: float

    def numpy(self) -> np.ndarray:
        return self.probs.data


def softened_softmax(logits: Tensor, tau: float) -> SoftenedDistribution:
    """Row-wise softmax of ``logits / tau`` (max-subtracted)."""
    _check_tau(tau)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise LossError(f"need (batch, classes>=2) logits, got {logits.shape}")
    return SoftenedDistribution(T.softmax(T.scale(logits, 1.0 / tau), axis=1), float(tau))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise LossError(f"labels {labels.shape} do not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LossError(f"label out of range [0, {logits.shape[1]})")
    return T.scale(T.reduce_mean(T.pick(T.log_softmax(logits, axis=1), labels)), -1.0)


def kd_kl(student_logits: Tensor, teacher_logits, tau: float) -> Tensor:
    """``tau**2 * KL(p || q)`` averaged over the batch; p = softened teacher, q = softened student."""
    _check_tau(tau)
    teacher = _as_detached(teacher_logits)
    if student_logits.shape != teacher.shape or student_logits.ndim != 2:
        raise LossError(f"logit shapes differ: student {student_logits.shape}, teacher {teacher.shape}")
    with no_grad():
        log_p = T.log_softmax(T.scale(teacher, 1.0 / tau), axis=1)
    p = Tensor(np.exp(log_p.data))
    log_q = T.log_softmax(T.scale(student_logits, 1.0 / tau), axis=1)
    per_row = T.reduce_sum(T.mul(p, T.sub(log_p, log_q)), axis=1)
    return T.scale(T.reduce_mean(per_row), tau * tau)


def kd_loss(student_logits: Tensor, teacher_logits, labels, alpha: float, tau: float) -> Tensor:
    """``alpha * CE + (1 - alpha) * tau**2 * KL(p || q)``, batch mean."""
    if not 0.0 <= alpha <= 1.0:
        raise LossError(f"alpha must lie in [0, 1], got {alpha}")
    ce = cross_entropy(student_logits, labels)
    kl = kd_kl(student_logits, teacher_logits, tau)
    return T.add(T.scale(ce, alpha), T.scale(kl, 1.0 - alpha))


def mse(pred: Tensor, target) -> Tensor:
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise LossError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    return T.reduce_mean(T.square(T.sub(pred, target)))


def regression_kd_loss(student_pred: Tensor, teacher_pred, targets) -> Tensor:
    """MSE to the targets plus MSE to the (gradient-free) teacher output."""
    teacher = _as_detached(teacher_pred)
    targets = targets if isinstance(targets, Tensor) else Tensor(targets)
    for name, t in (("teacher", teacher), ("targets", targets)):
        if t.shape != student_pred.shape or t.ndim != 2:
            raise LossError(f"{name} shape {t.shape} != student shape {student_pred.shape} (rank 2 required)")
    return T.add(mse(student_pred, targets), mse(student_pred, teacher))


def feature_mse_loss(student_feat: Tensor, teacher_feat, adapter: AuxiliaryAdapter | None = None) -> Tensor:
    if adapter is not None:
        student_feat = adapter(student_feat)
    teacher = _as_detached(teacher_feat)
    if student_feat.shape != teacher.shape:
        raise LossError(f"feature shapes differ after adaptation: {student_feat.shape} vs {teacher.shape}")
    return mse(student_feat, teacher)


# ---------------------------------------------------------------------------
# loss terms

TERM_ROLES = {
    "cross_entropy": ("input", "target"),
    "kd_kl": ("student", "teacher"),
    "mse": ("input", "target"),
    "feature_mse": ("student", "teacher"),
}

DEFAULT_SLOTS = {
    "cross_entropy": {"input": "student.logits", "target": "batch.label"},
    "kd_kl": {"student": "student.logits", "teacher": "teacher.logits"},
    "mse": {"input": "student.prediction", "target": "batch.target"},
    "feature_mse": {"student": "student.features", "teacher": "teacher.features"},
}


@dataclass(frozen=True)
class LossTermSpec:
    kind: str
    weight: float = 1.0
    slots: dict = field(default_factory=dict)
    tau: float | None = None
    adapter: str | None = None

    def __post_init__(self):
        if self.kind not in TERM_ROLES:
            raise LossError(f"unknown loss kind {self.kind!r}; expected one of {sorted(TERM_ROLES)}")
        if not math.isfinite(self.weight):
            raise LossError(f"term weight must be finite, got {self.weight}")
        if self.kind == "kd_kl":
            _check_tau(1.0 if self.tau is None else self.tau)
        elif self.tau is not None:
            raise LossError(f"tau only applies to kd_kl terms, not {self.kind}")
        merged = dict(DEFAULT_SLOTS[self.kind])
        merged.update(self.slots)
        extra = set(merged) - set(TERM_ROLES[self.kind])
        if extra:
            raise LossError(f"{self.kind} has no slot roles {sorted(extra)}")
        object.__setattr__(self, "slots", merged)

    def __hash__(self):
        return hash((self.kind, self.weight, tuple(sorted(self.slots.items())), self.tau, self.adapter))


@dataclass(frozen=True)
class WeightedSumLoss:
    """Total loss = sum of weight * term."""

    terms: tuple[LossTermSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise LossError("criterion needs at least one term")

    def term_names(self) -> list[str]:
        names, counts = [], {}
        for t in self.terms:
            counts[t.kind] = counts.get(t.kind, 0) + 1
            names.append(t.kind if counts[t.kind] == 1 else f"{t.kind}_{counts[t.kind]}")
        return names


def compute_term(term: LossTermSpec, resolve, adapters: dict[str, AuxiliaryAdapter]) -> Tensor:
    values = {role: resolve(ref) for role, ref in term.slots.items()}
    adapter = adapters.get(term.adapter) if term.adapter else None
    if term.adapter and adapter is None:
        raise LossError(f"unknown adapter {term.adapter!r}")
    if adapter is not None:
        if term.kind != "feature_mse":
            raise LossError(f"adapters only apply to feature_mse terms, not {term.kind}")
        values[adapter.owner] = adapter(values[adapter.owner])
    if term.kind == "cross_entropy":
        return cross_entropy(values["input"], values["target"])
    if term.kind == "kd_kl":
        return kd_kl(values["student"], values["teacher"], 1.0 if term.tau is None else term.tau)
    if term.kind == "mse":
        return mse(values["input"], values["target"])
    student, teacher = values["student"], values["teacher"]
    if student.shape != teacher.shape:
        raise LossError(f"feature shapes differ after adaptation: {student.shape} vs {teacher.shape}")
    return mse(student, teacher)


# ---------------------------------------------------------------------------
# boxes


class TrainingBox:
    """A trainable student and a weighted loss; the degenerate (teacher-less) box."""

    teacher: ModelSide | None = None

    def __init__(self, student: ModelSide, criterion: WeightedSumLoss,
                 adapters: list[AuxiliaryAdapter] = ()):
        self.student = student
        self.criterion = criterion
        self.adapters = {a.name: a for a in adapters}
        self._validate()

    @property
    def is_distillation(self) -> bool:
        return self.teacher is not None

    def _sides(self) -> dict[str, ModelSide]:
        return {"student": self.student}

    def _validate(self) -> None:
        sides = self._sides()
        for term in self.criterion.terms:
            for ref in term.slots.values():
                side, _, name = ref.partition(".")
                if side == "batch":
                    continue
                if side not in sides:
                    raise LossError(f"term {term.kind} refers to unavailable side {side!r} in {ref!r}")
                known = {sides[side].model.output_field, "features"} | set(sides[side].hooks) | \
                    {n for n, a in self.adapters.items() if a.owner == side}
                if name not in known:
                    raise LossError(f"term {term.kind} slot {ref!r} is not produced by the {side} "
                                    f"(available: {sorted(known)})")
            if term.adapter and term.adapter not in self.adapters:
                raise LossError(f"term {term.kind} refers to unknown adapter {term.adapter!r}")

    def trainable_parameters(self) -> list[tuple[str, object]]:
        params = [(f"student.{n}", p) for n, p in self.student.model.named_parameters()]
        for name, a in self.adapters.items():
            params += [(f"adapter.{name}.{n}", p) for n, p in a.named_parameters()]
        return [(n, p) for n, p in params if p.requires_grad]

    def zero_grad(self) -> None:
        for _, p in self.trainable_parameters():
            p.zero_grad()

    def _run_models(self, batch: dict) -> dict[str, dict]:
        return {"student": forward(self.student.model, batch)}

    def compute_loss(self, batch: dict) -> tuple[Tensor, dict[str, float]]:
        outputs = self._run_models(batch)
        sides = self._sides()
        adapted: dict[str, Tensor] = {}

        def resolve(ref: str):
            side, _, name = ref.partition(".")
            if side == "batch":
                if name not in batch:
                    raise LossError(f"slot {ref!r} missing: batch has {sorted(batch)}")
                return batch[name]
            if name in outputs[side]:
                return outputs[side][name]
            if name in sides[side].cache:
                return sides[side].cache[name]
            if name in self.adapters and self.adapters[name].owner == side:
                if name not in adapted:
                    a = self.adapters[name]
                    adapted[name] = a(resolve(f"{side}.{a.slot}"))
                return adapted[name]
            raise LossError(f"slot {ref!r} missing from {side} outputs/caches")

        total = None
        values: dict[str, float] = {}
        for name, term in zip(self.criterion.term_names(), self.criterion.terms):
            value = compute_term(term, resolve, self.adapters)
            v = value.item()
            if not math.isfinite(v):
                raise NonFiniteLossError(name, v)
            values[name] = v
            weighted = T.scale(value, term.weight)
            total = weighted if total is None else T.add(total, weighted)
        return total, values

    def step(self, batch: dict) -> tuple[float, dict[str, float]]:
        """Forward, weighted loss and backward; gradients accumulate on trainable params."""
        loss, values = self.compute_loss(batch)
        loss.backward()
        return loss.item(), values


class DistillationBox(TrainingBox):
    """Frozen teacher + trainable student; the teacher always runs without a graph."""

    def __init__(self, teacher: ModelSide, student: ModelSide, criterion: WeightedSumLoss,
                 adapters: list[AuxiliaryAdapter] = ()):
        self.teacher = teacher
        teacher.model.freeze()
        super().__init__(student, criterion, adapters)

    def _sides(self) -> dict[str, ModelSide]:
        return {"teacher": self.teacher, "student": self.student}

    def _run_models(self, batch: dict) -> dict[str, dict]:
        with no_grad():
            teacher_out = forward(self.teacher.model, batch)
        return {"teacher": teacher_out, "student": forward(self.student.model, batch)}


def distill_step(box: TrainingBox, batch: dict) -> tuple[float, dict[str, float]]:
    return box.step(batch)
