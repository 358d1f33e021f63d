"""SGD with momentum and Adam over named parameters.

Optimizer configs are small frozen dataclasses produced by the registry; they
are bound to the trainable parameters once the model graph exists.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tensor import Parameter


class OptimizerError(ValueError):
    pass


class Optimizer:
    def __init__(self, named_params: list[tuple[str, Parameter]], lr: float):
        self.named_params = [(n, p) for n, p in named_params if p.requires_grad]
        names = [n for n, _ in self.named_params]
        if len(set(names)) != len(names):
            raise OptimizerError("parameter names must be unique")
        self.lr = lr

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def _grads(self):
        for name, p in self.named_params:
            if p.frozen:
                continue
            if p.grad is None:
                raise OptimizerError(f"trainable parameter {name!r} has no gradient")
            yield name, p, p.grad

    def step(self) -> None:
        raise NotImplementedError

    def state_dict(self) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        raise NotImplementedError


class SGD(Optimizer):
    def __init__(self, named_params, lr: float, momentum: float = 0.0):
        if not lr >= 0:
            raise OptimizerError(f"lr must be >= 0, got {lr}")
        if not 0 <= momentum < 1:
            raise OptimizerError(f"momentum must lie in [0, 1), got {momentum}")
        super().__init__(named_params, lr)
        self.momentum = momentum
        self.velocity = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self) -> None:
        for name, p, g in self._grads():
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= self.lr * v

    def state_dict(self):
        return {f"sgd.velocity.{n}": v.copy() for n, v in self.velocity.items()}

    def load_state_dict(self, state):
        for n in self.velocity:
            self.velocity[n] = _take(state, f"sgd.velocity.{n}", self.velocity[n].shape).copy()


class Adam(Optimizer):
    def __init__(self, named_params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if not lr >= 0:
            raise OptimizerError(f"lr must be >= 0, got {lr}")
        super().__init__(named_params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self) -> None:
        grads = list(self._grads())
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p, g in grads:
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self):
        state = {"adam.step": np.array(float(self.t))}
        for n in self.m:
            state[f"adam.m.{n}"] = self.m[n].copy()
            state[f"adam.v.{n}"] = self.v[n].copy()
        return state

    def load_state_dict(self, state):
        self.t = int(_take(state, "adam.step", ()))
        for n in self.m:
            self.m[n] = _take(state, f"adam.m.{n}", self.m[n].shape).copy()
            self.v[n] = _take(state, f"adam.v.{n}", self.v[n].shape).copy()


def _take(state: dict, key: str, shape) -> np.ndarray:
    if key not in state:
        raise OptimizerError(f"optimizer state lacks {key!r}")
    value = np.asarray(state[key])
    if value.shape != tuple(shape):
        raise OptimizerError(f"optimizer state {key!r} has shape {value.shape}, expected {tuple(shape)}")
    return value


@dataclass(frozen=True)
class SGDConfig:
    lr: float
    momentum: float = 0.0

    def build(self, named_params) -> SGD:
        return SGD(named_params, self.lr, self.momentum)


@dataclass(frozen=True)
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def build(self, named_params) -> Adam:
        return Adam(named_params, self.lr, self.beta1, self.beta2, self.eps)


# ---------------------------------------------------------------------------
# schedules (epoch granularity)


@dataclass(frozen=True)
class ConstantSchedule:
    def lr_at_epoch(self, base_lr: float, epoch: int) -> float:
        return base_lr


@dataclass(frozen=True)
class StepSchedule:
    gamma: float
    milestones: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))

    def lr_at_epoch(self, base_lr: float, epoch: int) -> float:
        passed = sum(1 for m in self.milestones if m <= epoch)
        return base_lr * self.gamma ** passed


def lr_at_epoch(schedule, base_lr: float, epoch: int) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return schedule.lr_at_epoch(base_lr, epoch)
