"""Built-in components, registered at import time under stable keys."""
from __future__ import annotations

from .config.registry import Registry
from .datasets import DatasetSpec
from .distillation import LossTermSpec, WeightedSumLoss
from .modeling import MLP, SmallCNN
from .training import metrics
from .training.optim import AdamConfig, ConstantSchedule, SGDConfig, StepSchedule
from . import transforms as _tf


def mlp(in_dim: int, hidden: list, out_dim: int, task: str = "classification") -> MLP:
    return MLP(in_dim, hidden, out_dim, task=task)


def small_cnn(in_channels: int, out_dim: int, channels: list = (8, 16), kernel_size: int = 3) -> SmallCNN:
    return SmallCNN(in_channels, out_dim, channels=list(channels), kernel_size=kernel_size)


def blobs(n_train: int, n_dev: int, n_test: int, dims: int = 2, classes: int = 3,
          noise: float = 1.0, separation: float = 4.0, image_shape: list | None = None) -> DatasetSpec:
    return DatasetSpec("blobs", n_train, n_dev, n_test, dims=dims, classes=classes, noise=noise,
                       separation=separation,
                       image_shape=tuple(image_shape) if image_shape is not None else None)


def rings(n_train: int, n_dev: int, n_test: int, classes: int = 3, noise: float = 0.15) -> DatasetSpec:
    return DatasetSpec("rings", n_train, n_dev, n_test, dims=2, classes=classes, noise=noise)


def linear_regression(n_train: int, n_dev: int, n_test: int, dims: int = 5,
                      noise: float = 0.1) -> DatasetSpec:
    return DatasetSpec("linear_regression", n_train, n_dev, n_test, dims=dims, noise=noise)


def sgd(lr: float, momentum: float = 0.0) -> SGDConfig:
    return SGDConfig(lr, momentum)


def adam(lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamConfig:
    return AdamConfig(lr, beta1, beta2, eps)


def constant_schedule() -> ConstantSchedule:
    return ConstantSchedule()


def step_schedule(gamma: float, milestones: list) -> StepSchedule:
    return StepSchedule(gamma, tuple(milestones))


def loss_term(kind: str, weight: float = 1.0, slots: dict | None = None, tau: float | None = None,
              adapter: str | None = None) -> LossTermSpec:
    return LossTermSpec(kind, weight, dict(slots or {}), tau, adapter)


def weighted_sum(terms: list) -> WeightedSumLoss:
    return WeightedSumLoss(tuple(as_term(t) for t in terms))


def kd(alpha: float, tau: float) -> WeightedSumLoss:
    """Hard-label CE weighted by alpha plus the tau^2-scaled KL term weighted by 1 - alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return WeightedSumLoss((LossTermSpec("cross_entropy", alpha),
                            LossTermSpec("kd_kl", 1.0 - alpha, tau=tau)))


def regression_kd() -> WeightedSumLoss:
    return WeightedSumLoss((
        LossTermSpec("mse", 1.0, {"input": "student.prediction", "target": "batch.target"}),
        LossTermSpec("mse", 1.0, {"input": "student.prediction", "target": "teacher.prediction"}),
    ))


def as_term(t) -> LossTermSpec:
    if isinstance(t, LossTermSpec):
        return t
    if isinstance(t, dict):
        unknown = set(t) - {"kind", "weight", "slots", "tau", "adapter"}
        if unknown:
            raise ValueError(f"loss term has unknown fields {sorted(unknown)}")
        weight = t.get("weight", 1.0)
        tau = t.get("tau")
        return LossTermSpec(t.get("kind"), float(weight), dict(t.get("slots") or {}),
                            None if tau is None else float(tau), t.get("adapter"))
    raise ValueError(f"cannot interpret {t!r} as a loss term")


def compose(transforms: list) -> _tf.Compose:
    return _tf.Compose(tuple(transforms))


def random_crop(size: int, padding: int = 0):
    return _tf.RandomCrop(size, padding)


def random_horizontal_flip(p: float = 0.5):
    return _tf.RandomHorizontalFlip(p)


def to_tensor():
    return _tf.ToTensor()


def normalize(mean: list, std: list):
    return _tf.Normalize(tuple(mean), tuple(std))


BUILTINS = [
    ("model.mlp", "model", mlp),
    ("model.small_cnn", "model", small_cnn),
    ("dataset.blobs", "dataset", blobs),
    ("dataset.rings", "dataset", rings),
    ("dataset.linear_regression", "dataset", linear_regression),
    ("optimizer.sgd", "optimizer", sgd),
    ("optimizer.adam", "optimizer", adam),
    ("scheduler.constant", "scheduler", constant_schedule),
    ("scheduler.step", "scheduler", step_schedule),
    ("loss.term", "loss", loss_term),
    ("loss.weighted_sum", "loss", weighted_sum),
    ("loss.kd", "loss", kd),
    ("loss.regression_kd", "loss", regression_kd),
    ("transform.compose", "transform", compose),
    ("transform.random_crop", "transform", random_crop),
    ("transform.random_horizontal_flip", "transform", random_horizontal_flip),
    ("transform.to_tensor", "transform", to_tensor),
    ("transform.normalize", "transform", normalize),
    ("metric.accuracy", "metric", metrics.accuracy),
    ("metric.mse", "metric", metrics.mean_squared_error),
]


def default_registry() -> Registry:
    """A fresh registry holding every built-in component."""
    reg = Registry()
    for key, kind, builder in BUILTINS:
        reg.register(key, kind, builder)
    return reg
