from __future__ import annotations

import numpy as np

from ..datasets import Split
from ..modeling import Model, forward
from ..tensor import no_grad


def accuracy(outputs: dict, split_bundle: dict) -> float:
    # np.argmax returns the first maximum, so ties go to the lowest class index
    predicted = np.argmax(outputs["logits"].data, axis=1)
    return float(np.mean(predicted == split_bundle["label"]))


def mean_squared_error(outputs: dict, split_bundle: dict) -> float:
    diff = outputs["prediction"].data - split_bundle["target"].data
    return float(np.mean(diff * diff))


METRICS = {"accuracy": accuracy, "mse": mean_squared_error}
HIGHER_IS_BETTER = {"accuracy": True, "mse": False}


class MetricError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


def evaluate(model: Model, split: Split, metrics: list[str]) -> dict[str, float]:
    """Score ``model`` on a whole split in one gradient-free forward pass."""
    if len(split) == 0:
        raise ValueError(f"split {split.name!r} is empty")
    unknown = [m for m in metrics if m not in METRICS]
    if unknown:
        raise MetricError(f"unknown metrics {unknown}; known: {sorted(METRICS)}")
    bundle = split.bundle()
    with no_grad():
        outputs = forward(model, bundle)
    return {m: METRICS[m](outputs, bundle) for m in metrics}
