"""Seeded synthetic datasets and batching.

Three generators stand in for real benchmarks:

* ``blobs``: isotropic Gaussian clusters around equidistant centroids.
* ``rings``: concentric noisy annuli in the plane, one class per ring; not
  linearly separable, so capacity matters.
* ``linear_regression``: ``y = X w* + noise`` with a hidden ``w*``.

Labels are assigned round-robin (sample ``i`` of a split gets class
``i % classes``) before features are drawn, which keeps every split balanced
to within one sample per class.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .rng import stream
from .tensor import Tensor

SPLITS = ("train", "dev", "test")
KINDS = ("blobs", "rings", "linear_regression")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str
    n_train: int
    n_dev: int
    n_test: int
    dims: int = 2
    classes: int = 3
    noise: float = 0.0
    separation: float = 4.0
    image_shape: tuple[int, ...] | None = None
    stream_label: str = "data"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")
        if self.noise < 0:
            raise DatasetError(f"noise must be >= 0, got {self.noise}")
        if self.dims < 1:
            raise DatasetError(f"dims must be >= 1, got {self.dims}")
        sizes = (self.n_train, self.n_dev, self.n_test)
        if self.kind == "linear_regression":
            if min(sizes) < 1:
                raise DatasetError(f"split sizes must be >= 1, got {sizes}")
        else:
            if self.classes < 2:
                raise DatasetError(f"classification needs >= 2 classes, got {self.classes}")
            if min(sizes) < self.classes:
                raise DatasetError(f"every split needs n >= classes ({self.classes}), got {sizes}")
        if self.kind == "rings" and self.dims != 2:
            raise DatasetError("rings are planar: dims must be 2")
        if self.image_shape is not None and int(np.prod(self.image_shape)) != self.dims:
            raise DatasetError(f"image_shape {self.image_shape} does not hold {self.dims} features")

    @property
    def task(self) -> str:
        return "regression" if self.kind == "linear_regression" else "classification"


@dataclass
class Split:
    """One data split.  ``indices`` are global sample ids (disjoint across splits)."""

    name: str
    inputs: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.inputs)

    def bundle(self, rows: np.ndarray | None = None) -> dict:
        rows = slice(None) if rows is None else rows
        out = {"input": Tensor(self.inputs[rows])}
        if self.labels is not None:
            out["label"] = self.labels[rows]
        if self.targets is not None:
            out["target"] = Tensor(self.targets[rows])
        return out


@dataclass
class Dataset:
    spec: DatasetSpec
    splits: dict[str, Split] = field(default_factory=dict)

    @property
    def task(self) -> str:
        return self.spec.task

    @property
    def num_classes(self) -> int | None:
        return self.spec.classes if self.task == "classification" else None

    @property
    def output_dim(self) -> int:
        return self.spec.classes if self.task == "classification" else 1

    def __getitem__(self, name: str) -> Split:
        return self.splits[name]

    @property
    def train(self) -> Split:
        return self.splits["train"]

    @property
    def dev(self) -> Split:
        return self.splits["dev"]

    @property
    def test(self) -> Split:
        return self.splits["test"]


def _centroids(classes: int, dims: int, separation: float) -> np.ndarray:
    c = np.zeros((classes, dims))
    if dims >= classes:
        # scaled standard basis: a regular simplex, all pairwise distances equal
        c[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:
        angles = 2 * np.pi * np.arange(classes) / classes
        c[:, 0] = separation * np.cos(angles)
        if dims > 1:
            c[:, 1] = separation * np.sin(angles)
    return c


def generate(spec: DatasetSpec, seed: int = 0) -> Dataset:
    rng = stream(seed, spec.stream_label)
    sizes = {"train": spec.n_train, "dev": spec.n_dev, "test": spec.n_test}
    data = Dataset(spec)
    offset = 0
    if spec.kind == "linear_regression":
        w_star = rng.normal(size=(spec.dims, 1))
        for name in SPLITS:
            n = sizes[name]
            x = rng.normal(size=(n, spec.dims))
            y = x @ w_star + spec.noise * rng.normal(size=(n, 1))
            data.splits[name] = Split(name, x, np.arange(offset, offset + n), targets=y)
            offset += n
        return data
    centroids = _centroids(spec.classes, spec.dims, spec.separation)
    for name in SPLITS:
        n = sizes[name]
        labels = np.arange(n) % spec.classes
        if spec.kind == "blobs":
            x = centroids[labels] + spec.noise * rng.normal(size=(n, spec.dims))
        else:
            radius = (labels + 1.0) + spec.noise * rng.normal(size=n)
            theta = rng.uniform(0.0, 2 * np.pi, size=n)
            x = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        if spec.image_shape is not None:
            x = x.reshape((n,) + tuple(spec.image_shape))
        data.splits[name] = Split(name, x, np.arange(offset, offset + n), labels=labels)
        offset += n
    return data


def iterate_batches(split: Split, batch_size: int, rng: np.random.Generator | None) -> Iterator[dict]:
    """Yield batches of a seeded permutation of ``split``; the last partial batch is kept."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(split)
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield split.bundle(order[start:start + batch_size])


def export_csv(split: Split, path: str | Path) -> None:
    flat = split.inputs.reshape(len(split), -1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"x{i}" for i in range(flat.shape[1])]
        if split.labels is not None:
            header.append("label")
        if split.targets is not None:
            header += [f"y{i}" for i in range(split.targets.shape[1])]
        writer.writerow(header)
        for r in range(len(split)):
            row = [repr(float(v)) for v in flat[r]]
            if split.labels is not None:
                row.append(str(int(split.labels[r])))
            if split.targets is not None:
                row += [repr(float(v)) for v in split.targets[r]]
            writer.writerow(row)


def import_csv(path: str | Path, name: str = "imported") -> Split:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    x = np.array([[float(r[i]) for i in xcols] for r in body]).reshape(len(body), len(xcols))
    split = Split(name, x, np.arange(len(body)))
    if "label" in header:
        li = header.index("label")
        split.labels = np.array([int(r[li]) for r in body], dtype=np.int64)
    if ycols:
        split.targets = np.array([[float(r[i]) for i in ycols] for r in body]).reshape(len(body), len(ycols))
    return split
