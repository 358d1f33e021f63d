"""Composable image transforms on numpy arrays (H x W x C, values in [0, 255]).

Random transforms take the generator explicitly, so a composed pipeline
driven by one seeded stream is reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class RandomCrop:
    size: int
    padding: int = 0

    def __call__(self, img: np.ndarray, rng: np.random.Generator):
        p = self.padding
        if p:
            img = np.pad(img, ((p, p), (p, p), (0, 0)))
        h, w = img.shape[:2]
        if self.size > h or self.size > w:
            raise ValueError(f"crop size {self.size} exceeds padded image {h}x{w}")
        top = int(rng.integers(0, h - self.size + 1))
        left = int(rng.integers(0, w - self.size + 1))
        return img[top:top + self.size, left:left + self.size]


@dataclass(frozen=True)
class RandomHorizontalFlip:
    p: float = 0.5

    def __call__(self, img: np.ndarray, rng: np.random.Generator):
        return img[:, ::-1] if rng.random() < self.p else img


@dataclass(frozen=True)
class ToTensor:
    """H x W x C in [0, 255] -> C x H x W tensor in [0, 1]."""

    def __call__(self, img: np.ndarray, rng: np.random.Generator | None = None):
        return Tensor(np.transpose(np.asarray(img, dtype=np.float64), (2, 0, 1)) / 255.0)


@dataclass(frozen=True)
class Normalize:
    mean: tuple[float, ...]
    std: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "mean", tuple(float(m) for m in self.mean))
        object.__setattr__(self, "std", tuple(float(s) for s in self.std))
        if len(self.mean) != len(self.std) or any(s <= 0 for s in self.std):
            raise ValueError("mean/std must have equal length and positive std")

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None):
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if data.shape[0] != len(self.mean):
            raise ValueError(f"expected {len(self.mean)} channels, got {data.shape[0]}")
        mean = np.array(self.mean).reshape(-1, 1, 1)
        std = np.array(self.std).reshape(-1, 1, 1)
        return Tensor((data - mean) / std)


@dataclass(frozen=True)
class Compose:
    transforms: tuple

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))

    def __call__(self, img, rng: np.random.Generator):
        for t in self.transforms:
            img = t(img, rng)
        return img
