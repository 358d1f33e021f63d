"""Labelled random streams derived from one experiment seed.

Each stream is a Philox (counter-based) generator keyed by ``(seed, crc32(label))``,
so independent consumers (weight init, shuffling, data generation) never
share state and adding a new consumer cannot shift another's draws.
"""
from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, label: str) -> np.random.Generator:
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), key])))
