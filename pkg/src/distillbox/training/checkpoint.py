"""Little-endian binary checkpoints.

Layout::

    b"KDF1"  u32 version  i64 seed  i64 epoch  f64 best_metric
    section parameters | section optimizer | section auxiliary

where each section is ``u32 count`` followed by ``count`` entries of
``u32 path_len, path (utf-8), u32 rank, u64 dims[rank], f64 values[prod(dims)]``.
The auxiliary section carries training-only tensors (teacher weights,
adapters); exported student checkpoints leave it empty.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"KDF1"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TrainingState:
    seed: int = 0
    epoch: int = 0
    best_metric: float = float("nan")
    params: dict[str, np.ndarray] = field(default_factory=dict)
    optimizer: dict[str, np.ndarray] = field(default_factory=dict)
    auxiliary: dict[str, np.ndarray] = field(default_factory=dict)


def _pack_section(tensors: dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(tensors))]
    for path, value in tensors.items():
        arr = np.array(value, dtype="<f8", order="C")  # ascontiguousarray would lift rank 0 to 1
        name = path.encode("utf-8")
        out.append(struct.pack("<I", len(name)))
        out.append(name)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def dumps(state: TrainingState) -> bytes:
    header = MAGIC + struct.pack("<Iqqd", VERSION, state.seed, state.epoch, state.best_metric)
    return header + b"".join(_pack_section(s) for s in (state.params, state.optimizer, state.auxiliary))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("corrupt checkpoint: unexpected end of file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def section(self) -> dict[str, np.ndarray]:
        (count,) = self.unpack("<I")
        out = {}
        for _ in range(count):
            (n,) = self.unpack("<I")
            try:
                path = self.take(n).decode("utf-8")
            except UnicodeDecodeError:
                raise CheckpointError("corrupt checkpoint: bad tensor name") from None
            (rank,) = self.unpack("<I")
            if rank > 16:
                raise CheckpointError(f"corrupt checkpoint: implausible rank {rank}")
            dims = self.unpack(f"<{rank}Q")
            size = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(self.take(8 * size), dtype="<f8").astype(np.float64)
            if path in out:
                raise CheckpointError(f"corrupt checkpoint: duplicate tensor {path!r}")
            out[path] = values.reshape(dims)
        return out


def loads(data: bytes) -> TrainingState:
    if data[:4] != MAGIC:
        if data[:3] == MAGIC[:3]:
            raise CheckpointError(f"unsupported checkpoint version marker {data[:4]!r}")
        raise CheckpointError("corrupt checkpoint: bad magic")
    r = _Reader(data)
    r.take(4)
    version, seed, epoch, best = r.unpack("<Iqqd")
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} != supported {VERSION}")
    state = TrainingState(seed, epoch, best, r.section(), r.section(), r.section())
    if r.pos != len(data):
        raise CheckpointError("corrupt checkpoint: trailing bytes")
    return state


def save_checkpoint(path: str | Path, state: TrainingState) -> None:
    Path(path).write_bytes(dumps(state))


def load_checkpoint(path: str | Path) -> TrainingState:
    return loads(Path(path).read_bytes())


def load_into(params: dict[str, object], tensors: dict[str, np.ndarray], what: str = "model") -> None:
    """Copy ``tensors`` into parameters, requiring identical names and shapes."""
    missing = sorted(set(params) - set(tensors))
    extra = sorted(set(tensors) - set(params))
    if missing or extra:
        raise CheckpointError(f"{what} mismatch: missing {missing}, unexpected {extra}")
    for name, p in params.items():
        if p.data.shape != tensors[name].shape:
            raise CheckpointError(
                f"{what} parameter {name!r}: checkpoint shape {tensors[name].shape} != model {p.data.shape}")
        p.data[...] = tensors[name]
