"""Module trees with dot-path addressing, forward hooks and auxiliary adapters.

Top-level models consume and produce *bundles*: plain dicts mapping field
names ("input", "logits", "features", ...) to tensors.  Consumers always
address fields by name, so extra fields in an input bundle are ignored.
Inner modules work on bare tensors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


class ModelError(ValueError):
    pass


class Module:
    required_fields: tuple[str, ...] = ()

    def __init__(self):
        self._children: dict[str, Module] = {}
        self._params: dict[str, Parameter] = {}
        self._hooks: dict[int, Callable] = {}
        self._caches: list[IOCache] = []

    def add_child(self, name: str, module: Module) -> Module:
        if "." in name or not name:
            raise ModelError(f"invalid child name {name!r}")
        if name in self._children or name in self._params:
            raise ModelError(f"duplicate member name {name!r}")
        self._children[name] = module
        return module

    def add_param(self, name: str, shape) -> Parameter:
        if name in self._children or name in self._params:
            raise ModelError(f"duplicate member name {name!r}")
        p = Parameter(np.zeros(shape), name=name)
        self._params[name] = p
        return p

    def children(self) -> Iterator[tuple[str, Module]]:
        return iter(self._children.items())

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, Module]]:
        yield prefix, self
        for name, child in self._children.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield (f"{prefix}.{name}" if prefix else name), p
        for name, child in self._children.items():
            yield from child.named_parameters(f"{prefix}.{name}" if prefix else name)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def get_submodule(self, path: str) -> Module:
        if path == "":
            return self
        node = self
        for part in path.split("."):
            if part not in node._children:
                available = ", ".join(repr(p) for p, _ in self.named_modules() if p) or "(none)"
                raise ModelError(f"no submodule {path!r}; available paths: {available}")
            node = node._children[part]
        return node

    def freeze(self) -> None:
        for p in self.parameters():
            p.frozen = True

    def unfreeze(self) -> None:
        for p in self.parameters():
            p.frozen = False

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, x):
        raise NotImplementedError

    def __call__(self, x):
        out = self.forward(x)
        for hook in list(self._hooks.values()):
            hook(self, x, out)
        return out


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = self.add_param("weight", (out_features, in_features))
        self.bias = self.add_param("bias", (out_features,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise T.ShapeError(f"Linear expects (batch, {self.in_features}) input, got {x.shape}")
        y = T.matmul(x, T.transpose(self.weight))
        return T.add_bias(y, self.bias) if self.bias is not None else y


class ReLU(Module):
    def forward(self, x: Tensor) -> Tensor:
        return T.relu(x)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0):
        super().__init__()
        self.stride, self.padding = stride, padding
        self.weight = self.add_param("weight", (out_channels, in_channels, kernel_size, kernel_size))
        self.bias = self.add_param("bias", (out_channels,))

    def forward(self, x: Tensor) -> Tensor:
        return T.add_bias(T.conv2d(x, self.weight, self.stride, self.padding), self.bias)


class GlobalAvgPool(Module):
    def forward(self, x: Tensor) -> Tensor:
        return T.reduce_mean(x, axis=(2, 3))


class Sequential(Module):
    def __init__(self, **modules: Module):
        super().__init__()
        for name, m in modules.items():
            self.add_child(name, m)

    def forward(self, x):
        for _, m in self.children():
            x = m(x)
        return x


class Block(Sequential):
    """A layer followed by ReLU.  ``out_features`` is set only for rank-2 outputs."""

    def __init__(self, layer: Module, out_features: int | None = None):
        super().__init__(layer=layer, act=ReLU())
        self.out_features = out_features


class Model(Module):
    """Root of a model tree: bundle in, bundle out."""

    required_fields = ("input",)
    out_dim: int = 0
    task: str = "classification"

    def __init__(self):
        super().__init__()

    @property
    def output_field(self) -> str:
        return "logits" if self.task == "classification" else "prediction"

    def forward(self, bundle: dict) -> dict:
        features = self.backbone(bundle["input"])
        return {self.output_field: self.head(features), "features": features}


class MLP(Model):
    """Fully connected network: ``backbone.layer{i}`` blocks then a linear ``head``."""

    def __init__(self, in_dim: int, hidden: list[int], out_dim: int, task: str = "classification"):
        super().__init__()
        if task not in ("classification", "regression"):
            raise ModelError(f"unknown task {task!r}")
        self.in_dim, self.out_dim, self.task = in_dim, out_dim, task
        self.hidden = list(hidden)
        blocks = {}
        width = in_dim
        for i, h in enumerate(self.hidden, start=1):
            blocks[f"layer{i}"] = Block(Linear(width, h), h)
            width = h
        self.feature_dim = width
        self.backbone = self.add_child("backbone", Sequential(**blocks))
        self.head = self.add_child("head", Linear(width, out_dim))

    def forward(self, bundle: dict) -> dict:
        x = bundle["input"]
        if x.ndim != 2:
            x = T.reshape(x, (x.shape[0], -1))
        return super().forward({"input": x})


class SmallCNN(Model):
    """Two conv blocks, global average pooling and a linear head."""

    def __init__(self, in_channels: int, out_dim: int, channels: list[int] = (8, 16),
                 kernel_size: int = 3, task: str = "classification"):
        super().__init__()
        c1, c2 = channels
        self.out_dim, self.task = out_dim, task
        self.feature_dim = c2
        pad = kernel_size // 2
        self.backbone = self.add_child("backbone", Sequential(
            layer1=Block(Conv2d(in_channels, c1, kernel_size, padding=pad)),
            layer2=Block(Conv2d(c1, c2, kernel_size, padding=pad)),
            pool=GlobalAvgPool(),
        ))
        self.head = self.add_child("head", Linear(c2, out_dim))


def init_parameters(model: Module, rng: np.random.Generator) -> None:
    """Kaiming-uniform (fan-in) weights, zero biases, drawn in sorted path order."""
    for path, p in sorted(model.named_parameters()):
        if path.endswith("bias"):
            p.data[...] = 0.0
        else:
            fan_in = int(np.prod(p.shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            p.data[...] = rng.uniform(-bound, bound, size=p.shape)


def forward(model: Model, bundle: dict) -> dict:
    """Run ``model`` on a bundle, clearing and then checking its hook caches."""
    for name in model.required_fields:
        if name not in bundle:
            raise ModelError(f"input bundle lacks required field {name!r} (has {sorted(bundle)})")
    for cache in model._caches:
        cache.clear()
    out = model(bundle)
    for cache in model._caches:
        cache.check_complete()
    return out


# ---------------------------------------------------------------------------
# hooks


@dataclass(frozen=True)
class HookHandle:
    target_path: str
    slot: str
    capture: str = "output"

    def __post_init__(self):
        if self.capture not in ("input", "output", "both"):
            raise ModelError(f"capture must be input|output|both, got {self.capture!r}")


class IOCache:
    """Slot name -> captured tensor (or ``(input, output)`` for ``capture='both'``)."""

    def __init__(self):
        self.slots: dict[str, object] = {}
        self._expected: set[str] = set()

    def clear(self) -> None:
        self.slots.clear()

    def put(self, slot: str, value) -> None:
        if slot in self.slots:
            raise ModelError(f"slot {slot!r} populated twice in one forward pass")
        self.slots[slot] = value

    def check_complete(self) -> None:
        missing = self._expected - set(self.slots)
        if missing:
            raise ModelError(f"hook slots never populated: {sorted(missing)}")

    def __contains__(self, slot: str) -> bool:
        return slot in self.slots

    def __getitem__(self, slot: str):
        try:
            return self.slots[slot]
        except KeyError:
            raise KeyError(f"slot {slot!r} not in cache (have {sorted(self.slots)})") from None


class RemovableHook:
    def __init__(self, model: Model, module: Module, handle: HookHandle, cache: IOCache):
        self.model, self.module, self.handle, self.cache = model, module, handle, cache

    def remove(self) -> None:
        self.module._hooks.pop(id(self), None)
        self.cache._expected.discard(self.handle.slot)
        if not self.cache._expected and self.cache in self.model._caches:
            self.model._caches.remove(self.cache)


def register_forward_hook(model: Model, handle: HookHandle, cache: IOCache) -> RemovableHook:
    module = model.get_submodule(handle.target_path)
    if handle.slot in cache._expected:
        raise ModelError(f"slot {handle.slot!r} already registered")
    capture = handle.capture

    def hook(_module, x, out):
        if capture == "input":
            cache.put(handle.slot, x)
        elif capture == "output":
            cache.put(handle.slot, out)
        else:
            cache.put(handle.slot, (x, out))

    removable = RemovableHook(model, module, handle, cache)
    module._hooks[id(removable)] = hook
    cache._expected.add(handle.slot)
    if cache not in model._caches:
        model._caches.append(cache)
    return removable


# ---------------------------------------------------------------------------
# auxiliary branches


@dataclass
class ModelSide:
    """One side of a distillation box: a model, its hook cache and its hooks."""

    name: str
    model: Model
    cache: IOCache
    hooks: dict[str, HookHandle]

    @classmethod
    def build(cls, name: str, model: Model, hooks=()) -> ModelSide:
        side = cls(name, model, IOCache(), {})
        for h in hooks:
            side.add_hook(h)
        return side

    def add_hook(self, handle: HookHandle) -> None:
        register_forward_hook(self.model, handle, self.cache)
        self.hooks[handle.slot] = handle


class AuxiliaryAdapter(Module):
    """Affine projection applied to a captured feature during training only."""

    def __init__(self, name: str, owner: str, slot: str, in_dim: int, out_dim: int,
                 trainable: bool = True):
        super().__init__()
        self.name, self.owner, self.slot = name, owner, slot
        self.in_dim, self.out_dim = in_dim, out_dim
        self.proj = self.add_child("proj", Linear(in_dim, out_dim))
        self.trainable = trainable
        if not trainable:
            self.freeze()

    def set_identity(self) -> None:
        if self.in_dim != self.out_dim:
            raise ModelError(f"identity init needs in_dim == out_dim, got {self.in_dim}->{self.out_dim}")
        self.proj.weight.data[...] = np.eye(self.in_dim)
        self.proj.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 2:
            raise T.ShapeError(f"adapter {self.name!r} needs rank-2 features, got {x.shape}")
        return self.proj(x)


def attach_adapter(side: ModelSide, slot: str, out_dim: int, name: str | None = None,
                   trainable: bool | None = None, rng: np.random.Generator | None = None,
                   identity: bool = False) -> AuxiliaryAdapter:
    if slot not in side.hooks:
        raise ModelError(f"{side.name} has no hook slot {slot!r} (have {sorted(side.hooks)})")
    handle = side.hooks[slot]
    if handle.capture == "both":
        raise ModelError(f"cannot adapt slot {slot!r}: captures both input and output")
    target = side.model.get_submodule(handle.target_path)
    in_dim = getattr(target, "out_features", None)
    if in_dim is None:
        raise ModelError(f"slot {slot!r} at {handle.target_path!r} does not yield rank-2 (batch x d) features")
    if handle.capture == "input":
        in_dim = getattr(target, "in_features", None)
        if in_dim is None:
            raise ModelError(f"cannot infer input width of {handle.target_path!r}")
    if trainable is None:
        trainable = side.name == "student"
    adapter = AuxiliaryAdapter(name or f"{side.name}_{slot}_adapter", side.name, slot,
                               in_dim, out_dim, trainable=trainable)
    if identity:
        adapter.set_identity()
    elif rng is not None:
        init_parameters(adapter, rng)
    return adapter
