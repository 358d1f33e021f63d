"""Resolve parsed config trees into live objects.

Evaluation is depth-first and post-order: the arguments of an
``!import_call`` node (``args`` left to right, then ``kwargs`` in file order)
are resolved before its builder runs.  ``!ref a.b.c`` yields the value at
that dotted path, looked up first in the explicit context and otherwise in
the config being resolved (resolving the target on demand).
"""
from __future__ import annotations

import inspect
import logging
import types
import typing
from typing import Any, Mapping

from .parser import Tagged
from .registry import Registry, RegistryError

log = logging.getLogger(__name__)

_MISSING = object()


class InstantiationError(ValueError):
    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


class ReferenceCycleError(InstantiationError):
    pass


def _join(path: str, key) -> str:
    return f"{path}.{key}" if path else str(key)


def _float_params(builder) -> set[str]:
    target = builder.__init__ if inspect.isclass(builder) else builder
    try:
        hints = typing.get_type_hints(target)
    except Exception:
        return set()
    names = set()
    for name, hint in hints.items():
        options = typing.get_args(hint) if isinstance(hint, types.UnionType) or \
            typing.get_origin(hint) is typing.Union else (hint,)
        if float in options and int not in options:
            names.add(name)
    return names


def call_builder(builder, args: list, kwargs: dict, key: str, path: str = ""):
    """Call ``builder`` after checking arguments and widening ints to floats where declared."""
    try:
        sig = inspect.signature(builder)
    except (TypeError, ValueError):
        sig = None
    if sig is not None:
        try:
            bound = sig.bind(*args, **kwargs)
        except TypeError as exc:
            raise InstantiationError(f"bad arguments for {key!r}: {exc}", path) from None
        floats = _float_params(builder)
        for name, value in bound.arguments.items():
            if name in floats and isinstance(value, int) and not isinstance(value, bool):
                bound.arguments[name] = float(value)
        args, kwargs = list(bound.args), dict(bound.kwargs)
    try:
        return builder(*args, **kwargs)
    except InstantiationError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InstantiationError(f"building {key!r} failed: {exc}", path) from exc


def parse_call(node: Tagged, path: str = "") -> tuple[str, list, dict]:
    """Split an ``!import_call`` payload into (key, raw args, raw kwargs)."""
    payload = node.value
    if not isinstance(payload, dict):
        raise InstantiationError("!import_call needs a mapping with 'key' and optional 'init'", path)
    unknown = set(payload) - {"key", "init"}
    if unknown:
        raise InstantiationError(f"!import_call has unknown fields {sorted(unknown)}", path)
    key = payload.get("key")
    if not isinstance(key, str) or not key:
        raise InstantiationError("!import_call 'key' must be a non-empty string", path)
    init = payload.get("init")
    if init is None:
        return key, [], {}
    if not isinstance(init, dict):
        raise InstantiationError("'init' must be a mapping with 'args' and/or 'kwargs'", path)
    unknown = set(init) - {"args", "kwargs"}
    if unknown:
        raise InstantiationError(f"'init' has unknown fields {sorted(unknown)}", path)
    args = init.get("args") or []
    kwargs = init.get("kwargs") or {}
    if not isinstance(args, list):
        raise InstantiationError("'init.args' must be a sequence", path)
    if not isinstance(kwargs, dict):
        raise InstantiationError("'init.kwargs' must be a mapping", path)
    return key, args, kwargs


def _navigate(value, parts: list[str], path: str):
    for part in parts:
        if isinstance(value, Mapping) and part in value:
            value = value[part]
        elif isinstance(value, (list, tuple)) and part.lstrip("-").isdigit():
            try:
                value = value[int(part)]
            except IndexError:
                raise InstantiationError(f"index {part} out of range", path) from None
        elif hasattr(value, part) and not part.startswith("_"):
            value = getattr(value, part)
        else:
            return _MISSING
    return value


class Instantiator:
    def __init__(self, registry: Registry, context: Mapping | None = None, root=None):
        self.registry = registry
        self.context = context or {}
        self.root = root
        self._done: dict[str, Any] = {}
        self._active: list[str] = []

    def resolve(self, node, path: str = ""):
        if self.root is not None and path in self._done:
            return self._done[path]
        if path in self._active:
            chain = " -> ".join(self._active[self._active.index(path):] + [path])
            raise ReferenceCycleError(f"reference cycle: {chain}", path)
        self._active.append(path)
        try:
            value = self._resolve(node, path)
        finally:
            self._active.pop()
        if self.root is not None:
            self._done[path] = value
        return value

    def _resolve(self, node, path: str):
        if isinstance(node, Tagged):
            if node.tag == "import_call":
                return self._call(node, path)
            if node.tag == "ref":
                return self._ref(node, path)
            raise InstantiationError(f"unknown tag !{node.tag}", path)
        if isinstance(node, dict):
            return {k: self.resolve(v, _join(path, k)) for k, v in node.items()}
        if isinstance(node, list):
            return [self.resolve(v, _join(path, i)) for i, v in enumerate(node)]
        return node

    def _call(self, node: Tagged, path: str):
        key, raw_args, raw_kwargs = parse_call(node, path)
        try:
            builder = self.registry.lookup(key)
        except RegistryError as exc:
            raise InstantiationError(str(exc), path) from None
        args = [self.resolve(a, _join(path, f"init.args.{i}")) for i, a in enumerate(raw_args)]
        kwargs = {k: self.resolve(v, _join(path, f"init.kwargs.{k}")) for k, v in raw_kwargs.items()}
        obj = call_builder(builder, args, kwargs, key, path)
        log.info("instantiated %s at %s", key, path or "<root>")
        return obj

    def _ref(self, node: Tagged, path: str):
        target = node.value
        if not isinstance(target, str) or not target:
            raise InstantiationError("!ref needs a dotted path string", path)
        parts = target.split(".")
        value = _navigate(self.context, parts, path)
        if value is not _MISSING:
            return value
        if self.root is not None:
            # longest raw-config prefix, resolved on demand, then attribute/key access
            raw, depth = self.root, 0
            for part in parts:
                if isinstance(raw, dict) and part in raw:
                    raw = raw[part]
                    depth += 1
                elif isinstance(raw, list) and part.isdigit() and int(part) < len(raw):
                    raw = raw[int(part)]
                    depth += 1
                else:
                    break
            if depth:
                prefix = ".".join(parts[:depth])
                base = self.resolve(raw, prefix)
                value = _navigate(base, parts[depth:], path)
                if value is not _MISSING:
                    return value
        raise InstantiationError(f"!ref to undefined path {target!r}", path)


def instantiate(node, registry: Registry, context: Mapping | None = None):
    """Resolve one node; ``!ref`` targets come from ``context`` only."""
    return Instantiator(registry, context).resolve(node)


def resolve_config(config, registry: Registry, context: Mapping | None = None):
    """Resolve a whole config tree; ``!ref`` may also point at other parts of it."""
    return Instantiator(registry, context, root=config).resolve(config)
