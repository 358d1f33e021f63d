"""Component registry: string keys -> builders, each labelled with a component kind."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

KINDS = ("model", "dataset", "loss", "optimizer", "scheduler", "transform", "metric", "other")


class RegistryError(KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class Entry:
    key: str
    kind: str
    builder: Callable


class Registry:
    def __init__(self):
        self._entries: dict[str, Entry] = {}
        self._frozen = False

    def register(self, key: str, kind: str, builder: Callable | None = None):
        """Register ``builder`` under ``key``; usable as a decorator when ``builder`` is omitted."""
        if builder is None:
            def decorator(fn):
                self.register(key, kind, fn)
                return fn
            return decorator
        if self._frozen:
            raise RegistryError("registry is read-only once experiment construction has begun")
        if not key:
            raise RegistryError("registry key must be non-empty")
        if kind not in KINDS:
            raise RegistryError(f"unknown component kind {kind!r}; expected one of {KINDS}")
        if key in self._entries:
            raise RegistryError(f"duplicate registry key {key!r}")
        self._entries[key] = Entry(key, kind, builder)
        return builder

    def lookup(self, key: str) -> Callable:
        return self.entry(key).builder

    def entry(self, key: str) -> Entry:
        try:
            return self._entries[key]
        except KeyError:
            raise RegistryError(f"unknown registry key {key!r}") from None

    def kind(self, key: str) -> str:
        return self.entry(key).kind

    def keys(self, kind: str | None = None) -> list[str]:
        return [k for k, e in self._entries.items() if kind is None or e.kind == kind]

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)


def register(registry: Registry, key: str, kind: str, builder: Callable) -> Registry:
    registry.register(key, kind, builder)
    return registry
