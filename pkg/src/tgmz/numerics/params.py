from __future__ import annotations

from collections import OrderedDict
from typing import Iterable, Iterator, Mapping

import numpy as np

from .tensor import Tensor

# Named parameter groups.  The classifier appears in both "tc" and "gc":
# the TAE classifier and the MGAN classifier are the same tensors.
GROUPS = {
    "te": ("te",),
    "td": ("td",),
    "cls": ("cls",),
    "tdis": ("tdis",),
    "g": ("g",),
    "dis": ("dis",),
    "tc": ("te", "td", "cls"),
    "gc": ("g", "cls"),
}


class ParamStore(Mapping):
    """Ordered map ``module.layer.kind -> Tensor`` with group views."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: OrderedDict[str, Tensor] = OrderedDict()
        for name, t in (params or {}).items():
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def group(self, key: str | Iterable[str]) -> "OrderedDict[str, Tensor]":
        modules = GROUPS[key] if isinstance(key, str) else tuple(key)
        return OrderedDict((n, t) for n, t in self._params.items() if n.split(".", 1)[0] in modules)

    def modules(self) -> list[str]:
        seen = []
        for n in self._params:
            m = n.split(".", 1)[0]
            if m not in seen:
                seen.append(m)
        return seen

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]):
        missing = set(self._params) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for n, t in self._params.items():
            src = np.asarray(arrays[n])
            if src.shape != t.shape:
                raise ValueError(f"shape mismatch for {n}: {src.shape} vs {t.shape}")
            t.data[...] = src

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()


def clone_params(params: Mapping[str, Tensor]) -> "OrderedDict[str, Tensor]":
    """Deep copy into fresh tensors (no storage shared with ``params``)."""
    return OrderedDict((n, Tensor(t.data.copy(), requires_grad=True, name=n)) for n, t in params.items())


def overlay(base: Mapping[str, Tensor], *updates: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Name lookup that prefers ``updates`` over ``base``."""
    merged = dict(base)
    for u in updates:
        merged.update(u)
    return merged


def global_norm(arrays: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(a, dtype=np.float64))) for a in arrays)))
