from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from ..errors import DimensionError
from .params import ParamStore
from .tensor import Tensor, activation, affine


def init_linear(store: ParamStore, prefix: str, fan_in: int, fan_out: int,
                rng: np.random.Generator, dtype=np.float64):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    b = rng.uniform(-bound, bound, size=(fan_out,)).astype(dtype)
    store.add(f"{prefix}.weight", Tensor(w))
    store.add(f"{prefix}.bias", Tensor(b))


def init_mlp(store: ParamStore, module: str, sizes: Sequence[int], rng: np.random.Generator,
             dtype=np.float64):
    """Add layers ``module.0 .. module.L-1`` mapping ``sizes[0] -> sizes[-1]``."""
    if len(sizes) < 2 or min(sizes) <= 0:
        raise ValueError(f"invalid layer sizes {sizes}")
    for k, (fi, fo) in enumerate(zip(sizes[:-1], sizes[1:])):
        init_linear(store, f"{module}.{k}", fi, fo, rng, dtype)


def mlp_depth(params: Mapping[str, Tensor], module: str) -> int:
    k = 0
    while f"{module}.{k}.weight" in params:
        k += 1
    return k


def mlp(params: Mapping[str, Tensor], module: str, x, slope: float = 0.2, hidden: str = "leaky_relu",
        depth: int | None = None) -> Tensor:
    """Affine layers with ``hidden`` activations between them and a linear output."""
    depth = mlp_depth(params, module) if depth is None else depth
    if depth == 0:
        raise KeyError(f"no layers for module {module!r}")
    in_dim = params[f"{module}.0.weight"].shape[0]
    if x.shape[-1] != in_dim:
        raise DimensionError(f"{module} expects {in_dim} input columns, got shape {x.shape}")
    h = x
    for k in range(depth):
        h = affine(h, params[f"{module}.{k}.weight"], params[f"{module}.{k}.bias"])
        if k < depth - 1:
            h = activation(hidden, h, slope)
    return h
