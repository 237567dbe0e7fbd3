from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

DIRECTIONS = ("descend", "ascend")


def _check_cover(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]):
    missing = [n for n in params if n not in grads]
    if missing:
        raise ContractError(f"missing gradient for {missing}")
    extra = [n for n in grads if n not in params]
    if extra:
        raise ContractError(f"gradient given for non-member parameters {extra}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=OrderedDict)
    v: dict = field(default_factory=OrderedDict)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid Adam hyper-parameters")


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: AdamState,
              direction: str = "descend") -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, applied in place.

    ``ascend`` runs the recurrence on the negated gradient, which is exactly
    a descent step on the negated loss.  Returns the applied updates.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    _check_cover(params, grads)
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    applied = {}
    for name, p in params.items():
        g = grads[name]
        if direction == "ascend":
            g = -g
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        upd = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= upd.astype(p.data.dtype, copy=False)
        applied[name] = upd
    return applied


def gradient_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], step: float,
                  direction: str = "descend", in_place: bool = False):
    """Plain ``p -/+ step * g``.  Returns new tensors unless ``in_place``."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    _check_cover(params, grads)
    sign = 1.0 if direction == "ascend" else -1.0
    if step == 0:
        if in_place:
            return params
        return OrderedDict((n, Tensor(p.data.copy(), requires_grad=True, name=n)) for n, p in params.items())
    if in_place:
        for name, p in params.items():
            p.data += (sign * step) * grads[name]
        return params
    return OrderedDict(
        (name, Tensor(p.data + (sign * step) * grads[name], requires_grad=True, name=name))
        for name, p in params.items()
    )
