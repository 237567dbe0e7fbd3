from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tolerance: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(fn: Callable[[], Tensor], point: Tensor | Mapping[str, Tensor], tolerance: float = 1e-4,
               h: float = 1e-5, max_coords: int | None = None, rng=None) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    ``point`` is one tensor or a map of tensors; ``fn`` closes over them and
    is re-evaluated with each coordinate nudged by ``+-h``.  The relative
    error uses ``|a - n| / max(|a| + |n|, 1e-5)`` per coordinate.
    """
    targets = point if isinstance(point, Mapping) else {"x": point}
    with Tape() as tape:
        out = fn()
    if out.data.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
    analytic = backward(out, tape, targets)

    max_rel = max_abs = 0.0
    n = 0
    for name, t in targets.items():
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        a_flat = analytic[name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            fp = float(fn().data)
            flat[idx] = orig - h
            fm = float(fn().data)
            flat[idx] = orig
            num = (fp - fm) / (2 * h)
            a = float(a_flat[idx])
            err = abs(a - num)
            rel = err / max(abs(a) + abs(num), 1e-5)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, rel)
            n += 1
    return GradCheckReport(max_rel, max_abs, tolerance, n)
