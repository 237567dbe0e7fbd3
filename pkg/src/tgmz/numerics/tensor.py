"""Dense tensors with a tape-based reverse-mode autodiff.

Operations record themselves on the innermost active :class:`Tape` when at
least one input is tracked (a parameter with ``requires_grad`` or an output
of an earlier recorded node).  Outside a tape every op is a plain numpy
forward pass.

    >>> w = Tensor(np.array([[2.0]]), requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = mean(matmul(Tensor(np.array([[3.0]])), w))
    >>> backward(loss, tape, {"w": w})["w"]
    array([[3.]])
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import ContractError, DimensionError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind not in "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


_TAPES: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is a valid topological
    order; :func:`backward` replays them in reverse.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced

    def record(self, kind, inputs, output, backward_fn):
        self.nodes.append(Node(kind, tuple(inputs), output, backward_fn))
        self._produced.add(id(output))


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _emit(kind, inputs, out_data, backward_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(kind, inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- ops

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _emit("matmul", (a, b), A @ B, lambda g: (g @ B.T, A.T @ g))


def affine(x, w, bias) -> Tensor:
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine shape mismatch: x {x.shape}, W {w.shape}")
    if bias.shape != (w.shape[1],):
        raise DimensionError(f"affine bias shape {bias.shape} does not match W {w.shape}")
    X, W = x.data, w.data
    out = X @ W + bias.data
    return _emit("affine", (x, w, bias), out, lambda g: (g @ W.T, X.T @ g, g.sum(axis=0)))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add shape mismatch: {sa} + {sb}") from exc
    return _emit("add", (a, b), out, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"sub shape mismatch: {sa} - {sb}") from exc
    return _emit("sub", (a, b), out, lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    A, B = a.data, b.data
    try:
        out = A * B
    except ValueError as exc:
        raise DimensionError(f"mul shape mismatch: {a.shape} * {b.shape}") from exc
    return _emit("mul", (a, b), out,
                 lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit("neg", (a,), -a.data, lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _emit("sum", (a,), np.asarray(a.data.sum()), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.data.size
    return _emit("mean", (a,), np.asarray(a.data.mean()),
                 lambda g: (np.full(shape, g / n, dtype=a.data.dtype),))


def concat(parts: Sequence, axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat shape mismatch: {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _emit("concat", tuple(parts), out, back)


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).data)


# ---------------------------------------------------------------- activations

def leaky_relu(x, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    mask = x.data > 0
    local = np.where(mask, 1.0, slope).astype(x.data.dtype)
    return _emit("leaky_relu", (x,), x.data * local, lambda g: (g * local,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    local = (x.data > 0).astype(x.data.dtype)
    return _emit("relu", (x,), x.data * local, lambda g: (g * local,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    X = x.data
    # split branches keep exp() from overflowing
    out = np.empty_like(X)
    pos = X >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-X[pos]))
    ex = np.exp(X[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _emit("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))


def activation(kind: str, x, slope: float = 0.2) -> Tensor:
    if kind == "leaky_relu":
        return leaky_relu(x, slope)
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------- losses

def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean over rows of ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} vs labels {labels.shape}")
    b, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    labels = labels.astype(np.int64)
    logp = log_softmax(logits.data)
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def back(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / b),)

    return _emit("softmax_ce", (logits,), np.asarray(loss, dtype=logits.data.dtype), back)


def mse(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    if x.shape != y.shape:
        raise DimensionError(f"mse shape mismatch: {x.shape} vs {y.shape}")
    diff = x.data - y.data
    n = diff.size
    out = np.asarray((diff * diff).mean())

    def back(g):
        d = diff * (2.0 * g / n)
        return (d, -d)

    return _emit("mse", (x, y), out, back)


# ---------------------------------------------------------------- batch norm

class BatchNormState:
    """Running statistics of one batch-norm layer."""

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        if eps <= 0:
            raise ValueError("batch-norm epsilon must be positive")
        self.running_mean = np.zeros(dim, dtype=dtype)
        self.running_var = np.ones(dim, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x, gamma, beta, state: BatchNormState, mode: str = "train") -> Tensor:
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    X = x.data
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionError(f"batch_norm expects a non-empty b x d batch, got {X.shape}")
    if gamma.shape != (X.shape[1],) or beta.shape != (X.shape[1],):
        raise DimensionError(f"batch_norm scale/shift {gamma.shape}/{beta.shape} vs input {X.shape}")
    G = gamma.data
    if mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (X - state.running_mean) * inv
        out = xhat * G + beta.data
        return _emit("batch_norm_eval", (x, gamma, beta), out,
                     lambda g: (g * G * inv, (g * xhat).sum(axis=0), g.sum(axis=0)))
    if mode != "train":
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    b = X.shape[0]
    mu = X.mean(axis=0)
    var = X.var(axis=0)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (X - mu) * inv
    out = xhat * G + beta.data
    m = state.momentum
    unbiased = var * b / (b - 1) if b > 1 else var
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * unbiased

    def back(g):
        gx = g * G
        dx = inv / b * (b * gx - gx.sum(axis=0) - xhat * (gx * xhat).sum(axis=0))
        return (dx, (g * xhat).sum(axis=0), g.sum(axis=0))

    return _emit("batch_norm", (x, gamma, beta), out, back)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor, tape: Tape, targets: Mapping[str, Tensor] | Sequence[Tensor]) -> dict:
    """Reverse-mode gradients of a scalar ``loss`` w.r.t. ``targets`` only.

    Gradients are added into each target's ``.grad`` buffer and returned as
    a fresh ``{name: array}`` map (keys are list positions when ``targets``
    is a sequence).  Tensors outside ``targets`` are never touched.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not isinstance(targets, Mapping):
        targets = {i: t for i, t in enumerate(targets)}
    target_ids = {id(t) for t in targets.values()}

    # forward sweep: which node outputs depend on a target
    live: set[int] = set(target_ids)
    for node in tape.nodes:
        if any(id(t) in live for t in node.inputs):
            live.add(id(node.output))

    adj: dict[int, np.ndarray] = {}
    if id(loss) in live:
        adj[id(loss)] = np.ones_like(loss.data)
        for node in reversed(tape.nodes):
            g = adj.get(id(node.output))
            if g is None:
                continue
            grads = node.backward(g)
            for inp, gi in zip(node.inputs, grads):
                k = id(inp)
                if k not in live:
                    continue
                if k in adj:
                    adj[k] = adj[k] + gi
                else:
                    adj[k] = gi
    elif id(loss) not in tape._produced and id(loss) not in target_ids:
        raise ContractError("loss was not produced on this tape")

    result = {}
    for name, t in targets.items():
        g = adj.get(id(t))
        g = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
        result[name] = g
        if t.requires_grad:
            t.grad = g.copy() if t.grad is None else t.grad + g
    return result


def value_and_grad(fn: Callable[[], Tensor], targets: Mapping[str, Tensor]):
    """Run ``fn`` under a fresh tape and return ``(loss_value, grads)``."""
    with Tape() as tape:
        loss = fn()
    grads = backward(loss, tape, targets)
    return float(loss.data), grads
