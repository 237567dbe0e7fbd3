"""Feature synthesis for unseen classes, the softmax head, and ZSL/GZSL/fusion metrics."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import Dataset, SplitSpec
from .errors import ConfigError, ContractError, DimensionError
from .mgan import generate
from .model import TGMZModel
from .numerics import (
    AdamState,
    BatchNormState,
    ParamStore,
    Tensor,
    adam_step,
    affine,
    batch_norm,
    init_linear,
    leaky_relu,
    softmax_cross_entropy,
    value_and_grad,
)

SETTINGS = ("zsl", "gzsl", "fusion")


@dataclass(frozen=True)
class SynthesisSpec:
    classes: tuple = ()
    samples: int = 100
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("synthesis.samples must be >= 1")
        if self.sigma < 0:
            raise ConfigError("synthesis.sigma must be non-negative")


@dataclass(frozen=True)
class HeadConfig:
    hidden: int = 64
    epochs: int = 40
    lr: float = 1e-3
    batch_size: int = 64
    slope: float = 0.2

    def __post_init__(self):
        if min(self.hidden, self.epochs, self.batch_size) < 1 or self.lr < 0:
            raise ConfigError("invalid head configuration")


def synthesize_set(spec: SynthesisSpec, attributes: Mapping[int, np.ndarray], model: TGMZModel):
    """``spec.samples`` generated embeddings per class in ``spec.classes``.

    Returns ``(E, y)`` with ``y`` holding global class ids, classes in the
    order given.  ``sigma == 0`` feeds ``z = 0``.
    """
    missing = [c for c in spec.classes if c not in attributes]
    if missing:
        raise ConfigError(f"no attribute row for classes {missing}")
    rng = np.random.default_rng(spec.seed)
    dtype = model.dtype
    E, Y = [], []
    for c in spec.classes:
        a = np.tile(np.asarray(attributes[c], dtype=dtype), (spec.samples, 1))
        z = rng.normal(0.0, 1.0, size=(spec.samples, model.d_z)) * spec.sigma
        E.append(generate(z.astype(dtype), a, model.params, model.tae.slope).data)
        Y.append(np.full(spec.samples, c, dtype=np.int64))
    if not E:
        return np.zeros((0, model.d_e), dtype=dtype), np.zeros(0, dtype=np.int64)
    return np.vstack(E), np.concatenate(Y)


class ClassifierHead:
    """affine -> batch norm -> leaky ReLU -> affine, trained from scratch."""

    def __init__(self, d_in: int, n_classes: int, cfg: HeadConfig, rng, dtype=np.float64):
        self.cfg = cfg
        self.n_classes = n_classes
        self.params = ParamStore()
        init_linear(self.params, "head.0", d_in, cfg.hidden, rng, dtype)
        self.params.add("head.bn.gamma", Tensor(np.ones(cfg.hidden, dtype=dtype)))
        self.params.add("head.bn.beta", Tensor(np.zeros(cfg.hidden, dtype=dtype)))
        init_linear(self.params, "head.1", cfg.hidden, n_classes, rng, dtype)
        self.bn = BatchNormState(cfg.hidden, dtype=dtype)
        self.adam = AdamState(lr=cfg.lr)

    def forward(self, x, mode: str = "eval") -> Tensor:
        p = self.params
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=p["head.0.weight"].data.dtype))
        if x.shape[1] != p["head.0.weight"].shape[0]:
            raise DimensionError(f"head expects {p['head.0.weight'].shape[0]} columns, got {x.shape}")
        h = affine(x, p["head.0.weight"], p["head.0.bias"])
        h = batch_norm(h, p["head.bn.gamma"], p["head.bn.beta"], self.bn, mode)
        h = leaky_relu(h, self.cfg.slope)
        return affine(h, p["head.1.weight"], p["head.1.bias"])

    def predict(self, x) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest index
        return np.argmax(self.forward(x, "eval").data, axis=1)


def train_head(E: np.ndarray, y: np.ndarray, n_classes: int, cfg: HeadConfig = HeadConfig(),
               seed: int = 0) -> ClassifierHead:
    """Fit a fresh head with Adam on softmax cross-entropy (``y`` in ``[0, n_classes)``)."""
    E = np.asarray(E)
    y = np.asarray(y, dtype=np.int64)
    if E.shape[0] == 0:
        raise ContractError("cannot train a head on an empty set")
    if y.min() < 0 or y.max() >= n_classes:
        raise ContractError(f"labels outside [0, {n_classes})")
    dtype = E.dtype if E.dtype.kind == "f" else np.float64
    rng = np.random.default_rng(seed)
    head = ClassifierHead(E.shape[1], n_classes, cfg, rng, dtype)
    params = head.params.group(["head"])
    n = E.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = Tensor(E[idx].astype(dtype))
            _, grads = value_and_grad(lambda: softmax_cross_entropy(head.forward(xb, "train"), y[idx]), params)
            adam_step(params, grads, head.adam)
    return head


def per_class_top1(pred: np.ndarray, y: np.ndarray, classes: Sequence[int]):
    """Per-class accuracy and its unweighted mean.

    Classes with no test rows are skipped with a warning and returned in
    the third slot.
    """
    pred, y = np.asarray(pred), np.asarray(y)
    acc, missing = {}, []
    for c in classes:
        mask = y == c
        if not mask.any():
            missing.append(c)
            continue
        acc[c] = float(np.mean(pred[mask] == c))
    if missing:
        warnings.warn(f"classes without test instances excluded: {missing}", stacklevel=2)
    mean = float(np.mean(list(acc.values()))) if acc else 0.0
    return acc, mean, missing


def harmonic_mean(U: float, S: float) -> float:
    return 0.0 if U + S == 0 else 2.0 * U * S / (U + S)


@dataclass
class MetricsReport:
    setting: str
    U: float
    S: float | None = None
    H: float | None = None
    per_class: dict = field(default_factory=dict)
    seed: int = 0
    config_hash: str = ""
    missing: list = field(default_factory=list)
    breakdown: dict = field(default_factory=dict)   # source name -> U over its unseen classes

    def lines(self) -> list[str]:
        def f(v):
            return "" if v is None else repr(float(v))

        out = [f"{self.setting},{f(self.U)},{f(self.S)},{f(self.H)},{self.seed},{self.config_hash}"]
        for name, u in self.breakdown.items():
            out.append(f"{self.setting}:{name},{f(u)},,,{self.seed},{self.config_hash}")
        return out


def parse_metrics_line(line: str) -> dict:
    setting, U, S, H, seed, h = line.strip().split(",")

    def f(v):
        return None if v == "" else float(v)

    return {"setting": setting, "U": f(U), "S": f(S), "H": f(H), "seed": int(seed), "config_hash": h}


def _encode_rows(d: Dataset, model: TGMZModel, rows, transform=None) -> np.ndarray:
    x = d.take(rows)
    if transform is not None:
        x = transform(x)
    return model.encode(x)


def _unseen_rows(d: Dataset, classes) -> np.ndarray:
    return np.flatnonzero(np.isin(d.Y, np.asarray(classes)))


def eval_zsl(d: Dataset, split: SplitSpec, model: TGMZModel, spec: SynthesisSpec,
             head_cfg: HeadConfig = HeadConfig(), seed: int = 0, config_hash: str = "",
             transform=None, setting: str = "zsl") -> MetricsReport:
    """Head trained on generated unseen embeddings, tested on encoded real unseen rows."""
    classes = tuple(split.unseen)
    spec = SynthesisSpec(classes, spec.samples, spec.sigma, spec.seed)
    attrs = {c: d.A[c] for c in classes}
    E, y = synthesize_set(spec, attrs, model)
    local = {c: k for k, c in enumerate(classes)}
    head = train_head(E, np.array([local[c] for c in y]), len(classes), head_cfg, seed)
    with d.audit.scope("eval"):
        rows = _unseen_rows(d, classes)
        pred = head.predict(_encode_rows(d, model, rows, transform))
    acc, U, missing = per_class_top1(np.asarray(classes)[pred], d.Y[rows], classes)
    return MetricsReport(setting, U, per_class=acc, seed=seed, config_hash=config_hash, missing=missing)


def eval_gzsl(d: Dataset, split: SplitSpec, model: TGMZModel, spec: SynthesisSpec,
              head_cfg: HeadConfig = HeadConfig(), seed: int = 0, config_hash: str = "",
              transform=None, include_synthetic: bool = True) -> MetricsReport:
    """Head over all classes: encoded real seen training rows plus generated
    unseen embeddings.  U on real unseen rows, S on held-out seen rows.

    ``include_synthetic=False`` drops the generated rows (seen-bias ablation).
    """
    if not split.seen_test:
        raise ConfigError("GZSL needs held-out seen instances (split.seen_test)")
    classes = tuple(split.seen) + tuple(split.unseen)
    local = {c: k for k, c in enumerate(classes)}
    held = np.asarray(split.seen_test)
    with d.audit.scope("eval"):
        seen_train = np.setdiff1d(np.flatnonzero(np.isin(d.Y, split.seen)), held)
        E_seen = _encode_rows(d, model, seen_train, transform)
    y_seen = d.Y[seen_train]
    if include_synthetic:
        sspec = SynthesisSpec(tuple(split.unseen), spec.samples, spec.sigma, spec.seed)
        E_syn, y_syn = synthesize_set(sspec, {c: d.A[c] for c in split.unseen}, model)
        E_tr = np.vstack([E_seen, E_syn])
        y_tr = np.concatenate([y_seen, y_syn])
    else:
        E_tr, y_tr = E_seen, y_seen
    head = train_head(E_tr, np.array([local[int(c)] for c in y_tr]), len(classes), head_cfg, seed)
    with d.audit.scope("eval"):
        unseen_rows = _unseen_rows(d, split.unseen)
        pred_u = np.asarray(classes)[head.predict(_encode_rows(d, model, unseen_rows, transform))]
        pred_s = np.asarray(classes)[head.predict(_encode_rows(d, model, held, transform))]
    acc_u, U, miss_u = per_class_top1(pred_u, d.Y[unseen_rows], split.unseen)
    acc_s, S, miss_s = per_class_top1(pred_s, d.Y[held], split.seen)
    return MetricsReport("gzsl", U, S, harmonic_mean(U, S), {**acc_s, **acc_u}, seed, config_hash,
                         miss_s + miss_u)


def eval_fusion(d: Dataset, split: SplitSpec, model: TGMZModel, spec: SynthesisSpec,
                head_cfg: HeadConfig = HeadConfig(), seed: int = 0, config_hash: str = "",
                transform=None) -> MetricsReport:
    """ZSL protocol on a fused class space, with per-source unseen accuracy."""
    rep = eval_zsl(d, split, model, spec, head_cfg, seed, config_hash, transform, setting="fusion")
    for src in d.sources:
        accs = [a for c, a in rep.per_class.items() if src.owns_class(c)]
        if accs:
            rep.breakdown[src.name] = float(np.mean(accs))
    return rep


def export_projection(E: np.ndarray, labels: np.ndarray, path=None) -> np.ndarray:
    """Top-2 principal-component scores, written as ``pc1 pc2 label`` rows."""
    E = np.asarray(E, dtype=np.float64)
    labels = np.asarray(labels)
    if E.ndim != 2 or E.shape[0] < 2 or np.unique(E, axis=0).shape[0] < 2:
        raise ContractError("projection needs at least two distinct rows")
    centered = E - E.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps)])
    proj = centered @ comps.T
    if path is not None:
        Path(path).write_text("".join(f"{float(p[0])!r} {float(p[1])!r} {int(l)}\n" for p, l in zip(proj, labels)))
    return proj
