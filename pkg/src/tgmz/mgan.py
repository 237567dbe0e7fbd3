"""Meta conditional GAN over task-aligned embeddings.

The generator ``g`` maps ``[z | a]`` to a synthetic embedding, the critic
``dis`` scores ``[e | a]`` in ``[0, 1]``, and the classifier ``cls`` is the
very same parameter set the autoencoder trains.  Each episode adapts
copies of the critic and generator/classifier on the support blocks with
plain gradient steps, then moves the base parameters along the query
gradients taken at the adapted copies (first-order meta-update).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    Tape,
    Tensor,
    backward,
    clone_params,
    concat,
    global_norm,
    gradient_step,
    init_mlp,
    mean,
    mlp,
    overlay,
    scale,
    sigmoid,
    softmax_cross_entropy,
)
from .tae import classify

DIS_MODULES = ("dis",)
GC_MODULES = ("g", "cls")
INNER_MODES = ("shared", "per_task")


@dataclass
class MetaConfig:
    alpha1: float = 1e-3
    alpha2: float = 1e-3
    beta1: float = 1e-4
    beta2: float = 1e-4
    inner_mode: str = "shared"
    inner_steps: int = 1
    d_z: int | None = None
    sigma: float = 1.0
    gen_hidden: int | None = None
    dis_hidden: int | None = None
    lambda_cls: float = 1.0  # weight of the classification term on generated embeddings

    def __post_init__(self):
        for k in ("alpha1", "alpha2", "beta1", "beta2", "lambda_cls"):
            if getattr(self, k) < 0:
                raise ConfigError(f"meta.{k} must be non-negative")
        if self.inner_mode not in INNER_MODES:
            raise ConfigError(f"meta.inner_mode must be one of {INNER_MODES}")
        if self.inner_steps < 1:
            raise ConfigError("meta.inner_steps must be >= 1")
        if self.sigma <= 0:
            raise ConfigError("meta.sigma must be positive")
        for k in ("d_z", "gen_hidden", "dis_hidden"):
            v = getattr(self, k)
            if v is not None and v <= 0:
                raise ConfigError(f"meta.{k} must be positive")


def init_mgan(store, d_a: int, d_e: int, cfg: MetaConfig, rng, dtype=np.float64):
    d_z = cfg.d_z or d_e
    init_mlp(store, "g", (d_z + d_a, cfg.gen_hidden or 4 * d_e, d_e), rng, dtype)
    init_mlp(store, "dis", (d_e + d_a, cfg.dis_hidden or 2 * d_e, 1), rng, dtype)


def _t(x, params, ref) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=params[ref].data.dtype))


def generate(z, a, params, slope: float = 0.2) -> Tensor:
    z, a = _t(z, params, "g.0.weight"), _t(a, params, "g.0.weight")
    if z.shape[0] != a.shape[0]:
        raise DimensionError(f"{z.shape[0]} noise rows but {a.shape[0]} attribute rows")
    return mlp(params, "g", concat([z, a]), slope)


def critic_score(e, a, params, slope: float = 0.2) -> Tensor:
    e, a = _t(e, params, "dis.0.weight"), _t(a, params, "dis.0.weight")
    if e.shape[0] != a.shape[0]:
        raise DimensionError(f"{e.shape[0]} embeddings but {a.shape[0]} attribute rows")
    return sigmoid(mlp(params, "dis", concat([e, a]), slope))


@dataclass
class EncodedBlock:
    """A task block in embedding space with its noise draw."""
    e: np.ndarray
    a: np.ndarray
    y: np.ndarray   # positions among the training classes
    z: np.ndarray


def loss_zsl(block: EncodedBlock, params, slope: float = 0.2, cls_weight: float = 1.0):
    """Return ``(critic_objective, gc_objective)`` for one block.

    critic: ``mean D(e, a) - mean D(g(z, a), a)``, ascended by the critic.
    gc:     ``-mean D(g(z, a), a) + w * CE(cls(g(z, a)), y)``, descended by
    the generator and classifier.
    """
    e_hat = generate(block.z, block.a, params, slope)
    real = critic_score(block.e, block.a, params, slope)
    fake = mean(critic_score(e_hat, block.a, params, slope))
    critic_obj = mean(real) - fake
    gc_obj = scale(softmax_cross_entropy(classify(e_hat, params, slope), block.y), cls_weight) - fake
    return critic_obj, gc_obj


Objective = Callable[[Mapping[str, Tensor]], tuple]


def _split_groups(params: Mapping[str, Tensor]):
    dis = OrderedDict((n, t) for n, t in params.items() if n.split(".", 1)[0] in DIS_MODULES)
    gc = OrderedDict((n, t) for n, t in params.items() if n.split(".", 1)[0] in GC_MODULES)
    return dis, gc


@dataclass
class AdaptedParams:
    mode: str
    dis: list = field(default_factory=list)   # one OrderedDict per adaptation
    gc: list = field(default_factory=list)

    def for_task(self, j: int):
        k = 0 if self.mode == "shared" else j
        return self.dis[k], self.gc[k]


def _objectives_and_grads(objectives: Sequence[Objective], params, dis, gc):
    with Tape() as tape:
        pairs = [obj(params) for obj in objectives]
        critic = pairs[0][0]
        gen = pairs[0][1]
        for c, g in pairs[1:]:
            critic = critic + c
            gen = gen + g
    g_dis = backward(critic, tape, dis)
    g_gc = backward(gen, tape, gc)
    return float(critic.data), float(gen.data), g_dis, g_gc


def _adapt(objectives, base, cfg: MetaConfig):
    dis, gc = _split_groups(base)
    dis_p, gc_p = clone_params(dis), clone_params(gc)
    for _ in range(cfg.inner_steps):
        cur = overlay(base, dis_p, gc_p)
        _, _, g_dis, g_gc = _objectives_and_grads(objectives, cur, dis_p, gc_p)
        dis_p = gradient_step(dis_p, g_dis, cfg.alpha1, "ascend")
        gc_p = gradient_step(gc_p, g_gc, cfg.alpha2, "descend")
    return dis_p, gc_p


def inner_adapt(support: Sequence[Objective], params: Mapping[str, Tensor], cfg: MetaConfig) -> AdaptedParams:
    """Adapted critic and generator/classifier copies from the support objectives.

    ``shared``: one pair adapted on the sum over tasks.  ``per_task``: one
    pair per task.  The base parameters are never written.
    """
    out = AdaptedParams(cfg.inner_mode)
    groups = [list(support)] if cfg.inner_mode == "shared" else [[obj] for obj in support]
    for objs in groups:
        d, g = _adapt(objs, params, cfg)
        out.dis.append(d)
        out.gc.append(g)
    return out


@dataclass
class MetaReport:
    critic_obj: float
    gc_obj: float
    upd_norm_dis: float
    upd_norm_gc: float


def meta_update(query: Sequence[Objective], params: Mapping[str, Tensor], adapted: AdaptedParams,
                cfg: MetaConfig) -> MetaReport:
    """First-order meta step on the base parameters, in place.

    Query gradients are taken at the adapted copies, summed over tasks in
    ascending pseudo-label order, then ``dis += beta1 * sum`` and
    ``gc -= beta2 * sum``.  Objective values in the report are task means.
    """
    dis, gc = _split_groups(params)
    if adapted.mode == "shared":
        cur = overlay(params, adapted.dis[0], adapted.gc[0])
        c_sum, g_sum, g_dis, g_gc = _objectives_and_grads(query, cur, adapted.dis[0], adapted.gc[0])
    else:
        c_sum = g_sum = 0.0
        g_dis = {n: np.zeros_like(t.data) for n, t in dis.items()}
        g_gc = {n: np.zeros_like(t.data) for n, t in gc.items()}
        for j, obj in enumerate(query):
            d_j, gc_j = adapted.for_task(j)
            cur = overlay(params, d_j, gc_j)
            c, g, gd, gg = _objectives_and_grads([obj], cur, d_j, gc_j)
            c_sum += c
            g_sum += g
            for n in g_dis:
                g_dis[n] = g_dis[n] + gd[n]
            for n in g_gc:
                g_gc[n] = g_gc[n] + gg[n]
    gradient_step(dis, g_dis, cfg.beta1, "ascend", in_place=True)
    gradient_step(gc, g_gc, cfg.beta2, "descend", in_place=True)
    k = max(len(query), 1)
    return MetaReport(c_sum / k, g_sum / k,
                      cfg.beta1 * global_norm(g_dis.values()), cfg.beta2 * global_norm(g_gc.values()))


def zsl_objective(block: EncodedBlock, slope: float = 0.2, cls_weight: float = 1.0) -> Objective:
    return lambda params: loss_zsl(block, params, slope, cls_weight)
