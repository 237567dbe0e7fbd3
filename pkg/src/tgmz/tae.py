"""Attribute-conditioned task adversarial autoencoder.

Four networks share one :class:`~tgmz.numerics.ParamStore`:

* ``te``   encoder        x -> e
* ``td``   decoder        e -> x_hat
* ``tdis`` task critic    [e | a] -> logits over task pseudo-labels
* ``cls``  classifier     e -> logits over the training classes

The task critic learns to tell tasks apart from their encodings; the
encoder, decoder and classifier learn to reconstruct, to classify and to
confuse the task critic.  Both sides use Adam and alternate every episode.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import (
    AdamState,
    ParamStore,
    Tensor,
    adam_step,
    concat,
    init_mlp,
    mlp,
    mse,
    scale,
    softmax_cross_entropy,
    value_and_grad,
)


@dataclass
class TAEConfig:
    d_e: int = 16
    enc_hidden: int | None = None
    dec_hidden: int | None = None
    tdis_hidden: int | None = None
    cls_hidden: int | None = None
    slope: float = 0.2
    lambda_rec: float = 1.0
    lambda_adv: float = 1.0
    lambda_cls: float = 1.0
    lr_tc: float = 1e-3
    lr_tdis: float = 1e-3

    def __post_init__(self):
        for k in ("d_e", "enc_hidden", "dec_hidden", "tdis_hidden", "cls_hidden"):
            v = getattr(self, k)
            if v is not None and v <= 0:
                raise ConfigError(f"tae.{k} must be positive")
        for k in ("lambda_rec", "lambda_adv", "lambda_cls", "lr_tc", "lr_tdis"):
            if getattr(self, k) < 0:
                raise ConfigError(f"tae.{k} must be non-negative")
        if not 0 < self.slope < 1:
            raise ConfigError("tae.slope must lie in (0, 1)")

    def widths(self) -> dict[str, int]:
        d = self.d_e
        return {
            "te": self.enc_hidden or 4 * d,
            "td": self.dec_hidden or 4 * d,
            "tdis": self.tdis_hidden or 2 * d,
            "cls": self.cls_hidden or 2 * d,
        }


def init_tae(store: ParamStore, d_x: int, d_a: int, n_tasks: int, n_classes: int, cfg: TAEConfig,
             rng: np.random.Generator, dtype=np.float64):
    w = cfg.widths()
    init_mlp(store, "te", (d_x, w["te"], cfg.d_e), rng, dtype)
    init_mlp(store, "td", (cfg.d_e, w["td"], d_x), rng, dtype)
    init_mlp(store, "tdis", (cfg.d_e + d_a, w["tdis"], n_tasks), rng, dtype)
    init_mlp(store, "cls", (cfg.d_e, w["cls"], n_classes), rng, dtype)


def _as_input(x, params: Mapping[str, Tensor], ref: str) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=params[ref].data.dtype))


def encode(x, params, slope: float = 0.2) -> Tensor:
    return mlp(params, "te", _as_input(x, params, "te.0.weight"), slope)


def decode(e, params, slope: float = 0.2) -> Tensor:
    return mlp(params, "td", _as_input(e, params, "td.0.weight"), slope)


def task_discriminate(e, a, params, slope: float = 0.2) -> Tensor:
    e = _as_input(e, params, "tdis.0.weight")
    a = _as_input(a, params, "tdis.0.weight")
    if a.shape[0] != e.shape[0]:
        raise DimensionError(f"{e.shape[0]} embeddings but {a.shape[0]} attribute rows")
    return mlp(params, "tdis", concat([e, a]), slope)


def classify(e, params, slope: float = 0.2) -> Tensor:
    return mlp(params, "cls", _as_input(e, params, "cls.0.weight"), slope)


def loss_tdis(e, a, m, params, cfg: TAEConfig) -> Tensor:
    """Task-critic cross-entropy over every row of every task.

    The critic *minimises* this, which is the same as maximising ``-CE``.
    """
    return softmax_cross_entropy(task_discriminate(e, a, params, cfg.slope), m)


def loss_tc(x, a, y, m, params, cfg: TAEConfig, parts: dict | None = None) -> Tensor:
    """``l_rec * MSE(x, dec(enc(x))) - l_adv * CE_task + l_cls * CE_class``.

    ``y`` are positions among the training classes.  Pass ``parts`` to
    receive the three unweighted terms as floats.
    """
    x = _as_input(x, params, "te.0.weight")
    e = encode(x, params, cfg.slope)
    rec = mse(decode(e, params, cfg.slope), x)
    adv = softmax_cross_entropy(task_discriminate(e, a, params, cfg.slope), m)
    ce = softmax_cross_entropy(classify(e, params, cfg.slope), y)
    if parts is not None:
        parts.update(rec=float(rec.data), adv=float(adv.data), cls=float(ce.data))
    return scale(rec, cfg.lambda_rec) - scale(adv, cfg.lambda_adv) + scale(ce, cfg.lambda_cls)


@dataclass
class AlignReport:
    loss_tdis: float
    loss_tc: float
    rec: float
    adv: float
    cls: float


def align_step(episode, params: ParamStore, adam_tdis: AdamState, adam_tc: AdamState, cfg: TAEConfig,
               class_index: Mapping[int, int]) -> AlignReport:
    """One Adam step for the task critic, then one for encoder/decoder/classifier.

    Both losses are computed on the same episode (all support and query rows
    of all tasks); the second uses the critic as just updated.
    """
    x, a, y, m = episode.alignment_batch()
    dtype = params["te.0.weight"].data.dtype
    x = Tensor(x.astype(dtype))
    a = Tensor(a.astype(dtype))
    y_loc = np.fromiter((class_index[int(c)] for c in y), dtype=np.int64, count=y.size)

    tdis = params.group("tdis")
    e = encode(x, params, cfg.slope)  # no tape: constant for the critic step
    l_dis, g_dis = value_and_grad(lambda: loss_tdis(e, a, m, params, cfg), tdis)
    adam_step(tdis, g_dis, adam_tdis, "descend")

    tc = params.group("tc")
    parts: dict = {}
    l_tc, g_tc = value_and_grad(lambda: loss_tc(x, a, y_loc, m, params, cfg, parts), tc)
    adam_step(tc, g_tc, adam_tc, "descend")
    return AlignReport(l_dis, l_tc, parts["rec"], parts["adv"], parts["cls"])
