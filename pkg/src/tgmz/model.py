"""The full model and one training episode."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Episode
from .errors import TrainingDivergedError
from .mgan import EncodedBlock, MetaConfig, inner_adapt, init_mgan, meta_update, zsl_objective
from .numerics import AdamState, ParamStore
from .tae import TAEConfig, align_step, encode, init_tae

LOG_FIELDS = ("episode", "loss_tdis", "loss_tc", "critic_obj", "gc_obj", "upd_norm_dis", "upd_norm_gc")


@dataclass
class TGMZModel:
    params: ParamStore
    d_x: int
    d_a: int
    n_tasks: int
    seen: tuple          # classifier output k <-> global class seen[k]
    tae: TAEConfig
    meta: MetaConfig

    @property
    def d_e(self) -> int:
        return self.tae.d_e

    @property
    def d_z(self) -> int:
        return self.meta.d_z or self.tae.d_e

    @property
    def dtype(self):
        return self.params["te.0.weight"].data.dtype

    def class_index(self) -> dict[int, int]:
        return {c: k for k, c in enumerate(self.seen)}

    def encode(self, x) -> np.ndarray:
        return encode(np.asarray(x, dtype=self.dtype), self.params, self.tae.slope).data


def build_model(d_x: int, d_a: int, seen, n_tasks: int, tae: TAEConfig, meta: MetaConfig,
                rng: np.random.Generator, dtype=np.float64) -> TGMZModel:
    store = ParamStore()
    seen = tuple(int(c) for c in seen)
    init_tae(store, d_x, d_a, n_tasks, len(seen), tae, rng, dtype)
    init_mgan(store, d_a, tae.d_e, meta, rng, dtype)
    return TGMZModel(store, d_x, d_a, n_tasks, seen, tae, meta)


@dataclass
class TrainState:
    adam_tdis: AdamState
    adam_tc: AdamState
    episode: int = 0

    @classmethod
    def fresh(cls, tae: TAEConfig) -> "TrainState":
        return cls(AdamState(lr=tae.lr_tdis), AdamState(lr=tae.lr_tc))


@dataclass
class EpisodeReport:
    episode: int
    loss_tdis: float
    loss_tc: float
    critic_obj: float
    gc_obj: float
    upd_norm_dis: float
    upd_norm_gc: float
    extras: dict = field(default_factory=dict)

    def row(self) -> tuple:
        return tuple(getattr(self, f) for f in LOG_FIELDS)


def encode_episode(model: TGMZModel, episode: Episode, noise_rng: np.random.Generator):
    """Encode every block with the current encoder and draw one z per row.

    Noise is drawn task by task, support before query.
    """
    idx = model.class_index()
    sigma, d_z = model.meta.sigma, model.d_z
    sup, qry = [], []
    for task in episode.tasks:
        for blk, out in ((task.support, sup), (task.query, qry)):
            e = model.encode(blk.x)
            z = noise_rng.normal(0.0, sigma, size=(len(blk.y), d_z)).astype(model.dtype)
            y = np.fromiter((idx[int(c)] for c in blk.y), dtype=np.int64, count=len(blk.y))
            out.append(EncodedBlock(e, blk.a.astype(model.dtype), y, z))
    return sup, qry


def train_episode(model: TGMZModel, episode: Episode, state: TrainState, noise_rng: np.random.Generator,
                  align: bool = True, transform=None) -> EpisodeReport:
    """Alignment step, re-encoding, inner adaptation and meta-update, in that order.

    ``align=False`` skips the autoencoder update (no-alignment ablation).
    ``transform`` maps raw feature blocks before they reach the encoder.
    """
    if transform is not None:
        episode = _transformed(episode, transform)
    if align:
        ar = align_step(episode, model.params, state.adam_tdis, state.adam_tc, model.tae, model.class_index())
        l_tdis, l_tc = ar.loss_tdis, ar.loss_tc
    else:
        l_tdis = l_tc = float("nan")
    sup, qry = encode_episode(model, episode, noise_rng)
    slope, w = model.tae.slope, model.meta.lambda_cls
    adapted = inner_adapt([zsl_objective(b, slope, w) for b in sup], model.params, model.meta)
    mr = meta_update([zsl_objective(b, slope, w) for b in qry], model.params, adapted, model.meta)
    rep = EpisodeReport(state.episode, l_tdis, l_tc, mr.critic_obj, mr.gc_obj, mr.upd_norm_dis, mr.upd_norm_gc)
    for name in ("loss_tdis", "loss_tc", "critic_obj", "gc_obj"):
        v = getattr(rep, name)
        if align or name not in ("loss_tdis", "loss_tc"):
            if not np.isfinite(v):
                raise TrainingDivergedError(f"non-finite {name} at episode {state.episode}")
    state.episode += 1
    return rep


def _transformed(episode: Episode, transform) -> Episode:
    from .data import Block, Task

    def tb(b):
        return Block(transform(b.x), b.a, b.y, b.rows)

    return Episode([Task(tb(t.support), tb(t.query), t.m) for t in episode.tasks], episode.seed)


STREAMS = ("sampling", "noise", "init", "head")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def fit(model: TGMZModel, d, split, episodes: int, K: int, N: int, streams: dict, state: TrainState | None = None,
        align: bool = True, transform=None, callback=None) -> list[EpisodeReport]:
    """Run ``episodes`` training episodes; one fresh task batch per episode."""
    from .data import sample_episode

    state = state or TrainState.fresh(model.tae)
    reports = []
    for _ in range(episodes):
        ep_seed = int(streams["sampling"].integers(2**63))
        episode = sample_episode(d, split, model.n_tasks, K, N, ep_seed)
        rep = train_episode(model, episode, state, streams["noise"], align=align, transform=transform)
        reports.append(rep)
        if callback is not None:
            callback(rep)
    return reports
