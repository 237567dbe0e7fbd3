"""Skewed task streams and measurements of how well the encoder aligns them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Block, Dataset, Episode, SplitSpec, Task, sample_episode
from .model import TGMZModel, TrainState
from .tae import align_step, classify, encode, task_discriminate


def skew_episode(episode: Episode, factors) -> Episode:
    """Multiply the features of task ``m`` by ``factors[m]``."""
    def sk(b: Block, f):
        return b if f == 1 else Block(b.x * f, b.a, b.y, b.rows)

    return Episode([Task(sk(t.support, factors[t.m]), sk(t.query, factors[t.m]), t.m) for t in episode.tasks],
                   episode.seed)


def fit_alignment(model: TGMZModel, d: Dataset, split: SplitSpec, episodes: int, K: int, N: int, factors,
                  streams: dict, state: TrainState | None = None) -> list:
    """Autoencoder-only training on a stream whose tasks are rescaled by ``factors``."""
    if len(factors) != model.n_tasks:
        raise ValueError(f"need one factor per task ({model.n_tasks}), got {len(factors)}")
    state = state or TrainState.fresh(model.tae)
    idx = model.class_index()
    out = []
    for _ in range(episodes):
        ep = sample_episode(d, split, model.n_tasks, K, N, int(streams["sampling"].integers(2**63)))
        out.append(align_step(skew_episode(ep, factors), model.params, state.adam_tdis, state.adam_tc, model.tae, idx))
        state.episode += 1
    return out


def mean_discrepancy(U: np.ndarray, V: np.ndarray) -> float:
    """Distance between the two means in units of the pooled spread."""
    spread = np.sqrt(0.5 * (U.var(axis=0).sum() + V.var(axis=0).sum()))
    return float(np.linalg.norm(U.mean(axis=0) - V.mean(axis=0)) / spread)


@dataclass
class AlignmentReport:
    task_accuracy: float      # task critic, chance 1/len(factors)
    class_accuracy: float     # classifier over the training classes
    input_discrepancy: float
    embedding_discrepancy: float

    @property
    def discrepancy_ratio(self) -> float:
        return self.embedding_discrepancy / self.input_discrepancy


def measure_alignment(model: TGMZModel, x: np.ndarray, a: np.ndarray, y: np.ndarray, factors) -> AlignmentReport:
    """Present the same held-out rows once per task, rescaled, and score the encodings.

    ``y`` are global class ids of training classes.  Discrepancies compare the
    first two tasks.
    """
    idx = model.class_index()
    y_loc = np.array([idx[int(c)] for c in y])
    slope = model.tae.slope
    xs = [np.asarray(x, dtype=model.dtype) * f for f in factors]
    es = [encode(v, model.params, slope).data for v in xs]
    a = np.asarray(a, dtype=model.dtype)
    task_hits = [task_discriminate(e, a, model.params, slope).data.argmax(1) == m for m, e in enumerate(es)]
    cls_hits = [classify(e, model.params, slope).data.argmax(1) == y_loc for e in es]
    return AlignmentReport(float(np.mean(task_hits)), float(np.mean(cls_hits)),
                           mean_discrepancy(xs[0], xs[1]), mean_discrepancy(es[0], es[1]))
