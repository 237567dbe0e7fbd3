"""Train and evaluate from a :class:`~tgmz.config.RunConfig`."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import capture, load_checkpoint, loads, dumps, restore, save_checkpoint
from .config import RunConfig
from .data import Dataset, load_dataset, make_synthetic, split_classes, standardizer
from .errors import CompatibilityError, ConfigError, ContractError
from .evaluation import (
    SETTINGS,
    MetricsReport,
    SynthesisSpec,
    eval_fusion,
    eval_gzsl,
    eval_zsl,
    export_projection,
    synthesize_set,
)
from .model import LOG_FIELDS, TGMZModel, TrainState, build_model, fit, rng_streams

CHECKPOINT = "checkpoint.tgmz"
LOG = "train_log.csv"


def load_data(cfg: RunConfig) -> Dataset:
    if cfg.synthetic is not None:
        return make_synthetic(cfg.synthetic)
    d = load_dataset(cfg.data.path)
    if d.split is None:
        dc = cfg.data
        d.split = split_classes(d, dc.seen_fraction, dc.sup_fraction, dc.split_seed, dc.seen_test_fraction)
    return d


def make_transform(cfg: RunConfig, d: Dataset):
    if not cfg.data.standardize:
        return None
    mu, sd = standardizer(d, d.split)
    return lambda x: (np.asarray(x, dtype=np.float64) - mu) / sd


def _dtype(cfg: RunConfig):
    return np.float64 if cfg.run.precision == 64 else np.float32


def out_dir(cfg: RunConfig, override=None) -> Path:
    p = Path(override or cfg.run.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


@dataclass
class TrainResult:
    model: TGMZModel
    state: TrainState
    checkpoint: Path
    log: Path
    dataset: Dataset


def _fmt(v) -> str:
    # skipped terms (no-alignment runs) are logged as empty fields
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def run_train(cfg: RunConfig, out=None) -> TrainResult:
    """Fixed-count episode loop; one log row per episode, final checkpoint.

    With ``run.disable_alignment`` the autoencoder step is skipped, so the
    encoder, decoder and task critic stay at initialization.
    """
    d = load_data(cfg)
    split = d.split
    out = out_dir(cfg, out)
    streams = rng_streams(cfg.run.seed)
    ep = cfg.episode
    model = build_model(d.d_x, d.d_a, split.seen, ep.tasks, cfg.tae, cfg.meta, streams["init"], _dtype(cfg))
    state = TrainState.fresh(cfg.tae)
    transform = make_transform(cfg, d)
    log_path = out / LOG
    with open(log_path, "w", newline="") as fh, d.audit.scope("train"):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        fit(model, d, split, ep.episodes, ep.K, ep.N, streams, state, align=not cfg.run.disable_alignment,
            transform=transform, callback=lambda r: w.writerow([_fmt(v) for v in r.row()]))
    ck_path = out / CHECKPOINT
    save_checkpoint(capture(model, state, streams, cfg.train_hash()), ck_path)
    (out / "config.ini").write_text(cfg.emit())
    return TrainResult(model, state, ck_path, log_path, d)


def load_trained(cfg: RunConfig, checkpoint) -> TGMZModel:
    ck = load_checkpoint(checkpoint)
    if ck.config_hash != cfg.train_hash():
        raise CompatibilityError(
            f"checkpoint {checkpoint} was trained under config {ck.config_hash}, not {cfg.train_hash()}")
    model, _, _ = restore(ck)
    return model


def evaluate(cfg: RunConfig, model: TGMZModel, d: Dataset, setting: str) -> MetricsReport:
    if setting not in SETTINGS:
        raise ConfigError(f"setting must be one of {SETTINGS}")
    seed = cfg.run.seed
    spec = SynthesisSpec((), cfg.synthesis.samples, cfg.synthesis.sigma, seed)
    kw = dict(head_cfg=cfg.head, seed=seed, config_hash=cfg.hash(), transform=make_transform(cfg, d))
    if setting == "zsl":
        return eval_zsl(d, d.split, model, spec, **kw)
    if setting == "gzsl":
        return eval_gzsl(d, d.split, model, spec, **kw)
    if not d.sources:
        raise ConfigError("fusion evaluation needs a fused dataset")
    return eval_fusion(d, d.split, model, spec, **kw)


def run_evaluate(cfg: RunConfig, checkpoint, setting: str, export: bool = False, out=None) -> MetricsReport:
    """Evaluate a checkpoint, write ``metrics_<setting>.txt`` and optionally a projection."""
    model = load_trained(cfg, checkpoint)
    d = load_data(cfg)
    rep = evaluate(cfg, model, d, setting)
    out = out_dir(cfg, out)
    (out / f"metrics_{setting}.txt").write_text("\n".join(rep.lines()) + "\n")
    if export:
        spec = SynthesisSpec(tuple(d.split.unseen), cfg.synthesis.samples, cfg.synthesis.sigma, cfg.run.seed)
        E, y = synthesize_set(spec, {c: d.A[c] for c in d.split.unseen}, model)
        export_projection(E, y, out / f"projection_{setting}.txt")
    return rep


@dataclass
class RoundtripReport:
    n_tensors: int
    tensors_equal: bool
    outputs_equal: bool

    @property
    def passed(self) -> bool:
        return self.tensors_equal and self.outputs_equal


def probe_outputs(model: TGMZModel, rng=None) -> dict[str, np.ndarray]:
    """Forward outputs of every network on a fixed random probe batch."""
    from .mgan import critic_score, generate
    from .tae import classify, decode, task_discriminate

    rng = rng or np.random.default_rng(12345)
    dt, s = model.dtype, model.tae.slope
    x = rng.normal(size=(8, model.d_x)).astype(dt)
    a = rng.uniform(size=(8, model.d_a)).astype(dt)
    z = rng.normal(size=(8, model.d_z)).astype(dt)
    e = model.encode(x)
    p = model.params
    return {
        "encode": e,
        "decode": decode(e, p, s).data,
        "task": task_discriminate(e, a, p, s).data,
        "classify": classify(e, p, s).data,
        "generate": generate(z, a, p, s).data,
        "critic": critic_score(e, a, p, s).data,
    }


def checkpoint_roundtrip(model: TGMZModel, state: TrainState | None, streams: dict | None, path,
                         config_hash: str = "") -> RoundtripReport:
    """Save, reload and compare every tensor and the probe-batch outputs bitwise."""
    ck = capture(model, state, streams, config_hash)
    save_checkpoint(ck, path)
    back = load_checkpoint(path)
    model2, state2, _ = restore(back)
    same = list(ck.params) == list(back.params) and all(
        np.array_equal(ck.params[n], back.params[n]) and ck.params[n].dtype == back.params[n].dtype
        for n in ck.params)
    if state is not None:
        for a, b in ((state.adam_tdis, state2.adam_tdis), (state.adam_tc, state2.adam_tc)):
            same = same and a.t == b.t and all(
                np.array_equal(a.m[n], b.m[n]) and np.array_equal(a.v[n], b.v[n]) for n in a.m)
    p1, p2 = probe_outputs(model), probe_outputs(model2)
    outs = all(np.array_equal(p1[k], p2[k]) for k in p1)
    return RoundtripReport(len(ck.params), bool(same), bool(outs))


def check_checkpoint(path) -> RoundtripReport:
    """Load a checkpoint file and verify it re-serializes to the same bytes and outputs."""
    raw = Path(path).read_bytes()
    ck = loads(raw, str(path))
    if dumps(ck) != raw:
        raise ContractError(f"{path}: re-serialization differs")
    model, _, _ = restore(ck)
    model2, _, _ = restore(loads(dumps(ck)))
    p1, p2 = probe_outputs(model), probe_outputs(model2)
    return RoundtripReport(len(ck.params), True, all(np.array_equal(p1[k], p2[k]) for k in p1))
