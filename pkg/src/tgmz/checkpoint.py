"""Binary checkpoints.

Layout: ``TGMZC1`` magic, u32 format version, u32 header length, a JSON
header, the float64 little-endian payload of every array in header order,
and a trailing SHA-256 of everything before it.  Loading validates the whole
file before any object is built, so a damaged file never half-loads.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .mgan import MetaConfig
from .model import TGMZModel, TrainState
from .numerics import AdamState, BatchNormState, ParamStore, Tensor
from .tae import TAEConfig

MAGIC = b"TGMZC1"
VERSION = 1
_DIGEST = 32


@dataclass
class Checkpoint:
    config_hash: str
    episode: int
    model: dict                     # d_x, d_a, n_tasks, seen, dtype, tae, meta
    params: "OrderedDict[str, np.ndarray]"
    adam: dict = field(default_factory=dict)        # name -> AdamState
    batchnorm: dict = field(default_factory=dict)   # name -> BatchNormState
    rng: dict = field(default_factory=dict)         # name -> bit generator state


def capture(model: TGMZModel, state: TrainState | None, streams: dict | None, config_hash: str) -> Checkpoint:
    info = dict(d_x=model.d_x, d_a=model.d_a, n_tasks=model.n_tasks, seen=list(model.seen),
                dtype=np.dtype(model.dtype).name, tae=asdict(model.tae), meta=asdict(model.meta))
    adam = {}
    if state is not None:
        adam = {"tdis": state.adam_tdis, "tc": state.adam_tc}
    rng = {k: g.bit_generator.state for k, g in (streams or {}).items()}
    return Checkpoint(config_hash, state.episode if state else 0, info,
                      OrderedDict((n, t.data.copy()) for n, t in model.params.items()), adam, {}, rng)


def restore(ck: Checkpoint):
    """Rebuild ``(model, train_state, streams)`` from a checkpoint."""
    info = ck.model
    dtype = np.dtype(info["dtype"])
    store = ParamStore()
    for n, a in ck.params.items():
        store.add(n, Tensor(a.astype(dtype), requires_grad=True, name=n))
    model = TGMZModel(store, info["d_x"], info["d_a"], info["n_tasks"], tuple(info["seen"]),
                      TAEConfig(**info["tae"]), MetaConfig(**info["meta"]))
    state = None
    if ck.adam:
        for s in ck.adam.values():
            s.m = OrderedDict((n, a.astype(dtype)) for n, a in s.m.items())
            s.v = OrderedDict((n, a.astype(dtype)) for n, a in s.v.items())
        state = TrainState(ck.adam["tdis"], ck.adam["tc"], ck.episode)
    streams = {}
    for k, s in ck.rng.items():
        g = np.random.default_rng()
        g.bit_generator.state = s
        streams[k] = g
    return model, state, streams


def _arrays_and_header(ck: Checkpoint):
    # json sorts dict keys, so groups are visited in sorted order to keep payload and header aligned
    arrays = []

    def ref(a):
        a = np.asarray(a)
        arrays.append(a)
        return list(a.shape)

    header = {
        "config_hash": ck.config_hash,
        "episode": int(ck.episode),
        "model": ck.model,
        "params": [[n, ref(a), np.dtype(a.dtype).name] for n, a in ck.params.items()],
        "adam": {k: {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps, "t": s.t,
                     "m": [[n, ref(a)] for n, a in s.m.items()],
                     "v": [[n, ref(a)] for n, a in s.v.items()]}
                 for k, s in sorted(ck.adam.items())},
        "batchnorm": {k: {"momentum": s.momentum, "eps": s.eps, "dim": int(s.running_mean.size),
                          "mean": ref(s.running_mean), "var": ref(s.running_var)}
                      for k, s in sorted(ck.batchnorm.items())},
        "rng": ck.rng,
    }
    return header, arrays


def dumps(ck: Checkpoint) -> bytes:
    header, arrays = _arrays_and_header(ck)
    hb = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(hb)) + hb
    body += b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(ck: Checkpoint, path):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(ck))
    os.replace(tmp, path)


def loads(buf: bytes, source: str = "<checkpoint>") -> Checkpoint:
    if len(buf) < len(MAGIC) + 8 + _DIGEST or buf[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic or too short)")
    version, hlen = struct.unpack_from("<II", buf, len(MAGIC))
    if version != VERSION:
        raise FormatError(f"{source}: unsupported checkpoint version {version}")
    body, digest = buf[:-_DIGEST], buf[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise FormatError(f"{source}: checksum mismatch (truncated or corrupted)")
    start = len(MAGIC) + 8
    try:
        header = json.loads(body[start:start + hlen])
    except ValueError as e:
        raise FormatError(f"{source}: unreadable header: {e}") from None
    payload = memoryview(body)[start + hlen:]
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape, dtype=np.int64))
        if pos + 8 * n > len(payload):
            raise FormatError(f"{source}: payload shorter than header declares")
        a = np.frombuffer(payload[pos:pos + 8 * n], dtype="<f8").reshape(shape).astype(np.float64)
        pos += 8 * n
        return a

    try:
        params = OrderedDict((n, take(shape).astype(dt)) for n, shape, dt in header["params"])
        adam = {}
        for k, s in header["adam"].items():
            m = OrderedDict((n, take(shape)) for n, shape in s["m"])
            v = OrderedDict((n, take(shape)) for n, shape in s["v"])
            adam[k] = AdamState(s["lr"], s["beta1"], s["beta2"], s["eps"], s["t"], m, v)
        bn = {}
        for k, s in header["batchnorm"].items():
            st = BatchNormState(s["dim"], s["momentum"], s["eps"])
            st.running_mean, st.running_var = take(s["mean"]), take(s["var"])
            bn[k] = st
        ck = Checkpoint(header["config_hash"], header["episode"], header["model"], params, adam, bn, header["rng"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{source}: malformed header: {e}") from None
    if pos != len(payload):
        raise FormatError(f"{source}: {len(payload) - pos} unexpected trailing bytes")
    return ck


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise FormatError(f"{path}: {e}") from None
    return loads(buf, str(path))
