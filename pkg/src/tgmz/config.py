"""Run configuration: sectioned ``key = value`` text mapped onto dataclasses.

Sections: ``[data]``, ``[synthetic]``, ``[episode]``, ``[tae]``, ``[meta]``,
``[synthesis]``, ``[head]`` and ``[run]``.  Unknown sections and keys are
rejected; everything omitted takes its module default.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec
from .errors import ConfigError
from .evaluation import HeadConfig
from .mgan import MetaConfig
from .tae import TAEConfig


@dataclass
class DataConfig:
    path: str | None = None
    standardize: bool = False
    seen_fraction: float = 0.75
    sup_fraction: float = 0.67
    seen_test_fraction: float = 0.2
    split_seed: int = 0

    def __post_init__(self):
        for k in ("seen_fraction", "sup_fraction"):
            if not 0 < getattr(self, k) < 1:
                raise ConfigError(f"data.{k} must lie in (0, 1)")
        if not 0 <= self.seen_test_fraction < 1:
            raise ConfigError("data.seen_test_fraction must lie in [0, 1)")


@dataclass
class EpisodeConfig:
    tasks: int = 4
    K: int = 3
    N: int = 5
    episodes: int = 1000

    def __post_init__(self):
        for k in ("tasks", "K", "N"):
            if getattr(self, k) < 1:
                raise ConfigError(f"episode.{k} must be >= 1")
        if self.episodes < 0:
            raise ConfigError("episode.episodes must be >= 0")


@dataclass
class SynthesisConfig:
    samples: int = 100
    sigma: float = 1.0

    def __post_init__(self):
        if self.samples < 1:
            raise ConfigError("synthesis.samples must be >= 1")
        if self.sigma < 0:
            raise ConfigError("synthesis.sigma must be non-negative")


@dataclass
class RunSection:
    seed: int = 0
    out: str = "run"
    precision: int = 64
    disable_alignment: bool = False

    def __post_init__(self):
        if self.precision not in (32, 64):
            raise ConfigError("run.precision must be 32 or 64")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    synthetic: SyntheticSpec | None = None
    episode: EpisodeConfig = field(default_factory=EpisodeConfig)
    tae: TAEConfig = field(default_factory=TAEConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    run: RunSection = field(default_factory=RunSection)

    def __post_init__(self):
        if (self.data.path is None) == (self.synthetic is None):
            raise ConfigError("give exactly one of data.path or a [synthetic] section")

    def emit(self) -> str:
        return emit_config(self)

    def hash(self) -> str:
        """Digest of the whole resolved configuration except the output directory."""
        return _digest(self, SECTIONS)

    def train_hash(self) -> str:
        """Digest of the fields that determine training; checkpoints carry this one."""
        return _digest(self, TRAIN_SECTIONS)


SECTIONS = ("data", "synthetic", "episode", "tae", "meta", "synthesis", "head", "run")
TRAIN_SECTIONS = ("data", "synthetic", "episode", "tae", "meta", "run")
_HASH_SKIP = {("run", "out")}
_SECTION_TYPES = {
    "data": DataConfig, "synthetic": SyntheticSpec, "episode": EpisodeConfig, "tae": TAEConfig,
    "meta": MetaConfig, "synthesis": SynthesisConfig, "head": HeadConfig, "run": RunSection,
}


def _fields(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _coerce(text: str, tp, where: str):
    s = text.strip()
    args = typing.get_args(tp)
    try:
        if type(None) in args:
            if s.lower() in ("", "none"):
                return None
            rest = [a for a in args if a is not type(None)]
            return _coerce(s, rest[0] if len(rest) == 1 else typing.Union[tuple(rest)], where)
        if tp is bool:
            low = s.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(s)
        if tp is int:
            return int(s)
        if tp is float:
            return float(s)
        if tp is str:
            return s
        if set(args) == {float, tuple}:
            parts = [p for p in s.replace(",", " ").split() if p]
            return float(parts[0]) if len(parts) == 1 else tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {getattr(tp, '__name__', tp)}") from None
    raise ConfigError(f"{where}: unsupported field type {tp}")


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(_format(x) for x in v)
    return str(v)


def _build(cls, items: dict, section: str):
    types = _fields(cls)
    kw = {}
    for k, v in items.items():
        if k not in types:
            raise ConfigError(f"unknown key {section}.{k}")
        kw[k] = _coerce(v, types[k], f"{section}.{k}")
    try:
        return cls(**kw)
    except ConfigError as e:
        raise ConfigError(f"[{section}] {e}") from None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (K, N)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    kw = {}
    for sec in cp.sections():
        if sec not in _SECTION_TYPES:
            raise ConfigError(f"{source}: unknown section [{sec}]")
        kw[sec] = _build(_SECTION_TYPES[sec], dict(cp.items(sec)), sec)
    return RunConfig(**kw)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cfg = parse_config_text(path.read_text(), str(path))
    if cfg.data.path is not None and not Path(cfg.data.path).is_absolute():
        cfg.data.path = str((path.parent / cfg.data.path).resolve())
    return cfg


def emit_config(cfg: RunConfig, sections=SECTIONS, skip=()) -> str:
    out = []
    for sec in sections:
        obj = getattr(cfg, sec)
        if obj is None:
            continue
        out.append(f"[{sec}]")
        for f in dataclasses.fields(obj):
            if (sec, f.name) not in skip:
                out.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)


def _digest(cfg: RunConfig, sections) -> str:
    return hashlib.sha256(emit_config(cfg, sections, _HASH_SKIP).encode()).hexdigest()[:16]
