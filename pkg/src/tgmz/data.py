"""Datasets, class splits, episodic task sampling and dataset fusion.

A :class:`Dataset` keeps visual features ``X`` (float32, one row per
instance), per-class attributes ``A`` and integer labels ``Y``.  Feature rows
are read through :meth:`Dataset.take`, which logs the row ids against the
current audit phase so callers can prove that no unseen-class or held-out
row was touched while training.
"""
from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, SamplingError

FEATURE_MAGIC = b"TGMZF1"


class AccessAudit:
    """Records which feature rows were read, keyed by phase name."""

    def __init__(self):
        self.phase = "train"
        self.reads: dict[str, set[int]] = {}

    def record(self, rows):
        self.reads.setdefault(self.phase, set()).update(int(r) for r in np.asarray(rows).reshape(-1))

    @contextlib.contextmanager
    def scope(self, phase: str):
        prev, self.phase = self.phase, phase
        try:
            yield self
        finally:
            self.phase = prev

    def rows_read(self, phase: str = "train") -> set[int]:
        return set(self.reads.get(phase, ()))

    def reset(self):
        self.reads.clear()


@dataclass(frozen=True)
class SplitSpec:
    seen: tuple
    unseen: tuple
    sup: tuple
    qry: tuple
    seen_test: tuple = ()  # held-out instance rows of seen classes (GZSL test set)

    def __post_init__(self):
        for f in ("seen", "unseen", "sup", "qry", "seen_test"):
            object.__setattr__(self, f, tuple(sorted(int(v) for v in getattr(self, f))))
        seen, unseen, sup, qry = map(set, (self.seen, self.unseen, self.sup, self.qry))
        if len(seen) != len(self.seen) or len(unseen) != len(self.unseen):
            raise ConfigError("duplicate class ids in split")
        if seen & unseen:
            raise ConfigError(f"seen and unseen classes overlap: {sorted(seen & unseen)}")
        if sup & qry:
            raise ConfigError(f"support and query classes overlap: {sorted(sup & qry)}")
        if sup | qry != seen:
            raise ConfigError("support and query classes must partition the seen classes")

    @property
    def n_classes(self) -> int:
        return len(self.seen) + len(self.unseen)

    def seen_index(self) -> dict[int, int]:
        """Global class id -> position among the seen (training) classes."""
        return {c: k for k, c in enumerate(self.seen)}


@dataclass(frozen=True)
class SourceInfo:
    name: str
    class_offset: int
    n_classes: int
    row_offset: int
    n_rows: int
    d_a: int

    def owns_class(self, c: int) -> bool:
        return self.class_offset <= c < self.class_offset + self.n_classes


@dataclass(eq=False)
class Dataset:
    name: str
    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray
    class_names: list | None = None
    split: SplitSpec | None = None
    sources: tuple = ()
    audit: AccessAudit = field(default_factory=AccessAudit, repr=False)

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float32)
        self.A = np.ascontiguousarray(self.A, dtype=np.float64)
        self.Y = np.ascontiguousarray(self.Y, dtype=np.int64)
        self.validate()

    def validate(self):
        if self.X.ndim != 2 or self.A.ndim != 2 or self.Y.ndim != 1:
            raise FormatError("X and A must be matrices and Y a vector")
        if self.X.shape[0] != self.Y.shape[0]:
            raise FormatError(f"{self.X.shape[0]} feature rows but {self.Y.shape[0]} labels")
        C = self.A.shape[0]
        if self.Y.size and (self.Y.min() < 0 or self.Y.max() >= C):
            raise FormatError(f"labels must lie in [0, {C})")
        if not np.all(np.isfinite(self.A)):
            raise FormatError("attribute rows must be finite")
        empty = np.setdiff1d(np.arange(C), self.Y)
        if empty.size:
            raise FormatError(f"classes without instances: {empty.tolist()}")
        if self.class_names is not None and len(self.class_names) != C:
            raise FormatError(f"{len(self.class_names)} class names for {C} classes")
        if self.split is not None and self.split.n_classes != C:
            raise FormatError(f"split covers {self.split.n_classes} classes, dataset has {C}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_classes(self) -> int:
        return self.A.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_a(self) -> int:
        return self.A.shape[1]

    def take(self, rows) -> np.ndarray:
        """Feature rows by index; every read is logged on ``audit``."""
        rows = np.asarray(rows, dtype=np.int64)
        self.audit.record(rows)
        return self.X[rows]

    def rows_of_class(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.Y == c)

    def train_rows_of_class(self, c: int) -> np.ndarray:
        rows = self.rows_of_class(c)
        if self.split is not None and self.split.seen_test:
            rows = np.setdiff1d(rows, np.asarray(self.split.seen_test), assume_unique=True)
        return rows

    def source_of_class(self, c: int) -> SourceInfo | None:
        for s in self.sources:
            if s.owns_class(c):
                return s
        return None


# ---------------------------------------------------------------- tasks

@dataclass
class Block:
    x: np.ndarray       # (K*N, d_x)
    a: np.ndarray       # (K*N, d_a)
    y: np.ndarray       # (K*N,) global class ids
    rows: np.ndarray    # dataset row ids

    @property
    def classes(self) -> list[int]:
        return sorted(set(self.y.tolist()))


@dataclass
class Task:
    support: Block
    query: Block
    m: int

    def stacked(self) -> Block:
        s, q = self.support, self.query
        return Block(np.vstack([s.x, q.x]), np.vstack([s.a, q.a]),
                     np.concatenate([s.y, q.y]), np.concatenate([s.rows, q.rows]))


@dataclass
class Episode:
    tasks: list
    seed: int | None = None

    def __post_init__(self):
        if [t.m for t in self.tasks] != list(range(len(self.tasks))):
            raise SamplingError("task pseudo-labels must be 0..i-1 in order")

    def __len__(self):
        return len(self.tasks)

    def alignment_batch(self):
        """All support and query rows of all tasks plus their pseudo-labels."""
        blocks = [t.stacked() for t in self.tasks]
        m = np.concatenate([np.full(len(b.y), t.m, dtype=np.int64) for b, t in zip(blocks, self.tasks)])
        return (np.vstack([b.x for b in blocks]), np.vstack([b.a for b in blocks]),
                np.concatenate([b.y for b in blocks]), m)


def _draw_block(d: Dataset, classes: Sequence[int], K: int, N: int, rng, role: str) -> Block:
    if len(classes) < K:
        raise SamplingError(f"{role} set has {len(classes)} classes, need K={K}")
    chosen = rng.choice(np.asarray(classes), size=K, replace=False)
    rows = []
    for c in chosen:
        avail = d.train_rows_of_class(int(c))
        if avail.size < N:
            raise SamplingError(f"class {int(c)} in {role} set has {avail.size} instances, need N={N}")
        rows.append(rng.choice(avail, size=N, replace=False))
    rows = np.concatenate(rows)
    y = d.Y[rows]
    return Block(d.take(rows), d.A[y], y, rows)


def sample_episode(d: Dataset, split: SplitSpec, i: int, K: int, N: int, seed) -> Episode:
    """``i`` tasks, each with K classes x N instances from the support classes
    and likewise from the query classes.

    Classes and rows are drawn without replacement inside a task and
    independently across tasks.
    """
    if min(i, K, N) < 1:
        raise SamplingError("i, K and N must be positive")
    rng = np.random.default_rng(seed)
    tasks = []
    for m in range(i):
        sup = _draw_block(d, split.sup, K, N, rng, "support")
        qry = _draw_block(d, split.qry, K, N, rng, "query")
        tasks.append(Task(sup, qry, m))
    return Episode(tasks, seed if isinstance(seed, (int, np.integer)) else None)


# ---------------------------------------------------------------- splits

def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def holdout_seen_rows(d: Dataset, seen: Sequence[int], fraction: float, rng) -> tuple:
    if fraction <= 0:
        return ()
    held = []
    for c in seen:
        rows = d.rows_of_class(int(c))
        k = min(max(_round_half_up(fraction * rows.size), 1), rows.size - 1)
        if k > 0:
            held.extend(rng.choice(rows, size=k, replace=False).tolist())
    return tuple(sorted(held))


def split_classes(d: Dataset, seen_fraction: float, sup_fraction: float, seed,
                  seen_test_fraction: float = 0.2) -> SplitSpec:
    if not (0 < seen_fraction < 1 and 0 < sup_fraction < 1):
        raise ConfigError("seen_fraction and sup_fraction must lie in (0, 1)")
    if not 0 <= seen_test_fraction < 1:
        raise ConfigError("seen_test_fraction must lie in [0, 1)")
    C = d.n_classes
    n_seen = _round_half_up(C * seen_fraction)
    n_sup = _round_half_up(n_seen * sup_fraction)
    if not 0 < n_seen < C:
        raise ConfigError(f"seen_fraction {seen_fraction} leaves an empty seen or unseen set for {C} classes")
    if not 0 < n_sup < n_seen:
        raise ConfigError(f"sup_fraction {sup_fraction} leaves an empty support or query set")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(C)
    seen, unseen = perm[:n_seen], perm[n_seen:]
    sup, qry = seen[:n_sup], seen[n_sup:]
    held = holdout_seen_rows(d, sorted(seen.tolist()), seen_test_fraction, rng)
    return SplitSpec(seen, unseen, sup, qry, held)


def format_splits(split: SplitSpec) -> str:
    lines = [f"{k}: " + " ".join(str(c) for c in getattr(split, k)) for k in ("seen", "unseen", "sup", "qry")]
    if split.seen_test:
        lines.append("seen_test: " + " ".join(str(r) for r in split.seen_test))
    return "\n".join(line.rstrip() for line in lines) + "\n"


def parse_splits(text: str, source: str = "splits.txt") -> SplitSpec:
    fields: dict[str, list[int]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        key = key.strip()
        if not sep or key not in ("seen", "unseen", "sup", "qry", "seen_test"):
            raise FormatError(f"{source}:{lineno}: expected '<seen|unseen|sup|qry|seen_test>: ids'")
        if key in fields:
            raise FormatError(f"{source}:{lineno}: duplicate '{key}' line")
        try:
            fields[key] = [int(v) for v in rest.split()]
        except ValueError as exc:
            raise FormatError(f"{source}:{lineno}: non-integer id") from exc
    missing = [k for k in ("seen", "unseen", "sup", "qry") if k not in fields]
    if missing:
        raise FormatError(f"{source}: missing lines {missing}")
    try:
        return SplitSpec(fields["seen"], fields["unseen"], fields["sup"], fields["qry"], fields.get("seen_test", ()))
    except ConfigError as exc:
        raise FormatError(f"{source}: {exc}") from exc


def read_splits(path) -> SplitSpec:
    path = Path(path)
    return parse_splits(path.read_text(), str(path))


# ---------------------------------------------------------------- synthetic data

@dataclass
class SyntheticSpec:
    n_classes: int = 12
    n_seen: int = 9
    d_x: int = 32
    d_a: int = 6
    per_class: int = 50
    noise: float = 0.3
    class_scales: float | tuple = 1.0
    sup_fraction: float = 0.67
    seen_test_fraction: float = 0.2
    seed: int = 0
    name: str = "synthetic"
    map_seed: int | None = None   # draw the attribute->feature map from here (shared across sources)

    def __post_init__(self):
        if min(self.n_classes, self.d_x, self.d_a, self.per_class) < 1:
            raise ConfigError("synthetic counts and widths must be positive")
        if not 0 < self.n_seen < self.n_classes:
            raise ConfigError("n_seen must leave both seen and unseen classes")
        if self.noise < 0:
            raise ConfigError("noise scale must be non-negative")
        scales = np.broadcast_to(np.asarray(self.class_scales, dtype=np.float64), (self.n_classes,))
        if np.any(scales <= 0):
            raise ConfigError("class scale multipliers must be positive")

    def scales(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.class_scales, dtype=np.float64), (self.n_classes,)).copy()


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    """Linear attribute->feature data: ``x = s_c * (M a_c + noise * eps)``."""
    rng = np.random.default_rng(spec.seed)
    M = rng.normal(size=(spec.d_x, spec.d_a)) / np.sqrt(spec.d_a)
    if spec.map_seed is not None:
        M = np.random.default_rng(spec.map_seed).normal(size=(spec.d_x, spec.d_a)) / np.sqrt(spec.d_a)
    A = rng.uniform(0.0, 1.0, size=(spec.n_classes, spec.d_a))
    Y = np.repeat(np.arange(spec.n_classes), spec.per_class)
    centers = A @ M.T
    eps = rng.normal(size=(Y.size, spec.d_x))
    X = spec.scales()[Y, None] * (centers[Y] + spec.noise * eps)
    d = Dataset(spec.name, X, A, Y)
    d.split = split_classes(d, spec.n_seen / spec.n_classes, spec.sup_fraction, rng.integers(2**32),
                            spec.seen_test_fraction)
    d.validate()
    return d


# ---------------------------------------------------------------- on-disk format

def write_features(path, X: np.ndarray):
    X = np.asarray(X, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", X.shape[0], X.shape[1]))
        fh.write(np.ascontiguousarray(X).tobytes())


def read_features(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = len(FEATURE_MAGIC) + 8
    if len(raw) < head or raw[: len(FEATURE_MAGIC)] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic, expected {FEATURE_MAGIC!r}")
    n, d = struct.unpack("<II", raw[len(FEATURE_MAGIC):head])
    if len(raw) - head != 4 * n * d:
        raise FormatError(f"{path}: header says {n}x{d} floats, payload has {(len(raw) - head) // 4}")
    return np.frombuffer(raw, dtype="<f4", offset=head).reshape(n, d).astype(np.float32)


def save_dataset(d: Dataset, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_features(path / "features.bin", d.X)
    (path / "labels.txt").write_text("".join(f"{int(v)}\n" for v in d.Y))
    (path / "attributes.txt").write_text(
        "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in d.A))
    if d.split is not None:
        (path / "splits.txt").write_text(format_splits(d.split))
    if d.class_names is not None:
        (path / "classes.txt").write_text("".join(f"{n}\n" for n in d.class_names))
    if d.sources:
        (path / "sources.txt").write_text("".join(
            f"{s.name} {s.class_offset} {s.n_classes} {s.row_offset} {s.n_rows} {s.d_a}\n" for s in d.sources))


def load_dataset(path, name: str | None = None) -> Dataset:
    path = Path(path)
    for req in ("features.bin", "labels.txt", "attributes.txt"):
        if not (path / req).is_file():
            raise FormatError(f"{path / req}: missing file")
    X = read_features(path / "features.bin")

    labels = []
    for lineno, line in enumerate((path / "labels.txt").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            labels.append(int(line))
        except ValueError as exc:
            raise FormatError(f"{path / 'labels.txt'}:{lineno}: not an integer: {line!r}") from exc

    rows = []
    for lineno, line in enumerate((path / "attributes.txt").read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            vals = [float(v) for v in line.split()]
        except ValueError as exc:
            raise FormatError(f"{path / 'attributes.txt'}:{lineno}: not a real number") from exc
        if rows and len(vals) != len(rows[0]):
            raise FormatError(f"{path / 'attributes.txt'}:{lineno}: {len(vals)} columns, expected {len(rows[0])}")
        if not all(np.isfinite(vals)):
            raise FormatError(f"{path / 'attributes.txt'}:{lineno}: non-finite attribute")
        rows.append(vals)
    if not rows:
        raise FormatError(f"{path / 'attributes.txt'}: no attribute rows")
    C = len(rows)

    if len(labels) != X.shape[0]:
        raise FormatError(f"{path / 'labels.txt'}: {len(labels)} labels for {X.shape[0]} feature rows")
    for lineno, v in enumerate(labels, 1):
        if not 0 <= v < C:
            raise FormatError(f"{path / 'labels.txt'}:{lineno}: label {v} outside [0, {C})")

    split = read_splits(path / "splits.txt") if (path / "splits.txt").is_file() else None
    names = None
    if (path / "classes.txt").is_file():
        names = [ln.strip() for ln in (path / "classes.txt").read_text().splitlines() if ln.strip()]
    sources = ()
    if (path / "sources.txt").is_file():
        src = []
        for lineno, line in enumerate((path / "sources.txt").read_text().splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise FormatError(f"{path / 'sources.txt'}:{lineno}: expected 6 fields")
            src.append(SourceInfo(parts[0], *(int(p) for p in parts[1:])))
        sources = tuple(src)
    try:
        return Dataset(name or path.name, X, np.asarray(rows), np.asarray(labels, dtype=np.int64),
                       names, split, sources)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- fusion

def fuse_datasets(datasets: Sequence[Dataset], name: str | None = None) -> Dataset:
    """Disjoint union of datasets with attributes right-padded by zeros.

    Class ids of source ``k`` are shifted by the total class count of the
    sources before it; the shifts are kept in ``sources``.
    """
    if len(datasets) < 2:
        raise FormatError("fusion needs at least two datasets")
    d_x = datasets[0].d_x
    for d in datasets:
        if d.d_x != d_x:
            raise FormatError(f"feature width mismatch: {d.name} has d_x={d.d_x}, expected {d_x}")
        if d.split is None:
            raise FormatError(f"dataset {d.name} has no seen/unseen split")
    d_a = max(d.d_a for d in datasets)

    Xs, As, Ys, names = [], [], [], []
    seen, unseen, sup, qry, held = [], [], [], [], []
    sources = []
    c_off = r_off = 0
    for k, d in enumerate(datasets):
        src_name = d.name if d.name not in [s.name for s in sources] else f"{d.name}#{k}"
        sources.append(SourceInfo(src_name, c_off, d.n_classes, r_off, d.n, d.d_a))
        Xs.append(d.X)
        As.append(np.pad(d.A, ((0, 0), (0, d_a - d.d_a))))
        Ys.append(d.Y + c_off)
        names.extend(d.class_names or [f"{src_name}:{c}" for c in range(d.n_classes)])
        s = d.split
        seen += [c + c_off for c in s.seen]
        unseen += [c + c_off for c in s.unseen]
        sup += [c + c_off for c in s.sup]
        qry += [c + c_off for c in s.qry]
        held += [r + r_off for r in s.seen_test]
        c_off += d.n_classes
        r_off += d.n
    return Dataset(name or "&".join(s.name for s in sources), np.vstack(Xs), np.vstack(As),
                   np.concatenate(Ys), names, SplitSpec(seen, unseen, sup, qry, held), tuple(sources))


def standardizer(d: Dataset, split: SplitSpec):
    """Per-dimension z-score fitted on training rows of seen classes."""
    rows = np.concatenate([d.train_rows_of_class(c) for c in split.seen])
    X = d.take(rows).astype(np.float64)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mu, sd
