"""Core data types, null-pool splitting, CSV ingestion, and synthetic data.

Feature collections are held as 2-d ``float64`` arrays of shape ``(n, p)``;
a single feature vector is a 1-d array of length ``p``.  Test units are
numbered 1..m throughout the package.  All containers are frozen after
construction and every operation is a pure function of its inputs and an
explicit random generator, so values can be shared freely across threads.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    ConfigError,
    InsufficientNulls,
    NonFiniteFeature,
    ParseError,
    SchemaMismatch,
)

ROLE_COLUMN = "__role__"
LABEL_COLUMN = "__label__"
SIDE_COLUMN = "__side__"

ROLE_TRAIN_NULL = "train-null"
ROLE_TRAIN_OUTLIER = "train-outlier"
ROLE_TEST = "test"

_INT_RE = re.compile(r"^[+-]?\d+$")


def _as_matrix(rows, p: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(rows, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, p if p is not None else 0)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteFeature("feature matrix contains NaN or infinite entries")
    return arr


@dataclass(frozen=True)
class SideInfo:
    """Per-unit side information, either categorical or positional.

    The variant is uniform across a test set: ``kind`` is ``"group"`` for
    integer category labels and ``"position"`` for real-valued locations
    (indices, timestamps).
    """

    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in ("group", "position"):
            raise ConfigError(f"unknown side-info kind {self.kind!r}")
        dtype = np.int64 if self.kind == "group" else np.float64
        object.__setattr__(self, "values", np.asarray(self.values, dtype=dtype))

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class LabeledPool:
    """Labeled reference data: inliers (label 0) and optional outliers (label 1)."""

    inliers: np.ndarray
    outliers: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        inl = _as_matrix(self.inliers)
        out = _as_matrix(self.outliers, p=inl.shape[1])
        if out.shape[0] and out.shape[1] != inl.shape[1]:
            raise ConfigError("inliers and outliers disagree on dimension")
        object.__setattr__(self, "inliers", inl)
        object.__setattr__(self, "outliers", out)

    @property
    def dim(self) -> int:
        return self.inliers.shape[1]

    @property
    def n_inliers(self) -> int:
        return self.inliers.shape[0]


@dataclass(frozen=True)
class NullSplit:
    """Disjoint three-way partition of the null pool."""

    train: np.ndarray
    cal: np.ndarray
    mirror: np.ndarray

    def __post_init__(self):
        for name in ("train", "cal", "mirror"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name)))
        if min(len(self.train), len(self.cal), len(self.mirror)) < 1:
            raise InsufficientNulls("every split part must be nonempty")


@dataclass(frozen=True)
class TestSet:
    """Unlabeled test units with side information and, in simulations, truth."""

    __test__ = False  # not a pytest class, despite the name

    features: np.ndarray
    side: SideInfo
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = _as_matrix(self.features)
        object.__setattr__(self, "features", feats)
        if len(self.side) != feats.shape[0]:
            raise ConfigError("side info length must equal the number of test units")
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=bool)
            if truth.shape[0] != feats.shape[0]:
                raise ConfigError("truth length must equal the number of test units")
            object.__setattr__(self, "truth", truth)

    @property
    def m(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class InferenceData:
    """Everything one inference run consumes: split nulls, test set, labeled outliers."""

    split: NullSplit
    test: TestSet
    labeled_outliers: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    def __post_init__(self):
        object.__setattr__(
            self,
            "labeled_outliers",
            _as_matrix(self.labeled_outliers, p=self.test.features.shape[1]),
        )
        if self.split.mirror.shape[0] != self.test.m:
            raise ConfigError("mirror set size must equal the test set size")

    @property
    def m(self) -> int:
        return self.test.m


@dataclass(frozen=True)
class SparsityBlock:
    lo: int
    hi: int
    pi: float


@dataclass(frozen=True)
class AltComponent:
    lo: int
    hi: int
    mean: np.ndarray
    scale: float  # per-coordinate standard deviation

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the hierarchical benchmark generator.

    Signal indicators follow ``Y_j ~ Bernoulli(pi(j))`` where ``pi`` equals
    ``background_pi`` outside the listed blocks.  Null features are standard
    Gaussian; signal features come from the alternative component whose
    index interval covers ``j`` (mean vector plus ``scale`` times standard
    Gaussian noise).  Side information is positional, ``S_j = j``.
    """

    m: int
    p: int
    sparsity_blocks: tuple[SparsityBlock, ...]
    background_pi: float
    alt_components: tuple[AltComponent, ...]
    null_pool_size: int
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.p < 1:
            raise ConfigError("m and p must be positive")
        if not 0.0 <= self.background_pi <= 1.0:
            raise ConfigError("background_pi must lie in [0, 1]")
        for blk in self.sparsity_blocks:
            if not (1 <= blk.lo <= blk.hi <= self.m):
                raise ConfigError(f"block interval [{blk.lo}, {blk.hi}] outside [1, {self.m}]")
            if not 0.0 <= blk.pi <= 1.0:
                raise ConfigError("block pi must lie in [0, 1]")
        for comp in self.alt_components:
            if not (1 <= comp.lo <= comp.hi <= self.m):
                raise ConfigError(f"component interval [{comp.lo}, {comp.hi}] outside [1, {self.m}]")
            if comp.mean.shape != (self.p,) and comp.mean.shape != (1,):
                raise ConfigError("component mean must be scalar or length p")
            if comp.scale <= 0:
                raise ConfigError("component scale must be positive")
        if self.null_pool_size < 3:
            raise ConfigError("null_pool_size must be at least 3")

    def pi_vector(self) -> np.ndarray:
        """Local signal frequency pi(j) for j = 1..m; later blocks win on overlap."""
        pi = np.full(self.m, self.background_pi)
        for blk in self.sparsity_blocks:
            pi[blk.lo - 1 : blk.hi] = blk.pi
        return pi

    @staticmethod
    def from_dict(doc: dict) -> "SyntheticConfig":
        try:
            blocks = tuple(
                SparsityBlock(int(b["interval"][0]), int(b["interval"][1]), float(b["pi"]))
                for b in doc.get("sparsity_blocks", [])
            )
            comps = tuple(
                AltComponent(
                    int(c["interval"][0]),
                    int(c["interval"][1]),
                    np.asarray(c["mean"], dtype=np.float64),
                    float(c.get("scale", 1.0)),
                )
                for c in doc.get("alt_components", [])
            )
            return SyntheticConfig(
                m=int(doc["m"]),
                p=int(doc["p"]),
                sparsity_blocks=blocks,
                background_pi=float(doc["background_pi"]),
                alt_components=comps,
                null_pool_size=int(doc["null_pool_size"]),
                seed=int(doc.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"bad synthetic config: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "p": self.p,
            "sparsity_blocks": [
                {"interval": [b.lo, b.hi], "pi": b.pi} for b in self.sparsity_blocks
            ],
            "background_pi": self.background_pi,
            "alt_components": [
                {
                    "interval": [c.lo, c.hi],
                    "mean": c.mean.tolist() if c.mean.shape != (1,) else float(c.mean[0]),
                    "scale": c.scale,
                }
                for c in self.alt_components
            ],
            "null_pool_size": self.null_pool_size,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(path) -> "SyntheticConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return SyntheticConfig.from_dict(json.load(fh))


def split_nulls(
    pool: LabeledPool,
    m: int,
    rng: np.random.Generator,
    train_frac: float = 0.5,
) -> NullSplit:
    """Partition the inlier pool into train / calibration / mirror subsets.

    The partition is uniformly random over all disjoint assignments with
    ``|mirror| = m``; the remaining inliers go to train and calibration in
    proportion ``train_frac`` (both parts always nonempty).  Deterministic
    given the generator state.

    Raises
    ------
    InsufficientNulls
        If the pool holds fewer than ``m + 2`` inliers.
    """
    n0 = pool.n_inliers
    if n0 < m + 2:
        raise InsufficientNulls(f"need at least m + 2 = {m + 2} inliers, have {n0}")
    if not 0.0 < train_frac < 1.0:
        raise ConfigError("train_frac must lie strictly between 0 and 1")
    perm = rng.permutation(n0)
    rest = n0 - m
    n_train = int(round(train_frac * rest))
    n_train = max(1, min(rest - 1, n_train))
    mirror_idx = perm[:m]
    train_idx = perm[m : m + n_train]
    cal_idx = perm[m + n_train :]
    return NullSplit(
        train=pool.inliers[train_idx],
        cal=pool.inliers[cal_idx],
        mirror=pool.inliers[mirror_idx],
    )


def generate_hierarchical(
    cfg: SyntheticConfig, rng: np.random.Generator
) -> tuple[LabeledPool, TestSet]:
    """Draw one benchmark instance from the hierarchical mixture model.

    Returns the i.i.d. standard-Gaussian null pool and a test set with
    positional side information ``S_j = j`` and the realized truth labels.
    """
    m, p = cfg.m, cfg.p
    pi = cfg.pi_vector()
    y = rng.random(m) < pi
    x = rng.standard_normal((m, p))
    # map each index to its alternative component; later components win
    comp_of = np.full(m, -1, dtype=np.int64)
    for ci, comp in enumerate(cfg.alt_components):
        comp_of[comp.lo - 1 : comp.hi] = ci
    if np.any(y & (comp_of < 0)):
        bad = int(np.flatnonzero(y & (comp_of < 0))[0]) + 1
        raise ConfigError(
            f"unit {bad} drew a signal but no alternative component covers it"
        )
    for ci, comp in enumerate(cfg.alt_components):
        sel = y & (comp_of == ci)
        if np.any(sel):
            x[sel] = comp.mean + comp.scale * rng.standard_normal((int(sel.sum()), p))
    nulls = rng.standard_normal((cfg.null_pool_size, p))
    pool = LabeledPool(inliers=nulls, outliers=np.empty((0, p)))
    side = SideInfo("position", np.arange(1, m + 1, dtype=np.float64))
    return pool, TestSet(features=x, side=side, truth=y)


@dataclass(frozen=True)
class ColumnSchema:
    """Column naming for CSV ingestion; defaults follow the reserved names."""

    role_column: str = ROLE_COLUMN
    label_column: str = LABEL_COLUMN
    side_column: str = SIDE_COLUMN
    feature_columns: Optional[tuple[str, ...]] = None


def _parse_feature(raw: str, row: int, col: str) -> float:
    try:
        val = float(raw)
    except ValueError as exc:
        raise ParseError(f"row {row}: column {col!r}: cannot parse {raw!r} as float") from exc
    if not np.isfinite(val):
        raise NonFiniteFeature(f"row {row}: column {col!r}: non-finite feature {raw!r}")
    return val


def load_csv(path, schema: ColumnSchema = ColumnSchema()) -> tuple[LabeledPool, TestSet]:
    """Parse a CSV file into a labeled pool and a test set.

    The file must carry a header.  The role column assigns each row to
    ``train-null``, ``train-outlier``, or ``test``; the optional label
    column (0/1/empty) supplies simulation truth for test rows; the
    optional side column supplies side information (integer literals form
    groups, anything else is positional).  All remaining columns are
    features.  Test rows without a side column get positional side info
    ``1..m`` in file order.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaMismatch("empty file: no header row") from None
        rows = list(reader)

    if schema.role_column not in header:
        raise SchemaMismatch(f"missing required column {schema.role_column!r}")
    role_i = header.index(schema.role_column)
    label_i = header.index(schema.label_column) if schema.label_column in header else None
    side_i = header.index(schema.side_column) if schema.side_column in header else None
    if schema.feature_columns is not None:
        missing = [c for c in schema.feature_columns if c not in header]
        if missing:
            raise SchemaMismatch(f"missing feature columns {missing}")
        feat_is = [header.index(c) for c in schema.feature_columns]
    else:
        reserved = {role_i, label_i, side_i} - {None}
        feat_is = [i for i in range(len(header)) if i not in reserved]
    if not feat_is:
        raise SchemaMismatch("no feature columns found")

    inliers, outliers, test_rows, test_sides, test_labels = [], [], [], [], []
    for r, row in enumerate(rows, start=2):  # 1-based with header on line 1
        if len(row) != len(header):
            raise ParseError(f"row {r}: expected {len(header)} cells, got {len(row)}")
        feats = [_parse_feature(row[i], r, header[i]) for i in feat_is]
        role = row[role_i].strip()
        if role == ROLE_TRAIN_NULL:
            inliers.append(feats)
        elif role == ROLE_TRAIN_OUTLIER:
            outliers.append(feats)
        elif role == ROLE_TEST:
            test_rows.append(feats)
            test_sides.append(row[side_i].strip() if side_i is not None else None)
            lab = row[label_i].strip() if label_i is not None else ""
            if lab == "":
                test_labels.append(None)
            elif lab in ("0", "1"):
                test_labels.append(lab == "1")
            else:
                raise ParseError(f"row {r}: label must be 0, 1, or empty, got {lab!r}")
        else:
            raise ParseError(f"row {r}: unknown role {role!r}")

    p = len(feat_is)
    pool = LabeledPool(
        inliers=_as_matrix(inliers, p=p) if inliers else np.empty((0, p)),
        outliers=_as_matrix(outliers, p=p) if outliers else np.empty((0, p)),
    )
    m = len(test_rows)
    if side_i is None or all(s is None for s in test_sides):
        side = SideInfo("position", np.arange(1, m + 1, dtype=np.float64))
    else:
        raw = [s if s is not None else "" for s in test_sides]
        if any(s == "" for s in raw):
            raise ParseError("side column present but empty for some test rows")
        if all(_INT_RE.match(s) for s in raw):
            side = SideInfo("group", np.array([int(s) for s in raw], dtype=np.int64))
        else:
            try:
                side = SideInfo("position", np.array([float(s) for s in raw]))
            except ValueError as exc:
                raise ParseError(f"cannot parse side values: {exc}") from exc
    truth = None
    if m and all(lab is not None for lab in test_labels):
        truth = np.array(test_labels, dtype=bool)
    test = TestSet(
        features=_as_matrix(test_rows, p=p) if test_rows else np.empty((0, p)),
        side=side,
        truth=truth,
    )
    return pool, test


def save_csv(pool: LabeledPool, test: TestSet, path) -> None:
    """Write a pool and test set in the reserved-column CSV format.

    Inverse of :func:`load_csv` on the data model (floats are written in
    round-trip precision).
    """
    p = pool.dim if pool.dim else test.features.shape[1]
    header = [ROLE_COLUMN, LABEL_COLUMN, SIDE_COLUMN] + [f"f{i}" for i in range(p)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in pool.inliers:
            writer.writerow([ROLE_TRAIN_NULL, "", ""] + [repr(float(v)) for v in row])
        for row in pool.outliers:
            writer.writerow([ROLE_TRAIN_OUTLIER, "", ""] + [repr(float(v)) for v in row])
        for j in range(test.m):
            label = "" if test.truth is None else str(int(test.truth[j]))
            if test.side.kind == "group":
                side = str(int(test.side.values[j]))
            else:
                side = repr(float(test.side.values[j]))
            writer.writerow(
                [ROLE_TEST, label, side] + [repr(float(v)) for v in test.features[j]]
            )
