"""Score-function toolbox: one-class, binary, and positive-unlabeled models.

Every fitted model maps a feature vector to a real conformity score with
the convention that smaller scores mean stronger outlier evidence.  Two
structural contracts hold by construction:

* one-class and binary fits depend only on the training nulls (and labeled
  outliers), never on test, mirror, or calibration data;
* positive-unlabeled fits consume the transductive pool only through its
  canonically sorted multiset, so refitting after any permutation, or any
  swap of (test, mirror) pairs inside the pool, reproduces the model
  bit for bit.

Fits are deterministic: closed-form moments, fixed bandwidth rules, and
fixed-iteration full-batch gradient descent with zero initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, logsumexp

from .errors import ConfigError, DegenerateFit, DimensionMismatch, MissingOutliers

FAMILIES = {
    "OCC": ("gaussian", "kde", "knn"),
    "BIC": ("logistic", "knn"),
    "PUC": ("kde-ratio", "pu-logistic"),
}

LOG_DENSITY_FLOOR = -745.0  # log of the smallest positive double


@dataclass(frozen=True)
class ClassifierSpec:
    """A (family, method) pair plus method-specific hyperparameters."""

    family: str
    method: str
    hyperparams: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}")
        if self.method not in FAMILIES[self.family]:
            raise ConfigError(
                f"method {self.method!r} not supported for family {self.family!r}"
            )
        object.__setattr__(self, "hyperparams", dict(self.hyperparams))

    @property
    def name(self) -> str:
        return f"{self.family}/{self.method}"

    @staticmethod
    def from_dict(doc: dict) -> "ClassifierSpec":
        try:
            return ClassifierSpec(
                family=doc["family"],
                method=doc["method"],
                hyperparams=doc.get("hyperparams", {}),
            )
        except KeyError as exc:
            raise ConfigError(f"classifier spec missing field {exc}") from exc

    def to_dict(self) -> dict:
        return {"family": self.family, "method": self.method, "hyperparams": dict(self.hyperparams)}


@dataclass(frozen=True)
class TrainContext:
    """Training inputs for a score fit.

    ``transductive_pool`` is the multiset test + mirror + calibration
    (used only by PUC methods); its first ``2 * n_pairs`` rows are the test
    block followed by the mirror block, so pair ``j`` (1-based) occupies
    rows ``j - 1`` and ``n_pairs + j - 1``.
    """

    train_nulls: np.ndarray
    labeled_outliers: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    transductive_pool: Optional[np.ndarray] = None
    n_pairs: int = 0

    def __post_init__(self):
        tn = np.asarray(self.train_nulls, dtype=np.float64)
        object.__setattr__(self, "train_nulls", tn)
        lo = np.asarray(self.labeled_outliers, dtype=np.float64)
        if lo.size == 0:
            lo = lo.reshape(0, tn.shape[1] if tn.ndim == 2 else 0)
        object.__setattr__(self, "labeled_outliers", lo)
        if self.transductive_pool is not None:
            object.__setattr__(
                self, "transductive_pool", np.asarray(self.transductive_pool, dtype=np.float64)
            )

    def with_swapped_pairs(self, pair_ids) -> "TrainContext":
        """Return a copy with (test, mirror) rows exchanged for the given 1-based pair ids."""
        if self.transductive_pool is None:
            return self
        pool = self.transductive_pool.copy()
        for j in pair_ids:
            if not 1 <= j <= self.n_pairs:
                raise ConfigError(f"pair id {j} outside the paired region 1..{self.n_pairs}")
            a, b = j - 1, self.n_pairs + j - 1
            pool[[a, b]] = pool[[b, a]]
        return TrainContext(
            train_nulls=self.train_nulls,
            labeled_outliers=self.labeled_outliers,
            transductive_pool=pool,
            n_pairs=self.n_pairs,
        )


def make_transductive_pool(test: np.ndarray, mirror: np.ndarray, cal: np.ndarray):
    """Stack test, mirror, and calibration rows into a pool; returns (pool, n_pairs)."""
    if test.shape[0] != mirror.shape[0]:
        raise ConfigError("test and mirror blocks must pair up one-to-one")
    return np.vstack([test, mirror, cal]), test.shape[0]


@dataclass(frozen=True)
class ScoreModel:
    """Opaque fitted parameters plus the (family, method) tag and dimension."""

    family: str
    method: str
    dim: int
    params: Mapping[str, Any]


def _canonical_sort(rows: np.ndarray) -> np.ndarray:
    # lexicographic row order: first coordinate is the primary key
    if rows.shape[0] <= 1:
        return rows
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def _silverman_bandwidths(train: np.ndarray) -> np.ndarray:
    n = train.shape[0]
    sd = train.std(axis=0, ddof=1) if n > 1 else np.zeros(train.shape[1])
    h = 1.06 * sd * n ** (-0.2)
    h[~np.isfinite(h) | (h <= 0.0)] = 1e-6
    return h


def _regularized_cholesky(cov: np.ndarray, dim: int):
    """Cholesky of cov + lam*I, escalating lam tenfold up to three times."""
    trace = float(np.trace(cov))
    lam = 1e-6 * trace / dim
    if not np.isfinite(lam) or lam <= 0.0:
        lam = 1e-6
    for _ in range(4):
        try:
            chol = np.linalg.cholesky(cov + lam * np.eye(dim))
            return chol, lam
        except np.linalg.LinAlgError:
            lam *= 10.0
    raise DegenerateFit("covariance not positive definite after regularization fallbacks")


def _fit_gaussian(train: np.ndarray) -> dict:
    n, p = train.shape
    mean = train.mean(axis=0)
    cov = np.cov(train, rowvar=False, ddof=1) if n > 1 else np.zeros((p, p))
    cov = np.atleast_2d(cov)
    chol, lam = _regularized_cholesky(cov, p)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return {"mean": mean, "chol": chol, "logdet": logdet, "lambda_reg": lam}


def _gaussian_logpdf(params: dict, x: np.ndarray) -> np.ndarray:
    diff = x - params["mean"]
    sol = solve_triangular(params["chol"], diff.T, lower=True).T
    maha = np.sum(sol * sol, axis=1)
    p = x.shape[1]
    return -0.5 * (p * np.log(2.0 * np.pi) + params["logdet"] + maha)


def _fit_kde(train: np.ndarray, bandwidth: Optional[float]) -> dict:
    if bandwidth is not None:
        h = np.full(train.shape[1], float(bandwidth))
        if np.any(h <= 0):
            raise ConfigError("kde bandwidth must be positive")
    else:
        h = _silverman_bandwidths(train)
    return {"train": train, "h": h}


def _kde_logpdf(params: dict, x: np.ndarray) -> np.ndarray:
    train, h = params["train"], params["h"]
    n = train.shape[0]
    xs = x / h
    ts = train / h
    sq = (
        np.sum(xs * xs, axis=1)[:, None]
        + np.sum(ts * ts, axis=1)[None, :]
        - 2.0 * xs @ ts.T
    )
    np.maximum(sq, 0.0, out=sq)
    log_norm = float(np.sum(np.log(h * np.sqrt(2.0 * np.pi)))) + np.log(n)
    out = logsumexp(-0.5 * sq, axis=1) - log_norm
    return np.maximum(out, LOG_DENSITY_FLOOR)


def _knn_k(spec_k: Optional[int], n_train: int) -> int:
    k = int(np.sqrt(n_train)) if spec_k is None else int(spec_k)
    return max(1, min(k, n_train))


def _pairwise_sq_dists(x: np.ndarray, train: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(x * x, axis=1)[:, None]
        + np.sum(train * train, axis=1)[None, :]
        - 2.0 * x @ train.T
    )
    np.maximum(sq, 0.0, out=sq)
    return sq


def _logistic_gd(x: np.ndarray, y: np.ndarray, iterations: int, step: float):
    # full-batch gradient descent on mean log loss; zero init, no stopping rule
    n, p = x.shape
    w = np.zeros(p)
    b = 0.0
    for _ in range(iterations):
        g = expit(x @ w + b) - y
        w -= step * (x.T @ g) / n
        b -= step * float(g.mean())
    return w, b


def fit_score(
    spec: ClassifierSpec,
    ctx: TrainContext,
    rng: Optional[np.random.Generator] = None,
) -> ScoreModel:
    """Fit the score function described by ``spec`` on the given context.

    Parameters
    ----------
    spec : ClassifierSpec
        Family, method, and hyperparameters.
    ctx : TrainContext
        Training nulls, labeled outliers, and (for PUC) the transductive pool.
    rng : numpy.random.Generator, optional
        Accepted for interface stability; current methods are fully
        deterministic and never draw from it.

    Raises
    ------
    MissingOutliers
        For a BIC spec with no labeled outliers.
    DegenerateFit
        When Gaussian covariance regularization is exhausted.
    """
    train = ctx.train_nulls
    if train.shape[0] == 0:
        raise ConfigError("train_nulls must be nonempty")
    p = train.shape[1]
    hp = spec.hyperparams

    if spec.family == "OCC":
        if spec.method == "gaussian":
            params = _fit_gaussian(train)
        elif spec.method == "kde":
            params = _fit_kde(train, hp.get("bandwidth"))
        else:  # knn
            params = {"train": train, "k": _knn_k(hp.get("k"), train.shape[0])}
    elif spec.family == "BIC":
        if ctx.labeled_outliers.shape[0] == 0:
            raise MissingOutliers("BIC fits require at least one labeled outlier")
        x = np.vstack([train, ctx.labeled_outliers])
        y = np.concatenate([np.zeros(train.shape[0]), np.ones(ctx.labeled_outliers.shape[0])])
        if spec.method == "logistic":
            w, b = _logistic_gd(
                x, y, int(hp.get("iterations", 500)), float(hp.get("step", 0.1))
            )
            params = {"w": w, "b": b}
        else:  # knn on labeled points
            params = {"train": x, "labels": y, "k": _knn_k(hp.get("k"), x.shape[0])}
    else:  # PUC
        if ctx.transductive_pool is None or ctx.transductive_pool.shape[0] == 0:
            raise ConfigError("PUC fits require a nonempty transductive pool")
        pool = _canonical_sort(ctx.transductive_pool)
        if spec.method == "kde-ratio":
            params = {
                "null_kde": _fit_kde(train, hp.get("bandwidth")),
                "mix_kde": _fit_kde(pool, hp.get("bandwidth")),
            }
        else:  # pu-logistic: nulls are the positive class, pool is unlabeled
            x = np.vstack([train, pool])
            y = np.concatenate([np.ones(train.shape[0]), np.zeros(pool.shape[0])])
            w, b = _logistic_gd(
                x, y, int(hp.get("iterations", 500)), float(hp.get("step", 0.1))
            )
            params = {"w": w, "b": b}

    return ScoreModel(family=spec.family, method=spec.method, dim=p, params=params)


def score_batch(model: ScoreModel, x: np.ndarray) -> np.ndarray:
    """Score a batch of feature vectors; smaller means more outlier-like."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.dim:
        raise DimensionMismatch(f"expected dimension {model.dim}, got {x.shape[1]}")
    params = model.params
    if model.family == "OCC":
        if model.method == "gaussian":
            return _gaussian_logpdf(params, x)
        if model.method == "kde":
            return _kde_logpdf(params, x)
        sq = _pairwise_sq_dists(x, params["train"])
        kth = np.partition(sq, params["k"] - 1, axis=1)[:, params["k"] - 1]
        return -np.sqrt(kth)
    if model.family == "BIC":
        if model.method == "logistic":
            return -expit(x @ params["w"] + params["b"])
        sq = _pairwise_sq_dists(x, params["train"])
        # stable argsort: distance ties resolved by smaller canonical index
        order = np.argsort(sq, axis=1, kind="stable")[:, : params["k"]]
        frac_outlier = params["labels"][order].mean(axis=1)
        return -frac_outlier
    # PUC
    if model.method == "kde-ratio":
        return _kde_logpdf(params["null_kde"], x) - _kde_logpdf(params["mix_kde"], x)
    return expit(x @ params["w"] + params["b"])


def score(model: ScoreModel, x: np.ndarray) -> float:
    """Score a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("score expects a single feature vector")
    return float(score_batch(model, x[None, :])[0])


def verify_swap_invariance(
    spec: ClassifierSpec,
    ctx: TrainContext,
    pairs_to_swap,
    probe: np.ndarray,
) -> bool:
    """Refit after swapping the given (test, mirror) pairs and compare scores.

    Exact equality is required for closed-form fits (gaussian, kde, knn);
    iterative logistic fits are allowed 1e-12 relative slack.
    """
    base = score(fit_score(spec, ctx), np.asarray(probe, dtype=np.float64))
    swapped = score(fit_score(spec, ctx.with_swapped_pairs(pairs_to_swap)), probe)
    if spec.method in ("logistic", "pu-logistic"):
        return bool(np.isclose(swapped, base, rtol=1e-12, atol=0.0))
    return swapped == base
