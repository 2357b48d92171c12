"""Conformal p-values, mirror calibration, q-values, and BH-style baselines.

The two-stage calibration starts from exact-rational conformal p-values,
divides them by structural weights to form per-unit score pairs, and
calibrates the pairs against the mirror process ``H(t)``:

    H(t) = (1 + #{j : vt_j <= t, vt_j < v_j}) / max(1, #{j : v_j <= t, v_j < vt_j})

Pair comparisons are strict, so exact ties ``v == vt`` count on neither
side and always receive q-value 1; a tie diagnostic is surfaced instead of
silently perturbing values.  All counting uses exact binary64 comparisons
with no epsilon, which makes q-value thresholding and direct score
thresholding agree as sets, not merely approximately.

Test units are numbered 1..m.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, NonPositiveWeight


@dataclass(frozen=True)
class ConformalP:
    """Exact conformal p-value: ``numerator / (n_cal + 1)``."""

    numerator: int
    n_cal: int

    def __post_init__(self):
        if not 1 <= self.numerator <= self.n_cal + 1:
            raise ConfigError(
                f"numerator {self.numerator} outside 1..{self.n_cal + 1}"
            )

    @property
    def value(self) -> float:
        return self.numerator / (self.n_cal + 1)


@dataclass(frozen=True)
class ScorePair:
    """Weighted conformity-score pair for one test unit (1-based ``index``)."""

    v: float
    v_tilde: float
    index: int

    def __post_init__(self):
        if not (self.v > 0.0 and self.v_tilde > 0.0):
            raise ConfigError("score pairs must be strictly positive")


@dataclass(frozen=True)
class QValueVector:
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class RejectionSet:
    """Rejected unit ids (1-based), optional score threshold, and the level used."""

    indices: frozenset
    alpha: float
    threshold: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "indices", frozenset(int(i) for i in self.indices))

    def sorted(self) -> list:
        return sorted(self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, j) -> bool:
        return j in self.indices


@dataclass(frozen=True)
class EValueVector:
    e: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "e", np.asarray(self.e, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.e)


def conformal_pvalue(cal_scores: Sequence[float], s_x: float) -> ConformalP:
    """Rank ``s_x`` among calibration scores: (1 + #{cal <= s_x}) / (1 + N).

    Ties count inclusively, so the result lives on the exact grid
    ``{1/(N+1), ..., 1}``.
    """
    cal = np.asarray(cal_scores, dtype=np.float64)
    if cal.size == 0:
        raise ConfigError("calibration scores must be nonempty")
    return ConformalP(numerator=1 + int(np.count_nonzero(cal <= s_x)), n_cal=cal.size)


def conformal_pvalues(cal_scores: np.ndarray, scores: np.ndarray) -> list[ConformalP]:
    """Vectorized :func:`conformal_pvalue` over a batch of scores."""
    cal = np.sort(np.asarray(cal_scores, dtype=np.float64))
    if cal.size == 0:
        raise ConfigError("calibration scores must be nonempty")
    counts = np.searchsorted(cal, np.asarray(scores, dtype=np.float64), side="right")
    return [ConformalP(numerator=1 + int(c), n_cal=cal.size) for c in counts]


def pvalue_array(pvals: Sequence[ConformalP]) -> np.ndarray:
    return np.array([p.value for p in pvals], dtype=np.float64)


def build_pairs(
    p: Sequence[ConformalP],
    p_tilde: Sequence[ConformalP],
    w: Sequence[float],
) -> list[ScorePair]:
    """Divide each (test, mirror) p-value pair by its unit weight."""
    if not (len(p) == len(p_tilde) == len(w)):
        raise ConfigError("p, p_tilde, and w must share length")
    wa = np.asarray(w, dtype=np.float64)
    if np.any(wa <= 0.0) or not np.all(np.isfinite(wa)):
        raise NonPositiveWeight("weights must be strictly positive and finite")
    return [
        ScorePair(v=pj.value / wj, v_tilde=ptj.value / wj, index=j + 1)
        for j, (pj, ptj, wj) in enumerate(zip(p, p_tilde, wa))
    ]


def pairs_from_values(v: Sequence[float], v_tilde: Sequence[float]) -> list[ScorePair]:
    """Wrap raw positive score arrays as pairs with unit ids 1..m."""
    if len(v) != len(v_tilde):
        raise ConfigError("v and v_tilde must share length")
    return [
        ScorePair(v=float(a), v_tilde=float(b), index=j + 1)
        for j, (a, b) in enumerate(zip(v, v_tilde))
    ]


def pairs_to_arrays(pairs: Sequence[ScorePair]) -> tuple[np.ndarray, np.ndarray]:
    v = np.array([pr.v for pr in pairs], dtype=np.float64)
    vt = np.array([pr.v_tilde for pr in pairs], dtype=np.float64)
    return v, vt


def count_tied_pairs(pairs: Sequence[ScorePair]) -> int:
    """Diagnostic: pairs with exactly equal coordinates contribute to neither side."""
    v, vt = pairs_to_arrays(pairs)
    return int(np.count_nonzero(v == vt))


def mirror_stat(pairs: Sequence[ScorePair], t: float) -> float:
    """Evaluate the mirror process ``H(t)`` by direct counting."""
    if t <= 0.0:
        raise ConfigError("t must be positive")
    v, vt = pairs_to_arrays(pairs)
    num = 1 + int(np.count_nonzero((vt <= t) & (vt < v)))
    den = max(1, int(np.count_nonzero((v <= t) & (v < vt))))
    return num / den


def _grid_mirror(v: np.ndarray, vt: np.ndarray):
    """H evaluated on the merged sorted grid of all 2m scores.

    Returns (grid, H-on-grid).  A single sorted sweep: numerator events sit
    at mirror scores of reversed pairs, denominator events at test scores
    of forward pairs.
    """
    grid = np.sort(np.concatenate([v, vt]))
    num_events = np.sort(vt[vt < v])
    den_events = np.sort(v[v < vt])
    num = 1 + np.searchsorted(num_events, grid, side="right")
    den = np.maximum(1, np.searchsorted(den_events, grid, side="right"))
    return grid, num / den


def _qvalues_arrays(v: np.ndarray, vt: np.ndarray) -> np.ndarray:
    grid, h = _grid_mirror(v, vt)
    # min over grid points >= v_j, via suffix minima of H
    suffix_min = np.minimum.accumulate(h[::-1])[::-1]
    q = np.ones(len(v))
    fwd = v < vt
    if np.any(fwd):
        pos = np.searchsorted(grid, v[fwd], side="left")
        q[fwd] = np.minimum(suffix_min[pos], 1.0)
    return q


def scq_qvalues(pairs: Sequence[ScorePair]) -> QValueVector:
    """Conformal q-values: running minima of ``H`` over the merged score grid.

    ``q_j = min{H(t) : t in grid, t >= v_j}`` (capped at 1) when
    ``v_j < vt_j``; reversed or tied pairs get ``q_j = 1``.  Computed in
    O(m log m) by one sorted sweep plus suffix minima.
    """
    if len(pairs) == 0:
        raise ConfigError("pairs must be nonempty")
    v, vt = pairs_to_arrays(pairs)
    return QValueVector(q=_qvalues_arrays(v, vt))


def scq_reject(q: QValueVector, alpha: float) -> RejectionSet:
    """Units with q-value at or below the target level."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    idx = np.flatnonzero(q.q <= alpha) + 1
    return RejectionSet(indices=frozenset(int(i) for i in idx), alpha=alpha)


def bc_threshold(
    pairs: Sequence[ScorePair], alpha: float
) -> tuple[Optional[float], RejectionSet]:
    """Direct score thresholding: the largest grid point with ``H(t) <= alpha``.

    Returns ``(tau, rejections)``; ``tau`` is absent (and the rejection set
    empty) when no grid point qualifies.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    v, vt = pairs_to_arrays(pairs)
    grid, h = _grid_mirror(v, vt)
    ok = h <= alpha
    if not np.any(ok):
        return None, RejectionSet(indices=frozenset(), alpha=alpha, threshold=None)
    tau = float(grid[np.flatnonzero(ok)[-1]])
    idx = np.flatnonzero((v <= tau) & (v < vt)) + 1
    return tau, RejectionSet(
        indices=frozenset(int(i) for i in idx), alpha=alpha, threshold=tau
    )


def evalues(pairs: Sequence[ScorePair], alpha: float) -> EValueVector:
    """Per-unit e-values induced by the mirror threshold.

    ``e_j = m * 1{v_j <= tau, v_j < vt_j} / (1 + #{i : vt_i <= tau, vt_i < v_i})``,
    an all-zero vector when the threshold is absent.
    """
    v, vt = pairs_to_arrays(pairs)
    tau, _ = bc_threshold(pairs, alpha)
    m = len(pairs)
    if tau is None:
        return EValueVector(e=np.zeros(m))
    mirror_count = int(np.count_nonzero((vt <= tau) & (vt < v)))
    hits = (v <= tau) & (v < vt)
    return EValueVector(e=m * hits.astype(np.float64) / (1 + mirror_count))


def ebh(e: EValueVector, alpha: float) -> RejectionSet:
    """e-BH step-up: reject the units carrying the ``khat`` largest e-values.

    ``khat = max{i : i * e_(i) / m >= 1 / alpha}`` over the descending order
    statistics; empty when no index qualifies.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    arr = e.e
    m = len(arr)
    desc = np.sort(arr)[::-1]
    ranks = np.arange(1, m + 1)
    ok = ranks * desc / m >= 1.0 / alpha
    if not np.any(ok):
        return RejectionSet(indices=frozenset(), alpha=alpha)
    khat = int(np.flatnonzero(ok)[-1]) + 1
    cut = desc[khat - 1]
    idx = np.flatnonzero(arr >= cut) + 1
    return RejectionSet(indices=frozenset(int(i) for i in idx), alpha=alpha)


def _step_up(p: np.ndarray, level: float, alpha: float) -> RejectionSet:
    m = len(p)
    if m == 0:
        return RejectionSet(indices=frozenset(), alpha=alpha)
    order = np.sort(p)
    ok = order <= level * np.arange(1, m + 1) / m
    if not np.any(ok):
        return RejectionSet(indices=frozenset(), alpha=alpha)
    cut = order[np.flatnonzero(ok)[-1]]
    idx = np.flatnonzero(p <= cut) + 1
    return RejectionSet(indices=frozenset(int(i) for i in idx), alpha=alpha, threshold=float(cut))


def bh(pvals: Sequence[float], alpha: float) -> RejectionSet:
    """Benjamini-Hochberg step-up at level ``alpha`` (1-based unit ids)."""
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    return _step_up(np.asarray(pvals, dtype=np.float64), alpha, alpha)


def storey_bh(
    pvals: Sequence[float], alpha: float, lambda_storey: float = 0.5
) -> RejectionSet:
    """BH at level ``alpha / pi0_hat`` with Storey's null-fraction estimate.

    ``pi0_hat = (1 + #{p_j > lambda}) / (m (1 - lambda))``, capped at 1.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if not 0.0 < lambda_storey < 1.0:
        raise ConfigError("lambda_storey must lie in (0, 1)")
    p = np.asarray(pvals, dtype=np.float64)
    if len(p) == 0:
        return RejectionSet(indices=frozenset(), alpha=alpha)
    pi0 = (1 + int(np.count_nonzero(p > lambda_storey))) / (len(p) * (1.0 - lambda_storey))
    pi0 = min(1.0, pi0)
    return _step_up(p, alpha / pi0, alpha)
