"""Transductive automated model selection guided by pseudo-rejections.

Selecting the classifier that maximizes true rejections would peek at the
asymmetry between test and mirror scores and void the calibration
guarantee.  Instead, each candidate is judged by the rejection count the
calibration produces on swap-invariant pseudo-score pairs:

* units in a preliminary rejection set (BH on the pairwise-minimum
  p-values at level ``alpha0``) keep their pair ordered (min, max), which
  preserves the signal tendency;
* all other units get their pair ordered by an index-keyed coin, which
  mimics the random ordering a null unit exhibits.

Both operators read a pair only through its unordered values, so for a
fixed coin stream the whole selection is exactly invariant under swapping
any subset of (test, mirror) pairs in the raw inputs.  The coins are
derived by a counter-based hash of (seed, unit index) alone: stable under
any processing order, any m, and any change to feature values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .conformal import (
    RejectionSet,
    ScorePair,
    bh,
    count_tied_pairs,
    pairs_from_values,
    pairs_to_arrays,
)
from .datamodel import InferenceData
from .errors import AllCandidatesFailed, ConfigError, ScqError
from .pipeline import (
    CandidateScores,
    SCQResult,
    WeightConfig,
    calibrate_pairs,
    candidate_pvalues,
    compute_weights,
    weighted_pairs,
)
from .scoring import ClassifierSpec

DEFAULT_LAMBDA_GRID = (0.05, 0.1, 0.2, 0.3, 0.5)
STAGE1_LAMBDA = 0.1

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x & _MASK
    z = (z ^ (z >> np.uint64(30))) * _MIX1 & _MASK
    z = (z ^ (z >> np.uint64(27))) * _MIX2 & _MASK
    return z ^ (z >> np.uint64(31))


@dataclass(frozen=True)
class Toolbox:
    """Ordered candidate classifiers with display labels."""

    candidates: tuple
    names: tuple = ()

    def __post_init__(self):
        cands = tuple(self.candidates)
        if len(cands) < 1:
            raise ConfigError("toolbox must hold at least one candidate")
        names = tuple(self.names) if self.names else tuple(c.name for c in cands)
        if len(names) != len(cands):
            raise ConfigError("names must match candidates one-to-one")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "names", names)

    def __len__(self) -> int:
        return len(self.candidates)

    @staticmethod
    def from_list(docs: Sequence[dict]) -> "Toolbox":
        specs = tuple(ClassifierSpec.from_dict(d) for d in docs)
        names = tuple(
            d.get("name", spec.name) for d, spec in zip(docs, specs)
        )
        return Toolbox(candidates=specs, names=names)


@dataclass(frozen=True)
class CoinStream:
    """Index-keyed fair coins: ``b_j = bit(hash(seed, j))``.

    By construction the coins depend on nothing but (seed, unit index),
    never on features, scores, or p-values.
    """

    seed: int

    def bits(self, m: int) -> np.ndarray:
        j = np.arange(1, m + 1, dtype=np.uint64)
        state = (np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF) + j * _GOLDEN) & _MASK
        return (_splitmix64(state) >> np.uint64(63)).astype(np.int8)

    def bit(self, j: int) -> int:
        return int(self.bits(j)[-1])


def preliminary_partition(p, p_tilde, alpha0: float) -> RejectionSet:
    """BH on the pairwise-minimum p-values: a swap-invariant signal screen."""
    if not 0.0 < alpha0 < 1.0:
        raise ConfigError("alpha0 must lie in (0, 1)")
    pv = np.array([q.value for q in p])
    ptv = np.array([q.value for q in p_tilde])
    return bh(np.minimum(pv, ptv), alpha0)


def pseudo_scores(
    pairs: Sequence[ScorePair], prelim: RejectionSet, coins: CoinStream
) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrized pseudo pairs for selection.

    Preliminary rejections are ordered (min, max); the rest are ordered by
    the unit's coin (1 puts the smaller value first).  Each output pair is
    a function of the unordered input pair and the coin alone, and its
    value multiset always equals the input pair's.
    """
    v, vt = pairs_to_arrays(pairs)
    m = len(v)
    lo = np.minimum(v, vt)
    hi = np.maximum(v, vt)
    in_prelim = np.zeros(m, dtype=bool)
    if prelim.indices:
        idx = np.fromiter(prelim.indices, dtype=np.int64)
        if idx.min() < 1 or idx.max() > m:
            raise ConfigError("preliminary rejection ids outside 1..m")
        in_prelim[idx - 1] = True
    forward = in_prelim | (coins.bits(m) == 1)
    u = np.where(forward, lo, hi)
    u_tilde = np.where(forward, hi, lo)
    return u, u_tilde


@dataclass(frozen=True)
class CandidateRecord:
    k: int
    name: str
    prelim: RejectionSet
    r_k: int
    error: Optional[str] = None


@dataclass(frozen=True)
class SelectionTrace:
    """Per-candidate pseudo-rejection counts and the selection outcome."""

    records: tuple
    selected: int
    tie_rule_applied: bool
    lambda_star: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "candidates": [
                {
                    "name": rec.name,
                    "r_k": rec.r_k,
                    "prelim_size": len(rec.prelim),
                    **({"error": rec.error} if rec.error else {}),
                }
                for rec in self.records
            ],
            "selected": self.selected,
            "tie_rule_applied": self.tie_rule_applied,
            "lambda_star": self.lambda_star,
        }


def _pseudo_rejection_count(
    scores: CandidateScores,
    prelim: RejectionSet,
    weight_cfg: WeightConfig,
    data: InferenceData,
    alpha: float,
    coins: CoinStream,
):
    w = compute_weights(data, scores.p, scores.p_tilde, weight_cfg)
    pairs = weighted_pairs(scores, w)
    u, u_tilde = pseudo_scores(pairs, prelim, coins)
    _, _, rej = calibrate_pairs(pairs_from_values(u, u_tilde), alpha)
    return len(rej), pairs, w


def _final_result(pairs, w, scores, alpha) -> SCQResult:
    q, tau, rej = calibrate_pairs(pairs, alpha)
    return SCQResult(
        rejection=rej,
        qvalues=q,
        tau=tau,
        pairs=tuple(pairs),
        weights=w,
        scores=scores,
        num_tied_pairs=count_tied_pairs(pairs),
    )


def ptams(
    toolbox: Toolbox,
    data: InferenceData,
    alpha: float,
    coins: CoinStream,
    alpha0: Optional[float] = None,
    weight_cfg: WeightConfig = WeightConfig(),
) -> tuple[SelectionTrace, SCQResult]:
    """Select a classifier by pseudo-rejection count, then run it for real.

    Candidates whose fit raises are excluded with sentinel count -1; ties
    in the pseudo-rejection count go to the smallest candidate index.  The
    returned result is the full calibrated run of the selected classifier
    on the true (non-pseudo) pairs at level ``alpha``.

    Raises
    ------
    AllCandidatesFailed
        If no candidate fits.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError("alpha must lie in (0, 1)")
    if alpha0 is None:
        alpha0 = 2.0 * alpha
    if not 0.0 < alpha0 < 1.0:
        raise ConfigError("alpha0 must lie in (0, 1); pass alpha0 explicitly")

    records = []
    kept = {}
    for k, (spec, name) in enumerate(zip(toolbox.candidates, toolbox.names), start=1):
        try:
            scores = candidate_pvalues(data, spec)
            prelim = preliminary_partition(scores.p, scores.p_tilde, alpha0)
            r_k, pairs, w = _pseudo_rejection_count(
                scores, prelim, weight_cfg, data, alpha, coins
            )
        except ScqError as exc:
            records.append(
                CandidateRecord(
                    k=k,
                    name=name,
                    prelim=RejectionSet(indices=frozenset(), alpha=alpha0),
                    r_k=-1,
                    error=str(exc),
                )
            )
            continue
        records.append(CandidateRecord(k=k, name=name, prelim=prelim, r_k=r_k))
        kept[k] = (scores, pairs, w)

    if not kept:
        raise AllCandidatesFailed("every candidate in the toolbox failed to fit")
    best = max(rec.r_k for rec in records)
    winners = [rec.k for rec in records if rec.r_k == best]
    selected = min(winners)
    trace = SelectionTrace(
        records=tuple(records), selected=selected, tie_rule_applied=len(winners) > 1
    )
    scores, pairs, w = kept[selected]
    return trace, _final_result(pairs, w, scores, alpha)


def ptams_plus(
    toolbox: Toolbox,
    data: InferenceData,
    alpha: float,
    coins: CoinStream,
    lambda_grid: Sequence[float] = DEFAULT_LAMBDA_GRID,
    alpha0: Optional[float] = None,
    weight_cfg: WeightConfig = WeightConfig(),
) -> tuple[SelectionTrace, float, SCQResult]:
    """Model selection followed by screening-threshold selection.

    Stage one runs :func:`ptams` with the screening threshold pinned at
    ``STAGE1_LAMBDA`` to pick the classifier; stage two sweeps the grid,
    scoring each threshold by its pseudo-rejection count with the selected
    classifier (ties go to the smallest threshold), and reruns the full
    calibration with the winning pair.
    """
    grid = sorted(float(l) for l in lambda_grid)
    if not grid:
        raise ConfigError("lambda_grid must be nonempty")
    if any(not 0.0 < l < 1.0 for l in grid):
        raise ConfigError("lambda_grid values must lie in (0, 1)")

    stage1_cfg = WeightConfig(
        mode=weight_cfg.mode,
        lam=STAGE1_LAMBDA,
        bandwidth=weight_cfg.bandwidth,
        oracle_pi=weight_cfg.oracle_pi,
    )
    trace, _ = ptams(toolbox, data, alpha, coins, alpha0=alpha0, weight_cfg=stage1_cfg)
    selected = trace.selected
    spec = toolbox.candidates[selected - 1]

    if alpha0 is None:
        alpha0 = 2.0 * alpha
    scores = candidate_pvalues(data, spec)
    prelim = preliminary_partition(scores.p, scores.p_tilde, alpha0)

    best_lam, best_r = None, -1
    per_lam = {}
    for lam in grid:
        cfg_l = WeightConfig(
            mode=weight_cfg.mode,
            lam=lam,
            bandwidth=weight_cfg.bandwidth,
            oracle_pi=weight_cfg.oracle_pi,
        )
        r_l, pairs, w = _pseudo_rejection_count(
            scores, prelim, cfg_l, data, alpha, coins
        )
        per_lam[lam] = (pairs, w)
        if r_l > best_r:
            best_lam, best_r = lam, r_l

    pairs, w = per_lam[best_lam]
    trace = SelectionTrace(
        records=trace.records,
        selected=selected,
        tie_rule_applied=trace.tie_rule_applied,
        lambda_star=best_lam,
    )
    return trace, best_lam, _final_result(pairs, w, scores, alpha)
