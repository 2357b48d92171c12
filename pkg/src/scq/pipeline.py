"""End-to-end inference runs: fit, calibrate, weight, and threshold.

This is the glue the selection harness, the replication bench, and the
CLI all share.  A run takes an :class:`~scq.datamodel.InferenceData`
bundle, fits one classifier, converts calibration ranks into p-value
pairs, learns weights, and thresholds the weighted pairs by mirror
calibration.  Baseline runs (unweighted thresholding, plain/Storey BH on
conformal p-values) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .conformal import (
    ConformalP,
    RejectionSet,
    QValueVector,
    ScorePair,
    bc_threshold,
    bh,
    build_pairs,
    conformal_pvalues,
    count_tied_pairs,
    pairs_from_values,
    scq_qvalues,
    scq_reject,
    storey_bh,
)
from .datamodel import InferenceData
from .errors import ConfigError
from .scoring import ClassifierSpec, ScoreModel, TrainContext, fit_score, make_transductive_pool, score_batch
from .weights import (
    WeightVector,
    estimate_sparsity,
    matrix_for_side,
    oracle_weights,
    structure_weights,
)

JITTER_SCALE = 1e6  # tie-breaking jitter is u / (JITTER_SCALE * (N + 1))


@dataclass(frozen=True)
class WeightConfig:
    """How per-unit weights are produced.

    ``structure`` learns them from the side-information neighborhood of
    the p-value pairs (screening threshold ``lam``); ``oracle`` applies the
    odds transform to known signal frequencies (``oracle_pi``); ``unit``
    uses constant weights, reducing the procedure to unweighted mirror
    thresholding.
    """

    mode: str = "structure"
    lam: float = 0.1
    bandwidth: Optional[float] = None
    oracle_pi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mode not in ("structure", "oracle", "unit"):
            raise ConfigError(f"unknown weight mode {self.mode!r}")
        if self.mode == "oracle" and self.oracle_pi is None:
            raise ConfigError("oracle weight mode requires oracle_pi")


@dataclass(frozen=True)
class CandidateScores:
    """A fitted model plus the conformal p-value pairs it induces."""

    spec: ClassifierSpec
    model: ScoreModel
    p: tuple
    p_tilde: tuple
    n_cal: int


def candidate_pvalues(data: InferenceData, spec: ClassifierSpec) -> CandidateScores:
    """Fit one classifier and compute the (test, mirror) p-value pairs."""
    if spec.family == "PUC":
        pool, n_pairs = make_transductive_pool(
            data.test.features, data.split.mirror, data.split.cal
        )
    else:
        pool, n_pairs = None, 0
    ctx = TrainContext(
        train_nulls=data.split.train,
        labeled_outliers=data.labeled_outliers,
        transductive_pool=pool,
        n_pairs=n_pairs,
    )
    model = fit_score(spec, ctx)
    s_cal = score_batch(model, data.split.cal)
    p = conformal_pvalues(s_cal, score_batch(model, data.test.features))
    p_tilde = conformal_pvalues(s_cal, score_batch(model, data.split.mirror))
    return CandidateScores(
        spec=spec, model=model, p=tuple(p), p_tilde=tuple(p_tilde), n_cal=len(s_cal)
    )


def compute_weights(
    data: InferenceData,
    p: Sequence[ConformalP],
    p_tilde: Sequence[ConformalP],
    cfg: WeightConfig,
) -> WeightVector:
    """Produce the per-unit weight vector for the configured mode."""
    m = data.m
    if cfg.mode == "unit":
        return WeightVector(w=np.ones(m))
    if cfg.mode == "oracle":
        pi = np.asarray(cfg.oracle_pi, dtype=np.float64)
        if pi.shape[0] != m:
            raise ConfigError("oracle_pi length must equal m")
        return oracle_weights(pi)
    omega = matrix_for_side(data.test.side, cfg.bandwidth)
    return structure_weights(estimate_sparsity(omega, p, p_tilde, cfg.lam))


def weighted_pairs(
    scores: CandidateScores,
    w: WeightVector,
    jitter: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> list[ScorePair]:
    """Weighted score pairs; optional jitter breaks exact p-value ties.

    Jitter adds ``u / (JITTER_SCALE * (N + 1))`` with independent uniform
    ``u`` to every p-value before weighting, small enough never to cross a
    grid step.  It destroys exact swap invariance and is off by default.
    """
    if not jitter:
        return build_pairs(scores.p, scores.p_tilde, w.w)
    if rng is None:
        raise ConfigError("jitter requires a random generator")
    step = 1.0 / (JITTER_SCALE * (scores.n_cal + 1))
    pv = np.array([q.value for q in scores.p]) + rng.random(len(scores.p)) * step
    ptv = np.array([q.value for q in scores.p_tilde]) + rng.random(len(scores.p_tilde)) * step
    return pairs_from_values(pv / w.w, ptv / w.w)


@dataclass(frozen=True)
class SCQResult:
    """Everything one calibrated run produces."""

    rejection: RejectionSet
    qvalues: QValueVector
    tau: Optional[float]
    pairs: tuple
    weights: WeightVector
    scores: CandidateScores
    num_tied_pairs: int

    def report_dict(self) -> dict:
        return {
            "alpha": self.rejection.alpha,
            "tau": self.tau,
            "rejected": self.rejection.sorted(),
            "qvalues": [float(q) for q in self.qvalues.q],
            "num_tied_pairs": self.num_tied_pairs,
        }


def calibrate_pairs(pairs: Sequence[ScorePair], alpha: float):
    """Q-values, threshold, and rejections for prepared pairs."""
    q = scq_qvalues(pairs)
    tau, _ = bc_threshold(pairs, alpha)
    rej = scq_reject(q, alpha)
    return q, tau, RejectionSet(indices=rej.indices, alpha=alpha, threshold=tau)


def run_scq(
    data: InferenceData,
    classifier: ClassifierSpec,
    weight_cfg: WeightConfig,
    alpha: float,
    jitter: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> SCQResult:
    """Full structure-adaptive run with one fixed classifier."""
    scores = candidate_pvalues(data, classifier)
    w = compute_weights(data, scores.p, scores.p_tilde, weight_cfg)
    pairs = weighted_pairs(scores, w, jitter=jitter, rng=rng)
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


def run_cfbh(
    data: InferenceData,
    classifier: ClassifierSpec,
    alpha: float,
    storey: bool = True,
    lambda_storey: float = 0.5,
) -> RejectionSet:
    """Conformal-BH baseline without mirror pairing.

    The mirror block carries no structural role here, so it is merged into
    the calibration set before ranking the test scores.
    """
    if classifier.family == "PUC":
        pool, n_pairs = make_transductive_pool(
            data.test.features, data.split.mirror, data.split.cal
        )
    else:
        pool, n_pairs = None, 0
    ctx = TrainContext(
        train_nulls=data.split.train,
        labeled_outliers=data.labeled_outliers,
        transductive_pool=pool,
        n_pairs=n_pairs,
    )
    model = fit_score(classifier, ctx)
    cal_full = np.vstack([data.split.cal, data.split.mirror])
    s_cal = score_batch(model, cal_full)
    p = conformal_pvalues(s_cal, score_batch(model, data.test.features))
    pv = [q.value for q in p]
    return storey_bh(pv, alpha, lambda_storey) if storey else bh(pv, alpha)
