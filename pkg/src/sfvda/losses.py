"""Training objectives: smoothed source classification, feature consistency
across local temporal scales, source prediction consistency, information
maximization, and pseudo-label cross-entropy.

All functions take tensors from :mod:`sfvda.tensor`, return scalar tensors,
and reduce over the batch with an arithmetic mean. Cross-correlation uses a
1/B factor so that the self-correlation diagonal of well-spread features is
1 and "close to the identity" is batch-size independent.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .tensor import (
    Tensor,
    absolute,
    add,
    div,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    scale,
    softmax,
    sqrt,
    square,
    sub,
    tensor_sum,
    transpose,
    variance,
)

__all__ = [
    "LossWeights",
    "CrossCorrelationMatrix",
    "PredictionSet",
    "smoothed_cross_entropy",
    "pseudo_label_cross_entropy",
    "normalize_features",
    "cross_correlation",
    "feature_consistency_pair",
    "feature_consistency_total",
    "ordered_scale_pairs",
    "make_prediction_set",
    "local_prediction_consistency",
    "overall_prediction_consistency",
    "prediction_consistency",
    "temporal_consistency",
    "information_maximization",
]


@dataclass
class LossWeights:
    """Tradeoff constants and numerical guards for every objective."""

    lam: float = 5e-3
    alpha_local: float = 1.0
    alpha_overall: float = 1.0
    beta_fc: float = 1.0
    beta_pc: float = 1.0
    beta_tc: float = 1.0
    beta_im: float = 1.0
    beta_ce: float = 1.0
    eps_norm: float = 1e-5
    eps_smooth: float = 0.1

    def __post_init__(self):
        for f in fields(self):
            v = float(getattr(self, f.name))
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"LossWeights.{f.name} must be finite and >= 0, got {v}")
            setattr(self, f.name, v)
        if self.eps_norm <= 0.0:
            raise ValueError("LossWeights.eps_norm must be > 0")
        if not 0.0 <= self.eps_smooth < 1.0:
            raise ValueError("LossWeights.eps_smooth must lie in [0, 1)")


@dataclass
class CrossCorrelationMatrix:
    """Batch cross-correlation between two normalized local-feature scales."""

    matrix: Tensor
    scales: tuple[int, int] | None = None


@dataclass
class PredictionSet:
    """Per-scale local logits, their logit average, and the overall logits."""

    local: list[Tensor]
    average: Tensor
    overall: Tensor


def smoothed_cross_entropy(logits: Tensor, labels: np.ndarray, eps_smooth: float) -> Tensor:
    """Mean cross-entropy against smoothed one-hot targets.

    Targets are (1 - eps) * onehot + eps / C.
    """
    if not 0.0 <= eps_smooth < 1.0:
        raise ValueError(f"eps_smooth must lie in [0, 1), got {eps_smooth}")
    labels = np.asarray(labels, dtype=np.int64)
    batch, n_classes = logits.shape
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("smoothed_cross_entropy: label out of range")
    target = np.full((batch, n_classes), eps_smooth / n_classes)
    target[np.arange(batch), labels] += 1.0 - eps_smooth
    logp = log_softmax(logits)
    return scale(tensor_sum(mul(Tensor(target), logp)), -1.0 / batch)


def pseudo_label_cross_entropy(logits: Tensor, pseudo: np.ndarray) -> Tensor:
    """Unsmoothed mean cross-entropy against pseudo-labels."""
    return smoothed_cross_entropy(logits, pseudo, 0.0)


def normalize_features(lt: Tensor, eps_norm: float) -> Tensor:
    """Standardize each feature dimension across the batch.

    Mean and population variance are taken over axis 0; eps_norm keeps
    constant dimensions at zero instead of dividing by zero.
    """
    if lt.shape[0] < 2:
        raise ValueError("normalize_features: need a batch of at least 2")
    centered = sub(lt, mean(lt, axis=0, keepdims=True))
    denom = sqrt(add(variance(lt, axis=0, keepdims=True), Tensor(np.array([[eps_norm]]))))
    return div(centered, denom)


def cross_correlation(
    lt1: Tensor, lt2: Tensor, eps_norm: float, scales: tuple[int, int] | None = None
) -> CrossCorrelationMatrix:
    """(1/B) * normalize(lt1)^T normalize(lt2), a d x d matrix."""
    if lt1.shape != lt2.shape:
        raise ValueError(f"cross_correlation: shape mismatch {lt1.shape} vs {lt2.shape}")
    batch = lt1.shape[0]
    c = scale(matmul(transpose(normalize_features(lt1, eps_norm)), normalize_features(lt2, eps_norm)), 1.0 / batch)
    return CrossCorrelationMatrix(c, scales)


def feature_consistency_pair(c: CrossCorrelationMatrix | Tensor, lam: float) -> Tensor:
    """Penalty driving one cross-correlation matrix toward the identity.

    Sum of squared diagonal deviations from 1 plus lam times the sum of
    squared off-diagonal entries; zero iff the matrix is the identity.
    """
    m = c.matrix if isinstance(c, CrossCorrelationMatrix) else c
    d0, d1 = m.shape
    if d0 != d1:
        raise ValueError(f"feature_consistency_pair: matrix must be square, got {m.shape}")
    eye = np.eye(d0)
    diag_term = tensor_sum(mul(square(sub(Tensor(eye), m)), Tensor(eye)))
    off_term = tensor_sum(mul(square(m), Tensor(1.0 - eye)))
    return add(diag_term, scale(off_term, lam))


def ordered_scale_pairs(k: int) -> list[tuple[int, int]]:
    """All ordered pairs of distinct scales (r1, r2), r in [2, k]."""
    scales = range(2, k + 1)
    return [(r1, r2) for r1 in scales for r2 in scales if r2 != r1]


def feature_consistency_total(lts: list[Tensor], lam: float, eps_norm: float) -> Tensor:
    """Mean pair penalty over all ordered pairs of local-feature scales.

    ``lts`` holds one (B, d) tensor per scale, index 0 being scale 2. The
    pair count is (k-1)(k-2); each unordered pair contributes twice, via the
    matrix and its transpose (bitwise equal to evaluating both orders).
    """
    n_scales = len(lts)
    if n_scales < 2:
        raise ValueError("feature_consistency_total: need at least two scales")
    normalized = [normalize_features(lt, eps_norm) for lt in lts]
    batch = lts[0].shape[0]
    terms = []
    for i in range(n_scales):
        for j in range(i + 1, n_scales):
            c_ij = scale(matmul(transpose(normalized[i]), normalized[j]), 1.0 / batch)
            terms.append(feature_consistency_pair(c_ij, lam))
            terms.append(feature_consistency_pair(transpose(c_ij), lam))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / (n_scales * (n_scales - 1)))


def make_prediction_set(local: list[Tensor], overall: Tensor) -> PredictionSet:
    """Bundle local logits with their arithmetic logit mean and the overall logits."""
    if not local:
        raise ValueError("make_prediction_set: need at least one local prediction")
    acc = local[0]
    for p in local[1:]:
        acc = add(acc, p)
    return PredictionSet(local=list(local), average=scale(acc, 1.0 / len(local)), overall=overall)


def local_prediction_consistency(preds: PredictionSet, literal: bool = False) -> Tensor:
    """Divergence of each scale's prediction from the scales' average.

    Default: mean over scales and batch of KL(softmax(p_r) || softmax(p_avg)).
    ``literal=True`` instead feeds the raw log-probability vectors through
    the KL arithmetic (comparison mode; not a divergence between
    distributions and unsafe when any class probability reaches 1).
    """
    lq = log_softmax(preds.average)
    terms = []
    for p_r in preds.local:
        lp = log_softmax(p_r)
        if literal:
            per_video = tensor_sum(mul(lp, log(div(lp, lq))), axis=1)
        else:
            per_video = tensor_sum(mul(softmax(p_r), sub(lp, lq)), axis=1)
        terms.append(mean(per_video))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(terms))


def overall_prediction_consistency(preds: PredictionSet) -> Tensor:
    """Mean L1 distance between overall and average log-probability vectors."""
    if preds.overall.shape != preds.average.shape:
        raise ValueError(
            f"overall_prediction_consistency: shape mismatch "
            f"{preds.overall.shape} vs {preds.average.shape}"
        )
    gap = absolute(sub(log_softmax(preds.overall), log_softmax(preds.average)))
    return mean(tensor_sum(gap, axis=1))


def prediction_consistency(
    preds: PredictionSet,
    alpha_local: float,
    alpha_overall: float,
    literal: bool = False,
) -> Tensor:
    """alpha_local * local consistency + alpha_overall * overall consistency."""
    local = local_prediction_consistency(preds, literal=literal)
    overall = overall_prediction_consistency(preds)
    return add(scale(local, alpha_local), scale(overall, alpha_overall))


def temporal_consistency(fc: Tensor, pc: Tensor, beta_fc: float, beta_pc: float) -> Tensor:
    """beta_fc * feature consistency + beta_pc * prediction consistency."""
    return add(scale(fc, beta_fc), scale(pc, beta_pc))


def information_maximization(logits: Tensor) -> Tensor:
    """Mean per-sample softmax entropy plus KL of the batch marginal to uniform.

    Low when each prediction is certain and the batch covers classes evenly;
    log C on a uniform batch; bounded by 2 log C.
    """
    batch, n_classes = logits.shape
    probs = softmax(logits)
    logp = log_softmax(logits)
    entropy = scale(mean(tensor_sum(mul(probs, logp), axis=1)), -1.0)
    marginal = mean(probs, axis=0)
    diversity = tensor_sum(mul(marginal, add(log(marginal), Tensor(np.full(n_classes, np.log(n_classes))))))
    return add(entropy, diversity)
