"""Local weight module: closed-form per-scale relevance weights.

Each local temporal scale gets a weight 1 + C(p) where C(p) is the negated
softmax entropy of that scale's prediction (optionally divided by log C so
weights stay in [0, 1]). Weights are coefficients, not variables: they are
computed from the current logits with plain numpy and never differentiated
through, which closes the shortcut of shrinking losses by shrinking weights.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, log, mul, scale, softmax

__all__ = [
    "confidence",
    "local_relevance_weight",
    "weighted_local_logits",
    "weighted_aggregate",
    "apply_weights",
]

FEATURE_SITE = "feature"
PREDICTION_SITE = "prediction"


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def confidence(logits, mode: str = "normalized"):
    """Negated softmax entropy over the last axis.

    ``raw`` follows the definition directly and lies in [-log C, 0];
    ``normalized`` divides by log C, giving [-1, 0], so the residual weight
    1 + C(p) cannot go negative.
    """
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    n_classes = data.shape[-1]
    if n_classes < 2:
        raise ValueError("confidence: need at least two classes")
    p = _softmax_rows(data)
    neg_entropy = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0).sum(axis=-1)
    if mode == "raw":
        return neg_entropy
    if mode == "normalized":
        return neg_entropy / np.log(n_classes)
    raise ValueError(f"confidence: unknown mode {mode!r}")


def local_relevance_weight(local_logits, mode: str = "normalized") -> np.ndarray:
    """Residual weights 1 + C(p), one per (video, scale), gradient-detached.

    ``local_logits`` is a sequence of (B, C) logit tensors, one per scale;
    the result is a (B, n_scales) float array.
    """
    cols = [confidence(p, mode=mode) for p in local_logits]
    return 1.0 + np.stack(cols, axis=1)


def weighted_local_logits(local_logits, weights: np.ndarray, target: str = "logits") -> list[Tensor]:
    """Scale each scale's prediction by its relevance weight.

    ``target`` picks whether the weight multiplies the logits (default) or
    the softmax probabilities; the probability form re-expresses the scaled
    probabilities as logits via log.
    """
    out = []
    for i, p in enumerate(local_logits):
        w = Tensor(weights[:, i : i + 1])
        if target == "logits":
            out.append(mul(p, w))
        elif target == "probabilities":
            out.append(log(add(mul(softmax(p), w), Tensor(np.full(p.shape, 1e-12)))))
        else:
            raise ValueError(f"weighted_local_logits: unknown target {target!r}")
    return out


def weighted_aggregate(lts: list[Tensor], weights: np.ndarray) -> Tensor:
    """(1/(k-1)) * sum_r w_r * lt_r with per-(video, scale) weights."""
    acc = None
    for i, lt in enumerate(lts):
        term = mul(lt, Tensor(weights[:, i : i + 1]))
        acc = term if acc is None else add(acc, term)
    return scale(acc, 1.0 / len(lts))


def apply_weights(
    lts: list[Tensor],
    local_logits: list[Tensor],
    weights: np.ndarray,
    sites,
    weight_target: str = "logits",
) -> tuple[Tensor, list[Tensor]]:
    """Apply relevance weights at the requested sites.

    Returns the overall temporal feature (weighted when ``feature`` is in
    ``sites``, plain mean otherwise) and the local logits (scaled when
    ``prediction`` is in ``sites``, passed through otherwise).
    """
    sites = set(sites)
    if not sites:
        raise ValueError("apply_weights: sites must be a nonempty subset")
    unknown = sites - {FEATURE_SITE, PREDICTION_SITE}
    if unknown:
        raise ValueError(f"apply_weights: unknown sites {sorted(unknown)}")
    if FEATURE_SITE in sites:
        overall = weighted_aggregate(lts, weights)
    else:
        acc = lts[0]
        for lt in lts[1:]:
            acc = add(acc, lt)
        overall = scale(acc, 1.0 / len(lts))
    if PREDICTION_SITE in sites:
        preds = weighted_local_logits(local_logits, weights, target=weight_target)
    else:
        preds = list(local_logits)
    return overall, preds
