"""Show the adaptation objectives on synthetic inputs: cross-correlation
feature consistency, prediction consistency, entropy-based local weights,
and information maximization.
"""

import math

import numpy as np

from sfvda import losses, lwm
from sfvda.tensor import Tensor

rng = np.random.default_rng(1)
batch, dim, n_classes = 64, 8, 4

# Feature consistency: identical scales score ~0, independent scales do not.
shared = rng.normal(0.0, 3.0, size=(batch, dim))
consistent = [Tensor(shared), Tensor(shared), Tensor(shared)]
independent = [Tensor(rng.normal(0.0, 3.0, size=(batch, dim))) for _ in range(3)]
print("feature consistency, identical scales :", f"{losses.feature_consistency_total(consistent, 5e-3, 1e-5).item():.5f}")
print("feature consistency, independent ones :", f"{losses.feature_consistency_total(independent, 5e-3, 1e-5).item():.5f}")

c = losses.cross_correlation(Tensor(shared), Tensor(shared), 1e-5)
print("self cross-correlation diagonal       :", np.round(np.diag(c.matrix.data), 4))

# Prediction consistency vanishes when every scale agrees.
agreeing = Tensor(rng.normal(size=(batch, n_classes)))
preds = losses.make_prediction_set([agreeing, agreeing], agreeing)
print("prediction consistency when agreeing  :", f"{losses.prediction_consistency(preds, 1.0, 1.0).item():.2e}")

disagreeing = losses.make_prediction_set(
    [Tensor(rng.normal(size=(batch, n_classes))) for _ in range(2)],
    Tensor(rng.normal(size=(batch, n_classes))),
)
print("prediction consistency when disagreeing:", f"{losses.prediction_consistency(disagreeing, 1.0, 1.0).item():.4f}")

# Local weights: confident scales keep weight 1, uniform ones drop to 0.
confident = np.zeros((1, n_classes)); confident[0, 2] = 40.0
uniform = np.zeros((1, n_classes))
w = lwm.local_relevance_weight([Tensor(confident), Tensor(uniform)], mode="normalized")
print("weights [confident, uniform] scales    :", np.round(w[0], 4))

# Information maximization: log C for a uniform batch, ~0 for a balanced
# one-hot batch.
print("IM on uniform batch                    :", f"{losses.information_maximization(Tensor(np.zeros((8, n_classes)))).item():.4f}  (log C = {math.log(n_classes):.4f})")
one_hot = np.zeros((8, n_classes))
one_hot[np.arange(8), np.arange(8) % n_classes] = 40.0
print("IM on balanced one-hot batch           :", f"{losses.information_maximization(Tensor(one_hot)).item():.2e}")
