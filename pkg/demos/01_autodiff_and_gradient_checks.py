"""Walk through the tensor core: build a small computation, run backward,
and verify every analytic gradient against central finite differences.
"""

import numpy as np

from sfvda.tensor import Tensor, finite_diff_check
from sfvda import tensor as T

rng = np.random.default_rng(0)

# A toy regression loss: mean(relu(X @ W)) with gradients for W.
x = rng.normal(size=(4, 3))
w = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
loss = T.mean(T.relu(T.matmul(Tensor(x), w)))
loss.backward()
print(f"loss value        : {loss.item():.6f}")
print(f"gradient norm     : {np.linalg.norm(w.grad):.6f}")

# The same loss as a function of W, checked against finite differences.
report = finite_diff_check(
    lambda wt: T.mean(T.relu(T.matmul(Tensor(x), wt))), Tensor(w.data), rel_tol=1e-4
)
print(f"finite differences: max rel err {report.max_rel_error:.2e} -> passed={report.passed}")

# Softmax losses behave the same way.
logits = Tensor(rng.normal(size=(6, 4)))
report = finite_diff_check(
    lambda z: T.mean(T.square(T.log_softmax(z))), logits, rel_tol=1e-4
)
print(f"log-softmax check : max rel err {report.max_rel_error:.2e} -> passed={report.passed}")

# Gradients accumulate until cleared, which the optimizer relies on.
v = Tensor([1.0, 2.0], requires_grad=True)
T.tensor_sum(T.square(v)).backward()
T.tensor_sum(T.square(v)).backward()
print(f"accumulated grad  : {v.grad} (two backward passes)")
