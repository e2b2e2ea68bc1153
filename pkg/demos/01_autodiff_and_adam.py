"""Tensors, reverse-mode gradients, and Adam, end to end.

Builds a tiny least-squares fit with the same machinery the transformer
uses: define-by-run graphs, backward(), and bias-corrected Adam steps.
"""

import numpy as np

from qalign import autodiff as ad

rng = np.random.default_rng(0)

# fit y = X w under squared error, gradients by backprop
X = ad.tensor(rng.standard_normal((32, 4)))
true_w = rng.standard_normal((4, 1))
y = ad.tensor(X.data @ true_w + 0.01 * rng.standard_normal((32, 1)))

w = ad.tensor(np.zeros((4, 1)), requires_grad=True)
state = ad.init_adam([w], learning_rate=0.05)

for step in range(1, 201):
    residual = ad.add(ad.matmul(X, w), ad.scale(y, -1.0))
    loss = ad.sum_all(ad.mul(residual, residual))
    ad.backward(loss)
    ad.adam_step([w], state)
    if step in (1, 50, 200):
        print(f"step {step:3d}  loss {loss.item():.5f}")

print("recovered w:", np.round(w.data.ravel(), 3))
print("true w     :", np.round(true_w.ravel(), 3))

# the same backward() validated against central finite differences
a = ad.tensor(rng.standard_normal((3, 3)), requires_grad=True, dtype=np.float64)
b = ad.tensor(rng.standard_normal((3, 3)), dtype=np.float64)
loss = ad.sum_all(ad.mul(ad.softmax_rows(ad.matmul(a, b)), b))
ad.backward(loss)

i, j = 1, 2
h = 1e-6
up = a.data.copy(); up[i, j] += h
down = a.data.copy(); down[i, j] -= h
f = lambda m: float(ad.sum_all(ad.mul(ad.softmax_rows(
    ad.matmul(ad.tensor(m, dtype=np.float64), b)), b)).data)
numeric = (f(up) - f(down)) / (2 * h)
print(f"analytic grad a[1,2] = {a.grad[i, j]:.8f}")
print(f"numeric  grad a[1,2] = {numeric:.8f}")
