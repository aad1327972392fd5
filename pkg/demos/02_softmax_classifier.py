"""The classifiers under the hood: exact probabilities and closed-form gradients.

No autodiff anywhere; the loss and per-class probability gradients are hand
derived, so they can be audited against finite differences in a few lines.
"""

import numpy as np

from fferm import forward, grad_loss, grad_prob, init_params, loss
from fferm.models import ModelParams, ONE_HIDDEN

rng = np.random.default_rng(1)

params = init_params(ONE_HIDDEN, d=4, m=3, width=8, rng=rng)
params.flat[:] = rng.normal(0, 0.6, size=params.flat.shape)
X = rng.normal(size=(6, 4))
y = rng.integers(0, 3, size=6)

pred = forward(params, X[0])
print("probabilities for one sample:", np.round(pred.probs, 4), "-> label", pred.label)
print("mean cross-entropy over the batch:", round(loss(params, X, y), 4))

g = grad_loss(params, X, y)
step = 1e-5
fd = np.zeros_like(g)
for i in range(g.size):
    up, dn = params.flat.copy(), params.flat.copy()
    up[i] += step
    dn[i] -= step
    fd[i] = (
        loss(ModelParams(params.arch, 4, 3, 8, up), X, y)
        - loss(ModelParams(params.arch, 4, 3, 8, dn), X, y)
    ) / (2 * step)
err = np.linalg.norm(g - fd) / np.linalg.norm(fd)
print(f"loss gradient vs central differences: relative error {err:.2e}")

gp = sum(grad_prob(params, X[0], j) for j in range(3))
print(f"sum over classes of probability gradients (should vanish): "
      f"max |entry| = {np.abs(gp).max():.2e}")
