"""
Learning where to go on an underdetermined line
===============================================

Every point on ``u1 + u2 = 5`` minimizes the least-squares energy, so plain
gradient descent simply drops onto the line orthogonally. A learned
direction can instead steer iterates towards the preferred solution (0, 5),
while the cone constraint and the line search still force the energy down
at every step.

Run with ``python demos/toy_vector_field.py``. Writes ``toy_field.csv``.
"""

import csv

import numpy as np

from dissipnet.cone import ConeSpec
from dissipnet.models import MLPDirection, RawGradient
from dissipnet.optimizer import DescentConfig, GradNorm, descend
from dissipnet.problems import TOY_TARGET, make_toy2d
from dissipnet.trainer import TrainConfig, bootstrap_pool, train

# Training starts: 256 uniform draws in [-6, 6]^2, paired with the target (0, 5).
train_probs = make_toy2d(256, seed=1)

# A relative half-space cone only asks for <d, g> >= 0.1 ||g||^2, which leaves
# the network room to move sideways along the line.
cone = ConeSpec.half_space(0.1, relative=True)
model = MLPDirection(cone, dim=2, data_dim=1, seed=0)

# The first inputs are gradient-descent iterates; every 100 mini-batches they
# are replaced by iterates of the current model.
pool = bootstrap_pool(None, train_probs, k_max=10, seed=0)
cfg = TrainConfig(epochs=50, regen_period=100, k_max=10, seed=0)
model, losses, pool = train(model, pool, cfg, problems=train_probs)
print(f"loss {losses[0]:.3g} -> {np.mean(losses[-20:]):.3g} over {len(losses)} batches, "
      f"{pool.generation} regenerations")

# Fresh starts, same stopping rule for both methods.
stop = DescentConfig(max_outer_iters=500, stop=GradNorm(1e-7))
gd = RawGradient(ConeSpec.bounded(1.0, 1.0))
d_model, d_gd = [], []
for p in make_toy2d(100, seed=12345):
    u, _ = descend(p.energy, model, p.u0, stop, f=p.f)
    d_model.append(np.linalg.norm(u - TOY_TARGET))
    u, _ = descend(p.energy, gd, p.u0, stop, f=p.f)
    d_gd.append(np.linalg.norm(u - TOY_TARGET))
print(f"mean distance to (0, 5): learned {np.mean(d_model):.4f}, gradient descent {np.mean(d_gd):.4f}")

# The learned step field on a grid, one row per point: position and the
# direction the model proposes (before the line search scales it).
grid = np.linspace(-6, 6, 13)
with open("toy_field.csv", "w", newline="") as fh:
    w = csv.writer(fh)
    w.writerow(["u1", "u2", "d1", "d2", "g1", "g2"])
    energy = train_probs[0].energy
    for a in grid:
        for b in grid:
            u = np.array([a, b])
            g = energy.grad(u)
            d = model.predict(u, [5.0], g)
            w.writerow([a, b, *d, *g])
print("wrote toy_field.csv")
