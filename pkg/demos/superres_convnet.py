"""
A small convolutional direction for super-resolution
====================================================

Average pooling by 3 loses detail that a few texture-trained convolution
blocks can partly restore. The network sees the current image, the
back-projected data and the gradient, and its output is mapped into the cone
around the gradient so that each line-search step still lowers the energy.

Run with ``python demos/superres_convnet.py``. Takes about half a minute.
"""

import numpy as np

from dissipnet.cone import ConeSpec
from dissipnet.models import ConvDirection, RawGradient
from dissipnet.optimizer import DescentConfig, MaxIters, descend
from dissipnet.problems import make_superres, psnr
from dissipnet.trainer import TrainConfig, bootstrap_pool, train

train_set = make_superres(patch_size=12, factor=3, n_patches=96, seed=0)
test_set = make_superres(patch_size=12, factor=3, n_patches=16, seed=99)
A = train_set[0].operator

# A wide cone: at least 0.05 g along the gradient, and up to 20 ||g|| in total.
cone = ConeSpec.bounded(0.05, 20.0)
net = ConvDirection(cone, blocks=4, channels=16, seed=0, back_project=A.adjoint)
pool = bootstrap_pool(None, train_set, k_max=10, seed=0)
cfg = TrainConfig(lr=1e-3, batch_size=16, epochs=100, regen_period=100, k_max=10)
net, losses, pool = train(net, pool, cfg, problems=train_set)
print(f"loss {losses[0]:.3f} -> {np.mean(losses[-10:]):.3f}, {pool.generation} regenerations")

truth = np.stack([p.u_star for p in test_set])
print(f"bilinear start: {psnr(np.stack([p.u0 for p in test_set]), truth):.2f} dB")

# PSNR over the whole test set at once, so a flat patch cannot dominate.
gd = RawGradient(ConeSpec.bounded(1.0, 1.0))
print(" steps   gradient descent   learned")
for k in (1, 5, 15):
    steps = DescentConfig(max_outer_iters=k, stop=MaxIters(k))
    row = []
    for model in (gd, net):
        outs = [descend(p.energy, model, p.u0, steps, f=p.f)[0] for p in test_set]
        row.append(psnr(np.stack(outs), truth))
    print(f" {k:5d}   {row[0]:13.2f} dB   {row[1]:5.2f} dB")
