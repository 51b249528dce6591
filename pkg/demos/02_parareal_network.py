"""Tear a residual network into parallel slices plus a coarse chain.

Run:  python3 demos/02_parareal_network.py
"""

import numpy as np

from pararealnet import parareal_net as P
from pararealnet import presets
from pararealnet.trainer import softmax_cross_entropy

# Source network: stem, 24 residual blocks in 3 stages, pooled FC head.
source = presets.toy_resnet((3, 16, 16), classes=10, blocks=24, width=2, seed=0)
print("source interfaces:", source.interface_shapes()[::8])

# N=3: three slices of 8 blocks, each with its own preprocessor, and two
# coarse blocks of ceil(12/3) = 4 residual units correcting the seams.
net = P.build_parareal(source, 3)
for key, stage in net.stages():
    print(f"{key:>3}: {len(stage.specs):2d} layers, {stage.param_count():6d} parameters")

x = np.random.default_rng(1).standard_normal((8, 3, 16, 16))
labels = np.arange(8) % 10

# Forward keeps the whole tape: x_j, y_j, residuals r_j and corrected rt_j.
logits, tape = P.forward(net, x, workers=3)
print("r_N is zero:", not tape.r[-1].any())
print("F^j(rt_j) - (rt_{j+1} - r_{j+1}):", P.boosting_identity_check(tape, net))

# Backward sweeps the head and coarse chain once, then differentiates the
# branches independently.
loss, dlogits = softmax_cross_entropy(logits, labels)
grads = P.backward(net, tape, dlogits, workers=3)
print(f"loss {loss:.4f}; gradient tensors: {len(grads.flat())}")
print("D_0 is the zero convention:", grads.D[0])

# With N=1 nothing is torn and the network is the source, bit for bit.
same = P.build_parareal(source, 1)
print("N=1 equals source:", np.array_equal(P.forward(same, x)[0], source.forward(x)[0]))
