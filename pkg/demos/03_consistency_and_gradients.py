"""Two exactness checks: linear consistency and finite-difference gradients.

Run:  python3 demos/03_consistency_and_gradients.py   (about a minute)
"""

from pararealnet import gradcheck, parareal_net as P, presets

# For a strictly linear source, tying each coarse block to the slice it
# replaces makes the parareal network reproduce the source exactly.
linear = presets.linear_toy()
for N in (1, 2, 3, 4):
    out_dev, rec_dev = P.consistency_deviations(linear, N)
    print(f"N={N}: output deviation {out_dev:.1e}, recurrence deviation {rec_dev:.1e}")

# Nudge one coarse weight and the equality breaks, as it should.
def nudge(net):
    name = net.coarse_blocks[0].specs[0].name
    net.coarse_blocks[0].params[name][0].flat[0] += 0.1

print("perturbed:", P.check_consistency(linear, 3, perturb=nudge))

# Every parameter gradient of the nonlinear toy ResNet against central
# differences of the cross-entropy loss.
source = presets.toy_resnet((3, 8, 8), blocks=24, width=1)
for N in (1, 3, 6):
    worst, unresolved = gradcheck.check_network(source, N)
    print(f"N={N}: max relative error {max(worst.values()):.2e} over {len(worst)} tensors")
