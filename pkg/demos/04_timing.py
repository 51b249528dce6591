"""Virtual wall-clock per stage, in multiply-adds and in milliseconds.

Run:  python3 demos/04_timing.py
"""

import numpy as np

from pararealnet import executor as E
from pararealnet import parareal_net as P
from pararealnet import presets

# A balanced network (one stage, all blocks alike) makes the trend clean.
source = presets.toy_resnet((3, 16, 16), blocks=24, stages=1, width=4)
rng = np.random.default_rng(0)
batch = rng.standard_normal((16, 3, 16, 16)), rng.integers(0, 10, 16)

print("cost mode (multiply-adds, backward = 2 x forward)")
ref = None
for N in (1, 2, 3, 4, 6):
    rep = E.timed_step(P.build_parareal(source, N), batch, mode="cost")
    ref = ref or rep
    print(f"  N={N}: parallel {rep.forward['parallel_subnetworks']:>10d}  "
          f"coarse {rep.forward['coarse_network']:>10d}  total {rep.forward['total']:>10d}")

# Wall mode on this machine.  The parallel stage is the slowest branch, so it
# shrinks with N even on one core; the coarse chain grows.
print("wall mode (ms)")
totals = {}
for N in (1, 3):
    net = P.build_parareal(source, N)
    E.timed_step(net, batch)  # warm-up
    rep = E.timed_step(net, batch)
    totals[N] = rep.forward["total"] + rep.backward["total"]
    for stage, f, b in rep.rows():
        print(f"  N={N} {stage:>22}: {f:8.2f} / {b:8.2f}")
print(f"RS of N=3 against N=1: {E.relative_speedup(totals[1], totals[3]):.1f}%")

# RS for two long runs given as h:m:s, converted to seconds.
print("RS(22:44:53, 16:28:38) =", round(E.relative_speedup(81893, 59318), 1))
