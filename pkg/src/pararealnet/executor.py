"""Per-stage timing of one training step and the relative speed-up metric.

Stage times follow the virtual wall-clock convention: branch work counts as
if every branch ran at the same moment, so a parallel stage costs its
slowest branch.  In ``"wall"`` mode the numbers are milliseconds from
``perf_counter``; in ``"cost"`` mode they are multiply-add counts, with a
backward pass charged twice its forward pass.
"""

from dataclasses import dataclass, field

from . import parareal_net as P
from .parallel import TaskError, run_parallel  # noqa: F401  (re-exported)
from .trainer import softmax_cross_entropy

STAGES = ("preprocessing", "parallel_subnetworks", "coarse_network", "postprocessing")
BACKWARD_COST = 2


@dataclass
class TimingReport:
    forward: dict  # stage -> value, the four STAGES plus "total"
    backward: dict
    workers: int
    unit: str  # "ms" or "mac"
    parallel_wall: dict = field(default_factory=dict)  # measured concurrent time per pass

    def rows(self):
        return [(s, self.forward[s], self.backward[s]) for s in STAGES + ("total",)]


def relative_speedup(t_r, t_p):
    """100 (t_r - t_p) / t_r, in percent."""
    if t_r <= 0:
        raise ValueError("reference time must be positive")
    return 100.0 * (t_r - t_p) / t_r


def _with_total(stages):
    out = dict(stages)
    out["total"] = sum(stages[s] for s in STAGES)
    return out


def _wall_stages(t):
    ms = 1e3
    return {
        "preprocessing": max(t["pre"]) * ms,
        "parallel_subnetworks": max(t["sub"]) * ms,
        "coarse_network": t["coarse"] * ms,
        "postprocessing": t["post"] * ms,
    }


def stage_costs(net, batch_size=1):
    """Forward multiply-adds per stage (virtual: max over branches)."""
    shapes = net.interface_shapes
    pre = [c.macs(net.input_shape) for c in net.preprocessors]
    sub = [g.macs(shapes[j]) for j, g in enumerate(net.subnetworks)]
    coarse = sum(f.macs(shapes[j + 1]) for j, f in enumerate(net.coarse_blocks))
    post = net.postprocess.macs(shapes[-1])
    return {
        "preprocessing": max(pre) * batch_size,
        "parallel_subnetworks": max(sub) * batch_size,
        "coarse_network": coarse * batch_size,
        "postprocessing": post * batch_size,
    }


def timed_step(net, batch, workers=1, mode="wall"):
    """One forward + backward on ``batch = (images, labels)``.

    Cost mode is computed from the layer shapes and does not run the network.
    """
    x, labels = batch
    if mode == "cost":
        fwd = stage_costs(net, len(x))
        bwd = {s: BACKWARD_COST * v for s, v in fwd.items()}
        return TimingReport(_with_total(fwd), _with_total(bwd), workers, "mac")
    if mode != "wall":
        raise ValueError(f"unknown timing mode {mode!r}")
    logits, tape = P.forward(net, x, workers)
    _, dlogits = softmax_cross_entropy(logits, labels)
    grads = P.backward(net, tape, dlogits, workers)
    walls = {"forward": tape.timings["parallel_wall"] * 1e3,
             "backward": grads.timings["parallel_wall"] * 1e3}
    return TimingReport(_with_total(_wall_stages(tape.timings)),
                        _with_total(_wall_stages(grads.timings)), workers, "ms", walls)


def write_timing_csv(path, report):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("stage,forward_ms,backward_ms\n")
        for stage, f, b in report.rows():
            fh.write(f"{stage},{f!r},{b!r}\n")
