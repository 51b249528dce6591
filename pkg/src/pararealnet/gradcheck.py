"""Central finite-difference check of the parareal backward pass.

Relative errors use ``max(|a|, |n|, floor)`` as the denominator, so
gradients that are exactly zero in theory (a bias followed by batch norm,
for example) are judged on an absolute scale.  A difference quotient is
only trusted when neither probe moved any ReLU mask or max-pool choice away
from the base point; otherwise the step shrinks and the probe is repeated.

Probes re-run only what a parameter can reach: its own branch, the coarse
chain from the first residual it touches, and the head.  Everything else is
reused from the base forward pass, which gives the same bits a full forward
would.
"""

import numpy as np

from . import parareal_net as P
from .trainer import softmax_cross_entropy

STEPS = (3e-5, 1e-5, 3e-6)


def relative_error(analytic, numeric, floor=1e-5):
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def _switches(node, out):
    # ReLU masks are bool arrays and max-pool choices are int arrays
    if isinstance(node, np.ndarray):
        if node.dtype.kind in "bi":
            out.append(node)
    elif isinstance(node, (list, tuple)):
        for item in node:
            _switches(item, out)
    return out


def _same(a, b):
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


class Evaluator:
    """Loss of ``net`` on a fixed batch, re-evaluated after one stage changed."""

    def __init__(self, net, x, labels):
        self.net, self.x, self.labels = net, x, labels
        logits, self.tape = P.forward(net, x)
        self.loss0, self.dlogits = softmax_cross_entropy(logits, labels)

    def _first_residual(self, stage):
        N = self.net.N
        if stage == "h":
            return None, N
        j = int(stage[1:]) - 1
        if stage[0] == "F":
            return None, j + 1
        return j, max(j - 1, 0)

    def loss(self, stage):
        """``(loss, clean)``; ``clean`` is false if any switch flipped."""
        net, t = self.net, self.tape
        N = net.N
        branch, a = self._first_residual(stage)
        xs, ys = list(t.x), list(t.y)
        fresh, old = [], []
        if branch is not None:
            xj, cc, yj, gc, _, _ = P._branch_forward(net, branch, self.x)
            xs[branch], ys[branch] = xj, yj
            _switches([cc, gc], fresh)
            _switches([t.pre_caches[branch], t.sub_caches[branch]], old)
        rt = list(t.rt)
        for i in range(a, N):
            r_i = ys[i] - xs[i + 1] if i < N - 1 else t.r[i]
            if i == 0:
                rt[0] = r_i
            else:
                out, cache = net.coarse_blocks[i - 1].forward(rt[i - 1])
                rt[i] = r_i + out
                _switches(cache, fresh)
                _switches(t.coarse_caches[i - 1], old)
        logits, post = net.postprocess.forward(ys[-1] + rt[-1])
        _switches(post, fresh)
        _switches(t.post_caches, old)
        return softmax_cross_entropy(logits, self.labels)[0], _same(fresh, old)


def gradient_check(net, x, labels, steps=STEPS, floor=1e-5, keys=None):
    """Compare every parameter gradient against central differences.

    Returns ``(worst, unresolved)``: ``worst`` maps each parameter key to
    its max relative error, ``unresolved`` counts entries where even the
    smallest step crossed a kink.
    """
    ev = Evaluator(net, x, labels)
    analytic = P.backward(net, ev.tape, ev.dlogits).flat()
    params = net.named_parameters()
    worst = {}
    unresolved = 0
    for key in (params if keys is None else keys):
        stage = key.split("/", 1)[0]
        flat = params[key].reshape(-1)  # parameters are contiguous, so this is a view
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            for h in steps:
                flat[i] = orig + h
                plus, ok_plus = ev.loss(stage)
                flat[i] = orig - h
                minus, ok_minus = ev.loss(stage)
                flat[i] = orig
                numeric[i] = (plus - minus) / (2 * h)
                if ok_plus and ok_minus:
                    break
            else:
                unresolved += 1
        worst[key] = float(relative_error(analytic[key].reshape(-1), numeric, floor).max())
    return worst, unresolved


def check_network(source, N, batch=4, seed=0, steps=STEPS, floor=1e-5, n_units=None):
    """Build the N-branch parareal net of ``source`` and gradient-check it."""
    net = P.build_parareal(source, N, n_units, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch,) + tuple(source.input_shape))
    classes = net.output_shape()[0]
    labels = rng.integers(0, classes, batch)
    return gradient_check(net, x, labels, steps, floor)
