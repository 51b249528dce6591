"""Parareal transformation of a feed-forward network.

A source network ``f = h o g o C`` with a block-repetitive middle ``g`` is
torn into N contiguous slices g^1..g^N.  Every slice gets its own
preprocessor C^j (C^1 is the source stem) so all slices can run at once on
the raw input.  The interface residuals r_j = y_j - x_{j+1} are then pushed
through a cheap sequential coarse chain F^1..F^{N-1},

    rt_1 = r_1,   rt_{j+1} = r_{j+1} + F^j(rt_j),   yt = y_N + rt_N,

and the head h is applied to yt.  The backward pass follows the same split:
a sequential sweep over h and the F^j produces the accumulators D_j, after
which each branch differentiates independently.
"""

from dataclasses import dataclass, field
from time import perf_counter as _now
import copy
import math

import numpy as np

from . import layers as L
from .parallel import TaskError, run_parallel
from .tensor import ShapeError, max_abs_diff


# ---------------------------------------------------------------------------
# containers


@dataclass
class Stage:
    """A chain of layer specs plus the ParamBundle that drives it."""

    specs: list
    params: dict

    def forward(self, x):
        return L.chain_forward(self.specs, self.params, x)

    def backward(self, caches, upstream):
        return L.chain_backward(self.specs, self.params, caches, upstream)

    def output_shape(self, shape):
        return L.chain_output_shape(self.specs, shape)

    def macs(self, shape):
        return L.chain_macs(self.specs, shape)

    def param_count(self):
        return L.chain_param_count(self.specs)

    def decay_mask(self):
        return L.chain_decay_mask(self.specs)


@dataclass
class SequentialNetwork:
    """f = h o g o C with ``blocks`` as the block-repetitive part g."""

    input_shape: tuple
    preprocess: list
    blocks: list
    postprocess: list
    params: dict

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        self.interface_shapes()  # validates that shapes chain

    @classmethod
    def create(cls, input_shape, preprocess, blocks, postprocess, seed=0):
        params = L.chain_init(list(preprocess) + list(blocks) + list(postprocess), seed)
        return cls(input_shape, list(preprocess), list(blocks), list(postprocess), params)

    @property
    def specs(self):
        return self.preprocess + self.blocks + self.postprocess

    def interface_shapes(self):
        """Shape after the stem (W_0) and after each block."""
        shape = L.chain_output_shape(self.preprocess, self.input_shape)
        shapes = [shape]
        for b in self.blocks:
            shape = b.output_shape(shape)
            shapes.append(tuple(shape))
        L.chain_output_shape(self.postprocess, shape)
        return shapes

    def forward(self, x):
        return L.chain_forward(self.specs, self.params, x)

    def backward(self, caches, upstream):
        return L.chain_backward(self.specs, self.params, caches, upstream)


@dataclass
class ForwardTape:
    x: list  # x_j = C^j(x), j = 1..N
    y: list  # y_j = g^j(x_j)
    r: list  # r_j = y_j - x_{j+1}, r_N = 0
    rt: list  # corrected residuals
    y_tilde: np.ndarray
    output: np.ndarray
    pre_caches: list
    sub_caches: list
    coarse_caches: list
    post_caches: list
    timings: dict = field(default_factory=dict)


@dataclass
class GradientBundle:
    """Gradients keyed ``stage -> layer -> [arrays]`` plus the D_j sweep."""

    grads: dict
    D: list  # D[0] = 0 ... D[N]
    timings: dict = field(default_factory=dict)

    def flat(self):
        return {f"{s}/{name}/{i}": g
                for s, bundle in self.grads.items()
                for name, gs in bundle.items()
                for i, g in enumerate(gs)}


@dataclass
class PararealNetwork:
    input_shape: tuple
    preprocessors: list  # C^1..C^N
    subnetworks: list  # g^1..g^N
    coarse_blocks: list  # F^1..F^{N-1}
    postprocess: Stage  # h
    interface_shapes: list  # X_0..X_N

    @property
    def N(self):
        return len(self.subnetworks)

    def stages(self):
        """(key, Stage) pairs in the canonical parameter order."""
        out = []
        for j, (c, g) in enumerate(zip(self.preprocessors, self.subnetworks), 1):
            out.append((f"C{j}", c))
            out.append((f"g{j}", g))
        out += [(f"F{j}", f) for j, f in enumerate(self.coarse_blocks, 1)]
        out.append(("h", self.postprocess))
        return out

    def named_parameters(self):
        return {f"{key}/{name}/{i}": p
                for key, stage in self.stages()
                for name, ps in stage.params.items()
                for i, p in enumerate(ps)}

    def decay_flags(self):
        return {f"{key}/{name}/{i}": m
                for key, stage in self.stages()
                for name, ms in stage.decay_mask().items()
                for i, m in enumerate(ms)}

    def param_count(self):
        return sum(stage.param_count() for _, stage in self.stages())

    def output_shape(self):
        return self.postprocess.output_shape(self.interface_shapes[-1])


# ---------------------------------------------------------------------------
# construction


def partition(num_blocks, N):
    """Contiguous ``(start, stop)`` ranges; the first L mod N ranges get one extra."""
    if not 1 <= N <= num_blocks:
        raise ValueError(f"cannot split {num_blocks} blocks into {N} subnetworks")
    q, rem = divmod(num_blocks, N)
    ranges, start = [], 0
    for j in range(N):
        stop = start + q + (j < rem)
        ranges.append((start, stop))
        start = stop
    return ranges


def default_coarse_units(N):
    return math.ceil(12 / N)


def _halvings(size, target):
    """Number of ceil-halvings taking ``size`` to ``target`` (None if impossible)."""
    k = 0
    while size > target:
        size = (size + 1) // 2
        k += 1
    return k if size == target else None


def _spatial_halvings(shape_in, shape_out, what):
    if len(shape_in) != 3 or len(shape_out) != 3:
        raise ShapeError(f"{what}: spatial interfaces required, got {shape_in} -> {shape_out}")
    kh = _halvings(shape_in[1], shape_out[1])
    kw = _halvings(shape_in[2], shape_out[2])
    if kh is None or kw is None or kh != kw:
        raise ShapeError(f"{what}: {shape_in[1:]} cannot reach {shape_out[1:]} by stride-2 halvings")
    return kh


def build_preprocessors(source, ranges, interface_shapes, seed=0, linear=False):
    """C^1 is the source stem; C^j (j > 1) pools the raw input down with
    3x3/stride-2 max pools and matches channels with a 1x1 conv.

    With ``linear=True`` the pools are replaced by stride-2 1x1 convs without
    bias so the whole branch stays linear.
    """
    stem_params = {s.name: [p.copy() for p in source.params[s.name]] for s in source.preprocess}
    pre = [Stage(list(source.preprocess), stem_params)]
    cin = source.input_shape[0]
    for j in range(2, len(ranges) + 1):
        target = interface_shapes[j - 1]
        k = _spatial_halvings(source.input_shape, target, f"C{j}")
        specs = []
        for i in range(k):
            if linear:
                specs.append(L.Conv2d(f"C{j}.down{i}", cin, cin, 1, 2, bias=False))
            else:
                specs.append(L.MaxPool2d(f"C{j}.pool{i}", 3, 2))
        specs.append(L.Conv2d(f"C{j}.conv", cin, target[0], 1, 1, bias=not linear))
        pre.append(Stage(specs, L.chain_init(specs, seed)))
    return pre


def coarse_block_specs(j, shape_in, shape_out, n_units, style="residual"):
    """Layer specs for F^j : X_j -> X_{j+1}.

    ``residual``: ``n_units`` pre-activation residual blocks; the first
    blocks carry the stride-2 steps and the channel change.
    ``vgg``: conv-BN-ReLU-conv followed by 2x2 max pools for downsampling.
    """
    k = _spatial_halvings(shape_in, shape_out, f"F{j}")
    cin, cout = shape_in[0], shape_out[0]
    if style == "residual":
        if k > n_units:
            raise ShapeError(f"F{j}: {k} downsamplings need at least {k} coarse units")
        return [L.ResidualBlock(f"F{j}.rb{b}", cin if b == 0 else cout, cout, 2 if b < k else 1)
                for b in range(n_units)]
    if style == "vgg":
        specs = [
            L.Conv2d(f"F{j}.conv1", cin, cout, 3, 1),
            L.BatchNorm2d(f"F{j}.bn1", cout),
            L.ReLU(f"F{j}.relu1"),
            L.Conv2d(f"F{j}.conv2", cout, cout, 3, 1),
        ]
        size = shape_in[1:]
        for i in range(k):
            # 2x2 pools floor; pad odd sizes with the 3x3 form so halving matches ceil
            kern = 2 if size[0] % 2 == 0 and size[1] % 2 == 0 else 3
            specs.append(L.MaxPool2d(f"F{j}.pool{i}", kern, 2))
            size = ((size[0] + 1) // 2, (size[1] + 1) // 2)
        return specs
    raise ValueError(f"unknown coarse style {style!r}")


def build_coarse_blocks(ranges, interface_shapes, n_units=None, style="residual", seed=0):
    N = len(ranges)
    if n_units is None or n_units <= 0:
        n_units = default_coarse_units(N)
    blocks = []
    for j in range(1, N):
        specs = coarse_block_specs(j, interface_shapes[j], interface_shapes[j + 1], n_units, style)
        blocks.append(Stage(specs, L.chain_init(specs, seed)))
    return blocks


def _subnetworks(source, ranges):
    subs = []
    for start, stop in ranges:
        specs = source.blocks[start:stop]
        subs.append(Stage(list(specs), {s.name: [p.copy() for p in source.params[s.name]]
                                        for s in specs}))
    return subs


def build_parareal(source, N, n_units=None, coarse_style="residual", seed=0,
                   enforce_param_bound=True):
    """Assemble the parareal network for ``source`` with N subnetworks.

    Slices, stem and head copy the source parameters; C^j (j > 1) and the
    coarse blocks are freshly He-initialised from ``seed``.  Unless disabled,
    every F^j must have fewer parameters than the slice g^{j+1} it stands in
    for.
    """
    ranges = partition(len(source.blocks), N)
    all_shapes = source.interface_shapes()
    shapes = [all_shapes[0]] + [all_shapes[stop] for _, stop in ranges]
    pre = build_preprocessors(source, ranges, shapes, seed)
    subs = _subnetworks(source, ranges)
    coarse = build_coarse_blocks(ranges, shapes, n_units, coarse_style, seed)
    post = Stage(list(source.postprocess),
                 {s.name: [p.copy() for p in source.params[s.name]] for s in source.postprocess})
    net = PararealNetwork(source.input_shape, pre, subs, coarse, post, shapes)
    if enforce_param_bound:
        for j, f in enumerate(coarse, 1):
            nf, ng = f.param_count(), subs[j].param_count()
            if nf >= ng:
                raise ValueError(f"coarse block F{j} has {nf} parameters, not fewer than "
                                 f"g{j + 1}'s {ng}; use more blocks per subnetwork or fewer "
                                 f"coarse units")
    return net


# ---------------------------------------------------------------------------
# forward / backward


def _branch_forward(net, j, x):
    c, g = net.preprocessors[j], net.subnetworks[j]
    try:
        t0 = _now()
        xj, c_cache = c.forward(x)
        t1 = _now()
        yj, g_cache = g.forward(xj)
        t2 = _now()
    except ShapeError as exc:
        raise ShapeError(f"branch {j + 1}: {exc}") from exc
    return xj, c_cache, yj, g_cache, t1 - t0, t2 - t1


def forward(net, x, workers=1):
    """Forward propagation; returns ``(y, tape)``."""
    if tuple(x.shape[1:]) != net.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} != {net.input_shape}")
    N = net.N
    t0 = _now()
    try:
        branches, _ = run_parallel([lambda j=j: _branch_forward(net, j, x) for j in range(N)], workers)
    except TaskError as exc:
        if isinstance(exc.cause, ShapeError):
            raise exc.cause from None
        raise
    t1 = _now()
    xs = [b[0] for b in branches]
    ys = [b[2] for b in branches]

    r = [ys[j] - xs[j + 1] for j in range(N - 1)] + [np.zeros_like(ys[-1])]
    rt = [r[0]]
    coarse_caches = []
    for j in range(N - 1):
        out, cache = net.coarse_blocks[j].forward(rt[j])
        coarse_caches.append(cache)
        rt.append(r[j + 1] + out)
    y_tilde = ys[-1] + rt[-1]
    t2 = _now()
    y, post_caches = net.postprocess.forward(y_tilde)
    t3 = _now()

    timings = {
        "pre": [b[4] for b in branches],
        "sub": [b[5] for b in branches],
        "parallel_wall": t1 - t0,
        "coarse": t2 - t1,
        "post": t3 - t2,
    }
    tape = ForwardTape(xs, ys, r, rt, y_tilde, y,
                       [b[1] for b in branches], [b[3] for b in branches],
                       coarse_caches, post_caches, timings)
    return y, tape


def _branch_backward(net, j, tape, D):
    g, c = net.subnetworks[j], net.preprocessors[j]
    t0 = _now()
    dx, g_grads = g.backward(tape.sub_caches[j], D[j + 1])
    t1 = _now()
    if j > 0:
        dx = dx - D[j]
    _, c_grads = c.backward(tape.pre_caches[j], dx)
    t2 = _now()
    return c_grads, g_grads, t2 - t1, t1 - t0


def backward(net, tape, loss_grad, workers=1):
    """Gradient of ``<loss_grad, y>`` w.r.t. every parameter.

    D_N is the head's input gradient; D_j = D_{j+1} . dF^j/drt_j for
    descending j; each branch then uses D_j for g^j and D_j . dg^j/dx_j -
    D_{j-1} for C^j, with D_0 = 0.
    """
    N = net.N
    if len(tape.x) != N or len(tape.coarse_caches) != N - 1:
        raise ValueError("tape was not produced by this network")
    if loss_grad.shape != tape.output.shape:
        raise ShapeError(f"loss gradient shape {loss_grad.shape} != output {tape.output.shape}")
    grads = {}
    t0 = _now()
    D = [None] * (N + 1)
    D[0] = 0.0
    D[N], grads["h"] = net.postprocess.backward(tape.post_caches, loss_grad)
    t1 = _now()
    coarse_grads = [None] * (N - 1)
    for j in range(N - 1, 0, -1):
        D[j], coarse_grads[j - 1] = net.coarse_blocks[j - 1].backward(tape.coarse_caches[j - 1], D[j + 1])
    t2 = _now()
    branches, _ = run_parallel(
        [lambda j=j: _branch_backward(net, j, tape, D) for j in range(N)], workers)
    t3 = _now()

    ordered = {}
    for j, (c_grads, g_grads, _, _) in enumerate(branches, 1):
        ordered[f"C{j}"] = c_grads
        ordered[f"g{j}"] = g_grads
    for j, fg in enumerate(coarse_grads, 1):
        ordered[f"F{j}"] = fg
    ordered["h"] = grads["h"]
    timings = {
        "post": t1 - t0,
        "coarse": t2 - t1,
        "pre": [b[2] for b in branches],
        "sub": [b[3] for b in branches],
        "parallel_wall": t3 - t2,
    }
    return GradientBundle(ordered, D, timings)


# ---------------------------------------------------------------------------
# checks


def boosting_identity_check(tape, net):
    """max_j |F^j(rt_j) - (rt_{j+1} - r_{j+1})| with F^j recomputed from the tape."""
    dev = 0.0
    for j, block in enumerate(net.coarse_blocks):
        fresh, _ = block.forward(tape.rt[j])
        dev = max(dev, max_abs_diff(fresh, tape.rt[j + 1] - tape.r[j + 1]))
    return dev


_LINEAR_KINDS = (L.Conv2d, L.FullyConnected, L.GlobalAvgPool, L.Sequential)


def _check_linear(specs):
    for s in specs:
        if not isinstance(s, _LINEAR_KINDS):
            raise ValueError(f"layer {s.name} ({type(s).__name__}) is not linear")
        if isinstance(s, (L.Conv2d, L.FullyConnected)) and s.bias:
            raise ValueError(f"layer {s.name} has a bias and is only affine")
        if isinstance(s, L.Sequential):
            _check_linear(s.layers)


def build_tied(source, N, seed=0):
    """Parareal net whose coarse blocks are exact copies of g^{j+1}."""
    _check_linear(source.specs)
    ranges = partition(len(source.blocks), N)
    all_shapes = source.interface_shapes()
    shapes = [all_shapes[0]] + [all_shapes[stop] for _, stop in ranges]
    pre = build_preprocessors(source, ranges, shapes, seed, linear=True)
    subs = _subnetworks(source, ranges)
    coarse = [copy.deepcopy(subs[j]) for j in range(1, N)]
    post = Stage(list(source.postprocess),
                 {s.name: [p.copy() for p in source.params[s.name]] for s in source.postprocess})
    return PararealNetwork(source.input_shape, pre, subs, coarse, post, shapes)


def consistency_deviations(source, N, batch=16, seed=0, perturb=None):
    """Return ``(output_deviation, recurrence_deviation)`` for a linear source.

    The output deviation compares the tied parareal network against the
    source network.  The recurrence deviation compares
    P_j = F^j(g^j(C^j x) - C^{j+1} x + P_{j-1}) against the closed form
    (g^{j+1} o ... o g^1 o C^1)(x) - (g^{j+1} o C^{j+1})(x).
    ``perturb`` may edit the tied network before evaluation.
    """
    net = build_tied(source, N, seed)
    if perturb is not None:
        perturb(net)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch,) + source.input_shape)
    y_bar, _ = forward(net, x)
    y_ref, _ = source.forward(x)
    out_dev = max_abs_diff(y_bar, y_ref)

    C = [c.forward(x)[0] for c in net.preprocessors]
    g_of_C = [g.forward(cx)[0] for g, cx in zip(net.subnetworks, C)]
    rec_dev = 0.0
    P = 0.0
    seq = g_of_C[0]  # g^1(C^1 x)
    for j in range(1, N):
        P, _ = net.coarse_blocks[j - 1].forward(g_of_C[j - 1] - C[j] + P)
        seq, _ = net.subnetworks[j].forward(seq)
        rec_dev = max(rec_dev, max_abs_diff(P, seq - g_of_C[j]))
    return out_dev, rec_dev


def check_consistency(source, N, batch=16, seed=0, perturb=None):
    """Max deviation between tied parareal and source outputs, and the proof recurrence."""
    return max(consistency_deviations(source, N, batch, seed, perturb))
