"""Layer zoo with hand-written forward and vector-Jacobian rules.

Each layer kind is a small frozen dataclass.  Parameters live outside the
spec, in a *ParamBundle*: a dict mapping layer name to the list of that
layer's parameter arrays, in definition order.  Composite kinds
(``ResidualBlock``, ``Sequential``) flatten their children's lists.

Conventions: convolution is cross-correlation with zero padding, max-pool
ties go to the lowest row-major index, batch norm always uses batch
statistics.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math
import zlib

import numpy as np

from .tensor import DTYPE, ShapeError

BN_EPS = 1e-5


class CacheError(RuntimeError):
    pass


def _out_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class FullyConnected:
    name: str
    in_features: int
    out_features: int
    bias: bool = True

    def output_shape(self, shape):
        if int(np.prod(shape)) != self.in_features:
            raise ShapeError(f"{self.name}: expected {self.in_features} features, got {shape}")
        return (self.out_features,)

    def param_shapes(self):
        shapes = [(self.out_features, self.in_features)]
        if self.bias:
            shapes.append((self.out_features,))
        return shapes

    def decay_mask(self):
        return [True] + [False] * self.bias

    def macs(self, shape):
        return self.in_features * self.out_features


@dataclass(frozen=True)
class Conv2d:
    name: str
    in_ch: int
    out_ch: int
    kernel: int = 3
    stride: int = 1
    pad: int = -1  # -1 means "same" for stride 1: kernel // 2
    bias: bool = True

    def __post_init__(self):
        if self.kernel not in (1, 3) or self.stride not in (1, 2):
            raise ValueError(f"{self.name}: unsupported kernel/stride {self.kernel}/{self.stride}")
        if self.pad < 0:
            object.__setattr__(self, "pad", self.kernel // 2)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.in_ch:
            raise ShapeError(f"{self.name}: expected {self.in_ch} input channels, got {shape}")
        _, h, w = shape
        return (self.out_ch,
                _out_size(h, self.kernel, self.stride, self.pad),
                _out_size(w, self.kernel, self.stride, self.pad))

    def param_shapes(self):
        shapes = [(self.out_ch, self.in_ch, self.kernel, self.kernel)]
        if self.bias:
            shapes.append((self.out_ch,))
        return shapes

    def decay_mask(self):
        return [True] + [False] * self.bias

    def macs(self, shape):
        _, h, w = self.output_shape(shape)
        return h * w * self.out_ch * self.in_ch * self.kernel ** 2


@dataclass(frozen=True)
class ReLU:
    name: str

    def output_shape(self, shape):
        return tuple(shape)

    def param_shapes(self):
        return []

    def decay_mask(self):
        return []

    def macs(self, shape):
        return 0


@dataclass(frozen=True)
class MaxPool2d:
    name: str
    kernel: int = 2
    stride: int = 2
    pad: int = -1  # -1 means (kernel - 1) // 2

    def __post_init__(self):
        if self.kernel not in (2, 3):
            raise ValueError(f"{self.name}: unsupported pool kernel {self.kernel}")
        if self.pad < 0:
            object.__setattr__(self, "pad", (self.kernel - 1) // 2)

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"{self.name}: expected (C, H, W), got {shape}")
        c, h, w = shape
        ho = _out_size(h, self.kernel, self.stride, self.pad)
        wo = _out_size(w, self.kernel, self.stride, self.pad)
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: input {shape} too small to pool")
        return (c, ho, wo)

    def param_shapes(self):
        return []

    def decay_mask(self):
        return []

    def macs(self, shape):
        return 0


@dataclass(frozen=True)
class GlobalAvgPool:
    name: str

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"{self.name}: expected (C, H, W), got {shape}")
        return (shape[0],)

    def param_shapes(self):
        return []

    def decay_mask(self):
        return []

    def macs(self, shape):
        return int(np.prod(shape))


@dataclass(frozen=True)
class BatchNorm2d:
    name: str
    channels: int

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.channels:
            raise ShapeError(f"{self.name}: expected {self.channels} channels, got {shape}")
        return tuple(shape)

    def param_shapes(self):
        return [(self.channels,), (self.channels,)]

    def decay_mask(self):
        return [False, False]

    def macs(self, shape):
        # normalise + affine
        return 2 * int(np.prod(shape))


@dataclass(frozen=True)
class Sequential:
    """A named chain of layers treated as one unit (e.g. a VGG stage)."""

    name: str
    layers: tuple = field(default_factory=tuple)

    def children(self):
        return self.layers

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def param_shapes(self):
        return [s for layer in self.layers for s in layer.param_shapes()]

    def decay_mask(self):
        return [m for layer in self.layers for m in layer.decay_mask()]

    def macs(self, shape):
        total = 0
        for layer in self.layers:
            total += layer.macs(shape)
            shape = layer.output_shape(shape)
        return total


@dataclass(frozen=True)
class ResidualBlock:
    """Pre-activation residual unit with two 3x3 convolutions.

    out = conv2(relu(bn2(conv1(relu(bn1(x)))))) + skip(x), where skip is the
    identity or, when channels or spatial size change, a strided 1x1 conv.
    """

    name: str
    channels_in: int
    channels_out: int
    stride: int = 1

    @property
    def projected(self):
        return self.channels_in != self.channels_out or self.stride != 1

    @cached_property
    def _main(self):
        n = self.name
        return (
            BatchNorm2d(f"{n}.bn1", self.channels_in),
            ReLU(f"{n}.relu1"),
            Conv2d(f"{n}.conv1", self.channels_in, self.channels_out, 3, self.stride, bias=False),
            BatchNorm2d(f"{n}.bn2", self.channels_out),
            ReLU(f"{n}.relu2"),
            Conv2d(f"{n}.conv2", self.channels_out, self.channels_out, 3, 1, bias=False),
        )

    @cached_property
    def _proj(self):
        return Conv2d(f"{self.name}.proj", self.channels_in, self.channels_out, 1,
                      self.stride, bias=False)

    @cached_property
    def _children(self):
        return self._main + (self._proj,) if self.projected else self._main

    def children(self):
        return self._children

    def output_shape(self, shape):
        out = shape
        for layer in self._main:
            out = layer.output_shape(out)
        if not self.projected and tuple(out) != tuple(shape):
            raise ShapeError(f"{self.name}: identity skip with shape change")
        return out

    def param_shapes(self):
        return [s for layer in self.children() for s in layer.param_shapes()]

    def decay_mask(self):
        return [m for layer in self.children() for m in layer.decay_mask()]

    def macs(self, shape):
        total = 0
        out = shape
        for layer in self._main:
            total += layer.macs(out)
            out = layer.output_shape(out)
        if self.projected:
            total += self._proj.macs(shape)
        return total


LAYER_KINDS = (FullyConnected, Conv2d, ReLU, MaxPool2d, GlobalAvgPool, BatchNorm2d,
               ResidualBlock, Sequential)


def param_count(spec):
    return sum(int(np.prod(s)) for s in spec.param_shapes())


def layer_seed(rng_seed, name):
    """Per-layer seed: stable across runs and independent of layer order."""
    return [int(rng_seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())]


def init_params(spec, rng_seed):
    """He-normal weights, zero biases, unit/zero batch-norm scale/shift.

    Returns a ParamBundle ``{spec.name: [arrays]}``.
    """
    return {spec.name: _init_list(spec, rng_seed)}


def _init_list(spec, rng_seed):
    if isinstance(spec, (ResidualBlock, Sequential)):
        return [p for child in spec.children() for p in _init_list(child, rng_seed)]
    rng = np.random.default_rng(layer_seed(rng_seed, spec.name))
    if isinstance(spec, (FullyConnected, Conv2d)):
        wshape = spec.param_shapes()[0]
        fan_in = int(np.prod(wshape[1:]))
        params = [rng.normal(0.0, math.sqrt(2.0 / fan_in), size=wshape)]
        if spec.bias:
            params.append(np.zeros(wshape[0], dtype=DTYPE))
        return params
    if isinstance(spec, BatchNorm2d):
        return [np.ones(spec.channels, dtype=DTYPE), np.zeros(spec.channels, dtype=DTYPE)]
    return []


# ---------------------------------------------------------------------------
# primitive kernels


def _pad(x, pad, value=0.0):
    if pad == 0:
        return x
    n, c, h, w = x.shape
    xp = np.full((n, c, h + 2 * pad, w + 2 * pad), value, dtype=DTYPE)
    xp[:, :, pad:-pad, pad:-pad] = x
    return xp


def _windows(xp, k, s, ho, wo):
    """(n, c, ho, wo, k, k) strided view of the k x k patches at stride s; never written to."""
    xp = np.ascontiguousarray(xp)
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return np.ndarray((n, c, ho, wo, k, k), DTYPE, xp, 0, (sn, sc, s * sh, s * sw, sh, sw))


def _conv_forward(spec, params, x):
    w = params[0]
    n = x.shape[0]
    k, s = spec.kernel, spec.stride
    xp = _pad(x, spec.pad)
    ho = _out_size(x.shape[2], k, s, spec.pad)
    wo = _out_size(x.shape[3], k, s, spec.pad)
    if k == 1:
        cols = xp[:, :, : s * ho : s, : s * wo : s].transpose(0, 2, 3, 1).reshape(n * ho * wo, -1)
    else:
        cols = _windows(xp, k, s, ho, wo).transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, -1)
    out = cols @ w.reshape(spec.out_ch, -1).T
    if spec.bias:
        out += params[1]
    out = np.ascontiguousarray(out.reshape(n, ho, wo, spec.out_ch).transpose(0, 3, 1, 2))
    return out, (x.shape, cols, ho, wo)


def _conv_backward(spec, params, cache, dout):
    x_shape, cols, ho, wo = cache
    w = params[0]
    n = x_shape[0]
    k, s, p = spec.kernel, spec.stride, spec.pad
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, spec.out_ch)
    grads = [(d2.T @ cols).reshape(w.shape)]
    if spec.bias:
        grads.append(d2.sum(axis=0))
    dcols = (d2 @ w.reshape(spec.out_ch, -1)).reshape(n, ho, wo, spec.in_ch, k, k)
    dxp = np.zeros((n, spec.in_ch, x_shape[2] + 2 * p, x_shape[3] + 2 * p), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[..., i, j].transpose(0, 3, 1, 2)
    if p:
        dxp = dxp[:, :, p:-p, p:-p]
    return np.ascontiguousarray(dxp), grads


def _fc_forward(spec, params, x):
    x2 = x.reshape(x.shape[0], -1)
    out = x2 @ params[0].T
    if spec.bias:
        out += params[1]
    return out, (x.shape, x2)


def _fc_backward(spec, params, cache, dout):
    x_shape, x2 = cache
    grads = [dout.T @ x2]
    if spec.bias:
        grads.append(dout.sum(axis=0))
    return (dout @ params[0]).reshape(x_shape), grads


def _maxpool_forward(spec, params, x):
    k, s = spec.kernel, spec.stride
    n, c, h, w = x.shape
    _, ho, wo = spec.output_shape(x.shape[1:])
    xp = _pad(x, spec.pad, -np.inf)
    win = _windows(xp, k, s, ho, wo).reshape(n, c, ho, wo, k * k)
    # argmax returns the first maximum: lowest row-major index within the window
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx, ho, wo)


def _maxpool_backward(spec, params, cache, dout):
    x_shape, idx, ho, wo = cache
    k, s, p = spec.kernel, spec.stride, spec.pad
    n, c, h, w = x_shape
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=DTYPE)
    for i in range(k):
        for j in range(k):
            hit = idx == i * k + j
            if hit.any():
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.where(hit, dout, 0.0)
    if p:
        dxp = dxp[:, :, p:-p, p:-p]
    return np.ascontiguousarray(dxp), []


def _bn_forward(spec, params, x):
    if x.shape[0] < 2:
        raise ShapeError(f"{spec.name}: batch norm needs batch size >= 2, got {x.shape[0]}")
    gamma, beta = params
    inv_m = 1.0 / (x.shape[0] * x.shape[2] * x.shape[3])
    mean = x.sum(axis=(0, 2, 3), keepdims=True) * inv_m
    xc = x - mean
    var = (xc * xc).sum(axis=(0, 2, 3), keepdims=True) * inv_m
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = xc * inv_std
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    return out, (xhat, inv_std)


def _bn_backward(spec, params, cache, dout):
    xhat, inv_std = cache
    gamma = params[0]
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    dx = (inv_std / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
    )
    return dx, [dgamma, dbeta]


def _relu_forward(spec, params, x):
    mask = x > 0
    return x * mask, mask


def _relu_backward(spec, params, mask, dout):
    return dout * mask, []


def _gap_forward(spec, params, x):
    return x.mean(axis=(2, 3)), x.shape


def _gap_backward(spec, params, x_shape, dout):
    n, c, h, w = x_shape
    return np.broadcast_to((dout / (h * w))[:, :, None, None], x_shape).copy(), []


def _split(spec, params):
    """Slice a composite's flat parameter list into per-child lists."""
    out, i = [], 0
    for child in spec.children():
        k = len(child.param_shapes())
        out.append(params[i : i + k])
        i += k
    return out


def _seq_forward(spec, params, x):
    caches = []
    for child, p in zip(spec.children(), _split(spec, params)):
        x, c = forward(child, p, x)
        caches.append(c)
    return x, caches


def _seq_backward(spec, params, caches, dout):
    grads = []
    for child, p, c in reversed(list(zip(spec.children(), _split(spec, params), caches))):
        dout, g = backward(child, p, c, dout)
        grads.append(g)
    return dout, [g for gs in reversed(grads) for g in gs]


def _res_forward(spec, params, x):
    children = spec.children()
    parts = _split(spec, params)
    h = x
    caches = []
    for child, p in zip(children[:6], parts[:6]):
        h, c = forward(child, p, h)
        caches.append(c)
    if spec.projected:
        skip, c = forward(children[6], parts[6], x)
        caches.append(c)
    else:
        skip = x
    return h + skip, caches


def _res_backward(spec, params, caches, dout):
    children = spec.children()
    parts = _split(spec, params)
    d = dout
    grads = [None] * len(children)
    for i in range(5, -1, -1):
        d, grads[i] = backward(children[i], parts[i], caches[i], d)
    if spec.projected:
        dskip, grads[6] = backward(children[6], parts[6], caches[6], dout)
    else:
        dskip = dout
    return d + dskip, [g for gs in grads for g in gs]


_FORWARD = {
    FullyConnected: _fc_forward,
    Conv2d: _conv_forward,
    ReLU: _relu_forward,
    MaxPool2d: _maxpool_forward,
    GlobalAvgPool: _gap_forward,
    BatchNorm2d: _bn_forward,
    ResidualBlock: _res_forward,
    Sequential: _seq_forward,
}

_BACKWARD = {
    FullyConnected: _fc_backward,
    Conv2d: _conv_backward,
    ReLU: _relu_backward,
    MaxPool2d: _maxpool_backward,
    GlobalAvgPool: _gap_backward,
    BatchNorm2d: _bn_backward,
    ResidualBlock: _res_backward,
    Sequential: _seq_backward,
}


def forward(spec, params, x):
    """Apply one layer; ``params`` is the layer's parameter list.

    Returns ``(output, cache)``.
    """
    if not isinstance(spec, (ResidualBlock, Sequential)):
        spec.output_shape(x.shape[1:])
    return _FORWARD[type(spec)](spec, params, x)


def backward(spec, params, cache, upstream):
    """Vector-Jacobian product: returns ``(input_grad, param_grads)``."""
    if cache is None:
        raise CacheError(f"{spec.name}: backward called without a forward cache")
    return _BACKWARD[type(spec)](spec, params, cache, upstream)


# ---------------------------------------------------------------------------
# chains of layers with a shared ParamBundle


def chain_init(specs, rng_seed):
    bundle = {}
    for spec in specs:
        if spec.name in bundle:
            raise ValueError(f"duplicate layer name {spec.name!r}")
        bundle.update(init_params(spec, rng_seed))
    return bundle


def chain_output_shape(specs, shape):
    for spec in specs:
        shape = spec.output_shape(shape)
    return tuple(shape)


def chain_forward(specs, bundle, x):
    caches = []
    for spec in specs:
        x, c = forward(spec, bundle[spec.name], x)
        caches.append(c)
    return x, caches


def chain_backward(specs, bundle, caches, upstream):
    if caches is None or len(caches) != len(specs):
        raise CacheError("chain backward called without matching forward caches")
    grads = {}
    for spec, c in zip(reversed(specs), reversed(caches)):
        upstream, g = backward(spec, bundle[spec.name], c, upstream)
        grads[spec.name] = g
    return upstream, {spec.name: grads[spec.name] for spec in specs}


def chain_macs(specs, shape):
    total = 0
    for spec in specs:
        total += spec.macs(shape)
        shape = spec.output_shape(shape)
    return total


def chain_param_count(specs):
    return sum(param_count(s) for s in specs)


def chain_decay_mask(specs):
    return {spec.name: spec.decay_mask() for spec in specs}
