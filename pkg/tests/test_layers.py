import numpy as np
import pytest

from pararealnet import layers as L
from pararealnet.tensor import ShapeError


def run(spec, params, x):
    return L.forward(spec, params, x)


def fd_errors(spec, params, x, seed=0):
    """Max |analytic - central FD| / max(1, |analytic|) for input and params."""
    rng = np.random.default_rng(seed)
    out, cache = run(spec, params, x)
    u = rng.standard_normal(out.shape)
    dx, grads = L.backward(spec, params, cache, u)

    def objective():
        return float(np.sum(u * run(spec, params, x)[0]))

    worst = 0.0
    for target, analytic in [(x, dx)] + list(zip(params, grads)):
        flat, ana = target.reshape(-1), analytic.reshape(-1)
        for i in range(flat.size):
            h = 1e-6 * max(1.0, abs(flat[i]))
            orig = flat[i]
            flat[i] = orig + h
            plus = objective()
            flat[i] = orig - h
            minus = objective()
            flat[i] = orig
            num = (plus - minus) / (2 * h)
            worst = max(worst, abs(ana[i] - num) / max(1.0, abs(ana[i])))
    return worst


SPECS = [
    (L.FullyConnected("fc", 12, 5), (3, 2, 2)),
    (L.FullyConnected("fc", 6, 4, bias=False), (6,)),
    (L.Conv2d("c", 2, 3, 3, 1), (2, 5, 5)),
    (L.Conv2d("c", 2, 3, 3, 2), (2, 6, 5)),
    (L.Conv2d("c", 3, 2, 1, 2, bias=False), (3, 5, 5)),
    (L.ReLU("r"), (2, 3, 3)),
    (L.MaxPool2d("p", 2, 2), (2, 4, 6)),
    (L.MaxPool2d("p", 3, 2), (2, 5, 5)),
    (L.GlobalAvgPool("g"), (3, 4, 4)),
    (L.BatchNorm2d("bn", 3), (3, 3, 3)),
    (L.ResidualBlock("rb", 2, 2, 1), (2, 4, 4)),
    (L.ResidualBlock("rb", 2, 3, 2), (2, 5, 5)),
    (L.Sequential("s", (L.Conv2d("s.c", 2, 2, 3), L.BatchNorm2d("s.bn", 2), L.ReLU("s.r"))), (2, 4, 4)),
]


@pytest.mark.parametrize("spec, shape", SPECS, ids=lambda v: getattr(v, "name", str(v)))
def test_backward_matches_finite_differences(spec, shape):
    rng = np.random.default_rng(1)
    params = L.init_params(spec, 3)[spec.name]
    params = [p + 0.1 * rng.standard_normal(p.shape) for p in params]  # move BN off 1/0
    x = rng.standard_normal((4,) + shape)
    assert fd_errors(spec, params, x) <= 1e-5


@pytest.mark.parametrize("spec, shape", SPECS, ids=lambda v: getattr(v, "name", str(v)))
def test_zero_upstream_gives_zero_gradients(spec, shape):
    params = L.init_params(spec, 0)[spec.name]
    x = np.random.default_rng(0).standard_normal((4,) + shape)
    out, cache = run(spec, params, x)
    assert out.shape == (4,) + tuple(spec.output_shape(shape))
    dx, grads = L.backward(spec, params, cache, np.zeros_like(out))
    assert dx.shape == x.shape and not dx.any()
    assert [g.shape for g in grads] == [p.shape for p in params]
    assert not any(g.any() for g in grads)


def test_relu_definition():
    out, _ = run(L.ReLU("r"), [], np.array([[-1.0, 0.0, 2.0]]))
    assert np.array_equal(out, [[0.0, 0.0, 2.0]])


def test_identity_1x1_conv():
    spec = L.Conv2d("c", 3, 3, 1, 1)
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 4))
    out, _ = run(spec, [np.eye(3).reshape(3, 3, 1, 1), np.zeros(3)], x)
    assert np.array_equal(out, x)


def test_hand_convolution_of_ones():
    spec = L.Conv2d("c", 1, 1, 3, 1)
    out, _ = run(spec, [np.ones((1, 1, 3, 3)), np.zeros(1)], np.ones((1, 1, 3, 3)))
    assert out[0, 0, 1, 1] == 9.0
    assert out[0, 0, 0, 0] == out[0, 0, 0, 2] == out[0, 0, 2, 0] == out[0, 0, 2, 2] == 4.0
    assert out[0, 0, 0, 1] == 6.0


def test_conv_is_cross_correlation():
    w = np.arange(9.0).reshape(1, 1, 3, 3)
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 0, 0] = 1.0  # only the top-left input is hot
    out, _ = run(L.Conv2d("c", 1, 1, 3, 1), [w, np.zeros(1)], x)
    # output (1,1) sees x[0,0] through weight index (0,0), no flip
    assert out[0, 0, 1, 1] == w[0, 0, 0, 0]
    assert out[0, 0, 0, 0] == w[0, 0, 1, 1]


def test_fc_bias_gradient_is_batch_sum():
    spec = L.FullyConnected("fc", 4, 3)
    params = L.init_params(spec, 0)["fc"]
    x = np.random.default_rng(0).standard_normal((5, 4))
    _, cache = run(spec, params, x)
    up = np.random.default_rng(1).standard_normal((5, 3))
    _, (dw, db) = L.backward(spec, params, cache, up)
    assert np.allclose(db, up.sum(axis=0), rtol=0, atol=1e-15)
    assert np.allclose(dw, up.T @ x, rtol=0, atol=1e-14)


def test_maxpool_routes_each_gradient_once():
    spec = L.MaxPool2d("p", 3, 2)
    x = np.random.default_rng(0).standard_normal((2, 2, 7, 7))
    out, cache = run(spec, [], x)
    up = np.random.default_rng(1).standard_normal(out.shape)
    dx, _ = L.backward(spec, [], cache, up)
    assert np.isclose(dx.sum(), up.sum(), rtol=1e-14)
    ones, _ = L.backward(spec, [], cache, np.ones_like(out))
    assert ones.sum() == out.size


def test_maxpool_ties_go_to_first_index():
    spec = L.MaxPool2d("p", 2, 2)
    x = np.ones((1, 1, 2, 2))
    out, cache = run(spec, [], x)
    dx, _ = L.backward(spec, [], cache, np.ones_like(out))
    assert np.array_equal(dx[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_global_avg_pool_backward_of_ones():
    spec = L.GlobalAvgPool("g")
    out, cache = run(spec, [], np.random.default_rng(0).standard_normal((2, 3, 4, 5)))
    dx, _ = L.backward(spec, [], cache, np.ones_like(out))
    assert np.allclose(dx, 1 / 20, rtol=0, atol=0)


def test_batchnorm_init_and_batch_size_guard():
    gamma, beta = L.init_params(L.BatchNorm2d("bn", 8), 0)["bn"]
    assert np.array_equal(gamma, np.ones(8)) and np.array_equal(beta, np.zeros(8))
    with pytest.raises(ShapeError):
        run(L.BatchNorm2d("bn", 2), [np.ones(2), np.zeros(2)], np.ones((1, 2, 3, 3)))


def test_batchnorm_normalises():
    x = np.random.default_rng(0).normal(3.0, 2.0, (8, 2, 4, 4))
    out, _ = run(L.BatchNorm2d("bn", 2), [np.ones(2), np.zeros(2)], x)
    assert np.allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-12)
    assert np.allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)


def test_init_is_deterministic_and_he_scaled():
    spec = L.FullyConnected("fc", 100, 10)
    a, b = L.init_params(spec, 7)["fc"], L.init_params(spec, 7)["fc"]
    assert all(np.array_equal(p, q) for p, q in zip(a, b))
    assert not np.array_equal(a[0], L.init_params(spec, 8)["fc"][0])
    big = L.init_params(L.FullyConnected("big", 100, 200), 0)["big"][0]  # 20,000 draws
    assert abs(big.var() / (2 / 100) - 1) < 0.2
    assert np.array_equal(a[1], np.zeros(10))


def test_residual_projection_rule():
    assert not L.ResidualBlock("a", 4, 4, 1).projected
    assert L.ResidualBlock("b", 4, 8, 1).projected
    assert L.ResidualBlock("c", 4, 4, 2).projected
    rb = L.ResidualBlock("rb", 2, 2, 1)
    params = L.init_params(rb, 0)["rb"]
    # with the second conv zeroed the block is the identity
    params[5][...] = 0.0
    x = np.random.default_rng(0).standard_normal((3, 2, 4, 4))
    assert np.array_equal(run(rb, params, x)[0], x)


def test_shape_and_cache_errors():
    conv = L.Conv2d("c", 3, 4, 3, 1)
    params = L.init_params(conv, 0)["c"]
    with pytest.raises(ShapeError):
        run(conv, params, np.zeros((2, 2, 5, 5)))
    with pytest.raises(L.CacheError):
        L.backward(conv, params, None, np.zeros((2, 4, 5, 5)))
    with pytest.raises(ValueError):
        L.Conv2d("c", 1, 1, 5, 1)


def test_chain_helpers():
    specs = [L.Conv2d("a", 1, 2, 3, 2), L.ReLU("b"), L.GlobalAvgPool("c"), L.FullyConnected("d", 2, 3)]
    bundle = L.chain_init(specs, 0)
    assert list(bundle) == ["a", "b", "c", "d"]
    assert L.chain_output_shape(specs, (1, 6, 6)) == (3,)
    assert L.chain_param_count(specs) == 1 * 2 * 9 + 2 + 2 * 3 + 3
    assert L.chain_decay_mask(specs) == {"a": [True, False], "b": [], "c": [], "d": [True, False]}
    x = np.random.default_rng(0).standard_normal((2, 1, 6, 6))
    out, caches = L.chain_forward(specs, bundle, x)
    dx, grads = L.chain_backward(specs, bundle, caches, np.ones_like(out))
    assert dx.shape == x.shape and list(grads) == ["a", "b", "c", "d"]
    with pytest.raises(ValueError):
        L.chain_init([L.ReLU("x"), L.ReLU("x")], 0)
