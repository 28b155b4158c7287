import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from autosparse.model import Conv2D, ContractError, Dense, ReLU, SparseNet, build_model
from autosparse.oracle import finite_diff_grad
from autosparse.prune import BackwardSupersetSpec


def _sig(s):
    return 1.0 / (1.0 + math.exp(-s))


def _masked(w, s):
    return np.where(np.abs(w) > _sig(s), np.sign(w) * (np.abs(w) - _sig(s)), 0.0)


def _conv_loop(x, w, b, pad):
    """Direct convolution (cross-correlation) by nested loops."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    out = np.zeros((n, o, ho, wo))
    for i in range(n):
        for oc in range(o):
            for y in range(ho):
                for z in range(wo):
                    out[i, oc, y, z] = np.sum(xp[i, :, y:y + k, z:z + k] * w[oc]) + b[oc]
    return out


def test_all_masked_gives_bias_logits(rng):
    net = build_model((20,), [16], 3, s0=20.0, dtype=np.float64)
    for layer in net.prunable:
        assert np.abs(layer.weights).max() < _sig(20.0)
        layer.bias = rng.normal(size=layer.bias.shape)
    out = net.forward(rng.normal(size=(2, 20)))
    # hidden output is relu(b1); final logits are b2 since W2 is fully masked
    np.testing.assert_array_equal(out, np.broadcast_to(net.prunable[1].bias, (2, 3)))


def test_dense_exempt_matches_unpruned(rng):
    layer = Dense(6, 4, rng, dtype=np.float64, s=-1.0, dense_exempt=True)
    x = rng.normal(size=(3, 6))
    np.testing.assert_array_equal(layer.forward(x), x @ layer.weights.T + layer.bias)
    assert layer.zero_fraction() == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_affine_forward_matches_masked_matmul(seed):
    rng = np.random.default_rng(seed)
    layer = Dense(3, 4, rng, dtype=np.float64, s=-5.0)
    layer.weights = rng.normal(0, 0.02, size=(4, 3))
    x = rng.normal(size=(7, 3))
    expected = x @ _masked(layer.weights, -5.0).T + layer.bias
    np.testing.assert_allclose(layer.forward(x), expected, atol=1e-12)


@pytest.mark.parametrize("pad", [0, 1])
def test_conv_forward_matches_loops(rng, pad):
    layer = Conv2D((2, 6, 5), 3, 3, rng, padding=pad, dtype=np.float64, s=-3.0)
    x = rng.normal(size=(2, 2, 6, 5))
    expected = _conv_loop(x, _masked(layer.weights, -3.0), layer.bias, pad)
    np.testing.assert_allclose(layer.forward(x), expected, atol=1e-12)


def test_forward_independent_of_alpha(rng):
    net = build_model((8,), [6], 3, seed=2)
    x = rng.normal(size=(4, 8)).astype(np.float32)
    assert np.array_equal(net.forward(x, 0.0), net.forward(x, 0.9))


def test_backward_before_forward():
    net = build_model((4,), [3], 2)
    with pytest.raises(ContractError):
        net.backward(np.zeros((1, 2)), 0.5)


def test_input_shape_mismatch():
    net = build_model((4,), [3], 2)
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 5)))


def test_flat_input_reshaped_for_images(rng):
    net = build_model((4, 4), [{"type": "conv2d", "channels": 2, "kernel": 3}], 3)
    x = rng.random((2, 4, 4)).astype(np.float32)
    assert np.array_equal(net.forward(x.reshape(2, 16)), net.forward(x))


def _loss(net, x, v, alpha):
    return float(np.sum(net.forward(x, alpha) * v))


def _small_net(rng, conv=False):
    hidden = [{"type": "conv2d", "channels": 2, "kernel": 2}] if conv else [5]
    shape = (3, 3) if conv else (4,)
    net = build_model(shape, hidden, 3, seed=int(rng.integers(1 << 30)), s0=-2.5, dtype=np.float64)
    for layer in net.prunable:
        w = rng.normal(0, 0.5, size=layer.weights.shape)
        # keep entries clear of the threshold kink
        near = np.abs(np.abs(w) - _sig(layer.s)) < 2e-2
        w[near] += np.sign(w[near]) * 0.05
        layer.weights = w
        layer.bias = rng.normal(0, 0.1, size=layer.bias.shape)
    return net


@pytest.mark.parametrize("conv", [False, True])
@pytest.mark.parametrize("seed", range(3))
def test_network_gradients_match_finite_differences(conv, seed):
    rng = np.random.default_rng(seed)
    net = _small_net(rng, conv)
    x = rng.normal(size=(3,) + net.input_shape)
    v = rng.normal(size=(3, 3))
    # any alpha; finite differences only see active entries
    net.forward(x, 0.4)
    net.backward(v, 0.4)
    for li, layer in enumerate(net.prunable):
        gw, gb = layer.grad_weights.copy(), layer.grad_bias.copy()
        mask = layer.active_mask()

        def fw(wf, layer=layer):
            old = layer.weights
            layer.weights = wf
            try:
                return _loss(net, x, v, 0.4)
            finally:
                layer.weights = old

        def fb(bf, layer=layer):
            old = layer.bias
            layer.bias = bf
            try:
                return _loss(net, x, v, 0.4)
            finally:
                layer.bias = old

        num_w = finite_diff_grad(fw, layer.weights, 1e-6)
        num_b = finite_diff_grad(fb, layer.bias, 1e-6)
        np.testing.assert_allclose(gw[mask], num_w[mask], rtol=1e-4, atol=1e-8)
        np.testing.assert_allclose(gb, num_b, rtol=1e-4, atol=1e-8)
    # threshold gradients restricted to active entries: rerun with alpha = 0
    net.forward(x, 0.0)
    net.backward(v, 0.0)
    for layer in net.prunable:
        def fs(s, layer=layer):
            old = layer.s
            layer.s = float(s)
            try:
                return _loss(net, x, v, 0.0)
            finally:
                layer.s = old
        assert layer.grad_s == pytest.approx(finite_diff_grad(fs, layer.s, 1e-6), rel=1e-4, abs=1e-9)


def test_alpha_zero_weight_grad_pattern_equals_mask(rng):
    net = _small_net(rng)
    x = rng.normal(size=(5, 4))
    net.forward(x, 0.0)
    net.backward(rng.normal(size=(5, 3)), 0.0)
    for layer in net.prunable:
        assert np.all(layer.grad_weights[~layer.active_mask()] == 0)


def test_alpha_one_is_full_pass_through(rng):
    net = _small_net(rng)
    x = rng.normal(size=(5, 4))
    v = rng.normal(size=(5, 3))
    net.forward(x, 1.0)
    net.backward(v, 1.0)
    # reference: a dense net whose weights are the sparse weights
    l1, l2 = net.prunable
    w1, w2 = _masked(l1.weights, l1.s), _masked(l2.weights, l2.s)
    h_pre = x @ w1.T + l1.bias
    h = np.maximum(h_pre, 0)
    gw2 = v.T @ h
    gh = (v @ w2) * (h_pre > 0)
    gw1 = gh.T @ x
    np.testing.assert_allclose(l2.grad_weights, gw2, atol=1e-12)
    np.testing.assert_allclose(l1.grad_weights, gw1, atol=1e-12)


def test_topk_mode_zeroes_outside_superset(rng):
    net = _small_net(rng)
    x = rng.normal(size=(5, 4))
    net.forward(x, 1.0)
    net.backward(rng.normal(size=(5, 3)), 1.0, BackwardSupersetSpec("topk", 0.5))
    for layer in net.prunable:
        nz = np.count_nonzero(layer.grad_weights)
        assert nz <= max(math.ceil(0.5 * layer.n_params), layer.n_active())


def test_sparsity_report_saturated_threshold():
    net = build_model((20,), [16], 4, s0=20.0)
    for layer in net.prunable:
        assert np.abs(layer.weights).max() < _sig(20.0)
    assert net.sparsity_report().global_sparsity == 1.0


def test_sparsity_report_all_exempt():
    net = build_model((20,), [16], 4, s0=20.0, prune=False)
    rep = net.sparsity_report()
    assert rep.global_sparsity == 0.0 and rep.model_sparsity == 0.0


def test_sparsity_report_mean_by_count(rng):
    a = Dense(4, 2, rng, dtype=np.float64, s=-5.0)
    b = Dense(4, 2, rng, dtype=np.float64, s=-5.0)
    a.weights = np.array([[1.0, 0, 0, 0], [0, 0, 0, 0]]) * np.array([[1, 1, 1, 1], [1, 1, 1, 1]])
    a.weights[0, 1] = 1.0
    # a: 2 of 8 kept (3/4 masked); b: 6 of 8 kept (1/4 masked)
    b.weights = np.array([[1.0, 1, 1, 1], [1, 1, 0, 0]])
    rep = SparseNet([a, ReLU(), b], (4,)).sparsity_report()
    assert [p.zero_fraction for p in rep.per_layer] == [0.75, 0.25]
    assert rep.global_sparsity == 0.5


def test_exempt_layer_excluded_from_global_only(rng):
    net = build_model((10,), [8], 3, s0=20.0, dense_exempt=[-1])
    rep = net.sparsity_report()
    assert rep.global_sparsity == 1.0
    assert rep.model_sparsity == pytest.approx(80 / (80 + 24))


@given(s1=st.floats(-8, 2), ds=st.floats(0, 3))
def test_sparsity_monotone_in_s(s1, ds):
    rng = np.random.default_rng(0)
    layer = Dense(10, 10, rng, s=s1)
    z1 = layer.zero_fraction()
    layer.s = s1 + ds
    assert layer.zero_fraction() >= z1


def test_bad_layer_spec():
    with pytest.raises(ValueError):
        build_model((4,), [{"type": "lstm"}], 2)
