import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powergov.errors import ShapeMismatch, StaleCache
from powergov.nn import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    Adam,
    Mlp,
    adam_update,
    backward,
    clamp_log_std,
    forward,
    gaussian_log_prob,
    gaussian_log_prob_grads,
    gradient_check,
    max_relative_error,
    numerical_grads,
    sample_action,
)

LOG_2PI = math.log(2 * math.pi)


def random_net(seed, out_dim, sizes=(9, 64, 64)):
    rng = np.random.default_rng(seed)
    return Mlp.init([*sizes, out_dim], rng, out_gain=1.0), rng


# ------------------------------------------------------------------ forward

def test_zero_net_outputs_zero():
    net = Mlp([np.zeros((9, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    x = np.random.default_rng(0).normal(size=(5, 9))
    assert np.all(net.forward(x) == 0.0)


def test_single_path_is_tanh():
    w0 = np.zeros((3, 1))
    w0[0, 0] = 1.0
    net = Mlp([w0, np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    for x0 in (-2.0, -0.3, 0.0, 0.7, 4.0):
        assert net.forward(np.array([x0, 5.0, -5.0]))[0] == pytest.approx(math.tanh(x0), abs=1e-12)


def test_forward_deterministic_and_shapes():
    net, rng = random_net(1, 2)
    x = rng.normal(size=(7, 9))
    a, b = net.forward(x), net.forward(x)
    assert a.shape == (7, 2)
    assert np.array_equal(a, b)
    assert net.forward(x[0]).shape == (2,)
    np.testing.assert_allclose(forward(net, x), a)


def test_forward_shape_mismatch():
    net, _ = random_net(0, 1)
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros(8))


def test_init_is_orthogonal_with_output_gain():
    net = Mlp.init([9, 64, 64, 2], np.random.default_rng(0), out_gain=0.01)
    w = net.weights[1]
    np.testing.assert_allclose(w.T @ w, np.eye(64), atol=1e-10)
    w_out = net.weights[2]
    np.testing.assert_allclose(w_out.T @ w_out, 1e-4 * np.eye(2), atol=1e-12)
    assert all(np.all(b == 0) for b in net.biases)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bounded_params_give_finite_outputs(seed):
    rng = np.random.default_rng(seed)
    ws = [rng.uniform(-10, 10, s) for s in ((9, 64), (64, 64), (64, 2))]
    bs = [rng.uniform(-10, 10, s) for s in (64, 64, 2)]
    x = rng.uniform(-1, 1, size=(16, 9))
    x /= np.maximum(1.0, np.linalg.norm(x, axis=1, keepdims=True))
    assert np.all(np.isfinite(Mlp(ws, bs).forward(x)))


# ----------------------------------------------------------------- backward

def test_backward_needs_forward():
    net, _ = random_net(0, 1)
    with pytest.raises(StaleCache):
        net.backward(np.ones((1, 1)))


def test_backward_stale_after_param_change():
    net, rng = random_net(0, 1)
    net.forward(rng.normal(size=(3, 9)))
    net.weights[0][0, 0] += 1.0
    net.touch()
    with pytest.raises(StaleCache):
        net.backward(np.ones((3, 1)))


def test_backward_upstream_shape():
    net, rng = random_net(0, 2)
    net.forward(rng.normal(size=(3, 9)))
    with pytest.raises(ShapeMismatch):
        net.backward(np.ones((3, 1)))


def test_zero_upstream_zero_grads():
    net, rng = random_net(2, 2)
    grads = backward(net, rng.normal(size=(4, 9)), np.zeros((4, 2)))
    assert all(np.all(g == 0) for g in grads)


def test_linear_layer_grad_is_outer_product():
    rng = np.random.default_rng(0)
    net = Mlp([rng.normal(size=(5, 3))], [rng.normal(size=3)])
    x = rng.normal(size=5)
    g = rng.normal(size=3)
    net.forward(x)
    gw, gb = net.backward(g)
    np.testing.assert_allclose(gw, np.outer(x, g), atol=1e-14)
    np.testing.assert_allclose(gb, g, atol=1e-14)


@pytest.mark.parametrize("out_dim", [1, 2])
def test_gradient_check_small_net(out_dim):
    net, rng = random_net(5, out_dim, sizes=(9, 8, 8))
    x = rng.normal(size=(6, 9))
    up = rng.normal(size=(6, out_dim))
    assert gradient_check(net, x, up) < 1e-6


def test_numerical_grads_leave_params_untouched():
    net, rng = random_net(3, 1, sizes=(9, 4, 4))
    before = [p.copy() for p in net.params]
    numerical_grads(net, rng.normal(size=(2, 9)), np.ones((2, 1)))
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params))


def test_relative_error_floor():
    assert max_relative_error([np.array([1e-12])], [np.array([-1e-12])]) == pytest.approx(2e-6)
    assert max_relative_error([np.array([1.0])], [np.array([1.01])]) == pytest.approx(0.01 / 1.01)


def test_float32_network_round_trips_arrays():
    net = Mlp.init([9, 64, 64, 2], np.random.default_rng(0), dtype="float32")
    assert net.forward(np.zeros(9)).dtype == np.float32
    again = Mlp.from_arrays(net.state_arrays("a"), "a", dtype="float32")
    assert all(np.array_equal(p, q) for p, q in zip(net.params, again.params))


# ----------------------------------------------------------- Gaussian head

def test_log_prob_examples():
    assert gaussian_log_prob([0, 0], [0, 0], [0, 0]) == pytest.approx(-LOG_2PI, abs=1e-12)
    assert gaussian_log_prob([0, 0], [0, 0], [0, 0]) == pytest.approx(-1.837877, abs=1e-6)
    assert gaussian_log_prob([0, 0], [0, 0], [1, 0]) == pytest.approx(-2.337877, abs=1e-6)
    for s in (-3.0, -0.5, 1.5):
        mu = [0.3, -1.2]
        assert gaussian_log_prob(mu, [s, s], mu) == pytest.approx(-2 * s - LOG_2PI, abs=1e-12)


def test_log_prob_batched_shape():
    lp = gaussian_log_prob(np.zeros((4, 2)), np.zeros(2), np.ones((4, 2)))
    assert lp.shape == (4,)


def test_density_integrates_to_one():
    mu = np.array([0.4, -0.7])
    log_std = np.array([-0.3, 0.5])
    sig = np.exp(log_std)
    n = 801
    g0 = np.linspace(mu[0] - 8 * sig[0], mu[0] + 8 * sig[0], n)
    g1 = np.linspace(mu[1] - 8 * sig[1], mu[1] + 8 * sig[1], n)
    a0, a1 = np.meshgrid(g0, g1, indexing="ij")
    dens = np.exp(gaussian_log_prob(mu, log_std, np.stack([a0, a1], axis=-1)))
    mass = np.trapezoid(np.trapezoid(dens, g1, axis=1), g0) if hasattr(np, "trapezoid") else np.trapz(np.trapz(dens, g1, axis=1), g0)
    assert mass == pytest.approx(1.0, abs=1e-3)


def test_log_prob_grads_match_finite_differences():
    rng = np.random.default_rng(0)
    mu, log_std, a = rng.normal(size=2), rng.normal(size=2) * 0.3, rng.normal(size=2)
    dmu, dls = gaussian_log_prob_grads(mu, log_std, a)
    h = 1e-6
    for d in range(2):
        e = np.eye(2)[d] * h
        num_mu = (gaussian_log_prob(mu + e, log_std, a) - gaussian_log_prob(mu - e, log_std, a)) / (2 * h)
        num_ls = (gaussian_log_prob(mu, log_std + e, a) - gaussian_log_prob(mu, log_std - e, a)) / (2 * h)
        assert dmu[d] == pytest.approx(num_mu, rel=1e-6)
        assert dls[d] == pytest.approx(num_ls, rel=1e-6, abs=1e-9)


def test_sampling_degenerate_noise():
    a, lp = sample_action([0.3, -0.2], [-20.0, -20.0], np.random.default_rng(0))
    np.testing.assert_allclose(a, [0.3, -0.2], atol=1e-6)
    assert lp == pytest.approx(gaussian_log_prob([0.3, -0.2], [-20.0, -20.0], a))


def test_sampling_reproducible():
    a1, lp1 = sample_action([0, 0], [0, 0], np.random.default_rng(42))
    a2, lp2 = sample_action([0, 0], [0, 0], np.random.default_rng(42))
    assert np.array_equal(a1, a2) and lp1 == lp2


def test_sampling_moments():
    a, _ = sample_action(np.zeros((100_000, 2)), np.zeros(2), np.random.default_rng(0))
    assert np.all(np.abs(a.mean(axis=0)) < 0.02)
    assert np.all(np.abs(a.std(axis=0) - 1) < 0.02)


def test_clamp_log_std():
    ls = np.array([-9.0, 3.0])
    clamp_log_std(ls)
    assert list(ls) == [LOG_STD_MIN, LOG_STD_MAX]


# --------------------------------------------------------------------- Adam

def test_adam_zero_grad_fixpoint():
    w = [np.array([1.0, -2.0])]
    adam_update(w, [np.zeros(2)], 0.1)
    assert list(w[0]) == [1.0, -2.0]


def test_adam_descends_quadratic():
    w = [np.array([1.0])]
    adam_update(w, [2 * w[0]], 0.1)
    assert w[0][0] < 1.0


def test_adam_converges_on_shifted_quadratic():
    w = [np.array([0.0])]
    opt = Adam(w, 0.1)
    for _ in range(200):
        opt.update(w, [2 * (w[0] - 3.0)])
    assert abs(w[0][0] - 3.0) < 0.1


def test_adam_first_step_matches_closed_form():
    # bias correction makes the first step exactly lr * g / (|g| + eps')
    w = [np.array([0.5, -0.5])]
    g = np.array([0.2, -4.0])
    Adam(w, 0.01).update(w, [g])
    np.testing.assert_allclose(w[0], [0.5 - 0.01, -0.5 + 0.01], atol=1e-9)


def test_adam_shape_mismatch():
    opt = Adam([np.zeros(3)], 0.1)
    with pytest.raises(ShapeMismatch):
        opt.update([np.zeros(3)], [np.zeros(2)])
    with pytest.raises(ShapeMismatch):
        opt.update([np.zeros(3), np.zeros(1)], [np.zeros(3), np.zeros(1)])
