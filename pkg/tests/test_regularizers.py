import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipgan import autodiff as ad
from lipgan import nn
from lipgan.regularizers import (
    RegularizerState,
    gp_term,
    interpolate,
    lipschitz_estimate,
    lp_term,
    max_gradient,
    maxal_term,
    maxgp_term,
    predicted_k_star,
    reg_gp,
    reg_lp,
    reg_maxal,
    reg_maxgp,
    regularize,
    sample_interpolations,
    update_lambda,
)


def weighted_half_square(w):
    """f(x) = 0.5 * sum(w * x^2); gradient norm at x is ||w * x||."""

    def f(x):
        return ad.scalar_mul(ad.sum(ad.mul(w, ad.square(x)), axis=1), 0.5)

    return f


def half_square(x):
    return ad.scalar_mul(ad.sum(ad.square(x), axis=1), 0.5)


def linear(w):
    w = np.asarray(w, dtype=float).reshape(-1, 1)
    return lambda x: ad.reshape(ad.matmul(x, w), (x.shape[0],))


NORMS_05_15 = np.array([[0.5, 0.0], [0.0, 1.5]])


# -- interpolation ---------------------------------------------------------------


def test_interpolation_endpoints_and_midpoint():
    real = np.array([[0.0, 0.0], [1.0, 1.0], [4.0, -2.0]])
    fake = np.array([[2.0, 0.0], [3.0, 5.0], [0.0, 0.0]])
    pts = interpolate(real, fake, np.array([0.25, 0.0, 1.0]))
    np.testing.assert_array_equal(pts, [[1.5, 0.0], [3.0, 5.0], [4.0, -2.0]])


def test_interpolation_quarter_example():
    # t weights the real point: t = 0.25 between real (2,0) and fake (0,0)
    pts = interpolate(np.array([[2.0, 0.0]]), np.array([[0.0, 0.0]]), np.array([0.25]))
    np.testing.assert_array_equal(pts, [[0.5, 0.0]])


def test_interpolation_provenance_recomputes_bitwise():
    rng = np.random.default_rng(0)
    real, fake = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
    batch = sample_interpolations(real, fake, rng)
    again = interpolate(real[batch.real_index], fake[batch.fake_index], batch.t)
    np.testing.assert_array_equal(batch.points, again)
    assert np.all((batch.t >= 0) & (batch.t <= 1))


def test_interpolation_size_mismatch():
    with pytest.raises(ValueError):
        sample_interpolations(np.ones((3, 2)), np.ones((2, 2)), np.random.default_rng(0))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_interpolation_on_segment(seed):
    rng = np.random.default_rng(seed)
    real, fake = rng.normal(size=(8, 4)) * 10, rng.normal(size=(8, 4))
    x = sample_interpolations(real, fake, rng).points
    lhs = np.linalg.norm(x - fake, axis=1) + np.linalg.norm(x - real, axis=1)
    np.testing.assert_allclose(lhs, np.linalg.norm(real - fake, axis=1), atol=1e-9)


# -- formula examples ---------------------------------------------------------------


def test_gp_examples():
    assert reg_gp(half_square, NORMS_05_15, rho=10).item() == pytest.approx(-1.25)
    assert reg_gp(linear([0.0, 0.0]), np.ones((3, 2)), rho=2).item() == pytest.approx(-1.0)
    assert reg_gp(linear([0.6, 0.8]), np.ones((3, 2)), rho=10).item() == 0.0


def test_lp_examples():
    assert reg_lp(half_square, NORMS_05_15, rho=10).item() == pytest.approx(-0.625)
    assert reg_lp(linear([3.0, 0.0]), np.ones((2, 2)), rho=1).item() == pytest.approx(-2.0)
    assert reg_lp(linear([0.0, 0.0]), np.ones((3, 2)), rho=2).item() == 0.0


def test_maxgp_example_and_gradient_locality():
    w = ad.variable([1.0, 1.0])
    state = RegularizerState("maxgp", rho=10)
    term = reg_maxgp(weighted_half_square(w), NORMS_05_15, state)
    assert term.item() == pytest.approx(-1.25)
    (g,) = ad.backward(term, [w])
    # only the (0, 1.5) point contributes, and it only touches w[1]
    assert g.value[0] == 0.0 and g.value[1] != 0.0


def test_maxgp_all_norms_at_target():
    state = RegularizerState("maxgp", rho=10)
    assert reg_maxgp(linear([0.6, 0.8]), np.ones((4, 2)), state).item() == 0.0


def test_maxgp_buffer_dominates():
    state = RegularizerState("maxgp", rho=10, buffer_capacity=4)
    state.buffer_points = np.array([[1.4, 0.0]])
    state.buffer_norms = np.array([0.0])  # stale; recomputed on use
    batch = np.array([[0.8, 0.0], [0.0, 0.3]])
    term = reg_maxgp(half_square, batch, state)
    assert term.item() == pytest.approx(-5 * 0.4**2)
    np.testing.assert_allclose(state.buffer_norms, [1.4, 0.8, 0.3])
    np.testing.assert_array_equal(state.buffer_points[0], [1.4, 0.0])


def test_buffer_keeps_global_top():
    state = RegularizerState("maxgp", buffer_capacity=2)
    rng = np.random.default_rng(0)
    seen = []
    for _ in range(5):
        batch = rng.normal(size=(6, 2))
        seen.append(batch)
        max_gradient(half_square, batch, state)
        assert state.buffer_size <= 2
        assert np.all(np.diff(state.buffer_norms) <= 0)
    allpts = np.concatenate(seen)
    top = np.sort(np.linalg.norm(allpts, axis=1))[::-1][:2]
    np.testing.assert_allclose(state.buffer_norms, top)


def test_buffer_disabled_by_default():
    state = RegularizerState("maxgp")
    max_gradient(half_square, np.ones((3, 2)), state)
    assert state.buffer_size == 0


def test_max_gradient_empty():
    with pytest.raises(ValueError, match="nonempty"):
        max_gradient(half_square, np.zeros((0, 2)), RegularizerState("maxgp"))


def test_max_gradient_ties_go_to_first():
    w = ad.variable([1.0, 1.0])
    pts = np.array([[1.0, 0.0], [0.0, 1.0]])
    term = reg_maxgp(weighted_half_square(w), pts, RegularizerState("maxgp", rho=2))
    (g,) = ad.backward(term, [w])
    assert g.value[1] == 0.0


def test_maxal_examples():
    g = ad.constant(1.2)
    assert maxal_term(g, lam=2.0, rho=10.0).item() == pytest.approx(0.2)
    for lam in (-3.0, 0.0, 7.5):
        assert maxal_term(ad.constant(1.0), lam, 10.0).item() == 0.0
    state = RegularizerState("maxal", rho=10, lam=2.0)
    assert reg_maxal(linear([1.2, 0.0]), np.ones((2, 2)), state).item() == pytest.approx(0.2)


def test_update_lambda_examples():
    state = RegularizerState("maxal", rho=10, lam=0.5)
    update_lambda(state, 1.2)
    assert state.lam == pytest.approx(-1.5)
    update_lambda(state, 1.0)
    assert state.lam == pytest.approx(-1.5)


def test_update_lambda_general_target():
    state = RegularizerState("maxal", rho=2, target=3.0, lam=1.0)
    update_lambda(state, 2.5)
    assert state.lam == 2.0


def test_state_validation():
    with pytest.raises(ValueError):
        RegularizerState("dropout")
    with pytest.raises(ValueError):
        RegularizerState("gp", rho=-1)
    with pytest.raises(ValueError):
        RegularizerState("gp", target=0)


def test_regularize_dispatch():
    pts = np.ones((3, 2))
    for kind in ("none", "clip", "sn"):
        assert regularize(linear([1.0, 0.0]), pts, RegularizerState(kind)) == (None, None)
    term, g = regularize(linear([3.0, 4.0]), pts, RegularizerState("gp", rho=2))
    assert g == 5.0 and term.item() == pytest.approx(-16.0)


# -- properties -------------------------------------------------------------------


def test_lp_never_below_gp():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        norms = ad.constant(rng.uniform(0, 3, size=int(rng.integers(1, 20))))
        rho, k = rng.uniform(0, 20), rng.uniform(0.1, 2)
        assert lp_term(norms, rho, k).item() >= gp_term(norms, rho, k).item()


def test_lp_never_below_gp_through_networks():
    rng = np.random.default_rng(1)
    for _ in range(25):
        f = nn.critic(nn.init_mlp([2, 8, 1], rng, activation="tanh"))
        pts = rng.normal(size=(8, 2))
        assert reg_lp(f, pts, 10).item() >= reg_gp(f, pts, 10).item()


def test_maxal_zero_lambda_is_maxgp_exactly():
    rng = np.random.default_rng(2)
    for _ in range(50):
        params = nn.init_mlp([2, 8, 1], rng, activation="tanh")
        f = nn.critic(params)
        pts = rng.normal(size=(8, 2))
        rho, k = float(rng.uniform(0, 20)), float(rng.uniform(0.1, 2))
        a = reg_maxal(f, pts, RegularizerState("maxal", rho=rho, target=k, lam=0.0))
        b = reg_maxgp(f, pts, RegularizerState("maxgp", rho=rho, target=k))
        assert a.item() == b.item()
        ga = ad.backward(a, params.parameters())
        gb = ad.backward(b, params.parameters())
        for x, y in zip(ga, gb):
            np.testing.assert_array_equal(x.value, y.value)


def test_maxgp_equals_gp_on_argmax_singleton():
    rng = np.random.default_rng(3)
    for _ in range(20):
        params = nn.init_mlp([2, 8, 1], rng, activation="tanh")
        f = nn.critic(params)
        pts = rng.normal(size=(8, 2))
        state = RegularizerState("maxgp", rho=10)
        mx = reg_maxgp(f, pts, state)
        x = ad.variable(pts)
        i = int(np.argmax(ad.grad_norm(f(x), x).value))
        gp = reg_gp(f, pts[i : i + 1], 10)
        assert mx.item() == pytest.approx(gp.item(), rel=1e-12)
        for a, b in zip(ad.backward(mx, params.parameters()), ad.backward(gp, params.parameters())):
            np.testing.assert_allclose(a.value, b.value, rtol=1e-10, atol=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(-10, 10), st.floats(0.01, 100), st.floats(0.1, 3), st.floats(0, 5))
def test_update_lambda_fixed_point_iff_at_target(lam, rho, k, g):
    state = RegularizerState("maxal", rho=rho, target=k, lam=lam)
    update_lambda(state, g)
    assert (state.lam == lam) == (rho * (g - k) == 0)


def test_lipschitz_estimate_linear_and_constant():
    rng = np.random.default_rng(0)
    real, fake = rng.normal(size=(5, 2)), rng.normal(size=(5, 2))
    assert lipschitz_estimate(linear([3.0, 4.0]), real, fake, 10, rng) == 5.0
    assert lipschitz_estimate(linear([0.0, 0.0]), real, fake, 10, rng) == 0.0
    with pytest.raises(ValueError):
        lipschitz_estimate(linear([1.0, 0.0]), real, fake, 0, rng)


def test_lipschitz_estimate_spectral_normalized():
    rng = np.random.default_rng(4)
    params = nn.init_mlp([2, 16, 16, 1], rng, spectral_norm=True)
    for p in params.parameters():
        p.value = p.value * 4
    nn.update_spectral_state(params, iters=500)
    f = nn.critic(params)
    real, fake = rng.normal(size=(20, 2)) * 2, rng.normal(size=(20, 2))
    assert lipschitz_estimate(f, real, fake, 2000, rng) <= 1 + 1e-3


# -- k* drift law ---------------------------------------------------------------------


def scan_k_star(w1, rho, one_sided=False, lo=0.0, hi=None, step=1e-4):
    hi = hi if hi is not None else w1 / rho + 3
    k = np.arange(lo, hi, step)
    gap = np.maximum(0, k - 1) if one_sided else k - 1
    return k[np.argmax(k * w1 - rho / 2 * gap**2)]


def test_predicted_k_star_examples():
    assert predicted_k_star(9, 1) == 10
    assert predicted_k_star(0, 5) == 1
    with pytest.raises(ValueError):
        predicted_k_star(1, 0)


@pytest.mark.parametrize("w1", [0.3, 1.0, 2.0, 9.0])
@pytest.mark.parametrize("rho", [1.0, 10.0, 100.0])
def test_predicted_k_star_matches_scan(w1, rho):
    assert abs(scan_k_star(w1, rho) - predicted_k_star(w1, rho)) <= 1e-4


@pytest.mark.parametrize("w1", [0.3, 2.0, 9.0])
@pytest.mark.parametrize("rho", [1.0, 10.0])
def test_one_sided_penalty_has_same_k_star(w1, rho):
    assert scan_k_star(w1, rho, one_sided=True) == scan_k_star(w1, rho)
