import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lipgan import autodiff as ad
from lipgan import nn
from lipgan.autodiff import Node


def _layer(w, b, act="linear"):
    return nn.Layer(ad.variable(np.asarray(w, float)), ad.variable(np.asarray(b, float)), act)


def test_identity_layer():
    params = nn.ModelParams([_layer(np.eye(3), np.zeros(3))])
    x = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_array_equal(nn.mlp_forward(params, Node(x)).value, x)


def test_zero_weights_give_bias():
    params = nn.ModelParams([_layer(np.zeros((2, 3)), [1.0, -2.0, 0.5])])
    out = nn.mlp_forward(params, Node(np.random.default_rng(1).normal(size=(5, 2)))).value
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (5, 1)))


def test_two_layer_leaky_relu_golden():
    params = nn.init_mlp([2, 4, 1], np.random.default_rng(2024))
    x = np.array([[0.5, -1.0], [2.0, 0.25]])
    out = nn.mlp_forward(params, Node(x)).value.ravel()
    # frozen from the first verified run
    np.testing.assert_allclose(out, [0.21521020498082027, 0.294442183050179], rtol=0, atol=1e-15)
    w1, b1, w2, b2 = (p.value for p in params.parameters())
    h = x @ w1 + b1
    manual = (np.where(h > 0, h, 0.2 * h) @ w2 + b2).ravel()
    np.testing.assert_allclose(out, manual, rtol=1e-15)


def test_forward_dimension_mismatch():
    params = nn.init_mlp([3, 4, 1], np.random.default_rng(0))
    with pytest.raises(ad.ShapeError):
        nn.mlp_forward(params, Node(np.ones((2, 2))))


def test_layers_must_chain():
    with pytest.raises(ValueError, match="layer 0 outputs 3"):
        nn.ModelParams([_layer(np.ones((2, 3)), np.zeros(3)), _layer(np.ones((4, 1)), [0.0])])


def test_adam_first_step():
    p = ad.variable([1.0])
    state = nn.AdamState(lr=0.1, beta1=0.0, beta2=0.9)
    nn.adam_step(state, [p], [np.array([1.0])])
    # m_hat = 1, v_hat = 0.1/0.1 = 1 -> step = lr / (1 + eps)
    assert p.value[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_is_identity():
    p = ad.variable([0.5, -2.0])
    state = nn.AdamState(lr=0.1)
    for _ in range(3):
        nn.adam_step(state, [p], [np.zeros(2)])
    np.testing.assert_array_equal(p.value, [0.5, -2.0])


def test_adam_beta1_zero_ignores_history():
    s1, s2 = nn.AdamState(lr=0.01), nn.AdamState(lr=0.01)
    p1, p2 = ad.variable([0.0]), ad.variable([0.0])
    nn.adam_step(s1, [p1], [np.array([5.0])])
    nn.adam_step(s2, [p2], [np.array([-3.0])])
    assert s1.m[0][0] == 5.0 and s2.m[0][0] == -3.0
    nn.adam_step(s1, [p1], [np.array([2.0])])
    nn.adam_step(s2, [p2], [np.array([2.0])])
    assert s1.m[0][0] == s2.m[0][0] == 2.0
    assert s1.step == 2


def test_adam_rejects_nan():
    p = ad.variable([1.0])
    with pytest.raises(FloatingPointError):
        nn.adam_step(nn.AdamState(), [p], [np.array([np.nan])])
    assert p.value[0] == 1.0


def test_adam_second_moment_nonnegative():
    rng = np.random.default_rng(0)
    p = ad.variable(np.zeros(5))
    state = nn.AdamState()
    for _ in range(20):
        nn.adam_step(state, [p], [rng.normal(size=5)])
        assert np.all(state.v[0] >= 0)


def test_clip_weights():
    params = nn.ModelParams([_layer([[-2.0, 0.3, 5.0]], [0.0, 0.0, 0.0])])
    nn.clip_weights(params, 1.0)
    np.testing.assert_array_equal(params.layers[0].weight.value, [[-1.0, 0.3, 1.0]])


def test_clip_small_threshold_regime():
    params = nn.init_mlp([2, 8, 1], np.random.default_rng(0))
    nn.clip_weights(params, 0.01)
    assert max(np.abs(p.value).max() for p in params.parameters()) == 0.01


def test_clip_rejects_nonpositive():
    params = nn.init_mlp([2, 1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        nn.clip_weights(params, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 2.0))
def test_clip_idempotent(seed, c):
    params = nn.init_mlp([3, 5, 1], np.random.default_rng(seed))
    for p in params.parameters():
        p.value = p.value * 3
    nn.clip_weights(params, c)
    once = [p.value.copy() for p in params.parameters()]
    nn.clip_weights(params, c)
    for a, p in zip(once, params.parameters()):
        np.testing.assert_array_equal(a, p.value)
        assert np.all(np.abs(p.value) <= c)


def test_power_iteration_diagonal():
    sigma, u, v = nn.power_iteration_sigma(np.diag([2.0, 1.0]), np.array([1.0, 1.0]), 50)
    assert sigma == pytest.approx(2.0, abs=1e-6)
    assert np.linalg.norm(u) == pytest.approx(1.0) and np.linalg.norm(v) == pytest.approx(1.0)


def test_power_iteration_identity():
    sigma, _, _ = nn.power_iteration_sigma(np.eye(4), np.ones(4), 1)
    assert sigma == pytest.approx(1.0, abs=1e-12)


def test_power_iteration_zero_matrix():
    sigma, _, _ = nn.power_iteration_sigma(np.zeros((3, 3)), np.ones(3), 5)
    assert sigma == 0.0


def test_power_iteration_requires_iters():
    with pytest.raises(ValueError):
        nn.power_iteration_sigma(np.eye(2), np.ones(2), 0)


def test_power_iteration_matches_svd():
    rng = np.random.default_rng(8)
    for _ in range(20):
        w = rng.normal(size=(8, 8))
        sigma, _, _ = nn.power_iteration_sigma(w, rng.normal(size=8), 2000)
        assert sigma == pytest.approx(np.linalg.svd(w, compute_uv=False)[0], abs=1e-4)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_power_iteration_monotone_on_psd(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(5, 4))
    a = w.T @ w
    u = rng.normal(size=4)
    prev = -np.inf
    for _ in range(30):
        sigma, u, _ = nn.power_iteration_sigma(a, u, 1)
        assert sigma >= prev - 1e-12 * max(1.0, abs(sigma))
        prev = sigma


def test_warm_start_persists_vectors():
    params = nn.init_mlp([3, 4, 1], np.random.default_rng(0), spectral_norm=True)
    u0 = params.layers[0].u.copy()
    nn.update_spectral_state(params)
    assert not np.allclose(params.layers[0].u, u0)
    for layer in params.layers:
        assert np.linalg.norm(layer.u) == pytest.approx(1.0)
        assert np.linalg.norm(layer.v) == pytest.approx(1.0)


def test_spectral_norm_sigma_two():
    w = np.diag([2.0, 0.5, 0.25])
    params = nn.ModelParams([_layer(w, np.zeros(3))], spectral_norm=True)
    params.layers[0].u = np.ones(3) / np.sqrt(3)
    params.layers[0].v = np.ones(3) / np.sqrt(3)
    nn.update_spectral_state(params, iters=100)
    (w_bar, _, _), = nn.apply_spectral_norm(params)
    assert np.linalg.svd(w_bar.value, compute_uv=False)[0] == pytest.approx(1.0, abs=1e-4)


def test_spectral_norm_fixed_point():
    q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(4, 4)))
    params = nn.ModelParams([_layer(q, np.zeros(4))], spectral_norm=True)
    params.layers[0].u = np.eye(4)[0]
    params.layers[0].v = np.eye(4)[0]
    nn.update_spectral_state(params, iters=5)
    (w_bar, _, _), = nn.apply_spectral_norm(params)
    np.testing.assert_allclose(w_bar.value, q, atol=1e-12)


def test_spectral_norm_zero_layer_errors():
    params = nn.ModelParams([_layer(np.zeros((2, 2)), np.zeros(2))], spectral_norm=True)
    params.layers[0].u = np.array([1.0, 0.0])
    params.layers[0].v = np.array([1.0, 0.0])
    with pytest.raises(ValueError, match="cannot normalize"):
        nn.apply_spectral_norm(params)


def test_spectral_norm_gradient_flows_through_sigma():
    params = nn.init_mlp([3, 1], np.random.default_rng(5), spectral_norm=True)
    nn.update_spectral_state(params, iters=50)
    x = np.random.default_rng(6).normal(size=(4, 3))
    w = params.layers[0].weight
    (g,) = ad.backward(ad.sum(nn.mlp_forward(params, Node(x))), [w])
    # a direction that rescales W leaves W/sigma(W) unchanged
    assert float((g.value * w.value).sum()) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("activation", ["relu", "leaky_relu", "tanh"])
def test_spectral_normalized_net_is_one_lipschitz(activation):
    rng = np.random.default_rng(11)
    params = nn.init_mlp([4, 16, 16, 1], rng, activation=activation, spectral_norm=True)
    for p in params.parameters():
        p.value = p.value * 5
    nn.update_spectral_state(params, iters=1000)
    f = nn.critic(params)
    x1 = rng.normal(size=(10_000, 4)) * 3
    x2 = x1 + rng.normal(size=(10_000, 4)) * rng.uniform(0.001, 3, size=(10_000, 1))
    with ad.no_grad():
        q = np.abs(f(Node(x1)).value - f(Node(x2)).value) / np.linalg.norm(x1 - x2, axis=1)
    assert q.max() <= 1 + 1e-3


def test_checkpoint_roundtrip(tmp_path):
    params = nn.init_mlp([2, 5, 1], np.random.default_rng(0), spectral_norm=True, sn_iters=3)
    path = tmp_path / "model.json"
    nn.save_checkpoint(params, path)
    loaded = nn.load_checkpoint(path)
    assert loaded.sn_iters == 3 and loaded.spectral_norm
    for a, b in zip(params.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a.value, b.value)
    np.testing.assert_array_equal(params.layers[1].v, loaded.layers[1].v)
    x = Node(np.ones((1, 2)))
    np.testing.assert_array_equal(nn.mlp_forward(params, x).value, nn.mlp_forward(loaded, x).value)


def test_checkpoint_rejects_other_version(tmp_path):
    d = nn.to_dict(nn.init_mlp([2, 1], np.random.default_rng(0)))
    d["version"] = 99
    with pytest.raises(ValueError, match="version"):
        nn.from_dict(d)
