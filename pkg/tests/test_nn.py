import numpy as np
import pytest

from rbfpde.errors import NumericalError, ValidationError
from rbfpde.nn import (
    SIGMA_FLOOR,
    AdamState,
    MlpParams,
    adam_step,
    init_mlp,
    mlp_backward,
    mlp_forward,
    zero_mlp,
)


def test_zero_network_outputs_zero():
    out, _ = mlp_forward(zero_mlp([3, 5, 2]), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_identity_layer():
    net = MlpParams([np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -1.0, 2.0])
    np.testing.assert_array_equal(mlp_forward(net, x)[0], x)


def test_relu_kills_negative_hidden_units():
    net = MlpParams([np.array([[1.0], [-1.0]]), np.array([[1.0, 1.0]])], [np.zeros(2), np.zeros(1)])
    assert mlp_forward(net, np.array([3.0]))[0][0] == 3.0
    assert mlp_forward(net, np.array([-2.0]))[0][0] == 2.0


def test_batch_and_single_agree():
    net = init_mlp([4, 6, 3], np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 4))
    batch = mlp_forward(net, x)[0]
    for row, out in zip(x, batch):
        np.testing.assert_allclose(mlp_forward(net, row)[0], out, rtol=1e-14)


def test_input_width_checked():
    with pytest.raises(ValidationError):
        mlp_forward(zero_mlp([3, 2]), np.ones(4))
    with pytest.raises(ValidationError):
        mlp_forward(zero_mlp([2, 2]), np.array([np.nan, 1.0]))


def _loss(net, x, up):
    return float(np.sum(up * mlp_forward(net, x)[0]))


def test_gradients_match_finite_differences_20_networks():
    h = 1e-6
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = init_mlp([5, 8, 4, 3], rng)
        net = MlpParams(net.weights, [rng.normal(scale=0.1, size=b.shape) for b in net.biases])
        x = rng.normal(size=(4, 5))
        up = rng.normal(size=(4, 3))
        _, cache = mlp_forward(net, x)
        dw, db, dx = mlp_backward(net, cache, up)
        analytic = [g for pair in zip(dw, db) for g in pair]
        arrays = net.arrays()
        for k, a in enumerate(arrays):
            idx = tuple(rng.integers(0, s) for s in a.shape)
            plus = [b.copy() for b in arrays]
            minus = [b.copy() for b in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            fd = (_loss(MlpParams.from_arrays(plus), x, up) - _loss(MlpParams.from_arrays(minus), x, up)) / (2 * h)
            assert analytic[k][idx] == pytest.approx(fd, rel=1e-5, abs=1e-8)
        i, j = rng.integers(0, 4), rng.integers(0, 5)
        xp, xm = x.copy(), x.copy()
        xp[i, j] += h
        xm[i, j] -= h
        fd = (_loss(net, xp, up) - _loss(net, xm, up)) / (2 * h)
        assert dx[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-8)


def test_linear_network_input_gradient():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(3, 4))
    net = MlpParams([w], [rng.normal(size=3)])
    up = rng.normal(size=3)
    _, cache = mlp_forward(net, rng.normal(size=4))
    np.testing.assert_allclose(mlp_backward(net, cache, up)[2], w.T @ up, rtol=1e-14)


def test_positive_homogeneity_without_biases():
    rng = np.random.default_rng(4)
    net = init_mlp([3, 7, 2], rng)
    x = rng.normal(size=3)
    np.testing.assert_allclose(mlp_forward(net, 2.5 * x)[0], 2.5 * mlp_forward(net, x)[0], rtol=1e-13)


def test_adam_first_step_is_lr_times_sign():
    p = [np.array([1.0, -2.0, 0.5])]
    g = [np.array([0.3, -4.0, 1e-3])]
    new, state = adam_step(AdamState.for_params(p, lr=1e-3), p, g)
    np.testing.assert_allclose(new[0], p[0] - 1e-3 * np.sign(g[0]), rtol=1e-6)
    assert state.t == 1


def test_adam_zero_gradient_leaves_parameters():
    p = [np.array([1.0, 2.0])]
    new, _ = adam_step(AdamState.for_params(p), p, [np.zeros(2)])
    np.testing.assert_array_equal(new[0], p[0])


def test_adam_decreases_quadratic():
    p = [np.array([3.0])]
    state = AdamState.for_params(p, lr=0.1)
    values = [p[0][0] ** 2]
    for _ in range(2):
        p, state = adam_step(state, p, [2 * p[0]])
        values.append(p[0][0] ** 2)
    assert values[0] > values[1] > values[2]


def test_adam_does_not_mutate_inputs():
    p = [np.array([1.0])]
    state = AdamState.for_params(p)
    adam_step(state, p, [np.array([1.0])])
    assert p[0][0] == 1.0 and state.t == 0 and state.m[0][0] == 0.0


def test_sigma_clamped_to_floor():
    p = [np.array([1.0]), np.array([1e-4 + 1e-7])]
    new, _ = adam_step(AdamState.for_params(p, lr=1.0), p, [np.zeros(1), np.array([1.0])], sigma_index=1)
    assert new[1][0] == SIGMA_FLOOR


def test_adam_rejects_bad_gradients():
    p = [np.ones(2)]
    with pytest.raises(NumericalError):
        adam_step(AdamState.for_params(p), p, [np.array([np.inf, 0.0])])
    with pytest.raises(ValidationError):
        adam_step(AdamState.for_params(p), p, [np.ones(3)])


def test_params_dict_round_trip_and_errors():
    net = init_mlp([2, 3, 1], np.random.default_rng(0))
    back = MlpParams.from_dict(net.to_dict())
    for a, b in zip(net.arrays(), back.arrays()):
        np.testing.assert_array_equal(a, b)
    bad = net.to_dict()
    bad["layer_sizes"] = [2, 4, 1]
    with pytest.raises(ValidationError):
        MlpParams.from_dict(bad)
    with pytest.raises(ValidationError):
        MlpParams.from_dict({"weights": []})
    with pytest.raises(ValidationError):
        MlpParams([np.zeros((3, 2)), np.zeros((1, 4))], [np.zeros(3), np.zeros(1)])
