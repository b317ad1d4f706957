import numpy as np
import pytest

from dmglearn import nnet
from dmglearn.nnet import (
    MaskedMlp,
    backward,
    forward,
    grad_trace_form,
    input_jacobian,
    masked_mlp,
    spectral_normalize,
    vjp,
    vjp_input,
)


def full_mask(d):
    return np.ones((d, d)) - np.eye(d)


def rand_net(d=4, hidden=(6,), activation="tanh", mode="adjacency", seed=0,
             with_biases=True):
    rng = np.random.default_rng(seed)
    net = masked_mlp(d, hidden, activation, mode, rng=rng)
    if with_biases:
        for b in net.biases:
            b[:] = rng.standard_normal(b.shape) * 0.1
    return net


def test_forward_zero_weights_gives_bias_image():
    d = 3
    net = MaskedMlp([np.zeros((d, 1, d))], [np.zeros((d, 1))], "identity",
                    "adjacency")
    y = forward(net, full_mask(d), np.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(y, np.zeros(d))
    net.biases[0][:, 0] = [1.0, 2.0, 3.0]
    np.testing.assert_array_equal(
        forward(net, full_mask(d), np.ones(d)), [1.0, 2.0, 3.0])


def test_forward_single_linear_layer_matches_masked_matvec():
    d = 4
    rng = np.random.default_rng(1)
    w = rng.standard_normal((d, 1, d))
    net = MaskedMlp([w], [np.zeros((d, 1))], "identity", "adjacency")
    mask = (rng.random((d, d)) < 0.6).astype(float)
    np.fill_diagonal(mask, 0)
    x = rng.standard_normal(d)
    y = forward(net, mask, x)
    expected = [w[i, 0] @ (mask[:, i] * x) for i in range(d)]
    np.testing.assert_allclose(y, expected)


def test_masked_out_inputs_are_ignored_bit_identical():
    net = rand_net(d=5, seed=2)
    mask = full_mask(5)
    mask[3, 1] = 0.0  # input 3 masked for coordinate 1
    rng = np.random.default_rng(3)
    x = rng.standard_normal(5)
    x2 = x.copy()
    x2[3] += 100.0
    y1 = forward(net, mask, x)
    y2 = forward(net, mask, x2)
    assert y1[1] == y2[1]       # coordinate 1 no longer sees input 3
    assert y1[0] != y2[0]       # coordinate 0 still does


def test_identity_mode_coordinates_depend_only_on_own_input():
    net = rand_net(d=4, mode="identity", seed=4)
    x = np.array([0.5, -1.0, 2.0, 0.1])
    y1 = forward(net, np.eye(4), x)
    x2 = x.copy()
    x2[2] = -5.0
    y2 = forward(net, np.eye(4), x2)
    assert np.all(y1[[0, 1, 3]] == y2[[0, 1, 3]])
    assert y1[2] != y2[2]


def test_forward_shape_mismatch_raises():
    net = rand_net(d=3, seed=5)
    with pytest.raises(ValueError):
        forward(net, full_mask(3), np.zeros(4))
    with pytest.raises(ValueError):
        forward(net, np.ones((2, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        forward(net, np.ones((3, 3)), np.zeros(3))  # nonzero mask diagonal


def test_backward_zero_upstream_gives_zero_gradients():
    net = rand_net(seed=6)
    x = np.random.default_rng(7).standard_normal(4)
    params, dx = backward(net, full_mask(4), x, np.zeros(4))
    assert np.all(dx == 0)
    for dw, db in params:
        assert np.all(dw == 0) and np.all(db == 0)


def test_backward_linear_layer_closed_form():
    d = 3
    rng = np.random.default_rng(8)
    w = rng.standard_normal((d, 1, d))
    net = MaskedMlp([w], [np.zeros((d, 1))], "identity", "adjacency")
    mask = full_mask(d)
    x = rng.standard_normal(d)
    up = rng.standard_normal(d)
    _, dx = backward(net, mask, x, up)
    expected = np.zeros(d)
    for i in range(d):
        expected += up[i] * w[i, 0] * mask[:, i]
    np.testing.assert_allclose(dx, expected)


@pytest.mark.parametrize("activation", ["identity", "tanh"])
@pytest.mark.parametrize("mode", ["adjacency", "identity"])
def test_backward_matches_finite_differences(activation, mode):
    d = 4
    net = rand_net(d=d, hidden=(5,), activation=activation, mode=mode, seed=9)
    rng = np.random.default_rng(10)
    mask = np.eye(d) if mode == "identity" else (rng.random((d, d)) < 0.7).astype(float)
    if mode == "adjacency":
        np.fill_diagonal(mask, 0)
    x = rng.standard_normal((2, d))
    up = rng.standard_normal((2, d))
    res = vjp(net, mask, x, up)

    def value():
        return float(np.sum(up * forward(net, mask, x)))

    h = 1e-5
    for l in range(net.n_layers):
        for arr, grad in ((net.weights[l], res.weights[l]),
                          (net.biases[l], res.biases[l])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                fp = value()
                arr[idx] = old - h
                fm = value()
                arr[idx] = old
                fd = (fp - fm) / (2 * h)
                assert abs(fd - grad[idx]) < 1e-5 * max(1.0, abs(fd))
    # input gradient
    for n in range(2):
        for j in range(d):
            old = x[n, j]
            x[n, j] = old + h
            fp = value()
            x[n, j] = old - h
            fm = value()
            x[n, j] = old
            assert abs((fp - fm) / (2 * h) - res.x[n, j]) < 1e-6


def test_masking_property_via_analytic_jacobian():
    net = rand_net(d=5, seed=11)
    rng = np.random.default_rng(12)
    mask = (rng.random((5, 5)) < 0.5).astype(float)
    np.fill_diagonal(mask, 0)
    x = rng.standard_normal((3, 5))
    jac = input_jacobian(net, mask, x)
    for i in range(5):
        for j in range(5):
            if mask[j, i] == 0:
                assert np.all(jac[:, i, j] == 0.0)


def test_input_jacobian_matches_vjp_rows():
    net = rand_net(d=4, seed=13)
    rng = np.random.default_rng(14)
    mask = full_mask(4)
    x = rng.standard_normal((2, 4))
    jac = input_jacobian(net, mask, x)
    for i in range(4):
        up = np.zeros((2, 4))
        up[:, i] = 1.0
        np.testing.assert_allclose(vjp_input(net, mask, x, up), jac[:, i, :])


def test_grad_trace_form_matches_finite_differences():
    d = 4
    net = rand_net(d=d, hidden=(5,), activation="tanh", seed=15)
    rng = np.random.default_rng(16)
    mask = (rng.random((d, d)) < 0.7).astype(float)
    np.fill_diagonal(mask, 0)
    x = rng.standard_normal((2, d))
    coeff = rng.standard_normal((2, d, d))
    res = grad_trace_form(net, mask, x, coeff)

    def value():
        return float(np.sum(coeff * input_jacobian(net, mask, x)))

    h = 1e-6
    for l in range(net.n_layers):
        for arr, grad in ((net.weights[l], res.weights[l]),
                          (net.biases[l], res.biases[l])):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                old = arr[idx]
                arr[idx] = old + h
                fp = value()
                arr[idx] = old - h
                fm = value()
                arr[idx] = old
                fd = (fp - fm) / (2 * h)
                assert abs(fd - grad[idx]) < 2e-4 * max(1.0, abs(fd))
    for j in range(d):
        for i in range(d):
            if i == j:
                continue
            old = mask[j, i]
            mask[j, i] = old + h
            fp = value()
            mask[j, i] = old - h
            fm = value()
            mask[j, i] = old
            assert abs((fp - fm) / (2 * h) - res.mask[j, i]) < 1e-4


def test_spectral_normalize_diagonal_layer():
    # hidden 2x2 block diag(3, 1) with a single-coordinate net, cap 0.9
    w0 = np.ones((1, 2, 2))
    w1 = np.array([[[3.0, 0.0], [0.0, 1.0]]])
    w2 = np.ones((1, 1, 2))
    net = MaskedMlp([w0, w1, w2], [np.zeros((1, 2)), np.zeros((1, 2)),
                                   np.zeros((1, 1))],
                    "identity", "adjacency", lipschitz_cap=0.9 ** 3)
    spectral_normalize(net)
    np.testing.assert_allclose(net.weights[1][0], np.diag([0.9, 0.3]), rtol=1e-5)


def test_spectral_normalize_leaves_contractive_weights_alone():
    d = 3
    w = np.full((d, 1, d), 0.1)
    net = MaskedMlp([w.copy()], [np.zeros((d, 1))], "identity", "adjacency",
                    lipschitz_cap=0.9)
    spectral_normalize(net)
    np.testing.assert_array_equal(net.weights[0], w)


@pytest.mark.parametrize("mode", ["adjacency", "identity"])
def test_global_lipschitz_cap_monte_carlo(mode):
    d = 6
    rng = np.random.default_rng(17)
    net = masked_mlp(d, (8, 8), "tanh", mode, rng=rng)
    for w in net.weights:
        w *= 3.0  # break the cap, then restore it
    spectral_normalize(net, rng)
    mask = np.eye(d) if mode == "identity" else full_mask(d)
    x = rng.standard_normal((1000, d))
    y = rng.standard_normal((1000, d))
    fx = forward(net, mask, x)
    fy = forward(net, mask, y)
    num = np.linalg.norm(fx - fy, axis=1)
    den = np.linalg.norm(x - y, axis=1)
    assert np.all(num <= net.lipschitz_cap * den + 1e-9)


def test_lipschitz_cap_holds_under_random_submasks():
    d = 5
    rng = np.random.default_rng(18)
    net = masked_mlp(d, (8,), "tanh", "adjacency", rng=rng)
    for _ in range(20):
        mask = (rng.random((d, d)) < 0.5).astype(float)
        np.fill_diagonal(mask, 0)
        x = rng.standard_normal((200, d))
        y = rng.standard_normal((200, d))
        num = np.linalg.norm(forward(net, mask, x) - forward(net, mask, y), axis=1)
        den = np.linalg.norm(x - y, axis=1)
        # sub-masks may exceed the full-support operator norm only slightly
        assert np.all(num <= 1.02 * net.lipschitz_cap * den + 1e-9)


def test_shared_weights_mode():
    d = 4
    rng = np.random.default_rng(19)
    net = masked_mlp(d, (6,), "tanh", "adjacency", shared=True, rng=rng)
    assert all(w.shape[0] == 1 for w in net.weights)
    x = rng.standard_normal((3, d))
    y = forward(net, full_mask(d), x)
    assert y.shape == (3, d)
    res = vjp(net, full_mask(d), x, np.ones((3, d)))
    assert res.weights[0].shape == net.weights[0].shape


def test_param_dict_round_trip():
    net = rand_net(seed=20)
    params = net.param_dict("gx")
    net2 = rand_net(seed=21)
    net2.set_params({k: v.copy() for k, v in params.items()}, "gx")
    x = np.random.default_rng(22).standard_normal(4)
    np.testing.assert_array_equal(
        forward(net, full_mask(4), x), forward(net2, full_mask(4), x))
