import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scorecd import nn


def away_from_kinks(p, x, margin=1e-3):
    _, cache = nn.forward(p, x)
    return all(np.all(np.abs(pre) > margin) for pre in cache.preacts)


def random_points(p, rng, count):
    pts = []
    while len(pts) < count:
        x = rng.standard_normal(p.dims[0])
        if away_from_kinks(p, x):
            pts.append(x)
    return pts


@pytest.fixture
def net():
    return nn.init(5, 64, 3, np.random.default_rng(0))


def test_init_shapes(net):
    assert [W.shape for W in net.weights] == [(64, 5), (64, 64), (5, 64)]
    assert net.dims == (5, 64, 3)


def test_init_hidden_variance():
    p = nn.init(5, 4096, 2, np.random.default_rng(1))
    assert abs(p.weights[0].var() / (2 / 4096) - 1) < 0.05


def test_init_output_variance():
    p = nn.init(100, 256, 2, np.random.default_rng(2))
    assert abs(p.weights[-1].var() / (1 / 100) - 1) < 0.05


@pytest.mark.parametrize("dims", [(0, 4, 2), (3, 0, 2), (3, 4, 1)])
def test_init_rejects_invalid_dims(dims):
    with pytest.raises(ValueError):
        nn.init(*dims, rng=0)


def test_zero_maps_to_zero(net):
    y, _ = nn.forward(net, np.zeros(5))
    assert np.all(y == 0)


@settings(max_examples=50, deadline=None)
@given(alpha=st.floats(1e-3, 1e3), seed=st.integers(0, 2**16))
def test_positive_homogeneity(alpha, seed):
    p = nn.init(5, 16, 3, np.random.default_rng(seed))
    x = np.random.default_rng(seed + 1).standard_normal(5)
    y1 = nn.forward(p, alpha * x)[0]
    y2 = alpha * nn.forward(p, x)[0]
    np.testing.assert_allclose(y1, y2, rtol=1e-9, atol=1e-12 * alpha)


def test_two_layer_hand_value():
    W1 = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, -1.0]])
    W2 = np.array([[2.0, -1.0, 0.5], [0.0, 3.0, 1.0]])
    p = nn.MlpParams([W1, W2])
    x = np.array([0.5, -2.0])
    # hidden: relu([0.5, -2.0, 2.5]) = [0.5, 0, 2.5]
    y, cache = nn.forward(p, x)
    np.testing.assert_allclose(y, [2 * 0.5 + 0.5 * 2.5, 2.5])
    np.testing.assert_array_equal(cache.masks[0][0], [True, False, True])


def test_jacobian_all_active_region():
    rng = np.random.default_rng(3)
    Ws = [np.abs(rng.standard_normal((8, 4))), np.abs(rng.standard_normal((8, 8))), rng.standard_normal((4, 8))]
    p = nn.MlpParams(Ws)
    x = np.abs(rng.standard_normal(4)) + 0.1
    _, cache = nn.forward(p, x)
    assert all(m.all() for m in cache.masks)
    J = nn.input_jacobian(p, cache)
    np.testing.assert_allclose(J, Ws[2] @ Ws[1] @ Ws[0], rtol=1e-13)
    np.testing.assert_allclose(nn.jacobian_diag(p, cache), np.diag(Ws[2] @ Ws[1] @ Ws[0]), rtol=1e-13)


def test_jacobian_matches_finite_differences(net):
    rng = np.random.default_rng(4)
    h = 1e-6
    for x in random_points(net, rng, 100):
        _, cache = nn.forward(net, x)
        J = nn.input_jacobian(net, cache)
        fd = np.column_stack([
            (nn.forward(net, x + h * e)[0] - nn.forward(net, x - h * e)[0]) / (2 * h) for e in np.eye(5)
        ])
        np.testing.assert_allclose(fd, J, rtol=1e-4, atol=1e-4 * np.abs(J).max())


def test_jacobian_diag_agrees_with_full_jacobian(net):
    X = np.random.default_rng(5).standard_normal((30, 5))
    _, cache = nn.forward(net, X)
    J = nn.input_jacobian(net, cache)
    np.testing.assert_allclose(nn.jacobian_diag(net, cache), np.diagonal(J, axis1=1, axis2=2), rtol=1e-12, atol=1e-14)


def test_jacobian_exact_within_linear_region(net):
    rng = np.random.default_rng(6)
    x = random_points(net, rng, 1)[0]
    y, cache = nn.forward(net, x)
    J = nn.input_jacobian(net, cache)
    delta = 1e-5 * rng.standard_normal(5)
    y2, cache2 = nn.forward(net, x + delta)
    assert all(np.array_equal(a, b) for a, b in zip(cache.masks, cache2.masks))
    np.testing.assert_allclose(y2 - y, J @ delta, rtol=0, atol=1e-12)


def test_sign_masks_match_preactivations(net):
    X = np.random.default_rng(7).standard_normal((20, 5))
    _, cache = nn.forward(net, X)
    for pre, mask in zip(cache.preacts, cache.masks):
        np.testing.assert_array_equal(pre >= 0, mask)


def test_backward_zero_cotangent(net):
    _, cache = nn.forward(net, np.ones(5))
    assert all(np.all(g == 0) for g in nn.backward(net, cache, np.zeros(5)))


def test_backward_directional_derivatives(net):
    rng = np.random.default_rng(8)
    x = random_points(net, rng, 1)[0]
    gy = rng.standard_normal(5)
    _, cache = nn.forward(net, x)
    grads = nn.backward(net, cache, gy)

    def loss(p):
        return float(gy @ nn.forward(p, x)[0])

    h = 1e-6
    for _ in range(20):
        v = [rng.standard_normal(W.shape) for W in net.weights]
        plus = nn.MlpParams([W + h * dv for W, dv in zip(net.weights, v)])
        minus = nn.MlpParams([W - h * dv for W, dv in zip(net.weights, v)])
        fd = (loss(plus) - loss(minus)) / (2 * h)
        exact = sum(float(np.sum(g * dv)) for g, dv in zip(grads, v))
        assert fd == pytest.approx(exact, rel=1e-5)


def test_backward_two_layer_closed_form():
    rng = np.random.default_rng(9)
    W1, w2 = rng.standard_normal((6, 3)), rng.standard_normal((1, 6))
    p = nn.MlpParams([W1, w2])
    x = rng.standard_normal(3)
    _, cache = nn.forward(p, x)
    g1, g2 = nn.backward(p, cache, np.array([1.0]))
    pre = W1 @ x
    np.testing.assert_allclose(g2, np.maximum(pre, 0)[None], rtol=1e-14)
    np.testing.assert_allclose(g1, np.outer(w2[0] * (pre >= 0), x), rtol=1e-14)


def test_input_gradient_rows_match_jacobian(net):
    X = np.random.default_rng(10).standard_normal((10, 5))
    _, cache = nn.forward(net, X)
    J = nn.input_jacobian(net, cache)
    for j in range(5):
        e = np.zeros((10, 5))
        e[:, j] = 1.0
        np.testing.assert_allclose(nn.input_grad(net, cache, e), J[:, j, :], rtol=1e-12, atol=1e-14)


def test_batch_matches_single(net):
    X = np.random.default_rng(11).standard_normal((4, 5))
    Y, cache = nn.forward(net, X)
    for x, y in zip(X, Y):
        np.testing.assert_allclose(nn.forward(net, x)[0], y, rtol=1e-13)
    gb = nn.backward(net, cache, np.ones((4, 5)))
    gs = [sum(parts) for parts in zip(*(nn.backward(net, nn.forward(net, x)[1], np.ones(5)) for x in X))]
    for a, b in zip(gb, gs):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_checkpoint_round_trip(net, tmp_path):
    net.save(tmp_path / "w.json")
    back = nn.MlpParams.load(tmp_path / "w.json")
    for a, b in zip(net.weights, back.weights):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_rejects_bad_shapes(net):
    doc = net.to_dict()
    doc["dims"][1] = 32
    with pytest.raises(ValueError):
        nn.MlpParams.from_dict(doc)
    doc = net.to_dict()
    doc["version"] = 99
    with pytest.raises(ValueError):
        nn.MlpParams.from_dict(doc)
