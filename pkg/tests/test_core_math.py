import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bliss.core_math import (DenseNet, DimensionError, ModelFormatError, check_gradient,
                             child_rng, init_net, load_net, make_rng, net_backward,
                             net_forward, net_from_dict, net_to_dict, param_count, save_net,
                             zero_net)


def fd_param_grad(net, x, g, step=1e-5):
    """Reference central differences, written independently of the library."""
    out = np.zeros(net.weights.size)
    for j in range(net.weights.size):
        wp, wm = net.weights.copy(), net.weights.copy()
        wp[j] += step
        wm[j] -= step
        fp = net_forward(DenseNet(net.layer_sizes, wp), x) @ g
        fm = net_forward(DenseNet(net.layer_sizes, wm), x) @ g
        out[j] = (fp - fm) / (2 * step)
    return out


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b))))


def test_param_count_layout():
    net = zero_net((3, 5, 2))
    assert net.weights.size == param_count((3, 5, 2)) == 4 * 5 + 6 * 2
    with pytest.raises(ValueError):
        DenseNet((3,), np.zeros(0))
    with pytest.raises(ValueError):
        DenseNet((3, 2), np.zeros(5))


def test_forward_identity_single_layer():
    # W = I (row-major), b = 0
    net = DenseNet((2, 2), np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
    np.testing.assert_array_equal(net_forward(net, [1.0, 2.0]), [1.0, 2.0])


def test_forward_zero_weights():
    net = zero_net((3, 4, 4, 2))
    np.testing.assert_array_equal(net_forward(net, [5.0, -1.0, 2.0]), [0.0, 0.0])


def test_forward_hidden_preactivation_zero_gives_output_bias():
    # 2-1-1: hidden pre-activation w.x + b = 1*1 + 1*(-1) + 0 = 0
    w = np.array([1.0, 1.0, 0.0,   # hidden W, b
                  3.0, 0.7])       # output W, b
    net = DenseNet((2, 1, 1), w)
    assert net_forward(net, [1.0, -1.0])[0] == pytest.approx(0.7, abs=0)


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionError):
        net_forward(zero_net((3, 2)), [1.0, 2.0])


def test_forward_is_pure(rng):
    net = init_net((4, 6, 3), rng)
    x = rng.standard_normal(4)
    a = net_forward(net, x)
    b = net_forward(net, x)
    assert a.tobytes() == b.tobytes()


def test_forward_batch_matches_rows(rng):
    net = init_net((3, 5, 2), rng)
    X = rng.standard_normal((7, 3))
    np.testing.assert_allclose(net_forward(net, X), np.stack([net_forward(net, x) for x in X]))


def test_backward_linear_layer_weight_grad_is_input():
    net = DenseNet((3, 2), np.arange(8, dtype=float))
    x = np.array([0.5, -2.0, 3.0])
    grad, _ = net_backward(net, x, np.array([1.0, 0.0]))
    # row 0 of W holds the weights into output 1
    np.testing.assert_array_equal(grad[:3], x)
    np.testing.assert_array_equal(grad[3:6], 0.0)
    np.testing.assert_array_equal(grad[6:], [1.0, 0.0])


def test_backward_zero_output_grad(rng):
    net = init_net((3, 4, 2), rng)
    pg, ig = net_backward(net, rng.standard_normal(3), np.zeros(2))
    assert not pg.any() and not ig.any()


def test_backward_random_352_matches_finite_differences(rng):
    net = init_net((3, 5, 2), rng)
    x = rng.standard_normal(3)
    g = rng.standard_normal(2)
    pg, _ = net_backward(net, x, g)
    assert rel_err(pg, fd_param_grad(net, x, g)) < 1e-4


def test_backward_batch_sums_param_grads(rng):
    net = init_net((3, 4, 2), rng)
    X = rng.standard_normal((5, 3))
    G = rng.standard_normal((5, 2))
    pg, ig = net_backward(net, X, G)
    rows = [net_backward(net, X[i], G[i]) for i in range(5)]
    np.testing.assert_allclose(pg, sum(r[0] for r in rows))
    np.testing.assert_allclose(ig, np.stack([r[1] for r in rows]))


def test_backward_dimension_mismatch():
    with pytest.raises(DimensionError):
        net_backward(zero_net((3, 2)), [1.0, 2.0, 3.0], [1.0])


def test_check_gradient_correct_and_zero_nets(rng):
    assert check_gradient(init_net((4, 3, 2), rng), rng.standard_normal(4), 1e-3)
    assert check_gradient(zero_net((4, 3, 2)), rng.standard_normal(4), 1e-3)


def test_check_gradient_detects_injected_fault(rng):
    net = init_net((3, 5, 2), rng)
    x = rng.standard_normal(3)

    def faulty(n, inp, g):
        pg, ig = net_backward(n, inp, g)
        pg = pg.copy()
        pg[4] += 0.1
        return pg, ig

    assert not check_gradient(net, x, 1e-3, backward=faulty)


def test_check_gradient_rejects_bad_tolerance(rng):
    with pytest.raises(ValueError):
        check_gradient(zero_net((2, 1)), [0.0, 0.0], 0.0)


@settings(max_examples=100, deadline=None)
@given(sizes=st.lists(st.integers(1, 8), min_size=2, max_size=5),
       seed=st.integers(0, 2**32))
def test_gradient_property_random_nets(sizes, seed):
    r = make_rng(seed)
    net = init_net(sizes, r)
    assert check_gradient(net, r.uniform(-2, 2, size=sizes[0]), 1e-3)


def test_rng_streams():
    a = make_rng(99).random(16)
    b = make_rng(99).random(16)
    assert a.tobytes() == b.tobytes()
    c0 = child_rng(99, 0).random(16)
    c1 = child_rng(99, 1).random(16)
    assert not np.array_equal(c0, c1)
    assert child_rng(99, 1).random(16).tobytes() == c1.tobytes()
    with pytest.raises(ValueError):
        make_rng(-1)


def test_init_within_fan_in_bounds(rng):
    net = init_net((4, 9, 1), rng)
    (W0, b0), (W1, b1) = net.layers()
    assert np.all(np.abs(W0) <= 0.5) and np.all(np.abs(b0) <= 0.5)
    assert np.all(np.abs(W1) <= 1 / 3) and np.all(np.abs(b1) <= 1 / 3)


def test_model_json_round_trip_bit_faithful(tmp_path, rng):
    net = init_net((3, 7, 2), rng)
    net.weights[0] = 1e-300
    net.weights[1] = -0.1 + 0.2
    path = tmp_path / "m.json"
    save_net(net, path)
    back = load_net(path)
    assert back.layer_sizes == net.layer_sizes
    assert back.weights.tobytes() == net.weights.tobytes()
    d = json.loads(path.read_text())
    assert d["format_version"] == 1 and d["hidden_activation"] == "tanh"


def test_model_bad_version():
    d = net_to_dict(zero_net((2, 1)))
    d["format_version"] = 7
    with pytest.raises(ModelFormatError):
        net_from_dict(d)
