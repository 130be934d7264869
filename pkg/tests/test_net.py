import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, rel_error
from slm import net
from slm.errors import InvalidInputError


def test_zero_model_gives_uniform_probs():
    m = net.Predictor.init(4, 3, hidden=5, rng=np.random.default_rng(0))
    for w, b in zip(m.weights, m.biases):
        w[:] = 0
        b[:] = 0
    probs, _ = net.forward(m, np.random.default_rng(1).standard_normal((6, 4)))
    np.testing.assert_allclose(probs, 1 / 3)


def test_zero_regression_model_outputs_zero():
    m = net.Predictor.init(3, 1, output="linear", rng=np.random.default_rng(0))
    for w, b in zip(m.weights, m.biases):
        w[:] = 0
        b[:] = 0
    out, _ = net.forward(m, np.ones((2, 3)))
    np.testing.assert_array_equal(out, [0.0, 0.0])


def test_single_layer_hand_computation():
    m = net.Predictor([np.array([[1.0, 0.0], [0.0, 2.0]])], [np.array([0.0, -1.0])])
    probs, _ = net.forward(m, np.array([[1.0, 1.0]]))
    # logits (1, 1): equal
    np.testing.assert_allclose(probs, [[0.5, 0.5]])
    probs, _ = net.forward(m, np.array([[0.0, 1.0]]))
    e = np.exp([0.0, 1.0])
    np.testing.assert_allclose(probs, [e / e.sum()])


def test_init_bounds_and_determinism():
    a = net.Predictor.init(16, 2, hidden=9, layers=2, rng=np.random.default_rng(5))
    b = net.Predictor.init(16, 2, hidden=9, layers=2, rng=np.random.default_rng(5))
    for wa, wb in zip(a.params(), b.params()):
        np.testing.assert_array_equal(wa, wb)
    assert np.abs(a.weights[0]).max() <= 1 / 4
    assert [w.shape for w in a.weights] == [(16, 9), (9, 9), (9, 2)]


def test_forward_shape_check():
    m = net.Predictor.init(3, 2, rng=np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        net.forward(m, np.ones((2, 4)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_softmax_rows(b, c, seed):
    z = np.random.default_rng(seed).standard_normal((b, c)) * 30
    p = net.softmax(z)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("output,layers", [("softmax", 1), ("softmax", 2), ("linear", 1)])
def test_backward_matches_finite_differences(output, layers):
    rng = np.random.default_rng(7)
    m = net.Predictor.init(4, 3 if output == "softmax" else 1, hidden=6, layers=layers, output=output, rng=rng)
    x = rng.standard_normal((5, 4))
    y = rng.integers(0, 3, 5) if output == "softmax" else rng.standard_normal(5)

    def loss():
        out, _ = net.forward(m, x)
        if output == "softmax":
            return net.cross_entropy(out, y)
        return 0.5 * np.mean((out - y) ** 2)

    out, cache = net.forward(m, x)
    g_out = net.cross_entropy_grad_logits(out, y) if output == "softmax" else (out - y) / len(y)
    grads = net.backward(m, cache, g_out)
    for p, g in zip(m.params(), grads.params()):
        assert rel_error(g, central_diff(loss, p)) < 1e-4
    assert rel_error(grads.inputs, central_diff(loss, x)) < 1e-4


def test_zero_upstream_gives_zero_grads():
    m = net.Predictor.init(3, 2, rng=np.random.default_rng(0))
    _, cache = net.forward(m, np.ones((2, 3)))
    g = net.backward(m, cache, np.zeros((2, 2)))
    assert all(np.all(a == 0) for a in g.params())


def test_single_sample_softmax_ce_identity():
    rng = np.random.default_rng(2)
    w = rng.standard_normal((3, 2))
    m = net.Predictor([w], [np.zeros(2)])
    x = rng.standard_normal((1, 3))
    probs, cache = net.forward(m, x)
    g = net.backward(m, cache, net.cross_entropy_grad_logits(probs, np.array([1])))
    np.testing.assert_allclose(g.weights[0], np.outer(x[0], probs[0] - [0.0, 1.0]))


def test_softmax_backward_matches_fused_gradient():
    rng = np.random.default_rng(4)
    p = net.softmax(rng.standard_normal((3, 4)))
    y = np.array([0, 3, 1])
    grad_p = np.zeros_like(p)
    grad_p[np.arange(3), y] = -1.0 / (3 * p[np.arange(3), y])
    np.testing.assert_allclose(net.softmax_backward(p, grad_p), net.cross_entropy_grad_logits(p, y))


# --- Adam --------------------------------------------------------------------


def test_adam_zero_gradient_keeps_parameters():
    p = [np.array([1.0, -2.0])]
    net.Adam(lr=0.1).update(p, [np.zeros(2)])
    np.testing.assert_array_equal(p[0], [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    p = [np.zeros(3)]
    net.Adam(lr=0.01).update(p, [np.array([5.0, -0.2, 1e-3])])
    np.testing.assert_allclose(np.abs(p[0]), 0.01, rtol=1e-4)


def test_adam_learning_rate_decay():
    opt = net.Adam(lr=0.2, decay_steps=100, decay_rate=0.5)
    assert opt.learning_rate(0) == 0.2
    assert opt.learning_rate(100) == pytest.approx(0.1)
    assert opt.learning_rate(50) == pytest.approx(0.2 * 0.5**0.5)


def test_adam_rejects_changed_parameter_list():
    opt = net.Adam()
    opt.update([np.zeros(2)], [np.ones(2)])
    with pytest.raises(InvalidInputError):
        opt.update([np.zeros(2), np.zeros(1)], [np.ones(2), np.ones(1)])


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = net.Predictor.init(5, 2, hidden=4, layers=2, rng=rng)
    opt = net.Adam(lr=0.01)
    opt.update(m.params(), [rng.standard_normal(p.shape) for p in m.params()])
    path = tmp_path / "model.npz"
    net.save_checkpoint(path, m, opt, extra={"mask": np.array([0.5, 0.5, 0, 0, 0])})
    m2, opt2, extra = net.load_checkpoint(path)
    for a, b in zip(m.params(), m2.params()):
        np.testing.assert_array_equal(a, b)
    assert opt2.step == 1 and opt2.lr == 0.01
    for a, b in zip(opt.m + opt.v, opt2.m + opt2.v):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(extra["mask"], [0.5, 0.5, 0, 0, 0])
    x = rng.standard_normal((3, 5))
    np.testing.assert_array_equal(net.forward(m, x)[0], net.forward(m2, x)[0])


def test_checkpoint_version_check(tmp_path):
    import json

    path = tmp_path / "bad.npz"
    np.savez(path, meta=np.array(json.dumps({"format_version": 99, "dims": [1, 1], "output": "linear"})))
    with pytest.raises(InvalidInputError):
        net.load_checkpoint(path)
