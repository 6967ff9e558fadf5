"""Gradient and contract tests for the autodiff core.

Central finite differences (step 1e-5) are the oracle for every analytic
gradient; tolerance 1e-4 relative except where a tighter bound is stated.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clst import tensor as T


def _away_from_zero(x, margin=0.05):
    """Shift samples off the relu kink so finite differences stay valid."""
    return x + np.sign(x) * margin + (x == 0) * margin


def test_softmax_uniform_logits():
    p = T.softmax(T.Tensor([0.0, 0.0, 0.0, 0.0]))
    np.testing.assert_allclose(p.data, [0.25, 0.25, 0.25, 0.25], rtol=0, atol=1e-15)


def test_relu_definition():
    out = T.relu(T.Tensor([-1.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 2.0])


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.uniform(-2, 2, size=(3, 3))
    out = T.matmul(T.Tensor(np.eye(3)), T.Tensor(a))
    np.testing.assert_array_equal(out.data, a)


def test_backward_sum_is_ones():
    x = T.Tensor([1.0, -3.0, 2.5, 0.0], requires_grad=True)
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones(4))


def test_backward_square_sum():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    T.tsum(T.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-12)


def test_backward_rejects_non_scalar():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    y = T.mul(x, x)
    with pytest.raises(ValueError, match="scalar"):
        y.backward()


def test_finite_diff_on_square_sum():
    rng = np.random.default_rng(7)
    x = T.Tensor(rng.uniform(-2, 2, size=6))
    err = T.finite_diff_check(lambda t: T.tsum(T.mul(t, t)), x, step=1e-5)
    assert err < 1e-6


def test_finite_diff_on_constant():
    x = T.Tensor(np.ones(4))
    err = T.finite_diff_check(lambda t: T.tsum(T.mul(t, T.Tensor(np.zeros(4)))), x)
    assert err == 0.0


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        T.finite_diff_check(lambda t: T.tsum(t), T.Tensor([1.0]), step=0.0)


@pytest.mark.parametrize("seed", range(20))
def test_composite_graph_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = T.Tensor(_away_from_zero(rng.uniform(-2, 2, size=(3, 4))))
    w = rng.uniform(-1, 1, size=(4, 2))

    def f(t):
        h = T.relu(T.matmul(t, T.Tensor(w)))
        p = T.softmax(T.add(h, T.Tensor(np.ones((3, 2)))))
        return T.tsum(T.mul(T.log(p), T.Tensor(rng.standard_normal((3, 2)) * 0 + 0.5)))

    assert T.finite_diff_check(f, x) < 1e-4


_ELEMENTWISE_CASES = [
    ("add", lambda t, o: T.tsum(T.mul(T.add(t, o), T.add(t, o)))),
    ("sub", lambda t, o: T.tsum(T.mul(T.sub(t, o), T.sub(t, o)))),
    ("mul", lambda t, o: T.tsum(T.mul(t, o))),
    ("scale", lambda t, o: T.tsum(T.scale(t, 1.7))),
    ("exp", lambda t, o: T.tsum(T.exp(t))),
    ("mean", lambda t, o: T.tmean(T.mul(t, t))),
    ("sum_axis", lambda t, o: T.tsum(T.mul(T.tsum(t, axis=0), T.tsum(t, axis=0)))),
    ("mean_axis", lambda t, o: T.tsum(T.mul(T.tmean(t, axis=1), T.tmean(t, axis=1)))),
    ("dot", lambda t, o: T.dot(t, o)),
    ("l2_norm", lambda t, o: T.l2_norm(t)),
    ("softmax", lambda t, o: T.tsum(T.mul(T.softmax(t), o))),
    ("relu", lambda t, o: T.tsum(T.mul(T.relu(t), o))),
]


@pytest.mark.parametrize("name,f", _ELEMENTWISE_CASES, ids=[c[0] for c in _ELEMENTWISE_CASES])
@pytest.mark.parametrize("seed", range(20))
def test_op_gradients_match_finite_differences(name, f, seed):
    rng = np.random.default_rng(1000 + seed)
    x = _away_from_zero(rng.uniform(-2, 2, size=(4, 3)))
    other = T.Tensor(_away_from_zero(rng.uniform(-2, 2, size=(4, 3))))
    assert T.finite_diff_check(lambda t: f(t, other), T.Tensor(x)) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_log_gradient_on_positive_inputs(seed):
    # away from the 1e-12 clamp where the derivative is deliberately zeroed
    rng = np.random.default_rng(2000 + seed)
    x = T.Tensor(rng.uniform(0.5, 2.5, size=(4, 3)))
    assert T.finite_diff_check(lambda t: T.tsum(T.log(t)), x) < 1e-4


@pytest.mark.parametrize("seed", range(20))
def test_div_gradient(seed):
    rng = np.random.default_rng(3000 + seed)
    a = T.Tensor(rng.uniform(-2, 2, size=(3, 3)))
    b = rng.uniform(0.5, 2.0, size=(3, 3)) * rng.choice([-1.0, 1.0], size=(3, 3))
    assert T.finite_diff_check(lambda t: T.tsum(T.div(t, T.Tensor(b))), a) < 1e-4
    assert (
        T.finite_diff_check(lambda t: T.tsum(T.div(T.Tensor(a.data), t)), T.Tensor(b))
        < 1e-4
    )


@pytest.mark.parametrize("seed", range(20))
def test_matmul_gradient(seed):
    rng = np.random.default_rng(4000 + seed)
    a = T.Tensor(rng.uniform(-2, 2, size=(3, 4)))
    b = T.Tensor(rng.uniform(-2, 2, size=(4, 2)))
    assert T.finite_diff_check(lambda t: T.tsum(T.matmul(t, b)), a) < 1e-4
    assert T.finite_diff_check(lambda t: T.tsum(T.matmul(a, t)), b) < 1e-4


@pytest.mark.parametrize("kernel", [1, 3])
@pytest.mark.parametrize("seed", range(5))
def test_conv2d_gradients(kernel, seed):
    rng = np.random.default_rng(5000 + seed)
    x = T.Tensor(rng.uniform(-1, 1, size=(2, 3, 4, 2)))
    w = T.Tensor(rng.uniform(-1, 1, size=(kernel, kernel, 2, 3)))
    b = T.Tensor(rng.uniform(-1, 1, size=3))
    probe = T.Tensor(rng.uniform(-1, 1, size=(2, 3, 4, 3)))

    def through(t, which):
        args = {"x": x, "w": w, "b": b}
        args[which] = t
        return T.tsum(T.mul(T.conv2d(args["x"], args["w"], args["b"]), probe))

    for which, leaf in [("x", x), ("w", w), ("b", b)]:
        t = T.Tensor(leaf.data.copy())
        assert T.finite_diff_check(lambda u: through(u, which), t) < 1e-4


def test_conv2d_shape_errors_name_both_shapes():
    x = T.Tensor(np.zeros((1, 4, 4, 3)))
    w = T.Tensor(np.zeros((3, 3, 2, 5)))
    b = T.Tensor(np.zeros(5))
    with pytest.raises(ValueError, match=r"conv2d.*\(1, 4, 4, 3\).*\(3, 3, 2, 5\)"):
        T.conv2d(x, w, b)


def test_matmul_shape_error():
    with pytest.raises(ValueError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((2, 3))))


def test_add_shape_error():
    with pytest.raises(ValueError, match=r"add.*\(2, 3\).*\(4, 5\)"):
        T.add(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 5))))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-15, 15), min_size=2, max_size=8))
def test_softmax_normalized_and_open_interval(logits):
    # logit spread capped so the strict (0,1) claim is float64-representable
    p = T.softmax(T.Tensor(logits))
    assert abs(p.data.sum() - 1.0) < 1e-12
    assert np.all(p.data > 0.0) and np.all(p.data < 1.0)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=16),
    st.lists(st.floats(-100, 100), min_size=1, max_size=16),
)
def test_forward_ops_stay_finite(xs, ys):
    n = min(len(xs), len(ys))
    a, b = T.Tensor(xs[:n]), T.Tensor(ys[:n])
    for out in [T.add(a, b), T.mul(a, b), T.relu(a), T.softmax(a), T.log(a)]:
        assert np.all(np.isfinite(out.data))


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(42)
        x = T.Tensor(rng.uniform(-2, 2, size=(5, 4)), requires_grad=True)
        w = T.Tensor(rng.uniform(-1, 1, size=(4, 3)), requires_grad=True)
        p = T.softmax(T.matmul(T.relu(x), w))
        T.tsum(T.mul(T.log(p), p)).backward()
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_graph_released_after_backward():
    x = T.Tensor([1.0, 2.0], requires_grad=True)
    y = T.tsum(T.mul(x, x))
    y.backward()
    assert y._parents == () and y._backward is None


def test_grad_accumulates_across_shared_use():
    x = T.Tensor([3.0], requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, x))
    y_scalar = T.tsum(y)
    y_scalar.backward()
    np.testing.assert_allclose(x.grad, [12.0], rtol=1e-12)
