import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nml import tensor as T

from conftest import central_diff


def scalar_graph(fn, shape):
    layout = T.ParamLayout(("x",), (shape,))
    return T.Graph(layout, lambda p, batch: fn(p["x"]))


UNARY = {
    "exp": lambda x: T.tsum(T.exp(x)),
    "log": lambda x: T.tsum(T.log(T.add(T.mul(x, x), 1.0))),
    "sqrt": lambda x: T.tsum(T.sqrt(T.add(T.mul(x, x), 0.5))),
    "tanh": lambda x: T.tsum(T.tanh(x)),
    "div": lambda x: T.tsum(T.div(1.0, T.add(T.mul(x, x), 1.0))),
    "matmul": lambda x: T.tsum(T.mul(T.matmul(T.reshape(x, (2, 3)), np.arange(6.0).reshape(3, 2)), 0.3)),
    "mean-axis": lambda x: T.tsum(T.mul(T.mean(T.reshape(x, (2, 3)), axis=0), T.tsum(x))),
    "broadcast": lambda x: T.tsum(T.mul(T.reshape(x, (2, 3)), T.reshape(x, (2, 3)).sum(axis=1, keepdims=True))),
    "transpose": lambda x: T.tsum(T.mul(T.transpose(T.reshape(x, (2, 3))), np.ones((3, 2)) * 2.0)),
    "softmax-ce": lambda x: T.softmax_cross_entropy(T.reshape(x, (2, 3)), np.array([0, 2])),
    "mse": lambda x: T.mse_onehot(T.reshape(x, (2, 3)), np.array([1, 0])),
    "batchnorm": lambda x: T.tsum(
        T.mul(T.batchnorm(T.reshape(x, (3, 2)), T.Tensor(np.array([1.5, -0.5])), T.Tensor(np.zeros(2))), np.arange(6.0).reshape(3, 2))
    ),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_gradient_and_hvp_match_finite_differences(name):
    rng = np.random.default_rng(0)
    g = scalar_graph(UNARY[name], (6,))
    x = rng.normal(size=6)
    v = rng.normal(size=6)
    _, grad = g.loss_and_grad(x, None)
    assert grad @ v == pytest.approx(central_diff(lambda z: g.loss(z, None), x, v), rel=1e-6, abs=1e-8)
    hv = T.hvp(g, x, None, v)
    fd = central_diff(lambda z: g.loss_and_grad(z, None)[1], x, v)
    np.testing.assert_allclose(hv, fd, rtol=1e-5, atol=1e-6)


def test_linear_loss_value_and_gradient():
    g = T.linear_graph([1.0, 2.0, 3.0])
    loss, grad = g.loss_and_grad(np.array([1.0, 2.0, 2.0]), None)
    assert loss == 11.0
    np.testing.assert_array_equal(grad, [1.0, 2.0, 3.0])


def test_quadratic_loss_and_hvp():
    g = T.quadratic_graph(np.diag([1.0, 2.0]))
    assert g.loss(np.array([1.0, 1.0]), None) == 1.5
    np.testing.assert_array_equal(T.hvp(g, np.array([1.0, 1.0]), None, np.array([1.0, 0.0])), [1.0, 0.0])


def test_hvp_of_linear_loss_is_zero():
    g = T.linear_graph([1.0, -1.0])
    np.testing.assert_array_equal(T.hvp(g, np.zeros(2), None, np.ones(2)), [0.0, 0.0])


def test_relu_has_zero_curvature():
    g = scalar_graph(lambda x: T.tsum(T.relu(x)), (4,))
    x = np.array([-1.0, 0.5, 2.0, -0.1])
    np.testing.assert_array_equal(g.loss_and_grad(x, None)[1], [0.0, 1.0, 1.0, 0.0])
    np.testing.assert_array_equal(T.hvp(g, x, None, np.ones(4)), np.zeros(4))


def test_non_scalar_loss_is_rejected():
    g = scalar_graph(lambda x: T.mul(x, 2.0), (3,))
    with pytest.raises(T.ShapeError):
        g.loss(np.ones(3), None)


def test_non_finite_loss_is_reported():
    g = scalar_graph(lambda x: T.tsum(T.log(x)), (2,))
    with pytest.raises(T.NumericalError), np.errstate(invalid="ignore"):
        g.loss(np.array([1.0, -1.0]), None)


def test_batchnorm_zero_variance_raises():
    with pytest.raises(T.NumericalError):
        T.batchnorm(T.Tensor(np.ones((4, 2))), T.Tensor(np.ones(2)), T.Tensor(np.zeros(2)))


def test_matmul_shape_mismatch():
    with pytest.raises(T.ShapeError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


def test_label_shape_mismatch():
    with pytest.raises(T.ShapeError):
        T.softmax_cross_entropy(T.Tensor(np.zeros((3, 2))), np.array([0, 1]))


def test_layout_pack_roundtrip():
    layout = T.ParamLayout(("a", "b"), ((2, 3), (4,)))
    theta = np.arange(10.0)
    assert layout.size == 10
    np.testing.assert_array_equal(layout.pack(layout.unpack(theta)), theta)
    np.testing.assert_array_equal(layout.index("b", [0, 3]), [6, 9])


def test_no_grad_builds_no_tape():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, 2.0)
    assert not y.requires_grad and y.parents == ()


@given(arrays(np.float64, 5, elements=st.floats(-3, 3)), arrays(np.float64, 5, elements=st.floats(-3, 3)))
def test_hessian_operator_is_symmetric(u, w):
    A = np.array([[2.0, 0.3, 0, 0, 0], [0.3, 1.0, 0, 0, 0], [0, 0, 1, 0, 0], [0, 0, 0, 1, 0], [0, 0, 0, 0, 3]])
    g = scalar_graph(lambda x: T.add(T.tsum(T.tanh(x)), T.mul(T.tsum(T.mul(T.matmul(T.reshape(x, (1, 5)), A), T.reshape(x, (1, 5)))), 0.5)), (5,))
    H = g.hessian_operator(np.linspace(-1, 1, 5), None)
    assert u @ H(w) == pytest.approx(w @ H(u), rel=1e-10, abs=1e-10)


@given(st.floats(-5, 5), arrays(np.float64, 4, elements=st.floats(-2, 2)))
def test_softmax_loss_is_shift_invariant(c, logits):
    a = T.softmax_cross_entropy(T.Tensor(logits.reshape(1, 4)), np.array([2])).item()
    b = T.softmax_cross_entropy(T.Tensor(logits.reshape(1, 4) + c), np.array([2])).item()
    assert a == pytest.approx(b, abs=1e-12)
