import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mets.errors import DimensionError
from mets.tensor import Tensor, finite_diff_grad, matmul, no_grad, stack_rows, unbroadcast

from conftest import rel_err


def check_grad(f, *shapes, seed=0, tol=1e-6, positive=False):
    r = np.random.default_rng(seed)
    xs = [r.standard_normal(s) for s in shapes]
    if positive:
        xs = [np.abs(x) + 0.5 for x in xs]
    ts = [Tensor(x, requires_grad=True) for x in xs]
    f(*ts).backward()
    for i, x in enumerate(xs):
        def fi(v, i=i):
            args = [Tensor(a) for a in xs]
            args[i] = v
            return f(*args)
        num = finite_diff_grad(fi, Tensor(x))
        assert rel_err(ts[i].grad, num) < tol, (i, ts[i].grad, num)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_elementwise_and_reduction_gradients(seed):
    check_grad(lambda a, b: ((a * b + a) / (b * b + 1.0)).exp().log().sum(), (3, 4), (3, 4), seed=seed)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_broadcast_matmul_gradients(seed):
    check_grad(lambda a, b, c: ((a @ b) - c).mean() + (a.T * 2.0).sum(axis=0).sum(), (3, 2), (2, 4), (1, 4), seed=seed)


def test_log_and_div_on_positive_inputs():
    check_grad(lambda a, b: (a.log() / b).sum(), (5,), (5,), positive=True)


def test_reshape_and_stack_rows_gradients():
    check_grad(lambda a: stack_rows([a.reshape(2, 3), a.reshape(2, 3) * 3.0]).sum(axis=1).exp().sum(), (6,))


def test_reused_node_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert x.grad[0] == pytest.approx(5.0)


def test_leaf_grads_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    (x * 3.0).sum().backward()
    (x * 3.0).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None or not np.any(x.grad)


def test_backward_requires_scalar():
    with pytest.raises(DimensionError):
        (Tensor(np.ones(3), requires_grad=True) * 2.0).backward()


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_deep_chain_does_not_recurse():
    x = Tensor([1.0], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    y.sum().backward()
    assert x.grad[0] == 1.0


def test_matmul_shape_error():
    with pytest.raises((DimensionError, ValueError)):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_unbroadcast_sums_expanded_axes():
    g = np.ones((4, 3, 2))
    np.testing.assert_array_equal(unbroadcast(g, (3, 1)), np.full((3, 1), 8.0))


def test_finite_diff_leaves_input_untouched():
    x = np.array([1.0, 2.0])
    before = x.copy()
    g = finite_diff_grad(lambda a: float((a ** 2).sum()), x)
    np.testing.assert_array_equal(x, before)
    np.testing.assert_allclose(g, 2 * x, rtol=1e-8)
