import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mets.contrastive import (
    batch_loss, cosine_similarity, diagonal_cross_entropy, loss_e_to_t, loss_t_to_e, similarity_matrix,
    temperature,
)
from mets.errors import DegenerateEmbeddingError
from mets.tensor import Tensor, finite_diff_grad

from conftest import rel_err


def brute_force_rowwise(S, tau):
    """Direct softmax cross-entropy per row, no stabilisation tricks."""
    S = np.asarray(S, dtype=np.float64)
    out = []
    for i in range(len(S)):
        denom = sum(math.exp(S[i, j] / tau) for j in range(len(S)))
        out.append(-math.log(math.exp(S[i, i] / tau) / denom))
    return np.array(out)


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 2], [2, 1]) == pytest.approx(0.8, abs=1e-15)
    with pytest.raises(DegenerateEmbeddingError):
        cosine_similarity([0, 0], [1, 0])


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.integers(0, 10_000))
def test_cosine_scale_invariance(a, b, seed):
    r = np.random.default_rng(seed)
    t, e = r.standard_normal(5), r.standard_normal(5)
    assert abs(cosine_similarity(a * t, b * e) - cosine_similarity(t, e)) < 1e-7


def test_similarity_matrix_matches_loop_oracle(rng):
    t, e = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    S = similarity_matrix(T(t), T(e)).data
    want = np.array([[cosine_similarity(t[i], e[j]) for j in range(3)] for i in range(3)])
    np.testing.assert_allclose(S, want, atol=1e-7)
    assert np.all(np.abs(S) <= 1 + 1e-6)


def test_similarity_matrix_identity_and_single_pair():
    q = np.linalg.qr(np.random.default_rng(0).standard_normal((4, 4)))[0]
    np.testing.assert_allclose(similarity_matrix(T(q), T(q)).data, np.eye(4), atol=1e-12)
    assert similarity_matrix(T([[1.0, 2.0]]), T([[2.0, 1.0]])).shape == (1, 1)


def test_similarity_matrix_names_zero_row():
    with pytest.raises(DegenerateEmbeddingError, match="1"):
        similarity_matrix(T([[1.0, 0.0], [1.0, 1.0]]), T([[1.0, 0.0], [0.0, 0.0]]))


def test_identity_anchor_0_313262():
    S = T([[1.0, 0.0], [0.0, 1.0]])
    oracle = brute_force_rowwise(S.data, 1.0)
    np.testing.assert_allclose(oracle, 0.313262, atol=1e-6)
    np.testing.assert_allclose(loss_e_to_t(S, 1.0).data, oracle, atol=1e-12)
    np.testing.assert_allclose(loss_t_to_e(S, 1.0).data, oracle, atol=1e-12)
    assert abs(batch_loss(S, 1.0).item() - 0.313262) < 1e-5


@pytest.mark.parametrize("n", [2, 4, 8])
def test_uniform_similarity_gives_log_n(n):
    assert batch_loss(T(np.full((n, n), 0.3)), 0.07).item() == pytest.approx(math.log(n), abs=1e-12)


def test_sharp_limit():
    S = np.where(np.eye(3, dtype=bool), 1.0, -1.0)
    assert np.all(loss_e_to_t(T(S), 0.01).data < 1e-8)


def test_max_subtraction_survives_float32_extremes():
    S = Tensor(np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=np.float32))
    assert np.isfinite(batch_loss(S, 1e-3).item())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_transpose_identity_and_rowwise_oracle(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(1, 7))
    S = r.uniform(-1, 1, (n, n))
    tau = float(r.uniform(0.05, 2))
    np.testing.assert_array_equal(loss_t_to_e(T(S), tau).data, loss_e_to_t(T(S.T), tau).data)
    np.testing.assert_allclose(loss_e_to_t(T(S), tau).data, brute_force_rowwise(S, tau), rtol=1e-10, atol=1e-12)
    sym = S + S.T
    np.testing.assert_array_equal(loss_t_to_e(T(sym), tau).data, loss_e_to_t(T(sym), tau).data)
    assert batch_loss(T(S), tau).item() >= 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_invariance(seed):
    r = np.random.default_rng(seed)
    S = r.uniform(-1, 1, (5, 5))
    p = r.permutation(5)
    assert abs(batch_loss(T(S[p][:, p]), 0.1).item() - batch_loss(T(S), 0.1).item()) < 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_decreasing_off_diagonal_never_increases_loss(seed):
    r = np.random.default_rng(seed)
    S = r.uniform(-1, 1, (4, 4))
    i, j = [(a, b) for a, b in itertools.product(range(4), range(4)) if a != b][int(r.integers(12))]
    lower = S.copy()
    lower[i, j] -= r.uniform(0, 1)
    assert batch_loss(T(lower), 0.2).item() <= batch_loss(T(S), 0.2).item()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_gradients_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    S = r.uniform(-1, 1, (4, 4))
    log_t = float(np.log(r.uniform(0.1, 1.0)))
    s, lt = Tensor(S, requires_grad=True), Tensor(np.array(log_t), requires_grad=True)
    batch_loss(s, temperature(lt)).backward()
    assert rel_err(s.grad, finite_diff_grad(lambda v: batch_loss(v, math.exp(log_t)), S, h=1e-6)) < 1e-6
    num_t = finite_diff_grad(lambda v: batch_loss(T(S), temperature(v)), Tensor(np.array(log_t)), h=1e-6)
    assert rel_err(lt.grad, num_t) < 1e-6


def test_similarity_gradients_both_arguments(rng):
    t, e = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
    tt, ee = Tensor(t, requires_grad=True), Tensor(e, requires_grad=True)
    batch_loss(similarity_matrix(tt, ee), 0.5).backward()
    assert rel_err(ee.grad, finite_diff_grad(lambda v: batch_loss(similarity_matrix(T(t), v), 0.5), e, h=1e-6)) < 1e-6
    assert rel_err(tt.grad, finite_diff_grad(lambda v: batch_loss(similarity_matrix(v, T(e)), 0.5), t, h=1e-6)) < 1e-6


def test_non_positive_tau_rejected():
    with pytest.raises(ValueError):
        batch_loss(T(np.eye(2)), 0.0)
    with pytest.raises(ValueError):
        loss_e_to_t(T(np.eye(2)), -1.0)


def test_diagonal_cross_entropy_is_rowwise():
    logits = T([[2.0, 0.0], [0.0, 0.0]])
    np.testing.assert_allclose(diagonal_cross_entropy(logits).data,
                               [math.log(1 + math.exp(-2)), math.log(2)], rtol=1e-14)
