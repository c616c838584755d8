"""Cosine similarity and the symmetric temperature-scaled contrastive loss.

``S[i, j] = sim(t_i, e_j)`` for text rows ``T`` and ECG rows ``E``. The
ECG-to-text loss of pair ``i`` is the cross-entropy of row ``i`` of ``S / tau``
against the diagonal; the text-to-ECG loss uses column ``i``. The batch loss
averages both directions over the batch.
"""

import numpy as np

from .errors import DegenerateEmbeddingError, DimensionError
from .tensor import Tensor, as_tensor, div, exp, transpose

NORM_EPS = 1e-12


def cosine_similarity(t, e):
    t = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
    e = np.asarray(e.data if isinstance(e, Tensor) else e, dtype=np.float64)
    if t.shape != e.shape or t.ndim != 1:
        raise DimensionError(f"cosine_similarity needs equal-length vectors, got {t.shape} and {e.shape}")
    nt, ne = np.linalg.norm(t), np.linalg.norm(e)
    if nt <= NORM_EPS or ne <= NORM_EPS:
        raise DegenerateEmbeddingError("zero-norm embedding")
    return float(np.clip(t @ e / (nt * ne), -1.0, 1.0))


def _row_norms(x, which):
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms <= NORM_EPS)
    if bad.size:
        raise DegenerateEmbeddingError(f"zero-norm {which} row(s): {bad.tolist()}")
    return norms


def similarity_matrix(text, ecg):
    """``[N, N]`` cosine similarities, differentiable in both arguments.

    Values are clipped to [-1, 1] against rounding; the gradient passes
    through the clip unchanged.
    """
    text, ecg = as_tensor(text), as_tensor(ecg)
    if text.ndim != 2 or ecg.ndim != 2 or text.shape[1] != ecg.shape[1]:
        raise DimensionError(f"similarity_matrix shape mismatch: {text.shape} vs {ecg.shape}")
    if text.dtype != ecg.dtype and not text.requires_grad:
        text = Tensor(text.data.astype(ecg.dtype))
    nt = _row_norms(text.data, "text")
    ne = _row_norms(ecg.data, "ECG")
    tn = text.data / nt[:, None]
    en = ecg.data / ne[:, None]
    s = tn @ en.T

    def backward(g):
        # d s_ij / d t_i = (en_j - s_ij tn_i) / |t_i|, symmetric for e_j
        gt = (g @ en - (g * s).sum(axis=1, keepdims=True) * tn) / nt[:, None]
        ge = (g.T @ tn - (g * s).sum(axis=0)[:, None] * en) / ne[:, None]
        return gt, ge

    return Tensor._from_op(np.clip(s, -1.0, 1.0), (text, ecg), backward, "similarity_matrix")


def _check_tau(tau):
    value = tau.data if isinstance(tau, Tensor) else np.asarray(tau)
    if not np.all(value > 0):
        raise ValueError(f"temperature must be positive, got {value}")


def diagonal_cross_entropy(logits):
    """Per-row ``-log softmax(logits)[i, i]`` with max-subtraction."""
    logits = as_tensor(logits)
    if logits.ndim != 2 or logits.shape[0] != logits.shape[1]:
        raise DimensionError(f"expected a square matrix, got {logits.shape}")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = lse - np.diagonal(shifted)

    def backward(g):
        p = np.exp(shifted - lse[:, None])
        p[np.diag_indices_from(p)] -= 1.0
        return (p * g[:, None],)

    return Tensor._from_op(loss, (logits,), backward, "diagonal_cross_entropy")


def loss_e_to_t(sim, tau):
    """ECG-to-text loss per pair: softmax over row ``i`` of ``sim / tau``."""
    _check_tau(tau)
    return diagonal_cross_entropy(div(as_tensor(sim), tau))


def loss_t_to_e(sim, tau):
    """Text-to-ECG loss per pair: softmax over column ``i``."""
    _check_tau(tau)
    return diagonal_cross_entropy(div(transpose(as_tensor(sim)), tau))


def batch_loss(sim, tau):
    """Mean over pairs of the average of both directional losses."""
    sim = as_tensor(sim)
    return ((loss_e_to_t(sim, tau) + loss_t_to_e(sim, tau)) * 0.5).mean()


def temperature(log_temperature):
    """``tau = exp(log_temperature)`` as a differentiable scalar."""
    return exp(log_temperature)
