"""Differentiable network layers: conv1d, batchnorm1d, linear, relu, pooling."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateBatchError, DimensionError
from .tensor import Tensor, as_tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def conv_out_len(length, k_size, stride, padding):
    return (length + 2 * padding - k_size) // stride + 1


def conv1d(x, weight, stride=1, padding=0):
    """Cross-correlation of ``x[N, C_in, L]`` with ``weight[C_out, C_in, K]`` (no bias)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv1d shape mismatch: input {x.shape}, weight {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    length, k_size = x.shape[2], weight.shape[2]
    if length + 2 * padding < k_size:
        raise DimensionError(
            f"conv1d input too short: input {x.shape}, weight {weight.shape}, padding {padding}")
    l_out = conv_out_len(length, k_size, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else np.ascontiguousarray(x.data)
    w = np.ascontiguousarray(weight.data, dtype=xp.dtype)
    out = kernels.conv1d_forward(xp, w, stride, l_out)

    def backward(g):
        gxp, gw = kernels.conv1d_backward(xp, w, g, stride)
        gx = gxp[:, :, padding:padding + length] if padding else gxp
        return np.ascontiguousarray(gx), gw

    return Tensor._from_op(out, (x, weight), backward, "conv1d")


@dataclass
class BatchNormState:
    """Running statistics for one batchnorm layer; updated in train mode."""

    running_mean: np.ndarray
    running_var: np.ndarray

    @classmethod
    def fresh(cls, channels, dtype=np.float64):
        return cls(np.zeros(channels, dtype=dtype), np.ones(channels, dtype=dtype))


def batchnorm1d(x, gamma, beta, state, mode="train", eps=BN_EPS, momentum=BN_MOMENTUM):
    """Per-channel normalisation of ``x[N, C, L]``.

    In train mode the batch's biased variance normalises the input, and the
    running statistics move toward the batch mean and unbiased variance by
    ``momentum``. Eval mode uses the running statistics only.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 3 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(
            f"batchnorm1d shape mismatch: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    n, c, length = x.shape
    m = n * length
    g_ = gamma.data[None, :, None]
    b_ = beta.data[None, :, None]

    if mode == "train":
        if m < 2:
            raise DegenerateBatchError(f"batchnorm1d needs N*L >= 2 in train mode, got {x.shape}")
        mu = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))
        if state is not None:
            state.running_mean = (1 - momentum) * state.running_mean + momentum * mu.astype(state.running_mean.dtype)
            unbiased = var * (m / (m - 1))
            state.running_var = (1 - momentum) * state.running_var + momentum * unbiased.astype(state.running_var.dtype)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x.data - mu[None, :, None]) * inv_std[None, :, None]
        out = g_ * xhat + b_

        def backward(g):
            gbeta = g.sum(axis=(0, 2))
            ggamma = (g * xhat).sum(axis=(0, 2))
            gxhat = g * g_
            gx = (inv_std[None, :, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2), keepdims=True))
            return gx, ggamma, gbeta

    elif mode == "eval":
        if state is None:
            raise ValueError("eval mode needs running statistics")
        inv_std = (1.0 / np.sqrt(state.running_var + eps)).astype(x.dtype)
        xhat = (x.data - state.running_mean.astype(x.dtype)[None, :, None]) * inv_std[None, :, None]
        out = g_ * xhat + b_

        def backward(g):
            return g * g_ * inv_std[None, :, None], (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")

    return Tensor._from_op(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batchnorm1d")


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x[N, F_in]`` and ``weight[F_out, F_in]``."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise DimensionError(f"linear bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data
        parents = (x, weight, bias)

    def backward(g):
        grads = (g @ weight.data, g.T @ x.data)
        if bias is not None:
            grads += (g.sum(axis=0),)
        return grads

    return Tensor._from_op(out, parents, backward, "linear")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._from_op(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def maxpool1d(x, kernel_size, stride=None, padding=0):
    """Max over sliding windows; padding is -inf and ties go to the lowest index."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"maxpool1d expects [N, C, L], got {x.shape}")
    stride = kernel_size if stride is None else stride
    length = x.shape[2]
    if length + 2 * padding < kernel_size:
        raise DimensionError(f"maxpool1d input too short: {x.shape} for kernel {kernel_size}")
    l_out = conv_out_len(length, kernel_size, stride, padding)
    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)), constant_values=-np.inf)
    else:
        xp = np.ascontiguousarray(x.data)
    out, idx = kernels.maxpool1d_forward(xp, kernel_size, stride, l_out)

    def backward(g):
        gxp = kernels.maxpool1d_backward(idx, g, xp.shape[2])
        return (np.ascontiguousarray(gxp[:, :, padding:padding + length]),)

    return Tensor._from_op(out, (x,), backward, "maxpool1d")


def global_avg_pool1d(x):
    """Mean over the time axis: ``[N, C, L] -> [N, C]``."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"global_avg_pool1d expects [N, C, L], got {x.shape}")
    length = x.shape[2]

    def backward(g):
        return (np.repeat(g[:, :, None] / length, length, axis=2),)

    return Tensor._from_op(x.data.mean(axis=2), (x,), backward, "global_avg_pool1d")


def residual_add(a, b):
    """Elementwise sum of two equally shaped tensors (no broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"residual add shape mismatch: {a.shape} vs {b.shape}")
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "residual_add")
