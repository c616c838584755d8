"""Hot loops for conv1d and maxpool1d.

Two interchangeable implementations live here: numba-compiled nested loops
and a vectorised numpy fallback. The active backend is chosen once at import:
set ``METS_DISABLE_NUMBA=1`` (or run without numba installed) to get the numpy
path. ``set_backend`` switches at runtime, which the tests and the benchmark
use to compare both.

All kernels take inputs that are already padded and return fresh arrays.
"""

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def _env_disabled():
    return os.environ.get("METS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


_BACKEND = "numba" if NUMBA_AVAILABLE and not _env_disabled() else "numpy"


def get_backend():
    return _BACKEND


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    prev, _BACKEND = _BACKEND, name
    return prev


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _conv1d_forward_nb(xp, w, stride, l_out):
    n_batch, c_in, length = xp.shape
    c_out, _, k_size = w.shape
    out = np.zeros((n_batch, c_out, l_out), dtype=xp.dtype)
    # phase[r, j] = src[j * stride + r]; keeps the innermost loop unit-stride
    plen = (length + stride - 1) // stride
    phase = np.zeros((c_in, stride, plen), dtype=xp.dtype)
    # each output accumulates over (c, k) in ascending order, matching a naive loop
    for n in range(n_batch):
        for c in range(c_in):
            for j in range(length):
                phase[c, j % stride, j // stride] = xp[n, c, j]
        for o in range(c_out):
            row = out[n, o]
            for c in range(c_in):
                for k in range(k_size):
                    wv = w[o, c, k]
                    seg = phase[c, k % stride, k // stride:k // stride + l_out]
                    for i in range(l_out):
                        row[i] += wv * seg[i]
    return out


@njit(cache=True)
def _conv1d_backward_nb(xp, w, gout, stride):
    n_batch, c_in, length = xp.shape
    c_out, _, k_size = w.shape
    l_out = gout.shape[2]
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    plen = (length + stride - 1) // stride
    phase = np.zeros((c_in, stride, plen), dtype=xp.dtype)
    gphase = np.zeros((c_in, stride, plen), dtype=xp.dtype)
    for n in range(n_batch):
        gphase[:] = 0.0
        for c in range(c_in):
            for j in range(length):
                phase[c, j % stride, j // stride] = xp[n, c, j]
        for o in range(c_out):
            g = gout[n, o]
            for c in range(c_in):
                for k in range(k_size):
                    r, q = k % stride, k // stride
                    seg = phase[c, r, q:q + l_out]
                    dst = gphase[c, r, q:q + l_out]
                    wv = w[o, c, k]
                    acc = 0.0
                    for i in range(l_out):
                        acc += g[i] * seg[i]
                        dst[i] += g[i] * wv
                    gw[o, c, k] += acc
        for c in range(c_in):
            for j in range(length):
                gxp[n, c, j] = gphase[c, j % stride, j // stride]
    return gxp, gw


@njit(cache=True)
def _maxpool1d_forward_nb(xp, k_size, stride, l_out):
    n_batch, chans, _ = xp.shape
    out = np.empty((n_batch, chans, l_out), dtype=xp.dtype)
    idx = np.empty((n_batch, chans, l_out), dtype=np.int64)
    for n in range(n_batch):
        for c in range(chans):
            for i in range(l_out):
                base = i * stride
                best = xp[n, c, base]
                arg = base
                for k in range(1, k_size):
                    v = xp[n, c, base + k]
                    # strict '>' keeps the lowest index on ties
                    if v > best:
                        best = v
                        arg = base + k
                out[n, c, i] = best
                idx[n, c, i] = arg
    return out, idx


@njit(cache=True)
def _maxpool1d_backward_nb(idx, gout, padded_len):
    n_batch, chans, l_out = gout.shape
    gxp = np.zeros((n_batch, chans, padded_len), dtype=gout.dtype)
    for n in range(n_batch):
        for c in range(chans):
            for i in range(l_out):
                gxp[n, c, idx[n, c, i]] += gout[n, c, i]
    return gxp


# ---------------------------------------------------------------------------
# numpy fallback
# ---------------------------------------------------------------------------

def _conv1d_forward_np(xp, w, stride, l_out):
    k_size = w.shape[2]
    span = stride * (l_out - 1) + 1
    out = np.zeros((xp.shape[0], w.shape[0], l_out), dtype=xp.dtype)
    for k in range(k_size):
        out += np.einsum("oc,ncl->nol", w[:, :, k], xp[:, :, k:k + span:stride])
    return out


def _conv1d_backward_np(xp, w, gout, stride):
    k_size = w.shape[2]
    l_out = gout.shape[2]
    span = stride * (l_out - 1) + 1
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for k in range(k_size):
        window = xp[:, :, k:k + span:stride]
        gw[:, :, k] = np.einsum("nol,ncl->oc", gout, window)
        gxp[:, :, k:k + span:stride] += np.einsum("nol,oc->ncl", gout, w[:, :, k])
    return gxp, gw


def _maxpool1d_forward_np(xp, k_size, stride, l_out):
    windows = np.lib.stride_tricks.sliding_window_view(xp, k_size, axis=2)[:, :, ::stride][:, :, :l_out]
    local = np.argmax(windows, axis=-1)  # first occurrence == lowest index
    out = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]
    idx = local + (np.arange(l_out) * stride)[None, None, :]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def _maxpool1d_backward_np(idx, gout, padded_len):
    n_batch, chans, _ = gout.shape
    gxp = np.zeros((n_batch, chans, padded_len), dtype=gout.dtype)
    flat = gxp.reshape(n_batch * chans, padded_len)
    rows = np.repeat(np.arange(n_batch * chans), idx.shape[2])
    np.add.at(flat, (rows, idx.reshape(-1)), gout.reshape(-1))
    return gxp


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def conv1d_forward(xp, w, stride, l_out):
    if _BACKEND == "numba":
        return _conv1d_forward_nb(xp, w, stride, l_out)
    return _conv1d_forward_np(xp, w, stride, l_out)


def conv1d_backward(xp, w, gout, stride):
    gout = np.ascontiguousarray(gout, dtype=xp.dtype)
    if _BACKEND == "numba":
        return _conv1d_backward_nb(xp, w, gout, stride)
    return _conv1d_backward_np(xp, w, gout, stride)


def maxpool1d_forward(xp, k_size, stride, l_out):
    if _BACKEND == "numba":
        return _maxpool1d_forward_nb(xp, k_size, stride, l_out)
    return _maxpool1d_forward_np(xp, k_size, stride, l_out)


def maxpool1d_backward(idx, gout, padded_len):
    gout = np.ascontiguousarray(gout)
    if _BACKEND == "numba":
        return _maxpool1d_backward_nb(idx, gout, padded_len)
    return _maxpool1d_backward_np(idx, gout, padded_len)
