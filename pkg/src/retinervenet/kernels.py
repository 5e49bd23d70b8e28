"""Conv1d / max-pool kernels on (batch, channels, length) float64 arrays.

Two interchangeable implementations live here: numba-compiled im2col/col2im
loops feeding ``np.dot``, and a ``sliding_window_view`` + ``tensordot`` numpy
path. ``conv1d_forward`` and friends dispatch
on :data:`retinervenet._accel.BACKEND`; the ``*_numpy`` / ``*_numba`` variants
stay importable so tests and the benchmark can compare them directly.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import BACKEND, njit


def conv_out_length(length, width, stride, padding):
    """Output length with floor semantics; may be <= 0 for invalid configs."""
    return (length + 2 * padding - width) // stride + 1


# --------------------------------------------------------------------------
# numba path

@njit(cache=True)
def _im2col_nb(x, width, stride, padding, out_len):
    nb, nc, length = x.shape
    cols = np.zeros((nb * out_len, nc * width))
    for n in range(nb):
        for l in range(out_len):
            r = n * out_len + l
            start = l * stride - padding
            for c in range(nc):
                base = c * width
                for k in range(width):
                    i = start + k
                    if 0 <= i < length:
                        cols[r, base + k] = x[n, c, i]
    return cols


@njit(cache=True)
def _col2im_nb(dcols, nb, nc, length, width, stride, padding, out_len):
    dx = np.zeros((nb, nc, length))
    for n in range(nb):
        for l in range(out_len):
            r = n * out_len + l
            start = l * stride - padding
            for c in range(nc):
                base = c * width
                for k in range(width):
                    i = start + k
                    if 0 <= i < length:
                        dx[n, c, i] += dcols[r, base + k]
    return dx


@njit(cache=True)
def _conv_fwd_nb(x, w, b, stride, padding, out_len):
    nb = x.shape[0]
    no, nc, width = w.shape
    cols = _im2col_nb(x, width, stride, padding, out_len)
    res = np.dot(cols, w.reshape(no, nc * width).T)  # (B*L, O)
    out = np.empty((nb, no, out_len))
    for n in range(nb):
        for l in range(out_len):
            r = n * out_len + l
            for o in range(no):
                out[n, o, l] = res[r, o] + b[o]
    return out


@njit(cache=True)
def _conv_bwd_nb(gout, x, w, stride, padding, need_dx):
    nb, nc, length = x.shape
    no, _, width = w.shape
    out_len = gout.shape[2]
    g2 = np.empty((nb * out_len, no))
    db = np.zeros(no)
    for n in range(nb):
        for l in range(out_len):
            r = n * out_len + l
            for o in range(no):
                v = gout[n, o, l]
                g2[r, o] = v
                db[o] += v
    cols = _im2col_nb(x, width, stride, padding, out_len)
    dw = np.dot(g2.T, cols).reshape(no, nc, width)
    if need_dx:
        dcols = np.dot(g2, np.ascontiguousarray(w.reshape(no, nc * width)))
        dx = _col2im_nb(dcols, nb, nc, length, width, stride, padding, out_len)
    else:
        dx = np.zeros((0, 0, 0))
    return dx, dw, db


@njit(cache=True)
def _maxpool_fwd_nb(x, window):
    nb, nc, length = x.shape
    out_len = length // window
    out = np.empty((nb, nc, out_len))
    arg = np.empty((nb, nc, out_len), dtype=np.int64)
    for n in range(nb):
        for c in range(nc):
            for i in range(out_len):
                base = i * window
                best = x[n, c, base]
                bi = 0
                for k in range(1, window):
                    v = x[n, c, base + k]
                    if v > best:
                        best = v
                        bi = k
                out[n, c, i] = best
                arg[n, c, i] = base + bi
    return out, arg


@njit(cache=True)
def _maxpool_bwd_nb(gout, arg, length):
    nb, nc, out_len = gout.shape
    dx = np.zeros((nb, nc, length))
    for n in range(nb):
        for c in range(nc):
            for i in range(out_len):
                dx[n, c, arg[n, c, i]] += gout[n, c, i]
    return dx


def conv1d_forward_numba(x, w, b, stride, padding):
    out_len = conv_out_length(x.shape[2], w.shape[2], stride, padding)
    return _conv_fwd_nb(x, w, b, stride, padding, out_len)


def conv1d_backward_numba(gout, x, w, stride, padding, need_dx=True):
    dx, dw, db = _conv_bwd_nb(gout, x, w, stride, padding, need_dx)
    return (dx if need_dx else None), dw, db


def maxpool1d_forward_numba(x, window):
    return _maxpool_fwd_nb(x, window)


def maxpool1d_backward_numba(gout, arg, length):
    return _maxpool_bwd_nb(gout, arg, length)


# --------------------------------------------------------------------------
# numpy path

def _columns(x, width, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    # (B, C, L', W) -> strided view of output positions
    return sliding_window_view(x, width, axis=2)[:, :, ::stride]


def conv1d_forward_numpy(x, w, b, stride, padding):
    out_len = conv_out_length(x.shape[2], w.shape[2], stride, padding)
    cols = _columns(x, w.shape[2], stride, padding)[:, :, :out_len]
    out = np.tensordot(cols, w, axes=([1, 3], [1, 2]))  # (B, L, O)
    out += b
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def conv1d_backward_numpy(gout, x, w, stride, padding, need_dx=True):
    width = w.shape[2]
    out_len = gout.shape[2]
    cols = _columns(x, width, stride, padding)[:, :, :out_len]
    dw = np.tensordot(gout, cols, axes=([0, 2], [0, 2]))  # (O, C, W)
    db = gout.sum(axis=(0, 2))
    dx = None
    if need_dx:
        nb, nc, length = x.shape
        dxp = np.zeros((nb, nc, length + 2 * padding))
        dcols = np.tensordot(gout, w, axes=([1], [0]))  # (B, L, C, W)
        span = stride * (out_len - 1) + 1
        for k in range(width):
            dxp[:, :, k:k + span:stride] += dcols[:, :, :, k].transpose(0, 2, 1)
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        dx = np.ascontiguousarray(dx)
    return dx, dw, db


def maxpool1d_forward_numpy(x, window):
    nb, nc, length = x.shape
    out_len = length // window
    blocks = x[:, :, :out_len * window].reshape(nb, nc, out_len, window)
    local = blocks.argmax(axis=3)  # first max -> lowest index on ties
    arg = local + np.arange(out_len) * window
    out = np.take_along_axis(blocks, local[..., None], axis=3)[..., 0]
    return out, arg


def maxpool1d_backward_numpy(gout, arg, length):
    nb, nc, _ = gout.shape
    dx = np.zeros((nb, nc, length))
    # windows are disjoint, so each arg index is written at most once per row
    np.put_along_axis(dx, arg, gout, axis=2)
    return dx


if BACKEND == "numba":
    conv1d_forward = conv1d_forward_numba
    conv1d_backward = conv1d_backward_numba
    maxpool1d_forward = maxpool1d_forward_numba
    maxpool1d_backward = maxpool1d_backward_numba
else:
    conv1d_forward = conv1d_forward_numpy
    conv1d_backward = conv1d_backward_numpy
    maxpool1d_forward = maxpool1d_forward_numpy
    maxpool1d_backward = maxpool1d_backward_numpy
