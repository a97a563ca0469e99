"""Layer primitives with explicit forward/backward pairs.

Arrays stay in the caller's dtype (float32 for training); explicit
reductions (bias sums, pooling means, norms) accumulate in float64 and
cast back. Each forward returns (output, cache); the matching backward
consumes the cache and upstream gradient.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateEmbeddingError

DEGENERATE_NORM = 1e-12


def conv3x3_forward(x, w, b):
    # x (B,C,H,W), w (F,C,3,3), b (F,) -> y (B,F,H,W), same-padded
    batch, c_in, h, wid = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (B,C,H,W,3,3)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * h * wid, c_in * 9)
    wmat = w.reshape(f, c_in * 9).T
    y = cols @ wmat + b[None, :].astype(x.dtype)
    y = np.ascontiguousarray(y.reshape(batch, h, wid, f).transpose(0, 3, 1, 2))
    return y, (cols, wmat, x.shape)


def conv3x3_backward(dy, cache):
    cols, wmat, x_shape = cache
    batch, c_in, h, wid = x_shape
    f = dy.shape[1]
    dy_mat = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(batch * h * wid, f)
    dw = (cols.T @ dy_mat).T.reshape(f, c_in, 3, 3)
    db = dy_mat.sum(axis=0, dtype=np.float64).astype(dy.dtype)
    dcols = dy_mat @ wmat.T
    dwin = dcols.reshape(batch, h, wid, c_in, 3, 3).transpose(0, 3, 1, 2, 4, 5)
    dxp = np.zeros((batch, c_in, h + 2, wid + 2), dtype=dy.dtype)
    for di in range(3):
        for dj in range(3):
            dxp[:, :, di:di + h, dj:dj + wid] += dwin[:, :, :, :, di, dj]
    return dxp[:, :, 1:-1, 1:-1], dw, db


def relu_forward(x):
    y = np.maximum(x, 0)
    return y, (x > 0)


def relu_backward(dy, cache):
    return dy * cache


def maxpool2x2_forward(x):
    # 2x2 stride-2 max; odd trailing rows/cols are dropped. Ties go to the
    # first position in (top-left, top-right, bottom-left, bottom-right) order.
    batch, c, h, wid = x.shape
    h2, w2 = h // 2, wid // 2
    v = x[:, :, :h2 * 2, :w2 * 2].reshape(batch, c, h2, 2, w2, 2)
    v = np.ascontiguousarray(v.transpose(0, 1, 2, 4, 3, 5)).reshape(batch, c, h2, w2, 4)
    idx = np.argmax(v, axis=-1)
    y = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2x2_backward(dy, cache):
    idx, x_shape = cache
    batch, c, h, wid = x_shape
    h2, w2 = h // 2, wid // 2
    dv = np.zeros((batch, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dv, idx[..., None], dy[..., None], axis=-1)
    dv = dv.reshape(batch, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, :, :h2 * 2, :w2 * 2] = dv.reshape(batch, c, h2 * 2, w2 * 2)
    return dx


def gap_forward(x):
    # global average pool over the spatial axes: (B,C,H,W) -> (B,C)
    batch, c, h, wid = x.shape
    y = x.mean(axis=(2, 3), dtype=np.float64).astype(x.dtype)
    return y, (x.shape,)


def gap_backward(dy, cache):
    (x_shape,) = cache
    _, _, h, wid = x_shape
    scale = np.asarray(1.0 / (h * wid), dtype=dy.dtype)
    return (dy * scale)[:, :, None, None] * np.ones(x_shape, dtype=dy.dtype)


def fc_forward(x, w, b):
    # x (B,D) @ w (D,O) + b (O,)
    return x @ w + b[None, :].astype(x.dtype), (x, w)


def fc_backward(dy, cache):
    x, w = cache
    dw = x.T @ dy
    db = dy.sum(axis=0, dtype=np.float64).astype(dy.dtype)
    return dy @ w.T, dw, db


def l2norm_forward(x):
    # row-wise L2 normalization; a ~zero pre-norm row means a dead network
    sq = np.sum(x.astype(np.float64) ** 2, axis=1)
    norms = np.sqrt(sq)
    if np.any(norms < DEGENERATE_NORM):
        row = int(np.argmin(norms))
        raise DegenerateEmbeddingError(
            f"pre-normalization embedding norm {norms[row]:.3e} in row {row} is degenerate"
        )
    inv = (1.0 / norms).astype(x.dtype)
    y = x * inv[:, None]
    return y, (y, norms)


def l2norm_backward(dy, cache):
    y, norms = cache
    rowdot = np.sum((dy * y).astype(np.float64), axis=1)
    inv = (1.0 / norms).astype(dy.dtype)
    return (dy - rowdot.astype(dy.dtype)[:, None] * y) * inv[:, None]
