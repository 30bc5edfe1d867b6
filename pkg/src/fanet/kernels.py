"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names ``col2im``, ``warp_perspective`` and ``joint_histogram``
dispatch to the numba version unless ``FANET_DISABLE_NUMBA`` is set;
``im2col`` always uses numpy. Both implementations stay importable as
``<name>_numba`` / ``<name>_numpy`` so tests and the benchmark can compare
them directly.

im2col layout: ``x`` is ``(batch, channels, height, width)``; the column
matrix has one row per (batch, out_row, out_col) and one column per
(channel, k_row, k_col), both in C order.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit

# source coordinates this close to an integer are snapped onto it, so the
# identity homography reproduces its input exactly
_SNAP = 1e-9


def conv_output_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


# --------------------------------------------------------------------------
# im2col / col2im

def im2col_numpy(x, kh, kw, stride, pad):
    b, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * oh * ow, c * kh * kw)


@njit
def _im2col_loops(xp, kh, kw, stride, oh, ow):
    b, c = xp.shape[0], xp.shape[1]
    cols = np.empty((b * oh * ow, c * kh * kw))
    for n in range(b):
        for i in range(oh):
            for j in range(ow):
                row = (n * oh + i) * ow + j
                col = 0
                for ch in range(c):
                    for ki in range(kh):
                        for kj in range(kw):
                            cols[row, col] = xp[n, ch, i * stride + ki, j * stride + kj]
                            col += 1
    return cols


def im2col_numba(x, kh, kw, stride, pad):
    _, _, h, w = x.shape
    xp = np.ascontiguousarray(x, dtype=np.float64)
    if pad:
        xp = np.pad(xp, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    return _im2col_loops(xp, kh, kw, stride, conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad))


def col2im_numpy(cols, x_shape, kh, kw, stride, pad):
    b, c, h, w = x_shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    c6 = cols.reshape(b, oh, ow, c, kh, kw)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += (
                c6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            )
    return dxp[:, :, pad : pad + h, pad : pad + w].copy()


@njit
def _col2im_loops(cols, b, c, h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for n in range(b):
        for ch in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    col = (ch * kh + ki) * kw + kj
                    for i in range(oh):
                        for j in range(ow):
                            dxp[n, ch, i * stride + ki, j * stride + kj] += cols[(n * oh + i) * ow + j, col]
    return dxp[:, :, pad : pad + h, pad : pad + w].copy()


def col2im_numba(cols, x_shape, kh, kw, stride, pad):
    b, c, h, w = x_shape
    return _col2im_loops(np.ascontiguousarray(cols, dtype=np.float64), b, c, h, w, kh, kw, stride, pad)


# --------------------------------------------------------------------------
# perspective warp with bilinear sampling

def _source_coords(hinv, h, w):
    """Map every output pixel through ``hinv`` (normalized [0,1] coordinates)."""
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    u = jj / max(w - 1, 1)
    v = ii / max(h - 1, 1)
    sx = hinv[0, 0] * u + hinv[0, 1] * v + hinv[0, 2]
    sy = hinv[1, 0] * u + hinv[1, 1] * v + hinv[1, 2]
    sw = hinv[2, 0] * u + hinv[2, 1] * v + hinv[2, 2]
    return sx / sw * max(w - 1, 1), sy / sw * max(h - 1, 1)


def warp_perspective_numpy(src, hinv, fill):
    h, w = src.shape
    x, y = _source_coords(hinv, h, w)
    rx, ry = np.round(x), np.round(y)
    x = np.where(np.abs(x - rx) < _SNAP, rx, x)
    y = np.where(np.abs(y - ry) < _SNAP, ry, y)
    inside = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    val = top * (1.0 - fy) + bot * fy
    return np.where(inside, val, fill)


@njit
def _warp_loops(src, hinv, fill):
    h, w = src.shape
    sxw = max(w - 1, 1)
    syh = max(h - 1, 1)
    out = np.empty((h, w))
    for i in range(h):
        v = i / syh
        for j in range(w):
            u = j / sxw
            px = hinv[0, 0] * u + hinv[0, 1] * v + hinv[0, 2]
            py = hinv[1, 0] * u + hinv[1, 1] * v + hinv[1, 2]
            pw = hinv[2, 0] * u + hinv[2, 1] * v + hinv[2, 2]
            x = px / pw * sxw
            y = py / pw * syh
            rx = np.round(x)
            ry = np.round(y)
            if abs(x - rx) < 1e-9:
                x = rx
            if abs(y - ry) < 1e-9:
                y = ry
            if x < 0 or x > w - 1 or y < 0 or y > h - 1:
                out[i, j] = fill[i, j]
                continue
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            x1 = min(x0 + 1, w - 1)
            y1 = min(y0 + 1, h - 1)
            fx = x - x0
            fy = y - y0
            top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
            out[i, j] = top * (1.0 - fy) + bot * fy
    return out


def warp_perspective_numba(src, hinv, fill):
    return _warp_loops(
        np.ascontiguousarray(src, dtype=np.float64),
        np.ascontiguousarray(hinv, dtype=np.float64),
        np.ascontiguousarray(fill, dtype=np.float64),
    )


# --------------------------------------------------------------------------
# joint histogram of two quantized maps

def joint_histogram_numpy(a_idx, b_idx, na, nb):
    flat = a_idx.ravel().astype(np.int64) * nb + b_idx.ravel().astype(np.int64)
    return np.bincount(flat, minlength=na * nb).reshape(na, nb).astype(np.float64)


@njit
def _joint_hist_loops(a_idx, b_idx, na, nb):
    out = np.zeros((na, nb))
    for k in range(a_idx.size):
        out[a_idx[k], b_idx[k]] += 1.0
    return out


def joint_histogram_numba(a_idx, b_idx, na, nb):
    return _joint_hist_loops(
        np.ascontiguousarray(a_idx, dtype=np.int64).ravel(),
        np.ascontiguousarray(b_idx, dtype=np.int64).ravel(),
        na,
        nb,
    )


# the strided-view gather measured faster than the numba loop
# (benchmarks/bench_kernels.py), so im2col stays on numpy in both modes
im2col = im2col_numpy
if USE_NUMBA:
    col2im = col2im_numba
    warp_perspective = warp_perspective_numba
    joint_histogram = joint_histogram_numba
else:
    col2im = col2im_numpy
    warp_perspective = warp_perspective_numpy
    joint_histogram = joint_histogram_numpy
