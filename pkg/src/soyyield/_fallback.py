"""Pure numpy implementations of the numerical kernels.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension. Arrays are float64 unless stated otherwise.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage


def remap_bilinear(src, map_x, map_y, fill=0.0):
    """Sample ``src`` (H, W, C) at float coordinates with bilinear weights.

    Coordinates outside ``[0, W-1] x [0, H-1]`` (or NaN) produce ``fill``.
    """
    src = np.ascontiguousarray(src, dtype=np.float64)
    H, W, C = src.shape
    ok = (map_x >= 0) & (map_x <= W - 1) & (map_y >= 0) & (map_y <= H - 1)
    xs = np.where(ok, map_x, 0.0)
    ys = np.where(ok, map_y, 0.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    a = src[y0, x0]
    b = src[y0, x1]
    c = src[y1, x0]
    d = src[y1, x1]
    out = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d)
    out[~ok] = fill
    return out


def _windows(x, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, b, stride, pad):
    """Cross-correlation; each output sums its terms in (c, p, q) order, then adds bias."""
    N, C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((N, O, Ho, Wo), dtype=np.result_type(x, w))
    for c in range(C):
        for p in range(kh):
            for q in range(kw):
                xs = xp[:, None, c, p:p + stride * (Ho - 1) + 1:stride, q:q + stride * (Wo - 1) + 1:stride]
                out += xs * w[None, :, c, p, q, None, None]
    out += b[None, :, None, None]
    return out


def conv2d_backward(x, w, gout, stride, pad):
    N, C, H, W = x.shape
    kh, kw = w.shape[2], w.shape[3]
    Ho, Wo = gout.shape[2], gout.shape[3]
    win = _windows(x, kh, kw, stride, pad)
    gw = np.einsum("nohw,nchwpq->ocpq", gout, win, optimize=True)
    gb = gout.sum(axis=(0, 2, 3))
    cols = np.einsum("nohw,ocpq->nchwpq", gout, w, optimize=True)
    gxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad), dtype=x.dtype)
    for p in range(kh):
        for q in range(kw):
            gxp[:, :, p:p + stride * Ho:stride, q:q + stride * Wo:stride] += cols[..., p, q]
    gx = gxp[:, :, pad:pad + H, pad:pad + W]
    return np.ascontiguousarray(gx), gw, gb


def maxpool2d_forward(x, k, stride):
    """Window maxima plus the flat (h*W + w) index of each winner.

    Ties go to the first index in row-major window order.
    """
    N, C, H, W = x.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    flat = win.reshape(N, C, Ho, Wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    di, dj = np.divmod(arg, k)
    rows = np.arange(Ho)[:, None] * stride + di
    cols = np.arange(Wo)[None, :] * stride + dj
    idx = (rows * W + cols).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool2d_backward(gout, idx, in_shape):
    N, C, H, W = in_shape
    gx = np.zeros((N, C, H * W), dtype=gout.dtype)
    flat_idx = idx.reshape(N, C, -1)
    g = gout.reshape(N, C, -1)
    nn, cc = np.meshgrid(np.arange(N), np.arange(C), indexing="ij")
    np.add.at(gx, (nn[..., None], cc[..., None], flat_idx), g)
    return gx.reshape(N, C, H, W)


_EIGHT = np.ones((3, 3), dtype=bool)


def label_components(mask):
    """8-connected labelling; labels numbered in raster order from 1."""
    labels, n = ndimage.label(np.asarray(mask, dtype=bool), structure=_EIGHT)
    return labels.astype(np.int32), int(n)


def moving_means(values, valid, offsets):
    """Mean of ``values`` over ``offsets`` around every cell.

    Offsets landing outside the array or on invalid cells are skipped.
    Returns (means, counts); means are NaN where the count is zero.
    """
    R, P = values.shape
    total = np.zeros((R, P))
    count = np.zeros((R, P), dtype=np.int64)
    v = np.where(valid, values, 0.0)
    for dr, dp in offsets:
        dr = int(dr)
        dp = int(dp)
        # cell (r, p) reads (r + dr, p + dp)
        r0, r1 = max(0, -dr), min(R, R - dr)
        p0, p1 = max(0, -dp), min(P, P - dp)
        if r0 >= r1 or p0 >= p1:
            continue
        total[r0:r1, p0:p1] += v[r0 + dr:r1 + dr, p0 + dp:p1 + dp]
        count[r0:r1, p0:p1] += valid[r0 + dr:r1 + dr, p0 + dp:p1 + dp]
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return means, count
