# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, NAN
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()



def remap_bilinear(src, map_x, map_y, double fill=0.0):
    cdef double[:, :, ::1] s = np.ascontiguousarray(src, dtype=np.float64)
    cdef double[:, ::1] mx = np.ascontiguousarray(map_x, dtype=np.float64)
    cdef double[:, ::1] my = np.ascontiguousarray(map_y, dtype=np.float64)
    cdef Py_ssize_t H = s.shape[0], W = s.shape[1], C = s.shape[2]
    cdef Py_ssize_t Ho = mx.shape[0], Wo = mx.shape[1]
    out_arr = np.empty((Ho, Wo, C), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, ch, x0, y0, x1, y1
    cdef double x, y, fx, fy
    with nogil:
        for i in range(Ho):
            for j in range(Wo):
                x = mx[i, j]
                y = my[i, j]
                if not (x >= 0 and x <= W - 1 and y >= 0 and y <= H - 1):
                    for ch in range(C):
                        out[i, j, ch] = fill
                    continue
                x0 = <Py_ssize_t>floor(x)
                y0 = <Py_ssize_t>floor(y)
                fx = x - x0
                fy = y - y0
                x1 = x0 + 1 if x0 + 1 < W else W - 1
                y1 = y0 + 1 if y0 + 1 < H else H - 1
                for ch in range(C):
                    out[i, j, ch] = ((1.0 - fy) * ((1.0 - fx) * s[y0, x0, ch] + fx * s[y0, x1, ch])
                                     + fy * ((1.0 - fx) * s[y1, x0, ch] + fx * s[y1, x1, ch]))
    return out_arr


cdef void _gemm_rm(char* ta, char* tb, int M, int N, int K, double* A, int lda,
                   double* B, int ldb, double beta, double* C, int ldc) noexcept nogil:
    # row-major C = op(A) @ op(B) + beta * C via column-major dgemm on the transposes
    cdef double one = 1.0
    dgemm(tb, ta, &N, &M, &K, &one, B, &ldb, A, &lda, &beta, C, &ldc)


def conv2d_forward(x, w, b, int stride, int pad):
    """Cross-correlation; each output sums its terms in (c, p, q) order, then adds bias."""
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    # weights as (c, p, q, o) so the innermost loop runs over contiguous output channels
    cdef double[:, :, :, ::1] wt = np.ascontiguousarray(np.transpose(np.asarray(w, dtype=np.float64), (1, 2, 3, 0)))
    cdef double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t Ho = (H + 2 * pad - KH) // stride + 1
    cdef Py_ssize_t Wo = (W + 2 * pad - KW) // stride + 1
    acc_arr = np.zeros((N, Ho, Wo, O), dtype=np.float64)
    cdef double[:, :, :, ::1] acc = acc_arr
    cdef Py_ssize_t n, o, i, j, c, p, q, ih, iw
    cdef double xval
    cdef double* dst
    cdef double* src
    with nogil:
        for n in range(N):
            for i in range(Ho):
                for j in range(Wo):
                    dst = &acc[n, i, j, 0]
                    for c in range(C):
                        for p in range(KH):
                            ih = i * stride - pad + p
                            if ih < 0 or ih >= H:
                                continue
                            for q in range(KW):
                                iw = j * stride - pad + q
                                if iw < 0 or iw >= W:
                                    continue
                                xval = xv[n, c, ih, iw]
                                src = &wt[c, p, q, 0]
                                for o in range(O):
                                    dst[o] = dst[o] + xval * src[o]
                    for o in range(O):
                        dst[o] = dst[o] + bv[o]
    return np.ascontiguousarray(np.transpose(acc_arr, (0, 3, 1, 2)))


def conv2d_backward(x, w, gout, int stride, int pad):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(gout, dtype=np.float64)
    cdef Py_ssize_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t O = wv.shape[0], KH = wv.shape[2], KW = wv.shape[3]
    cdef Py_ssize_t Ho = g.shape[2], Wo = g.shape[3]
    cdef int CKK = <int>(C * KH * KW), HW = <int>(Ho * Wo), Oi = <int>O
    gx_arr = np.zeros((N, C, H, W), dtype=np.float64)
    gw_arr = np.zeros((O, C, KH, KW), dtype=np.float64)
    cols_arr = np.empty((CKK, HW), dtype=np.float64)
    dcols_arr = np.empty((CKK, HW), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] dcols = dcols_arr
    cdef Py_ssize_t n, i, j, c, p, q, ih, iw, r
    with nogil:
        for n in range(N):
            for c in range(C):
                for p in range(KH):
                    for q in range(KW):
                        r = (c * KH + p) * KW + q
                        for i in range(Ho):
                            ih = i * stride - pad + p
                            for j in range(Wo):
                                iw = j * stride - pad + q
                                if ih < 0 or ih >= H or iw < 0 or iw >= W:
                                    cols[r, i * Wo + j] = 0.0
                                else:
                                    cols[r, i * Wo + j] = xv[n, c, ih, iw]
            # gw (O, CKK) += g[n] (O, HW) @ cols^T
            _gemm_rm(b"N", b"T", Oi, CKK, HW, &g[n, 0, 0, 0], HW, &cols[0, 0], HW, 1.0, &gw[0, 0, 0, 0], CKK)
            # dcols (CKK, HW) = w^T (CKK, O) @ g[n] (O, HW)
            _gemm_rm(b"T", b"N", CKK, HW, Oi, &wv[0, 0, 0, 0], CKK, &g[n, 0, 0, 0], HW, 0.0, &dcols[0, 0], HW)
            for c in range(C):
                for p in range(KH):
                    for q in range(KW):
                        r = (c * KH + p) * KW + q
                        for i in range(Ho):
                            ih = i * stride - pad + p
                            if ih < 0 or ih >= H:
                                continue
                            for j in range(Wo):
                                iw = j * stride - pad + q
                                if iw < 0 or iw >= W:
                                    continue
                                gx[n, c, ih, iw] += dcols[r, i * Wo + j]
    gb_arr = np.asarray(gout, dtype=np.float64).sum(axis=(0, 2, 3))
    return gx_arr, gw_arr, gb_arr


def maxpool2d_forward(x, int k, int stride):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t N = xv.shape[0], C = xv.shape[1], H = xv.shape[2], W = xv.shape[3]
    cdef Py_ssize_t Ho = (H - k) // stride + 1
    cdef Py_ssize_t Wo = (W - k) // stride + 1
    out_arr = np.empty((N, C, Ho, Wo), dtype=np.float64)
    idx_arr = np.empty((N, C, Ho, Wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, i, j, p, q, best
    cdef double m, v
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(Ho):
                    for j in range(Wo):
                        best = (i * stride) * W + j * stride
                        m = xv[n, c, i * stride, j * stride]
                        for p in range(k):
                            for q in range(k):
                                v = xv[n, c, i * stride + p, j * stride + q]
                                if v > m:
                                    m = v
                                    best = (i * stride + p) * W + j * stride + q
                        out[n, c, i, j] = m
                        idx[n, c, i, j] = best
    return out_arr, idx_arr


def maxpool2d_backward(gout, idx, in_shape):
    cdef double[:, :, :, ::1] g = np.ascontiguousarray(gout, dtype=np.float64)
    cdef cnp.int64_t[:, :, :, ::1] iv = np.ascontiguousarray(idx, dtype=np.int64)
    cdef Py_ssize_t N = in_shape[0], C = in_shape[1], H = in_shape[2], W = in_shape[3]
    gx_arr = np.zeros((N, C, H, W), dtype=np.float64)
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t n, c, i, j, t
    with nogil:
        for n in range(N):
            for c in range(C):
                for i in range(g.shape[2]):
                    for j in range(g.shape[3]):
                        t = iv[n, c, i, j]
                        gx[n, c, t // W, t % W] += g[n, c, i, j]
    return gx_arr


cdef inline Py_ssize_t _find(Py_ssize_t* parent, Py_ssize_t a) noexcept nogil:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


cdef inline Py_ssize_t _union(Py_ssize_t* parent, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    a = _find(parent, a)
    b = _find(parent, b)
    if a < b:
        parent[b] = a
        return a
    parent[a] = b
    return b


def label_components(mask):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t H = m.shape[0], W = m.shape[1]
    labels_arr = np.zeros((H, W), dtype=np.int32)
    cdef int[:, ::1] lab = labels_arr
    # a new provisional label needs an unlabelled pixel to its left
    parent_arr = np.zeros(H * ((W + 1) // 2) + 2, dtype=np.intp)
    cdef Py_ssize_t[::1] parent_mv = parent_arr
    cdef Py_ssize_t* parent = &parent_mv[0]
    cdef Py_ssize_t i, j, nxt = 1, cur, n_final = 0
    cdef Py_ssize_t w_, nw, n_, ne
    with nogil:
        for i in range(H):
            for j in range(W):
                if not m[i, j]:
                    continue
                n_ = lab[i - 1, j] if i > 0 else 0
                if n_:
                    # N touches W, NW and NE, so they already share its set
                    lab[i, j] = <int>n_
                    continue
                w_ = lab[i, j - 1] if j > 0 else 0
                nw = lab[i - 1, j - 1] if i > 0 and j > 0 else 0
                ne = lab[i - 1, j + 1] if i > 0 and j + 1 < W else 0
                cur = w_ if w_ else nw
                if ne:
                    cur = _union(parent, cur, ne) if cur else ne
                if cur == 0:
                    cur = nxt
                    parent[cur] = cur
                    nxt += 1
                lab[i, j] = <int>cur
        # provisional labels are created in raster order, so flattening in
        # increasing order yields final labels numbered by first pixel
        for cur in range(1, nxt):
            if parent[cur] == cur:
                n_final += 1
                parent[cur] = -n_final
            else:
                # parents never point upward, so parent[cur] is already final
                parent[cur] = parent[parent[cur]]
        for i in range(H):
            for j in range(W):
                if lab[i, j]:
                    lab[i, j] = <int>(-parent[lab[i, j]])
    return labels_arr, int(n_final)


def moving_means(values, valid, offsets):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef cnp.uint8_t[:, ::1] ok = np.ascontiguousarray(valid, dtype=np.uint8)
    cdef cnp.int64_t[:, ::1] off = np.ascontiguousarray(np.asarray(offsets).reshape(-1, 2), dtype=np.int64)
    cdef Py_ssize_t R = v.shape[0], P = v.shape[1], K = off.shape[0]
    means_arr = np.empty((R, P), dtype=np.float64)
    count_arr = np.zeros((R, P), dtype=np.int64)
    cdef double[:, ::1] means = means_arr
    cdef cnp.int64_t[:, ::1] count = count_arr
    cdef Py_ssize_t r, p, t, rr, pp
    cdef double acc
    cdef cnp.int64_t cnt
    with nogil:
        for r in range(R):
            for p in range(P):
                acc = 0.0
                cnt = 0
                for t in range(K):
                    rr = r + off[t, 0]
                    pp = p + off[t, 1]
                    if rr < 0 or rr >= R or pp < 0 or pp >= P or not ok[rr, pp]:
                        continue
                    acc = acc + v[rr, pp]
                    cnt += 1
                count[r, p] = cnt
                means[r, p] = acc / cnt if cnt > 0 else NAN
    return means_arr, count_arr
