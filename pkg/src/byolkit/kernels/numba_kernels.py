"""Numba-compiled twins of the kernels in `numpy_kernels`.

Same signatures, same layout conventions, same boundary semantics. Loops are
written so results agree with the numpy path to float rounding (gather-style
kernels are bit-identical; scatter/accumulate kernels may differ only in
summation order).
"""

import numpy as np
from numba import njit, prange

from .numpy_kernels import conv_out_size


@njit(parallel=True, cache=True)
def _im2col(x, cols, kh, kw, sh, sw, ph, pw, oh, ow):
    n, c, h, w = x.shape
    for ni in prange(n):
        for ci in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ci * kh + ki) * kw + kj
                    for oi in range(oh):
                        ii = oi * sh + ki - ph
                        if ii < 0 or ii >= h:
                            continue
                        base = (ni * oh + oi) * ow
                        for oj in range(ow):
                            jj = oj * sw + kj - pw
                            if 0 <= jj < w:
                                cols[row, base + oj] = x[ni, ci, ii, jj]


def im2col(x, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    cols = np.zeros((c * kh * kw, n * oh * ow), dtype=x.dtype)
    _im2col(np.ascontiguousarray(x), cols, kh, kw, sh, sw, ph, pw, oh, ow)
    return cols


@njit(parallel=True, cache=True)
def _col2im(cols, gx, kh, kw, sh, sw, ph, pw, oh, ow):
    n, c, h, w = gx.shape
    for ni in prange(n):
        for ci in range(c):
            for ki in range(kh):
                for kj in range(kw):
                    row = (ci * kh + ki) * kw + kj
                    for oi in range(oh):
                        ii = oi * sh + ki - ph
                        if ii < 0 or ii >= h:
                            continue
                        base = (ni * oh + oi) * ow
                        for oj in range(ow):
                            jj = oj * sw + kj - pw
                            if 0 <= jj < w:
                                gx[ni, ci, ii, jj] += cols[row, base + oj]


def col2im(cols, xshape, kh, kw, sh, sw, ph, pw):
    n, c, h, w = xshape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    gx = np.zeros(xshape, dtype=cols.dtype)
    _col2im(np.ascontiguousarray(cols), gx, kh, kw, sh, sw, ph, pw, oh, ow)
    return gx


@njit(parallel=True, cache=True)
def _maxpool_fwd(x, out, idx, k, s, p):
    n, c, h, w = x.shape
    oh, ow = out.shape[2], out.shape[3]
    for ni in prange(n):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    best = -np.inf
                    bi = 0
                    bj = 0
                    for ki in range(k):
                        ii = oi * s + ki - p
                        if ii < 0 or ii >= h:
                            continue
                        for kj in range(k):
                            jj = oj * s + kj - p
                            if jj < 0 or jj >= w:
                                continue
                            v = x[ni, ci, ii, jj]
                            if v > best:
                                best = v
                                bi = ii
                                bj = jj
                    out[ni, ci, oi, oj] = best
                    idx[ni, ci, oi, oj] = bi * w + bj


def maxpool_forward(x, k, s, p):
    n, c, h, w = x.shape
    oh = conv_out_size(h, k, s, p)
    ow = conv_out_size(w, k, s, p)
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    idx = np.empty((n, c, oh, ow), dtype=np.int64)
    _maxpool_fwd(np.ascontiguousarray(x), out, idx, k, s, p)
    return out, idx


@njit(parallel=True, cache=True)
def _maxpool_bwd(g, idx, gx):
    n, c, oh, ow = g.shape
    for ni in prange(n):
        for ci in range(c):
            for oi in range(oh):
                for oj in range(ow):
                    gx[ni, ci, idx[ni, ci, oi, oj]] += g[ni, ci, oi, oj]


def maxpool_backward(g, idx, xshape):
    n, c, h, w = xshape
    gx = np.zeros((n, c, h * w), dtype=g.dtype)
    _maxpool_bwd(np.ascontiguousarray(g), idx, gx)
    return gx.reshape(n, c, h, w)


@njit(parallel=True, cache=True)
def _bilinear_warp(img, m00, m01, m02, m10, m11, m12, out, fill):
    c, h, w = img.shape
    oh, ow = out.shape[1], out.shape[2]
    for oi in prange(oh):
        for oj in range(ow):
            sx = m00 * oj + m01 * oi + m02
            sy = m10 * oj + m11 * oi + m12
            x0 = np.floor(sx)
            y0 = np.floor(sy)
            fx = sx - x0
            fy = sy - y0
            for ci in range(c):
                acc = 0.0
                wsum = 0.0
                for dy in range(2):
                    yy = int(y0) + dy
                    wy = fy if dy == 1 else 1.0 - fy
                    if yy < 0 or yy >= h:
                        continue
                    for dx in range(2):
                        xx = int(x0) + dx
                        wx = fx if dx == 1 else 1.0 - fx
                        if xx < 0 or xx >= w:
                            continue
                        acc += wy * wx * img[ci, yy, xx]
                        wsum += wy * wx
                out[ci, oi, oj] = acc + fill * (1.0 - wsum)


def bilinear_warp(img, m, oh, ow, fill):
    out = np.empty((img.shape[0], oh, ow), dtype=img.dtype)
    m = m.astype(np.float64)
    _bilinear_warp(
        np.ascontiguousarray(img), m[0, 0], m[0, 1], m[0, 2], m[1, 0], m[1, 1], m[1, 2],
        out, float(fill),
    )
    return out


@njit(cache=True)
def _blur_axis0(img, k1d, ix, out):
    c, h, w = img.shape
    for ci in range(c):
        for i in range(h):
            for t in range(k1d.shape[0]):
                kt = k1d[t]
                src = ix[i, t]
                for j in range(w):
                    out[ci, i, j] += kt * img[ci, src, j]


@njit(cache=True)
def _blur_axis1(img, k1d, ix, out):
    c, h, w = img.shape
    for ci in range(c):
        for i in range(h):
            for t in range(k1d.shape[0]):
                kt = k1d[t]
                for j in range(w):
                    out[ci, i, j] += kt * img[ci, i, ix[j, t]]


def _reflect_table(n, taps):
    r = taps // 2
    base = np.arange(n)[:, None] + np.arange(-r, r + 1)[None, :]
    period = max(2 * n - 2, 1)
    base = np.abs(base) % period
    return np.where(base >= n, period - base, base).astype(np.int64)


def blur_separable(img, k1d):
    k1d = k1d.astype(img.dtype)
    c, h, w = img.shape
    tmp = np.zeros_like(img)
    _blur_axis0(np.ascontiguousarray(img), k1d, _reflect_table(h, len(k1d)), tmp)
    out = np.zeros_like(img)
    _blur_axis1(tmp, k1d, _reflect_table(w, len(k1d)), out)
    return out
