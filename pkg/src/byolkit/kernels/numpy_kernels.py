"""Pure-numpy implementations of the hot kernels.

These are the fallback path; `byolkit.kernels` picks between this module and
the numba-compiled twin at import time (BYOLKIT_BACKEND env var). Both
backends share the exact layout conventions documented here:

* im2col produces (C*KH*KW, N*OH*OW): row index runs over (c, ki, kj),
  column index row-major over (sample, output row, output col). This layout
  feeds convolution as one large GEMM against the (OC, C*KH*KW) weight
  matrix.
* maxpool argmax indices are flat indices r*W + c into the *unpadded*
  input plane; padding is -inf so an index never lands in the pad region
  as long as every window overlaps at least one real pixel.
* bilinear_warp takes the inverse affine map (output pixel -> source
  coordinates); samples outside the source are filled with `fill`.
"""

import numpy as np


def conv_out_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def im2col(x, kh, kw, sh, sw, ph, pw):
    n, c, h, w = x.shape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    st = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(c, kh, kw, n, oh, ow),
        strides=(st[1], st[2], st[3], st[0], st[2] * sh, st[3] * sw),
    )
    return win.reshape(c * kh * kw, n * oh * ow)


def col2im(cols, xshape, kh, kw, sh, sw, ph, pw):
    n, c, h, w = xshape
    oh = conv_out_size(h, kh, sh, ph)
    ow = conv_out_size(w, kw, sw, pw)
    cols6 = cols.reshape(c, kh, kw, n, oh, ow)
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += cols6[
                :, i, j
            ].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(xp[:, :, ph : ph + h, pw : pw + w])


def maxpool_forward(x, k, s, p):
    n, c, h, w = x.shape
    oh = conv_out_size(h, k, s, p)
    ow = conv_out_size(w, k, s, p)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=-np.inf)
    st = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, oh, ow, k, k),
        strides=(st[0], st[1], st[2] * s, st[3] * s, st[2], st[3]),
    )
    flat = win.reshape(n, c, oh, ow, k * k)
    am = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, am[..., None], axis=-1)[..., 0]
    ki, kj = am // k, am % k
    oi = np.arange(oh)[:, None]
    oj = np.arange(ow)[None, :]
    ii = oi * s + ki - p
    jj = oj * s + kj - p
    idx = (ii * w + jj).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward(g, idx, xshape):
    n, c, h, w = xshape
    gx = np.zeros((n * c, h * w), dtype=g.dtype)
    rows = np.repeat(np.arange(n * c), idx.shape[2] * idx.shape[3])
    np.add.at(gx, (rows, idx.reshape(-1)), g.reshape(-1))
    return gx.reshape(n, c, h, w)


def bilinear_warp(img, m, oh, ow, fill):
    c, h, w = img.shape
    ys, xs = np.meshgrid(
        np.arange(oh, dtype=img.dtype), np.arange(ow, dtype=img.dtype), indexing="ij"
    )
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    out = np.empty((c, oh, ow), dtype=img.dtype)
    corners = ((y0, x0, (1 - fy) * (1 - fx)), (y0, x0 + 1, (1 - fy) * fx),
               (y0 + 1, x0, fy * (1 - fx)), (y0 + 1, x0 + 1, fy * fx))
    acc = np.zeros((c, oh, ow), dtype=img.dtype)
    wsum = np.zeros((oh, ow), dtype=img.dtype)
    for yy, xx, wt in corners:
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yi = np.clip(yy, 0, h - 1).astype(np.int64)
        xi = np.clip(xx, 0, w - 1).astype(np.int64)
        wv = wt * valid
        acc += img[:, yi, xi] * wv
        wsum += wv
    out[:] = acc + fill * (1 - wsum)
    return out


def blur_separable(img, k1d):
    c, h, w = img.shape
    r = len(k1d) // 2
    k1d = k1d.astype(img.dtype)
    xp = np.pad(img, ((0, 0), (r, r), (0, 0)), mode="reflect")
    tmp = np.zeros((c, h, w), dtype=img.dtype)
    for i in range(len(k1d)):
        tmp += k1d[i] * xp[:, i : i + h, :]
    xp = np.pad(tmp, ((0, 0), (0, 0), (r, r)), mode="reflect")
    out = np.zeros((c, h, w), dtype=img.dtype)
    for i in range(len(k1d)):
        out += k1d[i] * xp[:, :, i : i + w]
    return out
