"""Inner loops with a numba path and a pure-numpy path.

The public helpers (``gather_taps``, ``gather_depthwise``, ``scatter_pixels``, ``layer_norm``,
``depthwise``, ``deform_depthwise``, ``splat``) dispatch on
``m2ae._accel.USE_NUMBA``; the ``*_numba`` / ``*_numpy`` variants stay importable
so tests and benchmarks can pin one path.
"""
import numpy as np

from . import _accel
from ._accel import njit

F32 = np.float32
TAP_DY = np.array([-1, -1, -1, 0, 0, 0, 1, 1, 1], dtype=np.int64)
TAP_DX = np.array([-1, 0, 1, -1, 0, 1, -1, 0, 1], dtype=np.int64)


# -- 3x3 neighborhood gather at selected pixels --------------------------------

@njit
def _gather_taps_kernel(xp, ys, xs, out):
    c = xp.shape[0]
    for ci in range(c):
        plane = xp[ci]
        for j in range(9):
            row = out[ci, j]
            dy = TAP_DY[j] + 1
            dx = TAP_DX[j] + 1
            for q in range(ys.shape[0]):
                row[q] = plane[ys[q] + dy, xs[q] + dx]
    return out


def gather_taps_numba(xp, ys, xs):
    out = np.empty((xp.shape[0], 9, ys.shape[0]), dtype=F32)
    return _gather_taps_kernel(xp, ys.astype(np.int64), xs.astype(np.int64), out)


def gather_taps_numpy(xp, ys, xs):
    rows = ys[None, :] + 1 + TAP_DY[:, None]
    cols = xs[None, :] + 1 + TAP_DX[:, None]
    return np.ascontiguousarray(xp[:, rows, cols])


def gather_taps(xp, ys, xs):
    """C x 9 x Q neighborhoods (im2col columns) of pixels ``(ys, xs)`` from a
    map with a one-pixel zero border; tap ``j`` follows ``TAPS`` order."""
    xp = np.ascontiguousarray(xp, dtype=F32)
    if _accel.USE_NUMBA:
        return gather_taps_numba(xp, ys, xs)
    return gather_taps_numpy(xp, ys, xs)


@njit
def _gather_depthwise_kernel(xp, ys, xs, w, out):
    c = xp.shape[0]
    for ci in range(c):
        plane = xp[ci]
        row = out[ci]
        row[:] = 0.0
        for j in range(9):
            wj = w[ci, j]
            dy = TAP_DY[j] + 1
            dx = TAP_DX[j] + 1
            for q in range(ys.shape[0]):
                row[q] += wj * plane[ys[q] + dy, xs[q] + dx]
    return out


def gather_depthwise_numba(xp, ys, xs, w):
    out = np.empty((xp.shape[0], ys.shape[0]), dtype=F32)
    return _gather_depthwise_kernel(xp, ys.astype(np.int64), xs.astype(np.int64), w, out)


def gather_depthwise_numpy(xp, ys, xs, w):
    taps = gather_taps_numpy(xp, ys, xs)
    out = np.zeros((xp.shape[0], ys.shape[0]), dtype=F32)
    for j in range(9):
        out += w[:, j, None] * taps[:, j]
    return out


def gather_depthwise(xp, ys, xs, w):
    """Depthwise 3x3 at pixels ``(ys, xs)`` without materializing the taps.

    Equals ``sum_j w[:, j] * gather_taps(xp, ys, xs)[:, j]`` with taps summed in
    ``TAPS`` order; returns C x Q.
    """
    xp = np.ascontiguousarray(xp, dtype=F32)
    w = np.ascontiguousarray(w, dtype=F32)
    if _accel.USE_NUMBA:
        return gather_depthwise_numba(xp, ys, xs, w)
    return gather_depthwise_numpy(xp, ys, xs, w)


@njit
def _scatter_kernel(dst, idx, vals):
    for ci in range(dst.shape[0]):
        row = dst[ci]
        src = vals[ci]
        for q in range(idx.shape[0]):
            row[idx[q]] = src[q]
    return dst


def scatter_pixels(dst, idx, vals):
    """``dst[:, idx] = vals`` for a C x N array and flat pixel indices, in place."""
    vals = np.ascontiguousarray(vals, dtype=F32)
    if _accel.USE_NUMBA and dst.flags.c_contiguous:
        return _scatter_kernel(dst, idx.astype(np.int64), vals)
    dst[:, idx] = vals
    return dst


# -- channel LayerNorm -------------------------------------------------------------

@njit
def _layer_norm_kernel(x, gamma, beta, eps, out):
    c, n = x.shape
    mu = np.zeros(n, dtype=F32)
    var = np.zeros(n, dtype=F32)
    for ci in range(c):
        row = x[ci]
        for p in range(n):
            mu[p] += row[p]
    for p in range(n):
        mu[p] /= c
    for ci in range(c):
        row = x[ci]
        for p in range(n):
            t = row[p] - mu[p]
            var[p] += t * t
    for p in range(n):
        var[p] = F32(1.0) / np.sqrt(var[p] / c + eps)
    for ci in range(c):
        row = x[ci]
        orow = out[ci]
        g = gamma[ci]
        b = beta[ci]
        for p in range(n):
            orow[p] = (row[p] - mu[p]) * var[p] * g + b
    return out


def layer_norm_numba(x, gamma, beta, eps):
    c = x.shape[0]
    flat = x.reshape(c, -1)
    out = np.empty_like(flat)
    return _layer_norm_kernel(flat, gamma, beta, F32(eps), out).reshape(x.shape)


def layer_norm_numpy(x, gamma, beta, eps):
    mu = x.mean(axis=0, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=0, keepdims=True)
    y = (x - mu) / np.sqrt(var + F32(eps))
    return (y * gamma[:, None, None] + beta[:, None, None]).astype(F32)


def layer_norm(x, gamma, beta, eps):
    """Per-pixel normalization over the channel axis of a C x H x W map."""
    x = np.ascontiguousarray(x, dtype=F32)
    gamma = np.ascontiguousarray(gamma, dtype=F32)
    beta = np.ascontiguousarray(beta, dtype=F32)
    if _accel.USE_NUMBA:
        return layer_norm_numba(x, gamma, beta, eps)
    return layer_norm_numpy(x, gamma, beta, eps)


# -- plain depthwise convolution ------------------------------------------------

@njit
def _depthwise_kernel(xp, w, ho, wo, out):
    c = xp.shape[0]
    k = w.shape[1]
    for ci in range(c):
        for y in range(ho):
            row = out[ci, y]
            row[:] = 0.0
            for ky in range(k):
                src = xp[ci, y + ky]
                for kx in range(k):
                    wk = w[ci, ky, kx]
                    for x in range(wo):
                        row[x] += wk * src[x + kx]
    return out


def depthwise_numba(x, w, pad):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    k = w.shape[1]
    ho, wo = xp.shape[1] - k + 1, xp.shape[2] - k + 1
    return _depthwise_kernel(xp, w, ho, wo, np.empty((x.shape[0], ho, wo), dtype=F32))


def depthwise_numpy(x, w, pad):
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    k = w.shape[1]
    ho, wo = xp.shape[1] - k + 1, xp.shape[2] - k + 1
    out = np.zeros((x.shape[0], ho, wo), dtype=F32)
    for ky in range(k):
        for kx in range(k):
            out += w[:, ky, kx, None, None] * xp[:, ky:ky + ho, kx:kx + wo]
    return out


def depthwise(x, w, pad):
    """Stride-1 depthwise correlation; ``w`` is C x k x k, taps summed in raster order."""
    x = np.ascontiguousarray(x, dtype=F32)
    w = np.ascontiguousarray(w, dtype=F32)
    if _accel.USE_NUMBA:
        return depthwise_numba(x, w, pad)
    return depthwise_numpy(x, w, pad)


# -- depthwise deformable convolution ------------------------------------------

@njit
def _deform_kernel(xt, d, w, bias, h, wd, clamp, out):
    """Pixel-outer loop over a channels-last copy: corner weights are computed
    once per (pixel, tap) and the channel loop runs over contiguous memory."""
    c = xt.shape[1]
    for py in range(h):
        for px in range(wd):
            p = py * wd + px
            acc = out[p]
            acc[:] = 0.0
            for j in range(9):
                sy = py + d[py, px, 2 * j]
                sx = px + d[py, px, 2 * j + 1]
                if clamp:
                    sy = min(max(sy, 0.0), h - 1.0)
                    sx = min(max(sx, 0.0), wd - 1.0)
                y0 = int(np.floor(sy))
                x0 = int(np.floor(sx))
                ly = F32(sy - y0)
                lx = F32(sx - x0)
                ys = (y0, y0, y0 + 1, y0 + 1)
                xs = (x0, x0 + 1, x0, x0 + 1)
                cw = (F32((1 - ly) * (1 - lx)), F32((1 - ly) * lx), F32(ly * (1 - lx)), F32(ly * lx))
                wj = w[j]
                for k in range(4):
                    yy = ys[k]
                    xx = xs[k]
                    if clamp:
                        yy = min(yy, h - 1)
                        xx = min(xx, wd - 1)
                    elif yy < 0 or yy >= h or xx < 0 or xx >= wd:
                        continue
                    wk = cw[k]
                    if wk == 0:
                        continue
                    src = xt[yy * wd + xx]
                    for ci in range(c):
                        acc[ci] += wj[ci] * (wk * src[ci])
            # bias last, as in conv2d, so integer offsets reproduce it exactly
            for ci in range(c):
                acc[ci] += bias[ci]
    return out


@njit
def _transpose(a, out):
    """2-D transpose for one long and one short (channel) axis.

    Works in 64-wide strips of the long axis so both the reads and the writes
    stay within a few cache lines per step (numpy's strided copy is several
    times slower at feature-map sizes).
    """
    n, m = a.shape
    if n >= m:
        for i0 in range(0, n, 64):
            i1 = min(i0 + 64, n)
            for j in range(m):
                row = out[j]
                for i in range(i0, i1):
                    row[i] = a[i, j]
    else:
        for j0 in range(0, m, 64):
            j1 = min(j0 + 64, m)
            for i in range(n):
                src = a[i]
                for j in range(j0, j1):
                    out[j, i] = src[j]
    return out


def deform_depthwise_numba(x, d, w, bias, clamp=False):
    c, h, wd = x.shape
    xt = _transpose(x.reshape(c, h * wd), np.empty((h * wd, c), dtype=F32))
    out = np.empty((h * wd, c), dtype=F32)
    _deform_kernel(xt, d, np.ascontiguousarray(w.T), bias, h, wd, bool(clamp), out)
    return _transpose(out, np.empty((c, h * wd), dtype=F32)).reshape(c, h, wd)


def deform_depthwise_numpy(x, d, w, bias, clamp=False):
    c, h, wd = x.shape
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(wd, dtype=np.float64), indexing="ij")
    flat = x.reshape(c, h * wd)
    out = np.zeros((c, h * wd), dtype=F32)
    for j in range(9):
        sy = gy + d[:, :, 2 * j]
        sx = gx + d[:, :, 2 * j + 1]
        if clamp:
            sy = np.clip(sy, 0.0, h - 1.0)
            sx = np.clip(sx, 0.0, wd - 1.0)
        y0 = np.floor(sy).astype(np.int64)
        x0 = np.floor(sx).astype(np.int64)
        ly = (sy - y0).astype(F32)
        lx = (sx - x0).astype(F32)
        sample = np.zeros((c, h * wd), dtype=F32)
        for yy, xx, cw in ((y0, x0, (1 - ly) * (1 - lx)), (y0, x0 + 1, (1 - ly) * lx),
                           (y0 + 1, x0, ly * (1 - lx)), (y0 + 1, x0 + 1, ly * lx)):
            if clamp:
                yy = np.minimum(yy, h - 1)
                xx = np.minimum(xx, wd - 1)
                valid = np.ones(yy.shape, dtype=bool)
            else:
                valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < wd)
            idx = (np.clip(yy, 0, h - 1) * wd + np.clip(xx, 0, wd - 1)).reshape(-1)
            cw = np.where(valid, cw, 0).astype(F32).reshape(-1)
            sample += cw * flat[:, idx]
        out += w[:, j, None] * sample
    out += bias[:, None]
    return out.reshape(c, h, wd)


def deform_depthwise(x, d, w, bias, clamp=False):
    """Depthwise 3x3 sampling at ``pixel + d[tap]`` with (dy, dx) offsets per tap."""
    x = np.ascontiguousarray(x, dtype=F32)
    d = np.ascontiguousarray(d, dtype=F32)
    w = np.ascontiguousarray(w, dtype=F32).reshape(x.shape[0], 9)
    bias = np.ascontiguousarray(bias, dtype=F32)
    if _accel.USE_NUMBA:
        return deform_depthwise_numba(x, d, w, bias, clamp)
    return deform_depthwise_numpy(x, d, w, bias, clamp)


# -- forward splatting ------------------------------------------------------------

@njit
def _splat_kernel(img, offset, acc, weight):
    """Corner targets and weights are found once per source pixel, then each
    channel is splatted in its own pass so writes stay within one plane."""
    c, h, w = img.shape
    n = h * w
    idx = np.full((n, 4), -1, dtype=np.int64)
    cws = np.zeros((n, 4), dtype=F32)
    wflat = weight.reshape(n)
    for py in range(h):
        for px in range(w):
            p = py * w + px
            tx = px + offset[py, px, 0]
            ty = py + offset[py, px, 1]
            x0 = int(np.floor(tx))
            y0 = int(np.floor(ty))
            lx = F32(tx - x0)
            ly = F32(ty - y0)
            ys = (y0, y0, y0 + 1, y0 + 1)
            xs = (x0, x0 + 1, x0, x0 + 1)
            cw = (F32((1 - ly) * (1 - lx)), F32((1 - ly) * lx), F32(ly * (1 - lx)), F32(ly * lx))
            for k in range(4):
                yy = ys[k]
                xx = xs[k]
                if yy < 0 or yy >= h or xx < 0 or xx >= w or cw[k] == 0:
                    continue
                idx[p, k] = yy * w + xx
                cws[p, k] = cw[k]
                wflat[yy * w + xx] += cw[k]
    for ci in range(c):
        src = img[ci].reshape(n)
        dst = acc[ci].reshape(n)
        for p in range(n):
            v = src[p]
            for k in range(4):
                t = idx[p, k]
                if t >= 0:
                    dst[t] += cws[p, k] * v
    return acc, weight


def splat_numba(img, offset):
    acc = np.zeros(img.shape, dtype=F32)
    weight = np.zeros(img.shape[1:], dtype=F32)
    return _splat_kernel(img, offset, acc, weight)


def splat_numpy(img, offset):
    c, h, w = img.shape
    gy, gx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    tx = gx + offset[:, :, 0]
    ty = gy + offset[:, :, 1]
    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    lx = (tx - x0).astype(F32)
    ly = (ty - y0).astype(F32)
    flat = img.reshape(c, -1)
    acc = np.zeros((c, h * w), dtype=np.float64)
    weight = np.zeros(h * w, dtype=np.float64)
    for yy, xx, cw in ((y0, x0, (1 - ly) * (1 - lx)), (y0, x0 + 1, (1 - ly) * lx),
                       (y0 + 1, x0, ly * (1 - lx)), (y0 + 1, x0 + 1, ly * lx)):
        valid = ((yy >= 0) & (yy < h) & (xx >= 0) & (xx < w) & (cw != 0)).reshape(-1)
        idx = (yy * w + xx).reshape(-1)[valid]
        cwv = cw.reshape(-1)[valid]
        weight += np.bincount(idx, weights=cwv, minlength=h * w)
        for ci in range(c):
            acc[ci] += np.bincount(idx, weights=cwv * flat[ci, valid], minlength=h * w)
    return acc.reshape(c, h, w).astype(F32), weight.reshape(h, w).astype(F32)


def splat(img, offset):
    """Bilinear forward splat of every source pixel to ``pixel + (dx, dy)``.

    Returns the accumulated values (C x H x W) and accumulated weights (H x W);
    splats landing outside the frame are dropped.
    """
    img = np.ascontiguousarray(img, dtype=F32)
    offset = np.ascontiguousarray(offset, dtype=F32)
    if _accel.USE_NUMBA:
        return splat_numba(img, offset)
    return splat_numpy(img, offset)
