"""Scalar-loop reference implementations, written independently of the package."""
import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=1, pad=0, groups=1):
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    cin, h, wd = x.shape
    cout, cin_g, k, _ = w.shape
    cout_g = cout // groups
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        g = o // cout_g
        for oy in range(ho):
            for ox in range(wo):
                s = 0.0 if b is None else float(b[o])
                for ci in range(cin_g):
                    c = g * cin_g + ci
                    for ky in range(k):
                        for kx in range(k):
                            iy = oy * stride + ky - pad
                            ix = ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                s += w[o, ci, ky, kx] * x[c, iy, ix]
                out[o, oy, ox] = s
    return out


def bilinear_zero(plane, y, x):
    """Bilinear read of a 2-D array; corners outside the frame read as 0."""
    h, w = plane.shape
    y0, x0 = math.floor(y), math.floor(x)
    ly, lx = y - y0, x - x0
    total = 0.0
    for yy, xx, cw in ((y0, x0, (1 - ly) * (1 - lx)), (y0, x0 + 1, (1 - ly) * lx),
                       (y0 + 1, x0, ly * (1 - lx)), (y0 + 1, x0 + 1, ly * lx)):
        if 0 <= yy < h and 0 <= xx < w:
            total += cw * plane[yy, xx]
    return total


def bilinear_clamp(plane, y, x):
    h, w = plane.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = math.floor(y), math.floor(x)
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    ly, lx = y - y0, x - x0
    return ((1 - ly) * (1 - lx) * plane[y0, x0] + (1 - ly) * lx * plane[y0, x1]
            + ly * (1 - lx) * plane[y1, x0] + ly * lx * plane[y1, x1])


def deform_loops(x, d, w, bias, sample=bilinear_zero):
    c, h, wd = x.shape
    out = np.zeros((c, h, wd))
    for ci in range(c):
        for py in range(h):
            for px in range(wd):
                s = float(bias[ci])
                for j in range(9):
                    s += w[ci, j] * sample(x[ci].astype(np.float64), py + float(d[py, px, 2 * j]),
                                           px + float(d[py, px, 2 * j + 1]))
                out[ci, py, px] = s
    return out


def splat_loops(img, offset):
    """Forward bilinear splat; returns (accumulated values, accumulated weights)."""
    c, h, w = img.shape
    acc = np.zeros((c, h, w))
    wt = np.zeros((h, w))
    for py in range(h):
        for px in range(w):
            tx = px + float(offset[py, px, 0])
            ty = py + float(offset[py, px, 1])
            x0, y0 = math.floor(tx), math.floor(ty)
            lx, ly = tx - x0, ty - y0
            for yy, xx, cw in ((y0, x0, (1 - ly) * (1 - lx)), (y0, x0 + 1, (1 - ly) * lx),
                               (y0 + 1, x0, ly * (1 - lx)), (y0 + 1, x0 + 1, ly * lx)):
                if 0 <= yy < h and 0 <= xx < w:
                    wt[yy, xx] += cw
                    acc[:, yy, xx] += cw * img[:, py, px]
    return acc, wt


def gelu_tanh(v):
    return 0.5 * v * (1 + math.tanh(math.sqrt(2 / math.pi) * (v + 0.044715 * v ** 3)))
