"""Dense tensor primitives on channel-major ``C x H x W`` float32 arrays.

Every function here is pure: inputs are never modified and a fresh array is
returned. Padding is zero padding throughout.
"""
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import ShapeError

DTYPE = np.float32

# (dy, dx) of the nine 3x3 taps in raster order; shared by unfold3, the
# reparameterized weights and the deformable offsets.
TAPS = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
LN_EPS = 1e-6


def as_tensor(x):
    return np.ascontiguousarray(x, dtype=DTYPE)


@dataclass(frozen=True)
class ConvSpec:
    weight: np.ndarray
    bias: np.ndarray | None = None
    stride: int = 1
    padding: int | None = None
    groups: int = 1

    def __post_init__(self):
        w = as_tensor(self.weight)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(f"conv weight must be out x in/groups x k x k, got {w.shape}")
        object.__setattr__(self, "weight", w)
        if self.bias is not None:
            b = as_tensor(self.bias).reshape(-1)
            if b.shape[0] != w.shape[0]:
                raise ShapeError(f"bias has {b.shape[0]} entries for {w.shape[0]} output channels")
            object.__setattr__(self, "bias", b)
        if self.padding is None:
            object.__setattr__(self, "padding", w.shape[2] // 2)
        if self.stride < 1 or self.groups < 1 or self.padding < 0:
            raise ShapeError("stride and groups must be positive, padding non-negative")
        if w.shape[0] % self.groups:
            raise ShapeError(f"out_channels {w.shape[0]} not divisible by groups {self.groups}")

    @property
    def out_channels(self):
        return self.weight.shape[0]

    @property
    def in_channels(self):
        return self.weight.shape[1] * self.groups

    @property
    def kernel_size(self):
        return self.weight.shape[2]

    def output_size(self, h, w):
        k, p, s = self.kernel_size, self.padding, self.stride
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        if h + 2 * p - k < 0 or w + 2 * p - k < 0 or ho <= 0 or wo <= 0:
            raise ShapeError(f"kernel {k} stride {s} pad {p} gives empty output for {h}x{w}")
        return ho, wo

    def macs(self, h, w):
        ho, wo = self.output_size(h, w)
        return ho * wo * self.out_channels * self.weight.shape[1] * self.kernel_size ** 2


def _check_image(x, name="x"):
    if x.ndim != 3:
        raise ShapeError(f"{name} must be C x H x W, got shape {x.shape}")


def conv2d(x, spec, ledger=None, label="conv"):
    """Cross-correlation of ``x`` (C_in x H x W) with ``spec``."""
    x = as_tensor(x)
    _check_image(x)
    c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv expects {spec.in_channels} input channels, got {c}")
    ho, wo = spec.output_size(h, w)
    k, s, p, g = spec.kernel_size, spec.stride, spec.padding, spec.groups
    wt = spec.weight

    if k == 1 and s == 1 and p == 0 and g == 1:
        out = (wt[:, :, 0, 0] @ x.reshape(c, h * w)).reshape(-1, h, w)
    elif g == c == spec.out_channels and s == 1:
        out = kernels.depthwise(x, wt[:, 0], p)
    else:
        xp = np.pad(x, ((0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]  # C x Ho x Wo x k x k
        cin_g, cout_g = c // g, spec.out_channels // g
        parts = []
        for gi in range(g):
            cols = win[gi * cin_g:(gi + 1) * cin_g]
            cols = cols.transpose(0, 3, 4, 1, 2).reshape(cin_g * k * k, ho * wo)
            wg = wt[gi * cout_g:(gi + 1) * cout_g].reshape(cout_g, -1)
            parts.append(wg @ cols)
        out = np.concatenate(parts, axis=0).reshape(-1, ho, wo)
    if spec.bias is not None:
        out += spec.bias[:, None, None]  # out is always a fresh buffer here
    if ledger is not None:
        ledger.record(label, spec.macs(h, w))
    return as_tensor(out)


def unfold3(x):
    """Expand each pixel into its 3x3 zero-padded neighborhood.

    Output channel ``c * 9 + j`` holds ``x[c]`` shifted by tap ``TAPS[j]``.
    """
    x = as_tensor(x)
    _check_image(x)
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    out = np.empty((c, 9, h, w), dtype=DTYPE)
    for j, (dy, dx) in enumerate(TAPS):
        out[:, j] = xp[:, 1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    return out.reshape(c * 9, h, w)


def layer_norm(x, gamma, beta, eps=LN_EPS):
    """Normalize over channels independently at every pixel."""
    x = as_tensor(x)
    _check_image(x)
    return kernels.layer_norm(x, gamma, beta, eps)


def simple_gate(x):
    x = as_tensor(x)
    if x.shape[0] % 2:
        raise ShapeError(f"simple gate needs an even channel count, got {x.shape[0]}")
    half = x.shape[0] // 2
    return x[:half] * x[half:]


def simplified_channel_attention(x, spec, ledger=None, label="sca"):
    """Scale each channel by a 1x1 map of the globally pooled channel vector."""
    x = as_tensor(x)
    _check_image(x)
    pooled = x.mean(axis=(1, 2)).reshape(-1, 1, 1)
    scale = conv2d(pooled, spec, ledger, label)
    return as_tensor(x * scale)


def bilinear_sample(x, y_coord, x_coord, c):
    """Bilinear read of ``x[c]`` at a real-valued position, clamped to the border."""
    _, h, w = x.shape
    y = min(max(float(y_coord), 0.0), h - 1.0)
    xx = min(max(float(x_coord), 0.0), w - 1.0)
    y0, x0 = int(math.floor(y)), int(math.floor(xx))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    ly, lx = y - y0, xx - x0
    plane = x[c]
    top = (1.0 - lx) * plane[y0, x0] + lx * plane[y0, x1]
    bot = (1.0 - lx) * plane[y1, x0] + lx * plane[y1, x1]
    return float((1.0 - ly) * top + ly * bot)


def pixel_shuffle(x, r=2):
    """Depth-to-space: (C r^2) x H x W -> C x rH x rW."""
    x = as_tensor(x)
    c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"{c} channels not divisible by {r * r}")
    out = x.reshape(c // (r * r), r, r, h, w).transpose(0, 3, 1, 4, 2)
    return np.ascontiguousarray(out.reshape(c // (r * r), h * r, w * r))


def resample_down(x, spec, ledger=None, label="down"):
    """Halve H and W with a learned 2x2 stride-2 convolution (C -> 2C)."""
    x = as_tensor(x)
    _check_image(x)
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ShapeError(f"downsampling needs even extents, got {x.shape[1]}x{x.shape[2]}")
    if spec.kernel_size != 2 or spec.stride != 2 or spec.padding != 0:
        raise ShapeError("downsample conv must be 2x2, stride 2, no padding")
    return conv2d(x, spec, ledger, label)


def resample_up(x, spec, ledger=None, label="up"):
    """1x1 conv C -> 2C followed by a 2x pixel shuffle (ends at C/2 x 2H x 2W)."""
    return pixel_shuffle(conv2d(x, spec, ledger, label), 2)
