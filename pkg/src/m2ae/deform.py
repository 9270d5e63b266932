"""Depthwise deformable convolution driven by motion-trajectory offsets."""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kernels import deform_depthwise
from .tensor import DTYPE, as_tensor

BILINEAR_MACS = 4


@dataclass(frozen=True)
class DeformDWSpec:
    weight: np.ndarray  # C x 3 x 3 (a C x 1 x 3 x 3 layout is accepted)
    bias: np.ndarray | None = None

    def __post_init__(self):
        w = as_tensor(self.weight)
        if w.ndim == 4 and w.shape[1] == 1:
            w = w[:, 0]
        if w.ndim != 3 or w.shape[1:] != (3, 3):
            raise ShapeError(f"deformable weights must be C x 3 x 3, got {self.weight.shape}")
        object.__setattr__(self, "weight", np.ascontiguousarray(w))
        if self.bias is not None:
            object.__setattr__(self, "bias", as_tensor(self.bias).reshape(-1))

    @property
    def channels(self):
        return self.weight.shape[0]


def deform_dwconv(f, d, spec, border="zeros", ledger=None, label="deform"):
    """``out[c, z] = sum_j w[c, j] * sample(f[c], z + d[z, j]) + bias[c]``.

    ``d`` is an ``OffsetField`` or an H x W x 18 array of (dy, dx) per tap. One
    offset field is shared by every channel. ``border`` selects how samples off
    the frame are read: ``"zeros"`` (matching zero-padded convolution) or
    ``"clamp"`` (nearest border value).
    """
    f = as_tensor(f)
    d = np.asarray(getattr(d, "d", d))
    c, h, w = f.shape
    if d.shape != (h, w, 18):
        raise ShapeError(f"offsets {d.shape} do not match features {h}x{w}")
    if spec.channels != c:
        raise ShapeError(f"deformable conv has {spec.channels} channels, input has {c}")
    if border not in ("zeros", "clamp"):
        raise ValueError(f"unknown border policy {border!r}")
    bias = spec.bias if spec.bias is not None else np.zeros(c, dtype=DTYPE)
    out = deform_depthwise(f, d, spec.weight.reshape(c, 9), bias, clamp=border == "clamp")
    if ledger is not None:
        ledger.record(f"{label}.taps", h * w * c * 9, kind="deform")
        ledger.record(f"{label}.bilinear", h * w * c * 9 * BILINEAR_MACS, kind="deform")
    return out
