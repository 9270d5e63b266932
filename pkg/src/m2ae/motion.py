"""Exposure-time pixel displacements and their conversion to deformable offsets.

Displacements are stored as (dx, dy) in pixels of the scale that produced them.
Deformable offsets are stored as (dy, dx) per tap, in ``TAPS`` order.
"""
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import DTYPE, TAPS, ConvSpec, as_tensor, conv2d


@dataclass(frozen=True)
class DisplacementPair:
    o_start: np.ndarray  # H x W x 2, mid-exposure -> start
    o_end: np.ndarray  # H x W x 2, mid-exposure -> end

    @property
    def shape(self):
        return self.o_start.shape[:2]


@dataclass(frozen=True)
class TrajectoryField:
    offsets: np.ndarray  # N x H x W x 2

    @property
    def steps(self):
        return self.offsets.shape[0]


@dataclass(frozen=True)
class OffsetField:
    d: np.ndarray  # H x W x 18


def predict_endpoints(f_in, conv, ledger=None, label="motion"):
    if conv.out_channels != 4:
        raise ShapeError(f"endpoint conv must produce 4 channels, got {conv.out_channels}")
    o = conv2d(f_in, conv, ledger, label)
    return DisplacementPair(np.ascontiguousarray(o[0:2].transpose(1, 2, 0)),
                            np.ascontiguousarray(o[2:4].transpose(1, 2, 0)))


def _time_coords(n_steps):
    n = np.arange(n_steps, dtype=np.float64)
    return 2.0 * n / (n_steps - 1) - 1.0


def interpolate_quadratic(pair, n_steps):
    """Quadratic path through the two endpoints with zero displacement at mid-exposure."""
    if n_steps < 2:
        raise ValueError(f"need at least 2 time steps, got {n_steps}")
    a = (pair.o_start.astype(np.float64) + pair.o_end) / 2.0
    b = (pair.o_end.astype(np.float64) - pair.o_start) / 2.0
    u = _time_coords(n_steps)[:, None, None, None]
    offs = a[None] * u ** 2 + b[None] * u
    offs[0] = pair.o_start
    offs[-1] = pair.o_end
    if n_steps % 2:
        offs[n_steps // 2] = 0.0
    return TrajectoryField(offs.astype(DTYPE))


def interpolate_linear(pair, n_steps):
    """Straight segments from the start endpoint to zero, then zero to the end endpoint."""
    if n_steps < 3 or n_steps % 2 == 0:
        raise ValueError(f"linear trajectories need an odd step count >= 3, got {n_steps}")
    mid = (n_steps - 1) // 2
    offs = np.zeros((n_steps,) + pair.o_start.shape, dtype=np.float64)
    for n in range(n_steps):
        s = 2.0 * n / (n_steps - 1) - 1.0
        if n < mid:
            offs[n] = -s * pair.o_start
        elif n > mid:
            offs[n] = s * pair.o_end
    return TrajectoryField(offs.astype(DTYPE))


def interpolate(pair, n_steps, mode="quadratic"):
    if mode == "quadratic":
        return interpolate_quadratic(pair, n_steps)
    if mode == "linear":
        return interpolate_linear(pair, n_steps)
    raise ValueError(f"unknown trajectory mode {mode!r}")


def build_deform_offsets(traj):
    """Tap j samples at its grid position plus the trajectory displacement at step j."""
    if traj.steps != 9:
        raise ValueError(f"deformable offsets need a 9-step trajectory, got {traj.steps}")
    _, h, w, _ = traj.offsets.shape
    d = np.empty((h, w, 18), dtype=DTYPE)
    for j, (dy, dx) in enumerate(TAPS):
        d[:, :, 2 * j] = dy + traj.offsets[j, :, :, 1]
        d[:, :, 2 * j + 1] = dx + traj.offsets[j, :, :, 0]
    return OffsetField(d)


def zero_pair(h, w):
    z = np.zeros((h, w, 2), dtype=DTYPE)
    return DisplacementPair(z, z.copy())


def _resize_bilinear(field, h, w):
    """Resize an H x W x K field to h x w (half-pixel centers, edge clamped)."""
    src_h, src_w = field.shape[:2]
    if (src_h, src_w) == (h, w):
        return field.copy()
    ys = np.clip((np.arange(h) + 0.5) * src_h / h - 0.5, 0, src_h - 1)
    xs = np.clip((np.arange(w) + 0.5) * src_w / w - 0.5, 0, src_w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    ly = (ys - y0)[:, None, None]
    lx = (xs - x0)[None, :, None]
    f = field.astype(np.float64)
    top = f[y0][:, x0] * (1 - lx) + f[y0][:, x1] * lx
    bot = f[y1][:, x0] * (1 - lx) + f[y1][:, x1] * lx
    return top * (1 - ly) + bot * ly


def rescale_displacements(pair, factor):
    """Resample to ``factor`` times the extent and scale magnitudes by ``factor``."""
    if not factor > 0:
        raise ValueError(f"factor must be positive, got {factor}")
    h, w = pair.shape
    nh, nw = int(round(h * factor)), int(round(w * factor))
    if nh < 1 or nw < 1:
        raise ShapeError(f"rescaling {h}x{w} by {factor} leaves no pixels")
    return DisplacementPair(
        as_tensor(_resize_bilinear(pair.o_start, nh, nw) * factor),
        as_tensor(_resize_bilinear(pair.o_end, nh, nw) * factor))


def endpoint_conv(store, prefix):
    return ConvSpec(store[f"{prefix}.weight"], store[f"{prefix}.bias"], padding=1)


def export_trajectory(traj, path):
    """Write offsets as raw little-endian f32 plus a ``.json`` sidecar with the dims."""
    data = np.ascontiguousarray(traj.offsets, dtype="<f4")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data.tobytes())
    os.replace(tmp, path)
    meta = {"dims": list(data.shape), "dtype": "f32le",
            "layout": "steps x height x width x (dx, dy)", "units": "pixels"}
    with open(f"{path}.json.tmp", "w") as fh:
        json.dump(meta, fh)
    os.replace(f"{path}.json.tmp", f"{path}.json")
    return meta


def load_trajectory(path):
    with open(f"{path}.json") as fh:
        meta = json.load(fh)
    data = np.fromfile(path, dtype="<f4")
    return TrajectoryField(data.reshape(meta["dims"]).astype(DTYPE))
