"""Evaluation-mode loss terms (no gradients).

Reconstruction = L1 + (1 - SSIM) + gamma * FFT-L1; mask loss = per-scale binary
cross-entropy; offset loss = reblur MSE + alpha * total variation, where the
reblurred frame is the mean of forward-warped sharp frames along the trajectory.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kernels import splat
from .mask import downsample_gt_mask
from .tensor import as_tensor

HOLE_EPS = 1e-6
BCE_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_mask: float = 0.01
    gamma_fft: float = 0.1
    alpha_tv: float = 0.01

    def __post_init__(self):
        if min(self.lambda_mask, self.gamma_fft, self.alpha_tv) < 0:
            raise ValueError("loss weights must be non-negative")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")


def l1(y, y_gt):
    return float(np.mean(np.abs(np.asarray(y, np.float64) - y_gt)))


def gaussian_window(size=11, sigma=1.5):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, g):
    """Separable 'valid' filtering of the last two axes."""
    k = g.shape[0]
    h, w = img.shape[-2:]
    rows = sum(g[i] * img[..., i:h - k + 1 + i, :] for i in range(k))
    return sum(g[i] * rows[..., :, i:w - k + 1 + i] for i in range(k))


def ssim(y, y_gt, window=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0):
    """Mean SSIM over channels with a Gaussian window (valid region only).

    Images smaller than the window use the largest odd window that fits.
    """
    x = np.asarray(y, np.float64)
    t = np.asarray(y_gt, np.float64)
    _same_shape(x, t)
    size = min(window, *x.shape[-2:])
    size -= 1 - size % 2
    g = gaussian_window(size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_x, mu_t = _filter_valid(x, g), _filter_valid(t, g)
    sxx = _filter_valid(x * x, g) - mu_x ** 2
    stt = _filter_valid(t * t, g) - mu_t ** 2
    sxt = _filter_valid(x * t, g) - mu_x * mu_t
    smap = ((2 * mu_x * mu_t + c1) * (2 * sxt + c2)) / ((mu_x ** 2 + mu_t ** 2 + c1) * (sxx + stt + c2))
    return float(smap.mean())


def fft_l1(y, y_gt):
    """Mean absolute difference of real and imaginary 2-D DFT coefficients."""
    fy = np.fft.fft2(np.asarray(y, np.float64), axes=(-2, -1))
    ft = np.fft.fft2(np.asarray(y_gt, np.float64), axes=(-2, -1))
    diff = fy - ft
    return float((np.abs(diff.real).mean() + np.abs(diff.imag).mean()) / 2)


def recon_terms(y, y_gt, gamma=0.1):
    y, y_gt = np.asarray(y), np.asarray(y_gt)
    _same_shape(y, y_gt)
    terms = {"l1": l1(y, y_gt), "ssim": ssim(y, y_gt), "fft": fft_l1(y, y_gt)}
    terms["recon"] = terms["l1"] + (1.0 - terms["ssim"]) + gamma * terms["fft"]
    return terms


def recon_loss(y, y_gt, gamma=0.1):
    return recon_terms(y, y_gt, gamma)["recon"]


def bce(p, gt):
    p = np.clip(np.asarray(p, np.float64), BCE_CLAMP, 1 - BCE_CLAMP)
    gt = np.asarray(gt, np.float64)
    return float(np.mean(-(gt * np.log(p) + (1 - gt) * np.log(1 - p))))


def mask_loss(probs_per_scale, gt):
    """Sum over scales of mean BCE against the max-pooled ground-truth mask."""
    gt = np.asarray(gt)
    total = 0.0
    for p in probs_per_scale:
        p = np.asarray(getattr(p, "probs", p))
        fy, fx = gt.shape[0] // p.shape[0], gt.shape[1] // p.shape[1]
        if fy != fx or fy < 1 or p.shape[0] * fy != gt.shape[0] or p.shape[1] * fx != gt.shape[1]:
            raise ShapeError(f"scale {p.shape} does not divide ground truth {gt.shape}")
        total += bce(p, downsample_gt_mask(gt, fy))
    return total


def splat_image(sharp, offset):
    """Accumulated values and weights of a forward warp, before normalization."""
    sharp = as_tensor(sharp)
    offset = as_tensor(offset)
    if offset.shape != sharp.shape[1:] + (2,):
        raise ShapeError(f"offset {offset.shape} does not match image {sharp.shape}")
    return splat(sharp, offset)


def forward_warp(sharp, offset):
    """Move every pixel by its (dx, dy) offset with bilinear average splatting.

    Pixels that receive no weight keep the source value at that location.
    """
    sharp = as_tensor(sharp)
    acc, weight = splat_image(sharp, offset)
    covered = weight > HOLE_EPS
    out = np.where(covered, acc / np.where(covered, weight, 1.0), sharp)
    return as_tensor(out)


def synthesize_blur(traj, sharp):
    offsets = getattr(traj, "offsets", traj)
    acc = np.zeros(np.shape(sharp), dtype=np.float64)
    for o in offsets:
        acc += forward_warp(sharp, o)
    return as_tensor(acc / len(offsets))


def mse(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    _same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def reblur_loss(traj, sharp_gt, blurred):
    """MSE between the trajectory-averaged warp of ``sharp_gt`` and ``blurred``."""
    return mse(synthesize_blur(traj, sharp_gt), blurred)


def tv_loss(field):
    """Anisotropic TV of an H x W x K field: mean |x-difference| + mean |y-difference|."""
    f = np.asarray(field, np.float64)
    dx = np.abs(np.diff(f, axis=1)).mean() if f.shape[1] > 1 else 0.0
    dy = np.abs(np.diff(f, axis=0)).mean() if f.shape[0] > 1 else 0.0
    return float(dx + dy)


def box_downsample(img, factor):
    """Average non-overlapping ``factor x factor`` cells of a C x H x W image."""
    c, h, w = img.shape
    if h % factor or w % factor:
        raise ShapeError(f"{h}x{w} image is not divisible by {factor}")
    return as_tensor(np.asarray(img, np.float64).reshape(c, h // factor, factor, w // factor, factor)
                     .mean(axis=(2, 4)))


def offset_loss(trajs, sharp_gt, blurred, alpha=0.01):
    """Reblur + alpha * TV summed over scales; each trajectory's extent picks its scale."""
    reblur = tv = 0.0
    h = np.shape(blurred)[1]
    for traj in trajs:
        offsets = getattr(traj, "offsets", traj)
        factor = h // offsets.shape[1]
        x_i = box_downsample(blurred, factor) if factor > 1 else blurred
        y_i = box_downsample(sharp_gt, factor) if factor > 1 else sharp_gt
        reblur += reblur_loss(offsets, y_i, x_i)
        tv += sum(tv_loss(o) for o in offsets)
    return {"reblur": reblur, "tv": tv, "offset": reblur + alpha * tv}


def total_loss(recon, mask, reblur=0.0, tv=0.0, weights=LossWeights()):
    return recon + weights.lambda_mask * mask + reblur + weights.alpha_tv * tv


def evaluate(y, y_gt, blurred=None, probs_per_scale=(), gt_mask=None, trajs=(), weights=LossWeights()):
    """Every loss term as a flat JSON-ready record."""
    rec = recon_terms(y, y_gt, weights.gamma_fft)
    m = mask_loss(probs_per_scale, gt_mask) if gt_mask is not None and probs_per_scale else 0.0
    off = offset_loss(trajs, y_gt, blurred, weights.alpha_tv) if trajs else {"reblur": 0.0, "tv": 0.0}
    record = {"l1": rec["l1"], "ssim": rec["ssim"], "fft": rec["fft"], "recon": rec["recon"],
              "mask": m, "reblur": off["reblur"], "tv": off["tv"]}
    record["total"] = total_loss(rec["recon"], m, off["reblur"], off["tv"], weights)
    return record

