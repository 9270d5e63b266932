"""Per-pixel blur probability and binary blur masks."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import DTYPE, as_tensor, layer_norm

DEFAULT_EPSILON = 0.5
DEFAULT_TAU = 1.0


@dataclass(frozen=True)
class MaskPredictorParams:
    """Weights of the two per-pixel MLPs.

    ``fc1``: C x C applied after a channel LayerNorm. ``fc2``: C/2 x 2C and
    ``fc3``: 2 x C/2, with GELU between them; ``fc3`` emits (blur, sharp) logits.
    """
    ln_weight: np.ndarray
    ln_bias: np.ndarray
    fc1_weight: np.ndarray
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray
    fc2_bias: np.ndarray
    fc3_weight: np.ndarray
    fc3_bias: np.ndarray

    @property
    def channels(self):
        return self.fc1_weight.shape[1]

    @classmethod
    def from_store(cls, store, prefix):
        return cls(*(store[f"{prefix}.{n}"] for n in (
            "ln.weight", "ln.bias", "fc1.weight", "fc1.bias",
            "fc2.weight", "fc2.bias", "fc3.weight", "fc3.bias")))

    def macs(self, pixels):
        c = self.channels
        hidden = self.fc2_weight.shape[0]
        # the global mean vector's half of fc2 is shared by every pixel
        return pixels * (c * c + c * hidden + hidden * 2) + c * hidden


@dataclass(frozen=True)
class BlurMask:
    probs: np.ndarray  # H x W blur probability
    hard: np.ndarray  # H x W, exactly 0 or 1
    scale_id: int = 0

    @property
    def q(self):
        return int(self.hard.sum())


def gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def softmax2(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_probs(f_in, params, ledger=None, label="mask"):
    """H x W x 2 softmax over (blur, sharp) for every pixel of ``f_in``."""
    f_in = as_tensor(f_in)
    c, h, w = f_in.shape
    if c != params.channels:
        raise ShapeError(f"mask predictor expects {params.channels} channels, got {c}")
    x = layer_norm(f_in, params.ln_weight, params.ln_bias).reshape(c, h * w).T  # D x C
    e = x @ params.fc1_weight.T + params.fc1_bias
    g = e.mean(axis=0)
    # concat(e, g) @ fc2^T, with the g half computed once
    w2 = params.fc2_weight
    hid = e @ w2[:, :c].T + (w2[:, c:] @ g + params.fc2_bias)
    logits = gelu(hid) @ params.fc3_weight.T + params.fc3_bias
    if ledger is not None:
        ledger.record(label, params.macs(h * w))
    return softmax2(logits.astype(np.float64)).astype(DTYPE).reshape(h, w, 2)


def _check_probs(probs):
    probs = np.asarray(probs)
    if probs.ndim != 3 or probs.shape[-1] != 2:
        raise ShapeError(f"probabilities must be H x W x 2, got {probs.shape}")
    return probs


def gumbel_noise(shape, seed):
    """Standard Gumbel draws from a counter-based stream keyed by ``seed``.

    Element ``i`` of the flattened output depends only on (seed, i), so any
    partition of the pixels reproduces the same values.
    """
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    u = rng.random(shape)
    u = np.clip(u, np.finfo(np.float64).tiny, 1.0 - np.finfo(np.float64).eps)
    return -np.log(-np.log(u))


def gumbel_mask(probs, temperature=DEFAULT_TAU, rng_seed=0, noise=None, scale_id=0):
    """Straight-through Gumbel-softmax sample of the blur component.

    ``noise`` overrides the Gumbel draws (same shape as ``probs``).
    """
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    probs = _check_probs(probs)
    if noise is None:
        noise = gumbel_noise(probs.shape, rng_seed)
    logp = np.log(np.clip(probs.astype(np.float64), 1e-30, None))
    y = (logp + noise) / temperature
    hard = (y[..., 0] > y[..., 1]).astype(DTYPE)
    return BlurMask(probs[..., 0].astype(DTYPE), hard, scale_id)


def threshold_mask(probs, epsilon=DEFAULT_EPSILON, scale_id=0):
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    probs = _check_probs(probs)
    p0 = probs[..., 0].astype(DTYPE)
    return BlurMask(p0, (p0 > epsilon).astype(DTYPE), scale_id)


def downsample_gt_mask(mask, factor):
    """Max-pool a binary mask by ``factor``: a coarse pixel is 1 if any fine pixel is."""
    mask = np.asarray(mask)
    h, w = mask.shape
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"{h}x{w} mask is not divisible by {factor}")
    return mask.reshape(h // factor, factor, w // factor, factor).max(axis=(1, 3)).astype(DTYPE)


def upsample_mask(mask, factor):
    """Nearest-neighbor enlargement of a mask by an integer factor."""
    return np.repeat(np.repeat(np.asarray(mask), factor, axis=0), factor, axis=1).astype(DTYPE)
