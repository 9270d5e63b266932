"""8-bit RGB image and mask files (PNG or binary PPM)."""
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import DTYPE

FORMATS = {".png": "PNG", ".ppm": "PPM"}


class ImageIOError(OSError):
    """Unreadable, truncated or unsupported image file."""


def load_image(path):
    """3 x H x W float32 tensor in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ImageIOError(f"{path}: unsupported image format {im.format}")
            if im.mode not in ("RGB", "RGBA", "L", "P"):
                raise ImageIOError(f"{path}: unsupported pixel mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except ImageIOError:
        raise
    except (OSError, UnidentifiedImageError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1), dtype=DTYPE) / DTYPE(255)


def to_uint8(t):
    """Quantize [0, 1] values with round-half-up and clamping."""
    return np.clip(np.floor(np.asarray(t, np.float64) * 255 + 0.5), 0, 255).astype(np.uint8)


def _atomic_save(im, path):
    ext = os.path.splitext(path)[1].lower()
    if ext not in FORMATS:
        raise ImageIOError(f"{path}: output must end in .png or .ppm")
    tmp = f"{path}.tmp"
    try:
        im.save(tmp, format=FORMATS[ext])
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise ImageIOError(f"{path}: {exc}") from exc


def save_image(t, path):
    t = np.asarray(t)
    if t.ndim != 3 or t.shape[0] != 3:
        raise ValueError(f"expected a 3 x H x W tensor, got {t.shape}")
    _atomic_save(Image.fromarray(np.ascontiguousarray(to_uint8(t).transpose(1, 2, 0))), path)


def save_mask(mask, path):
    """Single-channel 8-bit image: 255 where the mask is 1, else 0."""
    hard = np.asarray(getattr(mask, "hard", mask))
    _atomic_save(Image.fromarray(np.where(hard > 0, 255, 0).astype(np.uint8)), path)


def load_mask(path):
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageIOError(f"{path}: {exc}") from exc
    return (arr > 127).astype(DTYPE)
