"""Mask-aware convolution: dense masked path and the pixel-pruned inference path.

A mask-aware convolution is a short chain of convolutions (``1x1`` and ``3x3``)
whose result is kept only where the blur mask is 1; elsewhere the input passes
through, tiled along channels to the output width.

The pruned path evaluates only the pixels that can influence the result. The
last layer runs on the Q mask pixels; each ``3x3`` layer widens the set its
input is needed on by one pixel (the halo), so a ``1x1`` expand feeding a
``3x3`` depthwise runs on the mask's 3x3 dilation. ``3x3`` layers are evaluated
as a ``1x1`` product over gathered 3x3 neighborhoods, with weights reshaped to
``out x (in/groups * 9) x 1 x 1``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .kernels import gather_depthwise, gather_taps, scatter_pixels
from .ledger import FlopLedger, flop_report  # noqa: F401  (re-exported)
from .tensor import DTYPE, ConvSpec, as_tensor, conv2d


@dataclass(frozen=True)
class ReparamConv:
    original: ConvSpec
    reshaped_weights: np.ndarray  # out x (in/groups * 9) x 1 x 1

    @property
    def matrix(self):
        return self.reshaped_weights[:, :, 0, 0]

    def apply_gathered(self, taps):
        """Apply to C_in x 9 x Q gathered neighborhoods; returns C_out x Q."""
        spec = self.original
        cin, _, q = taps.shape
        g = spec.groups
        wm = self.matrix
        if g == 1:
            out = wm @ taps.reshape(cin * 9, q)
        elif g == cin == spec.out_channels:
            out = np.einsum("cjq,cj->cq", taps, wm, optimize=False)
        else:
            cout_g = spec.out_channels // g
            out = np.matmul(wm.reshape(g, cout_g, -1), taps.reshape(g, -1, q)).reshape(-1, q)
        if spec.bias is not None:
            out = out + spec.bias[:, None]
        return as_tensor(out)

    def apply_at(self, xp, ys, xs):
        """Gather the neighborhoods of ``(ys, xs)`` from zero-bordered ``xp`` and apply.

        The depthwise case is fused so its C x 9 x Q tap buffer is never built.
        """
        spec = self.original
        if spec.groups == spec.in_channels == spec.out_channels:
            out = gather_depthwise(xp, ys, xs, self.matrix)
            if spec.bias is not None:
                out = out + spec.bias[:, None]
            return as_tensor(out)
        return self.apply_gathered(gather_taps(xp, ys, xs))


def reparameterize(spec):
    """Rewrite a 3x3 convolution as a 1x1 convolution over unfolded taps."""
    if spec.kernel_size != 3:
        raise ValueError(f"reparameterization needs a 3x3 kernel, got {spec.kernel_size}")
    if spec.stride != 1 or spec.padding != 1:
        raise ValueError("reparameterization needs stride 1 and padding 1")
    w = spec.weight
    return ReparamConv(spec, np.ascontiguousarray(w.reshape(w.shape[0], -1, 1, 1)))


def hard_mask(mask):
    return np.asarray(getattr(mask, "hard", mask))


def _check_binary(m):
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("pruned evaluation needs a hard 0/1 mask")


def repeat_channels(f, channels):
    """Tile ``f`` along channels to ``channels`` planes."""
    c = f.shape[0]
    if channels % c:
        raise ShapeError(f"cannot repeat {c} channels to {channels}")
    return np.tile(f, (channels // c, 1, 1)) if channels != c else f


def _check_chain(f, convs, m):
    if f.ndim != 3:
        raise ShapeError(f"features must be C x H x W, got {f.shape}")
    if m.shape != f.shape[1:]:
        raise ShapeError(f"mask {m.shape} does not match features {f.shape[1:]}")
    c = f.shape[0]
    for spec in convs:
        if spec.in_channels != c:
            raise ShapeError(f"conv chain expects {spec.in_channels} channels, got {c}")
        if spec.stride != 1 or spec.kernel_size not in (1, 3) or spec.padding != spec.kernel_size // 2:
            raise ShapeError("mask-aware convs must be 1x1 or 3x3, stride 1, same padding")
        c = spec.out_channels
    return c


def masked_dense_forward(f1, convs, mask, ledger=None, label="maskconv"):
    """``Conv(f1) * m + Rep(f1) * (1 - m)`` with Conv evaluated on every pixel."""
    f1 = as_tensor(f1)
    convs = list(convs)
    m = hard_mask(mask).astype(DTYPE)
    cout = _check_chain(f1, convs, m)
    y = f1
    for i, spec in enumerate(convs):
        y = conv2d(y, spec, ledger, f"{label}.{i}")
    return as_tensor(y * m + repeat_channels(f1, cout) * (1 - m))


def dilate3(m):
    """3x3 binary dilation (zero outside the frame)."""
    mp = np.pad(m.astype(bool), 1)
    h, w = m.shape
    out = np.zeros((h, w), dtype=bool)
    for dy in range(3):
        for dx in range(3):
            out |= mp[dy:dy + h, dx:dx + w]
    return out


def pruned_forward(f1, convs, mask, ledger=None, label="maskconv"):
    """Gather -> 1x1 GEMM -> scatter evaluation of ``masked_dense_forward``.

    The output starts as ``Rep(f1)`` and only mask pixels are overwritten.
    """
    f1 = as_tensor(f1)
    convs = list(convs)
    m = hard_mask(mask)
    cout = _check_chain(f1, convs, m)
    _check_binary(m)
    m = m.astype(bool)
    h, w = m.shape

    # pixel sets each layer must produce, last layer = mask pixels
    supports = [m]
    for spec in reversed(convs[1:]):
        supports.append(dilate3(supports[-1]) if spec.kernel_size == 3 else supports[-1])
    supports.reverse()

    out = repeat_channels(f1, cout)
    if out is f1:
        out = f1.copy()
    cur = f1  # full-frame map holding valid values on the previous support
    padded = False  # whether ``cur`` carries a one-pixel zero border
    for i, (spec, sup) in enumerate(zip(convs, supports)):
        ys, xs = np.nonzero(sup)
        n = ys.shape[0]
        last = i == len(convs) - 1
        if ledger is not None:
            ledger.record(f"{label}.{i}", spec.macs(h, w), n * spec.macs(1, 1), pruned=True,
                          active_pixels=n, total_pixels=h * w, kind="masked" if last else "halo")
        if spec.kernel_size == 1:
            cw = w + 2 if padded else w
            flat = (ys + padded) * cw + (xs + padded)
            vals = spec.weight[:, :, 0, 0] @ np.take(cur.reshape(cur.shape[0], -1), flat, axis=1)
            if spec.bias is not None:
                vals = vals + spec.bias[:, None]
        else:
            src = cur if padded else np.pad(cur, ((0, 0), (1, 1), (1, 1)))
            vals = reparameterize(spec).apply_at(src, ys, xs)
        if last:
            scatter_pixels(out.reshape(cout, -1), ys * w + xs, vals)
        else:
            # zero-bordered buffer: np.zeros is lazily paged, so a compact support
            # touches little memory, and a following 3x3 gathers without re-padding
            cur = np.zeros((spec.out_channels, h + 2, w + 2), dtype=DTYPE)
            scatter_pixels(cur.reshape(spec.out_channels, -1), (ys + 1) * (w + 2) + xs + 1, vals)
            padded = True
    return as_tensor(out)
