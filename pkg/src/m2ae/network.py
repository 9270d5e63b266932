"""U-shaped deblurring network built from mask- and motion-aware blocks.

Stage names follow execution order: ``enc1..enc4``, ``middle``, ``dec4..dec1``;
``enc_i`` and ``dec_i`` run at 1/2^(i-1) resolution with ``base_width * 2^(i-1)``
channels and ``middle`` at 1/16 with ``16 * base_width``.

Each block's first half applies LN, the mask-aware ``1x1 -> 3x3 depthwise``
convolution, simple gate, channel attention and a ``1x1`` projection with a
residual; its second half applies LN, a ``1x1`` expand, the trajectory-driven
deformable depthwise convolution, simple gate and a ``1x1`` output projection
with a second residual.
"""
import json
import math
import re
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .deform import DeformDWSpec, deform_dwconv
from .errors import ConfigError, ShapeError
from .ledger import FlopLedger
from .mask import (BlurMask, MaskPredictorParams, downsample_gt_mask, gumbel_mask, predict_probs,
                   threshold_mask, upsample_mask)
from .motion import (build_deform_offsets, endpoint_conv, interpolate, predict_endpoints,
                     rescale_displacements, zero_pair)
from .pruned import masked_dense_forward, pruned_forward
from .tensor import (DTYPE, ConvSpec, as_tensor, conv2d, layer_norm, resample_down, resample_up,
                     simple_gate, simplified_channel_attention)
from .weights import WeightStore

MODES = ("dense", "masked", "pruned")
STAGES = ("enc1", "enc2", "enc3", "enc4", "middle", "dec4", "dec3", "dec2", "dec1")


@dataclass(frozen=True)
class NetworkConfig:
    base_width: int = 32
    encoder_blocks: tuple = (1, 1, 1, 28)
    bottleneck_blocks: int = 1
    decoder_blocks: tuple = (1, 1, 1, 1)  # dec1..dec4, mirroring encoder_blocks
    predictor_stages: tuple = ("enc4",)
    epsilon: float = 0.5
    gumbel_tau: float = 1.0
    mask_sampler: str = "threshold"
    n1: int = 9
    n2: int = 9
    trajectory_mode: str = "quadratic"
    mask_conv_positions: tuple = (1,)
    mode: str = "pruned"
    deform_border: str = "zeros"

    def __post_init__(self):
        for name in ("encoder_blocks", "decoder_blocks", "predictor_stages", "mask_conv_positions"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.encoder_blocks) != 4 or len(self.decoder_blocks) != 4:
            raise ConfigError("encoder and decoder must each have 4 stages")
        if self.base_width < 2 or self.base_width % 2:
            raise ConfigError("base_width must be an even integer >= 2")
        if min(self.encoder_blocks + self.decoder_blocks + (self.bottleneck_blocks,)) < 0:
            raise ConfigError("block counts must be non-negative")
        if self.n1 != 9:
            raise ConfigError("the deformable convolution needs n1 == 9 trajectory steps")
        if self.n2 < 2:
            raise ConfigError("n2 must be >= 2")
        if not set(self.predictor_stages) <= set(STAGES):
            raise ConfigError(f"unknown predictor stage in {self.predictor_stages}")
        if not set(self.mask_conv_positions) <= {1, 2, 3}:
            raise ConfigError("mask_conv_positions must be a subset of {1, 2, 3}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.mask_sampler not in ("threshold", "gumbel"):
            raise ConfigError("mask_sampler must be 'threshold' or 'gumbel'")
        if self.trajectory_mode not in ("quadratic", "linear"):
            raise ConfigError("trajectory_mode must be 'quadratic' or 'linear'")
        if self.deform_border not in ("zeros", "clamp"):
            raise ConfigError("deform_border must be 'zeros' or 'clamp'")
        if not 0 < self.epsilon < 1 or not self.gumbel_tau > 0:
            raise ConfigError("epsilon must be in (0, 1) and gumbel_tau positive")

    def blocks(self, stage):
        if stage == "middle":
            return self.bottleneck_blocks
        idx = int(stage[3]) - 1
        return (self.encoder_blocks if stage.startswith("enc") else self.decoder_blocks)[idx]

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def stage_factor(stage):
    return 16 if stage == "middle" else 2 ** (int(stage[3]) - 1)


def stage_channels(cfg, stage):
    return cfg.base_width * stage_factor(stage)


# -- parameter layout ----------------------------------------------------------

def block_shapes(prefix, c):
    return {
        f"{prefix}.ln1.weight": (c,), f"{prefix}.ln1.bias": (c,),
        f"{prefix}.expand.weight": (2 * c, c, 1, 1), f"{prefix}.expand.bias": (2 * c,),
        f"{prefix}.dw.weight": (2 * c, 1, 3, 3), f"{prefix}.dw.bias": (2 * c,),
        f"{prefix}.sca.weight": (c, c, 1, 1), f"{prefix}.sca.bias": (c,),
        f"{prefix}.proj.weight": (c, c, 1, 1), f"{prefix}.proj.bias": (c,),
        f"{prefix}.ln2.weight": (c,), f"{prefix}.ln2.bias": (c,),
        f"{prefix}.mid.weight": (2 * c, c, 1, 1), f"{prefix}.mid.bias": (2 * c,),
        f"{prefix}.deform.weight": (2 * c, 3, 3), f"{prefix}.deform.bias": (2 * c,),
        f"{prefix}.out.weight": (c, c, 1, 1), f"{prefix}.out.bias": (c,),
    }


def predictor_shapes(prefix, c):
    h = c // 2
    return {
        f"{prefix}.mask.ln.weight": (c,), f"{prefix}.mask.ln.bias": (c,),
        f"{prefix}.mask.fc1.weight": (c, c), f"{prefix}.mask.fc1.bias": (c,),
        f"{prefix}.mask.fc2.weight": (h, 2 * c), f"{prefix}.mask.fc2.bias": (h,),
        f"{prefix}.mask.fc3.weight": (2, h), f"{prefix}.mask.fc3.bias": (2,),
        f"{prefix}.motion.weight": (4, c, 3, 3), f"{prefix}.motion.bias": (4,),
    }


def weight_shapes(cfg):
    """Every tensor the configured network needs, in a stable order."""
    w = cfg.base_width
    shapes = {"intro.weight": (w, 3, 3, 3), "intro.bias": (w,)}
    for stage in STAGES:
        c = stage_channels(cfg, stage)
        if stage.startswith("dec"):
            shapes[f"up{stage[3]}.weight"] = (4 * c, 2 * c, 1, 1)
            shapes[f"up{stage[3]}.bias"] = (4 * c,)
        if stage in cfg.predictor_stages:
            shapes.update(predictor_shapes(stage, c))
        for b in range(cfg.blocks(stage)):
            shapes.update(block_shapes(f"{stage}.block{b}", c))
        if stage.startswith("enc"):
            shapes[f"down{stage[3]}.weight"] = (2 * c, c, 2, 2)
            shapes[f"down{stage[3]}.bias"] = (2 * c,)
    shapes["ending.weight"] = (3, w, 3, 3)
    shapes["ending.bias"] = (3,)
    return shapes


def _fan_in(name, shape):
    if name.endswith(".bias"):
        return None
    if len(shape) == 4:
        return shape[1] * shape[2] * shape[3]
    if len(shape) == 3:  # deformable depthwise C x 3 x 3
        return 9
    return shape[-1]


def init_weights(cfg, seed=0, scale=1.0):
    """Fan-in scaled uniform initialization; LayerNorm starts at gamma=1, beta=0.

    Biases use the fan-in of their layer's weight, as in common framework defaults.
    """
    rng = np.random.default_rng(seed)
    store = WeightStore()
    shapes = weight_shapes(cfg)
    last_fan = 1
    for name, shape in shapes.items():
        if re.search(r"\.ln\d?\.(weight|bias)$", name):
            store[name] = np.ones(shape) if name.endswith(".weight") else np.zeros(shape)
            continue
        fan = _fan_in(name, shape)
        if fan is not None:
            last_fan = fan
        bound = scale / math.sqrt(fan if fan is not None else last_fan)
        store[name] = (rng.random(shape, dtype=DTYPE) * 2 - 1) * DTYPE(bound)
    return store


# -- block ---------------------------------------------------------------------

@dataclass(frozen=True)
class M2ASBlockParams:
    ln1: tuple
    expand: ConvSpec
    dw: ConvSpec
    sca: ConvSpec
    proj: ConvSpec
    ln2: tuple
    mid: ConvSpec
    deform: DeformDWSpec
    out: ConvSpec

    @classmethod
    def from_store(cls, store, prefix):
        def conv(name, **kw):
            return ConvSpec(store[f"{prefix}.{name}.weight"], store[f"{prefix}.{name}.bias"], **kw)
        c2 = store[f"{prefix}.dw.weight"].shape[0]
        return cls(
            ln1=(store[f"{prefix}.ln1.weight"], store[f"{prefix}.ln1.bias"]),
            expand=conv("expand"), dw=conv("dw", groups=c2), sca=conv("sca"), proj=conv("proj"),
            ln2=(store[f"{prefix}.ln2.weight"], store[f"{prefix}.ln2.bias"]),
            mid=conv("mid"),
            deform=DeformDWSpec(store[f"{prefix}.deform.weight"], store[f"{prefix}.deform.bias"]),
            out=conv("out"),
        )

    @property
    def channels(self):
        return self.proj.out_channels


def _mask_aware(x, convs, mask, mode, ledger, label):
    if mode == "pruned":
        return pruned_forward(x, convs, mask, ledger, label)
    if mode == "masked":
        return masked_dense_forward(x, convs, mask, ledger, label)
    for i, spec in enumerate(convs):
        x = conv2d(x, spec, ledger, f"{label}.{i}")
    return x


def m2as_block(f_in, params, mask, d, mode="masked", positions=(1,), ledger=None, label="block",
               border="zeros"):
    """One mask- and motion-aware block; ``mask`` is ignored in dense mode."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    f_in = as_tensor(f_in)
    c, h, w = f_in.shape
    if c != params.channels:
        raise ShapeError(f"block expects {params.channels} channels, got {c}")
    hard = np.asarray(getattr(mask, "hard", mask)) if mask is not None else np.ones((h, w), DTYPE)
    if hard.shape != (h, w):
        raise ShapeError(f"mask {hard.shape} does not match features {h}x{w}")

    f1 = layer_norm(f_in, *params.ln1)
    f2 = _mask_aware(f1, [params.expand, params.dw], hard, mode if 1 in positions else "dense",
                     ledger, f"{label}.conv")
    f3 = simplified_channel_attention(simple_gate(f2), params.sca, ledger, f"{label}.sca")
    f_mid = _mask_aware(f3, [params.proj], hard, mode if 2 in positions else "dense",
                        ledger, f"{label}.proj") + f_in

    f = layer_norm(f_mid, *params.ln2)
    f4 = _mask_aware(f, [params.mid], hard, mode if 3 in positions else "dense", ledger, f"{label}.mid")
    f5 = simple_gate(deform_dwconv(f4, d, params.deform, border, ledger, f"{label}.deform"))
    return as_tensor(conv2d(f5, params.out, ledger, f"{label}.out") + f_mid)


# -- whole network ---------------------------------------------------------------

@dataclass
class ForwardResult:
    output: np.ndarray
    masks: dict = field(default_factory=dict)  # stage -> BlurMask used by its blocks
    displacements: dict = field(default_factory=dict)  # stage -> DisplacementPair
    ledger: FlopLedger = field(default_factory=FlopLedger)
    produced: tuple = ()  # stages that ran their own predictor / analyzer

    @property
    def q_per_stage(self):
        return {s: m.q for s, m in self.masks.items()}


def _route_mask(mask, src_factor, dst_factor, scale_id):
    if dst_factor >= src_factor:
        hard = downsample_gt_mask(mask.hard, dst_factor // src_factor)
        probs = mask.probs.reshape(hard.shape[0], dst_factor // src_factor, hard.shape[1], -1).max(axis=(1, 3))
    else:
        hard = upsample_mask(mask.hard, src_factor // dst_factor)
        probs = upsample_mask(mask.probs, src_factor // dst_factor)
    return BlurMask(probs.astype(DTYPE), hard, scale_id)


class DeblurNet:
    """A loaded network: validated weights plus configuration (read-only)."""

    def __init__(self, weights, cfg=NetworkConfig()):
        self.cfg = cfg
        store = weights if isinstance(weights, WeightStore) else WeightStore(weights)
        for name, shape in weight_shapes(cfg).items():
            if tuple(store[name].shape) != tuple(shape):
                raise ShapeError(f"weight {name!r} has shape {store[name].shape}, expected {shape}")
        self.intro = ConvSpec(store["intro.weight"], store["intro.bias"], padding=1)
        self.ending = ConvSpec(store["ending.weight"], store["ending.bias"], padding=1)
        self.down = {i: ConvSpec(store[f"down{i}.weight"], store[f"down{i}.bias"], stride=2, padding=0)
                     for i in range(1, 5)}
        self.up = {i: ConvSpec(store[f"up{i}.weight"], store[f"up{i}.bias"]) for i in range(1, 5)}
        self.blocks = {s: [M2ASBlockParams.from_store(store, f"{s}.block{b}") for b in range(cfg.blocks(s))]
                       for s in STAGES}
        self.predictors = {s: (MaskPredictorParams.from_store(store, f"{s}.mask"), endpoint_conv(store, f"{s}.motion"))
                           for s in cfg.predictor_stages}

    def _stage_inputs(self, stage, x, routed, seed, mask_override, ledger):
        cfg = self.cfg
        _, h, w = x.shape
        factor = stage_factor(stage)
        sid = STAGES.index(stage)
        if stage in self.predictors:
            mparams, conv = self.predictors[stage]
            probs = predict_probs(x, mparams, ledger, f"{stage}.mask")
            if cfg.mask_sampler == "gumbel":
                mask = gumbel_mask(probs, cfg.gumbel_tau, seed + sid, scale_id=sid)
            else:
                mask = threshold_mask(probs, cfg.epsilon, scale_id=sid)
            pair = predict_endpoints(x, conv, ledger, f"{stage}.motion")
            routed.append((stage, factor, mask, pair))
        elif routed:
            _, src, m0, p0 = routed[-1]
            mask = _route_mask(m0, src, factor, sid)
            pair = rescale_displacements(p0, src / factor)
        else:
            mask = BlurMask(np.ones((h, w), DTYPE), np.ones((h, w), DTYPE), sid)
            pair = zero_pair(h, w)
        if mask_override is not None:
            if isinstance(mask_override, dict):
                hard = mask_override.get(stage)
            else:
                hard = downsample_gt_mask(mask_override, factor)
            if hard is not None:
                hard = np.asarray(getattr(hard, "hard", hard), dtype=DTYPE)
                if hard.shape != (h, w):
                    raise ShapeError(f"override mask for {stage} is {hard.shape}, expected {h}x{w}")
                mask = BlurMask(mask.probs, hard, sid)
        traj = interpolate(pair, cfg.n1, cfg.trajectory_mode)
        return mask, pair, build_deform_offsets(traj)

    def _run_stage(self, stage, x, mask, d, mode, ledger):
        for b, params in enumerate(self.blocks[stage]):
            x = m2as_block(x, params, mask, d, mode, self.cfg.mask_conv_positions, ledger,
                           f"{stage}.block{b}", self.cfg.deform_border)
        return x

    def forward(self, image, mode=None, seed=0, mask_override=None):
        """Deblur a 3 x H x W image (H, W multiples of 16).

        ``mask_override`` replaces the hard masks: either a full-resolution H x W
        binary array (max-pooled to every stage) or a ``{stage: mask}`` dict.
        """
        mode = mode or self.cfg.mode
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        image = as_tensor(image)
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"input must be 3 x H x W, got {image.shape}")
        _, h, w = image.shape
        if h % 16 or w % 16 or h == 0 or w == 0:
            raise ShapeError(f"input extents {h}x{w} must be positive multiples of 16")
        ledger = FlopLedger()
        result = ForwardResult(image, ledger=ledger)
        routed = []

        x = conv2d(image, self.intro, ledger, "intro.conv")
        skips = {}
        for stage in STAGES:
            i = stage[3] if stage != "middle" else None
            if stage.startswith("dec"):
                x = resample_up(x, self.up[int(i)], ledger, f"up{i}.conv") + skips[i]
            mask, pair, d = self._stage_inputs(stage, x, routed, seed, mask_override, ledger)
            result.masks[stage] = mask
            result.displacements[stage] = pair
            x = self._run_stage(stage, x, mask, d, mode, ledger)
            if stage.startswith("enc"):
                skips[i] = x
                x = resample_down(x, self.down[int(i)], ledger, f"down{i}.conv")
        result.output = as_tensor(conv2d(x, self.ending, ledger, "ending.conv") + image)
        result.produced = tuple(s for s, *_ in routed)
        return result


def forward(image, weights, cfg=NetworkConfig(), **kwargs):
    return DeblurNet(weights, cfg).forward(image, **kwargs)


# -- analytic MAC count ----------------------------------------------------------

def analytic_ledger(cfg, height, width, mode="dense", mask_ratio=None, active=None):
    """MAC ledger of one forward pass computed from shapes alone.

    In pruned mode each stage's mask size comes from ``active[stage] = (q, halo)``
    when given, else ``q = round(mask_ratio * pixels)`` with ``halo = q`` (a
    lower bound: the true halo depends on the mask's shape).
    """
    if height % 16 or width % 16 or height <= 0 or width <= 0:
        raise ShapeError(f"extents {height}x{width} must be positive multiples of 16")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    led = FlopLedger()
    w0 = cfg.base_width
    led.record("intro.conv", height * width * w0 * 3 * 9)
    for stage in STAGES:
        f = stage_factor(stage)
        c = stage_channels(cfg, stage)
        hs, ws = height // f, width // f
        p = hs * ws
        if stage.startswith("dec"):
            led.record(f"up{stage[3]}.conv", (p // 4) * (2 * c) * (4 * c))
        if stage in cfg.predictor_stages:
            hid = c // 2
            led.record(f"{stage}.mask", p * (c * c + c * hid + hid * 2) + c * hid)
            led.record(f"{stage}.motion", p * 4 * c * 9)
        q = halo = p
        if mode == "pruned":
            if active is not None and stage in active:
                q, halo = active[stage]
            elif mask_ratio is not None:
                q = halo = int(round(mask_ratio * p))
        for b in range(cfg.blocks(stage)):
            pre = f"{stage}.block{b}"

            def rec(label, dense_per_px, pos, px_active=None):
                dense = dense_per_px * p
                if mode == "pruned" and pos in cfg.mask_conv_positions:
                    n = q if px_active is None else px_active
                    led.record(label, dense, dense_per_px * n, pruned=True, active_pixels=n,
                               total_pixels=p, kind="masked" if px_active is None else "halo")
                else:
                    led.record(label, dense)

            rec(f"{pre}.conv.0", 2 * c * c, 1, halo)
            rec(f"{pre}.conv.1", 2 * c * 9, 1)
            led.record(f"{pre}.sca", c * c)
            rec(f"{pre}.proj.0", c * c, 2)
            rec(f"{pre}.mid.0", 2 * c * c, 3)
            led.record(f"{pre}.deform.taps", p * 2 * c * 9, kind="deform")
            led.record(f"{pre}.deform.bilinear", p * 2 * c * 9 * 4, kind="deform")
            led.record(f"{pre}.out", p * c * c)
        if stage.startswith("enc"):
            led.record(f"down{stage[3]}.conv", (p // 4) * (2 * c) * c * 4)
    led.record("ending.conv", height * width * 3 * w0 * 9)
    return led


def synthetic_mask(height, width, ratio, seed=0):
    """A compact blob covering ``round(ratio * H * W)`` pixels at a seeded position."""
    if not 0 <= ratio <= 1:
        raise ValueError(f"mask ratio must be in [0, 1], got {ratio}")
    q = int(round(ratio * height * width))
    m = np.zeros((height, width), dtype=DTYPE)
    if q == 0:
        return m
    side_w = min(width, max(1, math.ceil(math.sqrt(q * width / height))))
    rows = math.ceil(q / side_w)
    rng = np.random.default_rng(seed)
    y0 = int(rng.integers(0, height - rows + 1))
    x0 = int(rng.integers(0, width - side_w + 1))
    flat = np.zeros(rows * side_w, dtype=DTYPE)
    flat[:q] = 1
    m[y0:y0 + rows, x0:x0 + side_w] = flat.reshape(rows, side_w)
    return m


def with_mode(cfg, mode):
    return replace(cfg, mode=mode)
