"""Randomized pruned-vs-dense equivalence trials and wall-clock benchmarks."""
import gc
import statistics
import time

import numpy as np

from .mask import BlurMask
from .motion import TrajectoryField, build_deform_offsets
from .network import (DeblurNet, M2ASBlockParams, NetworkConfig, block_shapes, init_weights,
                      m2as_block, synthetic_mask)
from .weights import WeightStore


def random_block(channels, rng):
    """Block parameters with fan-in uniform weights and perturbed LayerNorm affine terms."""
    store = WeightStore()
    last = 1
    for name, shape in block_shapes("b", channels).items():
        if ".ln" in name:
            base = 1.0 if name.endswith("weight") else 0.0
            store[name] = base + 0.1 * rng.standard_normal(shape)
            continue
        if name.endswith(".weight"):
            last = int(np.prod(shape[1:])) if len(shape) == 4 else 9
        bound = 1.0 / np.sqrt(last)
        store[name] = rng.uniform(-bound, bound, size=shape)
    return M2ASBlockParams.from_store(store, "b")


def random_offsets(h, w, rng, scale=1.5):
    traj = rng.uniform(-scale, scale, size=(9, h, w, 2)).astype(np.float32)
    traj[4] = 0
    return build_deform_offsets(TrajectoryField(traj))


def relative_error(a, b):
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), 1e-12))


def block_trial(seed, size=(32, 32), channels=None, positions=(1,)):
    """Relative max error between pruned and masked evaluation of one random block."""
    rng = np.random.default_rng(seed)
    h, w = size
    c = channels or int(rng.choice([4, 8, 16, 32]))
    params = random_block(c, rng)
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    hard = (rng.random((h, w)) < rng.uniform(0.05, 0.95)).astype(np.float32)
    mask = BlurMask(hard, hard)
    d = random_offsets(h, w, rng)
    a = m2as_block(x, params, mask, d, "pruned", positions)
    b = m2as_block(x, params, mask, d, "masked", positions)
    return relative_error(a, b)


def network_trial(seed, size=(64, 64), cfg=None):
    """Max absolute output difference, pruned vs masked, with random weights and mask."""
    cfg = cfg or NetworkConfig()
    rng = np.random.default_rng(seed)
    h, w = size
    net = DeblurNet(init_weights(cfg, seed), cfg)
    image = rng.random((3, h, w), dtype=np.float32)
    override = (rng.random((h, w)) < rng.uniform(0.05, 0.95)).astype(np.float32)
    a = net.forward(image, mode="pruned", seed=seed, mask_override=override)
    b = net.forward(image, mode="masked", seed=seed, mask_override=override)
    return float(np.max(np.abs(a.output - b.output))), a, b


def _timed_ms(fn):
    gc.collect()
    t0 = time.perf_counter()
    fn()
    return (time.perf_counter() - t0) * 1e3


def _interleaved_medians(fns, repeat):
    """Median time per function, alternating between them on every round so
    slow drift in machine load hits all of them alike."""
    times = {name: [] for name in fns}
    for _ in range(repeat):
        for name, fn in fns.items():
            times[name].append(_timed_ms(fn))
    return {name: statistics.median(t) for name, t in times.items()}


def bench(size=(512, 512), mask_ratio=0.1, repeat=3, cfg=None, seed=0, scope="network", warmup=True):
    """Median wall time of dense vs pruned evaluation under a synthetic blob mask."""
    cfg = cfg or NetworkConfig()
    h, w = size
    rng = np.random.default_rng(seed)
    mask = synthetic_mask(h, w, mask_ratio, seed)
    if scope == "network":
        net = DeblurNet(init_weights(cfg, seed), cfg)
        image = rng.random((3, h, w), dtype=np.float32)

        def run(mode):
            return lambda: net.forward(image, mode=mode, mask_override=mask)
    elif scope == "block":
        c = cfg.base_width
        params = random_block(c, rng)
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        bm = BlurMask(mask, mask)
        d = random_offsets(h, w, rng)

        def run(mode):
            return lambda: m2as_block(x, params, bm, d, mode, cfg.mask_conv_positions)
    else:
        raise ValueError(f"unknown bench scope {scope!r}")
    if warmup:
        run("pruned")()
        run("dense")()
    med = _interleaved_medians({"dense": run("dense"), "pruned": run("pruned")}, repeat)
    dense_ms, pruned_ms = med["dense"], med["pruned"]
    return {
        "scope": scope, "size": [h, w], "mask_ratio": mask_ratio, "q": int(mask.sum()),
        "repeat": repeat, "dense_ms": dense_ms, "pruned_ms": pruned_ms,
        "speedup": dense_ms / pruned_ms if pruned_ms > 0 else float("inf"),
    }
