"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Lines are repeated in the "acceptance" section of the pytest terminal summary.
Run alone with ``pytest tests/test_acceptance.py -v``.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from PIL import Image
from threadpoolctl import threadpool_limits

from m2ae.cli import main
from m2ae.deform import DeformDWSpec, deform_dwconv
from m2ae.harness import bench, block_trial, network_trial
from m2ae.losses import mask_loss, reblur_loss, recon_loss, tv_loss
from m2ae.mask import MaskPredictorParams, gumbel_mask, predict_probs
from m2ae.motion import (DisplacementPair, TrajectoryField, build_deform_offsets, interpolate_linear,
                         interpolate_quadratic, zero_pair)
from m2ae.network import DeblurNet, NetworkConfig, analytic_ledger, init_weights
from m2ae.pruned import reparameterize
from m2ae.tensor import ConvSpec, conv2d, unfold3


@pytest.mark.slow
def test_c01_pruned_matches_dense(verdict):
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        worst_abs = max(network_trial(seed, (64, 64))[0] for seed in range(100))
        elapsed = time.perf_counter() - t0
        worst_block = max(block_trial(seed, (32, 32), positions=p)
                          for seed in range(100) for p in ((1,), (1, 2, 3)))
    ok = worst_abs <= 1e-4 and worst_block <= 1e-5 and elapsed <= 120
    assert verdict(1, "pruned == dense", ok,
                   f"network max abs {worst_abs:.2e}, block max rel {worst_block:.2e}, "
                   f"100 network trials in {elapsed:.1f}s")


def test_c02_flop_fraction_is_exact(verdict):
    cfg = NetworkConfig(base_width=8, encoder_blocks=(1, 1, 1, 2))
    net = DeblurNet(init_weights(cfg, 0), cfg)
    rng = np.random.default_rng(2)
    checked, bad = 0, []
    for trial in range(20):
        override = (rng.random((64, 64)) < rng.uniform(0.02, 0.98)).astype(np.float32)
        res = net.forward(rng.random((3, 64, 64), dtype=np.float32), mode="pruned", mask_override=override)
        for e in res.ledger.entries:
            if e.kind != "masked":
                continue
            hard = res.masks[e.op.split(".", 1)[0]].hard
            q, hw = int(hard.sum()), hard.size
            checked += 1
            if not (e.active_pixels == q and e.total_pixels == hw and e.exact_ratio == Fraction(q, hw)):
                bad.append((trial, e.op))
    ok = checked > 0 and not bad
    assert verdict(2, "MAC fraction == Q/(H*W)", ok, f"{checked} pruned entries checked, {len(bad)} mismatches")


def test_c03_dense_mac_magnitude(verdict):
    cfg = NetworkConfig()
    assert cfg.encoder_blocks == (1, 1, 1, 28) and cfg.bottleneck_blocks == 1 and cfg.base_width == 32
    t0 = time.perf_counter()
    total = analytic_ledger(cfg, 2160, 1440).dense_total / 1e12
    rel = abs(total - 0.764) / 0.764
    assert verdict(3, "dense MACs at 2152x1436", rel <= 0.10,
                   f"{total:.4f} T (padded to 2160x1440), {rel:.1%} off 0.764 T, "
                   f"{time.perf_counter() - t0:.2f}s")


def test_c04_trajectory_closed_form(verdict):
    rng = np.random.default_rng(4)
    start = rng.uniform(-20, 20, size=(1000, 1, 2)).astype(np.float32)
    end = rng.uniform(-20, 20, size=(1000, 1, 2)).astype(np.float32)
    pair = DisplacementPair(start, end)
    quad = interpolate_quadratic(pair, 9).offsets
    lin = interpolate_linear(pair, 9).offsets
    ok = (np.array_equal(quad[0], start) and np.array_equal(quad[8], end) and not np.any(quad[4])
          and all(np.array_equal(quad[k], lin[k]) for k in (0, 4, 8)))
    assert verdict(4, "quadratic trajectory endpoints", ok, "1000 random endpoint pairs, N=9")


def test_c05_deform_degeneracy(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        c, h, w = int(rng.integers(1, 9)), int(rng.integers(3, 20)), int(rng.integers(3, 20))
        x = rng.standard_normal((c, h, w)).astype(np.float32)
        wt = rng.standard_normal((c, 3, 3)).astype(np.float32)
        b = rng.standard_normal(c).astype(np.float32)
        d = build_deform_offsets(TrajectoryField(np.zeros((9, h, w, 2), np.float32)))
        got = deform_dwconv(x, d, DeformDWSpec(wt, b))
        ref = conv2d(x, ConvSpec(wt[:, None], b, groups=c))
        worst = max(worst, float(np.max(np.abs(got - ref))))
    assert verdict(5, "zero-trajectory deform == depthwise", worst <= 1e-6, f"max abs {worst:.2e} over 100 trials")


def test_c06_reparameterization(verdict):
    rng = np.random.default_rng(6)
    worst = {}
    for label in ("dense", "depthwise"):
        worst[label] = 0.0
        for _ in range(100):
            c = int(rng.integers(1, 17))
            o, g = (int(rng.integers(1, 17)), 1) if label == "dense" else (c, c)
            x = rng.standard_normal((c, int(rng.integers(1, 16)), int(rng.integers(1, 16)))).astype(np.float32)
            spec = ConvSpec(rng.standard_normal((o, c // g, 3, 3)), rng.standard_normal(o), groups=g)
            direct = conv2d(x, spec)
            via = conv2d(unfold3(x), ConvSpec(reparameterize(spec).reshaped_weights, spec.bias, groups=g))
            err = np.max(np.abs(via - direct)) / max(float(np.max(np.abs(direct))), 1e-12)
            worst[label] = max(worst[label], float(err))
    ok = max(worst.values()) <= 1e-5
    assert verdict(6, "unfold + 1x1 == 3x3", ok,
                   f"max rel {worst['dense']:.2e} dense, {worst['depthwise']:.2e} depthwise")


def test_c07_loss_identities(verdict):
    rng = np.random.default_rng(7)
    y = rng.random((3, 32, 32)).astype(np.float32)
    recon = recon_loss(y, y)
    traj = interpolate_quadratic(zero_pair(32, 32), 9)
    reblur = reblur_loss(traj, y, y)
    c = 8
    head = MaskPredictorParams(np.ones(c), np.zeros(c), rng.standard_normal((c, c)), rng.standard_normal(c),
                               np.zeros((c // 2, 2 * c)), np.zeros(c // 2), np.zeros((2, c // 2)), np.zeros(2))
    probs = [predict_probs(rng.standard_normal((c, 32 // f, 32 // f)), head)[..., 0] for f in (1, 2, 4)]
    gt = (rng.random((32, 32)) < 0.3).astype(np.float32)
    per_scale = mask_loss(probs, gt) / len(probs)
    tv = tv_loss(np.full((16, 16, 2), 2.5))
    ok = recon == 0 and reblur == 0 and abs(per_scale - math.log(2)) <= 1e-6 and tv == 0
    assert verdict(7, "loss identities", ok,
                   f"recon {recon}, reblur {reblur}, mask/scale - ln2 = {per_scale - math.log(2):.1e}, tv {tv}")


def test_c08_gumbel_statistics(verdict):
    rates, binary = {}, True
    for p in (0.1, 0.5, 0.9):
        probs = np.stack([np.full((100, 100), p), np.full((100, 100), 1 - p)], axis=-1).astype(np.float32)
        hard = gumbel_mask(probs, 1.0, rng_seed=8).hard
        rates[p] = float(hard.mean())
        binary &= bool(np.all((hard == 0) | (hard == 1)))
    ok = binary and all(abs(r - p) <= 0.03 for p, r in rates.items())
    assert verdict(8, "gumbel sampling rates", ok,
                   ", ".join(f"p={p}: {r:.4f}" for p, r in rates.items()) + f", binary={binary}")


def test_c09_deterministic_cli(verdict, tmp_path):
    rng = np.random.default_rng(9)
    Image.fromarray((rng.random((40, 56, 3)) * 255).astype(np.uint8)).save(tmp_path / "in.png")
    assert main(["init-weights", "--seed", "9", "--out", str(tmp_path / "w.bin")]) == 0
    for tag in "ab":
        assert main(["run", "--image", str(tmp_path / "in.png"), "--weights", str(tmp_path / "w.bin"),
                     "--out", str(tmp_path / f"{tag}.png"), "--report", str(tmp_path / f"{tag}.json"),
                     "--mode", "pruned", "--seed", "5", "--deterministic"]) == 0
    same_png = (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    same_json = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert verdict(9, "deterministic runs", same_png and same_json,
                   f"image identical={same_png}, report identical={same_json}")


@pytest.mark.slow
def test_c10_pruned_faster_than_dense(verdict):
    with threadpool_limits(limits=1):
        r = bench((512, 512), 0.1, repeat=5, scope="network")
    ok = r["pruned_ms"] < r["dense_ms"]
    assert verdict(10, "pruned faster at 512x512, ratio 0.1", ok,
                   f"median dense {r['dense_ms']:.0f} ms, pruned {r['pruned_ms']:.0f} ms "
                   f"({r['speedup']:.2f}x, single thread)")
