"""Command-line entry point.

Exit codes: 0 success, 1 I/O error, 2 shape/config error, 3 tolerance violation.
"""
import argparse
import contextlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import _accel
from .errors import ConfigError, FormatError, MissingWeightError, ShapeError
from .harness import bench, block_trial, network_trial
from .imageio import load_image, save_image, save_mask
from .ledger import flop_report
from .motion import export_trajectory, interpolate
from .network import MODES, DeblurNet, NetworkConfig, analytic_ledger, init_weights
from .weights import load_weights, save_weights

EXIT_OK, EXIT_IO, EXIT_SHAPE, EXIT_TOLERANCE = 0, 1, 2, 3


class UsageError(Exception):
    """Bad flag value; maps to exit code 2."""


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError(f"extents must be positive, got {text!r}")
    return h, w


def _ratio(text):
    r = float(text)
    if not 0 <= r <= 1:
        raise argparse.ArgumentTypeError(f"mask ratio must be in [0, 1], got {text}")
    return r


def _round16(n):
    return 16 * math.ceil(n / 16)


def _config(path):
    return NetworkConfig.load(path) if path else NetworkConfig()


def write_json(obj, path):
    """Strict JSON (no NaN/Inf), written to a temp file and renamed into place."""
    text = json.dumps(obj, indent=2, allow_nan=False) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


@contextlib.contextmanager
def _threads(deterministic=False):
    limit = 1 if deterministic else _accel.thread_limit()
    if limit is None:
        yield
        return
    with threadpool_limits(limits=limit):
        yield


# -- commands ------------------------------------------------------------------------

def cmd_run(args):
    cfg = _config(args.config)
    overrides = {}
    if args.threshold is not None:
        overrides["epsilon"] = args.threshold
    if args.mode is not None:
        overrides["mode"] = args.mode
    if overrides:
        cfg = NetworkConfig.from_dict({**json.loads(cfg.to_json()), **overrides})
    image = load_image(args.image)
    try:
        store = load_weights(args.weights)
    except FormatError as exc:
        raise FormatError(f"{args.weights}: {exc.args[0]}", exc.offset) from None
    net = DeblurNet(store, cfg)
    _, h, w = image.shape
    ph, pw = _round16(h), _round16(w)
    padded = np.pad(image, ((0, 0), (0, ph - h), (0, pw - w)), mode="edge")

    with _threads(args.deterministic):
        t0 = time.perf_counter()
        result = net.forward(padded, seed=args.seed)
        wall_ms = (time.perf_counter() - t0) * 1e3
    save_image(result.output[:, :h, :w], args.out)

    if args.mask_dir:
        Path(args.mask_dir).mkdir(parents=True, exist_ok=True)
        for stage in result.produced:
            save_mask(result.masks[stage].hard, Path(args.mask_dir) / f"{stage}.png")
    if args.trajectory_dir:
        Path(args.trajectory_dir).mkdir(parents=True, exist_ok=True)
        for stage in result.produced:
            traj = interpolate(result.displacements[stage], cfg.n1, cfg.trajectory_mode)
            export_trajectory(traj, Path(args.trajectory_dir) / f"{stage}.f32")

    if args.report:
        led = result.ledger
        report = {
            "mode": cfg.mode,
            "input": [h, w],
            "padded": [ph, pw],
            "seed": args.seed,
            "Q_per_stage": result.q_per_stage,
            "flops": {
                "dense": led.dense_total,
                "actual": led.actual_total,
                "ratio": led.actual_total / led.dense_total,
                "pruned_entries": [
                    {"op": e.op, "dense": e.dense_macs, "actual": e.actual_macs, "ratio": e.ratio,
                     "active_pixels": e.active_pixels, "total_pixels": e.total_pixels, "kind": e.kind}
                    for e in led.entries if e.pruned
                ],
            },
        }
        if not args.deterministic:
            report["wall_ms"] = wall_ms
        write_json(report, args.report)
    return EXIT_OK


def cmd_equiv_check(args):
    if args.trials == 0:
        print("warning: --trials 0, nothing checked (vacuous pass)", file=sys.stderr)
        return EXIT_OK
    if args.trials < 0:
        raise UsageError("--trials must be >= 0")
    h, w = args.size
    if h % 16 or w % 16:
        raise UsageError(f"--size {h}x{w}: network trials need multiples of 16")
    worst_block = worst_net = 0.0
    with _threads(True):
        for t in range(args.trials):
            seed = args.seed + t
            eb = block_trial(seed, (h, w))
            en, out, _ = network_trial(seed, (h, w))
            en /= max(float(np.max(np.abs(out.output))), 1e-12)
            worst_block, worst_net = max(worst_block, eb), max(worst_net, en)
            if not (eb <= args.tolerance and en <= args.tolerance):
                print(f"FAIL seed={seed}: block rel err {eb:.3e}, network rel err {en:.3e} "
                      f"> tolerance {args.tolerance:g}")
                return EXIT_TOLERANCE
    print(f"ok: {args.trials} trials at {h}x{w}; max block rel err {worst_block:.3e}, "
          f"max network rel err {worst_net:.3e} (tolerance {args.tolerance:g})")
    return EXIT_OK


def cmd_flops(args):
    if args.height <= 0 or args.width <= 0:
        raise UsageError(f"invalid extents {args.height}x{args.width}")
    cfg = _config(args.config)
    ph, pw = _round16(args.height), _round16(args.width)
    dense = analytic_ledger(cfg, ph, pw, "dense")
    report = {
        "input": [args.height, args.width],
        "padded": [ph, pw],
        "convention": flop_report(dense)["convention"],
        "dense_macs": dense.dense_total,
        "dense_tmacs": dense.dense_total / 1e12,
        "modules": flop_report(dense)["modules"],
    }
    if args.mask_ratio is not None:
        pruned = analytic_ledger(cfg, ph, pw, "pruned", mask_ratio=args.mask_ratio)
        report["mask_ratio"] = args.mask_ratio
        report["pruned_macs"] = pruned.actual_total
        report["pruned_tmacs"] = pruned.actual_total / 1e12
        report["pruned_positions_macs"] = sum(e.actual_macs for e in pruned.entries if e.pruned)
        report["ratio"] = pruned.actual_total / pruned.dense_total
    write_json(report, args.out)
    return EXIT_OK


def cmd_bench(args):
    h, w = args.size
    if h % 16 or w % 16:
        raise UsageError(f"--size {h}x{w}: must be multiples of 16")
    if args.repeat < 1:
        raise UsageError("--repeat must be >= 1")
    with _threads(True):
        result = bench((h, w), args.mask_ratio, args.repeat, _config(args.config), args.seed, args.scope)
    write_json(result, args.out)
    return EXIT_OK


def cmd_init_weights(args):
    cfg = _config(args.config)
    save_weights(init_weights(cfg, args.seed, args.scale), args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="m2ae", description="Mask-guided pruned deblurring network.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="deblur one image")
    r.add_argument("--image", required=True)
    r.add_argument("--weights", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--threshold", type=float, help="hard-mask threshold epsilon")
    r.add_argument("--config")
    r.add_argument("--report")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--deterministic", action="store_true",
                   help="single thread and no timing fields, so reports are bit-identical")
    r.add_argument("--mask-dir", help="write one mask PNG per predictor stage here")
    r.add_argument("--trajectory-dir", help="write one trajectory file per predictor stage here")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("equiv-check", help="randomized pruned-vs-dense equivalence trials")
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--size", type=_size, default=(32, 32))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--tolerance", type=float, default=1e-5)
    e.set_defaults(func=cmd_equiv_check)

    f = sub.add_parser("flops", help="analytic MAC totals")
    f.add_argument("--height", type=int, required=True)
    f.add_argument("--width", type=int, required=True)
    f.add_argument("--config")
    f.add_argument("--mask-ratio", type=_ratio)
    f.add_argument("--out", help="write the JSON here instead of stdout")
    f.set_defaults(func=cmd_flops)

    b = sub.add_parser("bench", help="median wall time, dense vs pruned")
    b.add_argument("--size", type=_size, default=(512, 512))
    b.add_argument("--mask-ratio", type=_ratio, default=0.1)
    b.add_argument("--repeat", type=int, default=3)
    b.add_argument("--scope", choices=("network", "block"), default="network")
    b.add_argument("--config")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", help="write the JSON here instead of stdout")
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("init-weights", help="write random fan-in-scaled weights")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--out", required=True)
    i.add_argument("--config")
    i.add_argument("--scale", type=float, default=1.0)
    i.set_defaults(func=cmd_init_weights)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ShapeError, ConfigError, MissingWeightError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) and str(exc.filename) not in str(exc) else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
