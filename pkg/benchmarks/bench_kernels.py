"""Time every dispatched kernel on its numba path and its pure-numpy path.

    python3 benchmarks/bench_kernels.py [--size 256] [--channels 32] [--repeat 5] [--json out.json]

Both paths run in one process by flipping ``m2ae._accel.USE_NUMBA`` (the same
switch ``M2AE_NUMBA=0`` sets at import). Each kernel is called once per path
before timing, so numba compilation is excluded, and the outputs of the two
paths are compared.
"""
import argparse
import json
import statistics
import time

import numpy as np
from threadpoolctl import threadpool_limits

from m2ae import _accel, kernels
from m2ae.harness import random_offsets
from m2ae.network import synthetic_mask


def cases(size, channels, seed=0):
    rng = np.random.default_rng(seed)
    c, h, w = channels, size, size
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ys, xs = np.nonzero(synthetic_mask(h, w, 0.1, seed))
    ys, xs = ys.astype(np.int64) + 1, xs.astype(np.int64) + 1
    wdw = rng.standard_normal((c, 9)).astype(np.float32)
    vals = rng.standard_normal((c, ys.size)).astype(np.float32)
    idx = (ys - 1) * w + (xs - 1)
    gamma, beta = rng.standard_normal(c).astype(np.float32), rng.standard_normal(c).astype(np.float32)
    d = random_offsets(h, w, rng).d
    offset = rng.uniform(-3, 3, size=(h, w, 2)).astype(np.float32)
    return {
        "gather_taps": lambda: kernels.gather_taps(xp, ys, xs),
        "gather_depthwise": lambda: kernels.gather_depthwise(xp, ys, xs, wdw),
        "scatter_pixels": lambda: kernels.scatter_pixels(np.zeros((c, h * w), np.float32), idx, vals),
        "layer_norm": lambda: kernels.layer_norm(x, gamma, beta, 1e-6),
        "depthwise": lambda: kernels.depthwise(x, wdw.reshape(c, 3, 3), 1),
        "deform_depthwise": lambda: kernels.deform_depthwise(x, d, wdw, gamma),
        "splat": lambda: kernels.splat(x, offset)[0],
    }


def median_ms(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def run(size, channels, repeat):
    if _accel.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rows = []
    saved = _accel.USE_NUMBA
    try:
        for name, fn in cases(size, channels).items():
            out, ms = {}, {}
            for path in ("numba", "numpy"):
                _accel.USE_NUMBA = path == "numba"
                out[path] = fn()
                ms[path] = median_ms(fn, repeat)
            diff = float(np.max(np.abs(out["numba"] - out["numpy"]))) if out["numba"].size else 0.0
            rows.append({"kernel": name, "numba_ms": ms["numba"], "numpy_ms": ms["numpy"],
                         "speedup": ms["numpy"] / ms["numba"], "max_abs_diff": diff})
    finally:
        _accel.USE_NUMBA = saved
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=256, help="feature map height and width")
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the rows here")
    args = p.parse_args()
    with threadpool_limits(limits=1):
        rows = run(args.size, args.channels, args.repeat)
    print(f"{args.channels} x {args.size} x {args.size}, median of {args.repeat}, single thread")
    print(f"{'kernel':<18}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}{'max |diff|':>12}")
    for r in rows:
        print(f"{r['kernel']:<18}{r['numba_ms']:>10.2f}{r['numpy_ms']:>10.2f}"
              f"{r['speedup']:>8.1f}x{r['max_abs_diff']:>12.2e}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"size": args.size, "channels": args.channels, "repeat": args.repeat, "rows": rows},
                      fh, indent=2)


if __name__ == "__main__":
    main()
