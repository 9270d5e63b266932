"""Both kernel paths against each other and against scalar loops."""
import numpy as np
import pytest

from m2ae import kernels

from .oracle import bilinear_clamp, deform_loops, splat_loops


def test_gather_taps_paths_agree(rng):
    x = rng.standard_normal((5, 7, 9)).astype(np.float32)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ys, xs = np.nonzero(rng.random((7, 9)) < 0.4)
    a = kernels.gather_taps_numba(xp, ys, xs)
    b = kernels.gather_taps_numpy(xp, ys, xs)
    np.testing.assert_array_equal(a, b)
    q = 0
    assert a[2, 4, q] == x[2, ys[q], xs[q]]
    assert a[1, 0, q] == xp[1, ys[q], xs[q]]  # tap 0 is the (-1, -1) neighbour


@pytest.mark.parametrize("clamp", [False, True])
def test_deform_paths_match_oracle(rng, clamp):
    c, h, w = 3, 6, 5
    x = rng.standard_normal((c, h, w)).astype(np.float32)
    d = rng.uniform(-2.5, 2.5, size=(h, w, 18)).astype(np.float32)
    wt = rng.standard_normal((c, 9)).astype(np.float32)
    bias = rng.standard_normal(c).astype(np.float32)
    ref = deform_loops(x, d, wt, bias, bilinear_clamp) if clamp else deform_loops(x, d, wt, bias)
    for fn in (kernels.deform_depthwise_numba, kernels.deform_depthwise_numpy):
        np.testing.assert_allclose(fn(x, d, wt, bias, clamp), ref, atol=2e-5)


def test_splat_paths_match_oracle(rng):
    img = rng.random((2, 6, 7)).astype(np.float32)
    off = rng.uniform(-1.5, 1.5, size=(6, 7, 2)).astype(np.float32)
    acc_ref, w_ref = splat_loops(img, off)
    for fn in (kernels.splat_numba, kernels.splat_numpy):
        acc, w = fn(img, off)
        np.testing.assert_allclose(acc, acc_ref, atol=1e-5)
        np.testing.assert_allclose(w, w_ref, atol=1e-5)


def test_dispatch_follows_flag(kernel_path, rng):
    x = rng.standard_normal((2, 4, 4)).astype(np.float32)
    d = np.zeros((4, 4, 18), np.float32)
    out = kernels.deform_depthwise(x, d, np.ones((2, 9)), np.zeros(2))
    assert out.shape == x.shape and np.isfinite(out).all()


def test_depthwise_paths_bit_identical(rng):
    x = rng.standard_normal((3, 7, 6)).astype(np.float32)
    w = rng.standard_normal((3, 3, 3)).astype(np.float32)
    a = kernels.depthwise_numba(x, w, 1)
    b = kernels.depthwise_numpy(x, w, 1)
    assert a.tobytes() == b.tobytes()


def test_gather_depthwise_matches_taps(rng):
    x = rng.standard_normal((4, 6, 8)).astype(np.float32)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    ys, xs = np.nonzero(rng.random((6, 8)) < 0.5)
    w = rng.standard_normal((4, 9)).astype(np.float32)
    ref = np.einsum("cjq,cj->cq", kernels.gather_taps_numpy(xp, ys, xs).astype(np.float64), w)
    a = kernels.gather_depthwise_numba(xp, ys, xs, w)
    b = kernels.gather_depthwise_numpy(xp, ys, xs, w)
    assert a.tobytes() == b.tobytes()
    np.testing.assert_allclose(a, ref, atol=1e-5)


@pytest.mark.parametrize("shape", [(3, 200), (200, 3), (70, 70), (1, 1)])
def test_transpose(shape, rng):
    a = rng.standard_normal(shape).astype(np.float32)
    np.testing.assert_array_equal(kernels._transpose(a, np.empty(shape[::-1], np.float32)), a.T)


def test_layer_norm_paths_agree(rng):
    x = (rng.standard_normal((16, 5, 7)) * 3 + 1).astype(np.float32)
    g, b = rng.standard_normal((2, 16)).astype(np.float32)
    a = kernels.layer_norm_numba(x, g, b, 1e-6)
    ref = (x - x.mean(0)) / np.sqrt(x.astype(np.float64).var(0) + 1e-6) * g[:, None, None] + b[:, None, None]
    np.testing.assert_allclose(a, kernels.layer_norm_numpy(x, g, b, 1e-6), atol=1e-5)
    np.testing.assert_allclose(a, ref, atol=1e-5)
