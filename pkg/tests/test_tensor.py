import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from m2ae.errors import ShapeError
from m2ae.ledger import FlopLedger
from m2ae.tensor import (TAPS, ConvSpec, bilinear_sample, conv2d, layer_norm, pixel_shuffle,
                         resample_down, resample_up, simple_gate, simplified_channel_attention, unfold3)
from m2ae.pruned import reparameterize

from .oracle import conv2d_loops


def test_conv_zero_input_gives_zero():
    spec = ConvSpec(np.random.default_rng(0).standard_normal((1, 1, 3, 3)), np.zeros(1))
    assert np.all(conv2d(np.zeros((1, 3, 3)), spec) == 0)


def test_identity_1x1_is_identity(rng):
    x = rng.standard_normal((1, 5, 7)).astype(np.float32)
    out = conv2d(x, ConvSpec(np.ones((1, 1, 1, 1)), np.zeros(1)))
    np.testing.assert_array_equal(out, x)


def test_box_kernel_center_sum():
    x = np.arange(1, 10, dtype=np.float32).reshape(1, 3, 3)
    out = conv2d(x, ConvSpec(np.ones((1, 1, 3, 3)), padding=1))
    assert out[0, 1, 1] == 45
    assert out[0, 0, 0] == 1 + 2 + 4 + 5


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 10_000),
    k=st.sampled_from([1, 3]),
    stride=st.sampled_from([1, 2]),
    layout=st.sampled_from(["dense", "depthwise", "grouped"]),
    h=st.integers(3, 7),
    w=st.integers(3, 7),
)
def test_conv2d_matches_loop_oracle(seed, k, stride, layout, h, w):
    rng = np.random.default_rng(seed)
    cin, cout, groups = {"dense": (3, 5, 1), "depthwise": (4, 4, 4), "grouped": (4, 6, 2)}[layout]
    wt = rng.standard_normal((cout, cin // groups, k, k)).astype(np.float32)
    b = rng.standard_normal(cout).astype(np.float32)
    x = rng.standard_normal((cin, h, w)).astype(np.float32)
    spec = ConvSpec(wt, b, stride=stride, groups=groups)
    ref = conv2d_loops(x, wt, b, stride, k // 2, groups)
    np.testing.assert_allclose(conv2d(x, spec), ref, rtol=1e-5, atol=1e-5)


def test_depthwise_on_4x4_within_1e6(rng):
    x = rng.random((3, 4, 4)).astype(np.float32)
    wt = rng.random((3, 1, 3, 3)).astype(np.float32)
    out = conv2d(x, ConvSpec(wt, groups=3))
    assert np.max(np.abs(out - conv2d_loops(x, wt, pad=1, groups=3))) <= 1e-6


def test_conv_errors(rng):
    spec = ConvSpec(rng.standard_normal((2, 3, 3, 3)))
    with pytest.raises(ShapeError):
        conv2d(np.zeros((2, 4, 4)), spec)
    with pytest.raises(ShapeError):
        conv2d(np.zeros((3, 1, 1)), ConvSpec(rng.standard_normal((2, 3, 3, 3)), padding=0))
    with pytest.raises(ValueError):
        ConvSpec(np.zeros((3, 2, 3, 3)), groups=2)  # out channels not divisible


def test_conv_records_dense_macs():
    led = FlopLedger()
    conv2d(np.zeros((32, 256, 256), np.float32), ConvSpec(np.zeros((32, 32, 3, 3))), led, "c")
    assert led.entries[0].dense_macs == 603_979_776 == led.entries[0].actual_macs


def test_unfold3_single_pixel():
    out = unfold3(np.array([[[7.0]]], np.float32))
    assert out.shape == (9, 1, 1)
    assert out[4, 0, 0] == 7 and np.count_nonzero(out) == 1


def test_unfold3_tap_order_and_constant_interior(rng):
    x = rng.standard_normal((2, 5, 6)).astype(np.float32)
    u = unfold3(x)
    for c in range(2):
        for j, (dy, dx) in enumerate(TAPS):
            assert u[c * 9 + j, 2, 3] == x[c, 2 + dy, 3 + dx]
    assert u[9 * 1 + 0, 0, 0] == 0  # zero padding
    const = np.full((1, 5, 5), 3.5, np.float32)
    assert np.all(unfold3(const)[:, 2, 2] == 3.5)


@pytest.mark.parametrize("groups", [1, 8])
def test_unfold3_reparam_equals_conv(rng, groups):
    worst = 0.0
    for _ in range(100):
        x = rng.standard_normal((8, 9, 11)).astype(np.float32)
        spec = ConvSpec(rng.standard_normal((8, 8 // groups, 3, 3)), rng.standard_normal(8), groups=groups)
        direct = conv2d(x, spec)
        rep = reparameterize(spec)
        one = ConvSpec(rep.reshaped_weights, spec.bias, groups=groups)
        via = conv2d(unfold3(x), one)
        worst = max(worst, np.max(np.abs(via - direct)) / np.max(np.abs(direct)))
    assert worst <= 1e-5


def test_layer_norm_examples(rng):
    x = np.array([1.0, 3.0], np.float32).reshape(2, 1, 1)
    out = layer_norm(x, np.ones(2), np.zeros(2))
    np.testing.assert_allclose(out[:, 0, 0], [-1, 1], atol=1e-3)
    const = np.full((4, 2, 2), 5.0, np.float32)
    beta = np.arange(4, dtype=np.float32)
    np.testing.assert_allclose(layer_norm(const, np.ones(4), beta), np.broadcast_to(beta[:, None, None], (4, 2, 2)))
    y = layer_norm(rng.standard_normal((16, 6, 6)).astype(np.float32) * 4, np.ones(16), np.zeros(16))
    assert np.max(np.abs(y.mean(axis=0))) <= 1e-5
    assert np.max(np.abs(y.var(axis=0) - 1)) <= 1e-3


def test_simple_gate(rng):
    x = rng.standard_normal((3, 4, 4)).astype(np.float32)
    np.testing.assert_array_equal(simple_gate(np.concatenate([x, np.ones_like(x)])), x)
    assert np.all(simple_gate(np.concatenate([x, np.zeros_like(x)])) == 0)
    assert simple_gate(np.array([2.0, 3.0], np.float32).reshape(2, 1, 1))[0, 0, 0] == 6
    with pytest.raises(ShapeError):
        simple_gate(np.zeros((3, 2, 2)))


def test_channel_attention_examples(rng):
    x = np.ones((3, 4, 4), np.float32)
    eye = ConvSpec(np.eye(3).reshape(3, 3, 1, 1), np.zeros(3))
    np.testing.assert_array_equal(simplified_channel_attention(x, eye), x)
    zero = ConvSpec(np.zeros((3, 3, 1, 1)), np.zeros(3))
    assert np.all(simplified_channel_attention(rng.random((3, 4, 4)), zero) == 0)
    x1 = np.array([[[1.0, 3.0], [2.0, 2.0]]], np.float32)  # mean 2
    out = simplified_channel_attention(x1, ConvSpec(np.full((1, 1, 1, 1), 0.5), np.zeros(1)))
    np.testing.assert_allclose(out, x1)


def test_bilinear_sample():
    x = np.array([[[0.0, 2.0], [4.0, 6.0]]], np.float32)
    assert bilinear_sample(x, 1, 0, 0) == 4
    assert bilinear_sample(x, 0, 0.5, 0) == 1.0
    assert bilinear_sample(x, -5.3, -7.9, 0) == 0.0
    assert bilinear_sample(x, 9, 9, 0) == 6.0
    # linear along an axis between adjacent grid points
    vals = [bilinear_sample(x, t, 1, 0) for t in (0, 0.25, 0.5, 1)]
    np.testing.assert_allclose(vals, [2, 3, 4, 6])


def test_pixel_shuffle_depth_to_space():
    out = pixel_shuffle(np.array([1.0, 2.0, 3.0, 4.0], np.float32).reshape(4, 1, 1))
    np.testing.assert_array_equal(out, [[[1, 2], [3, 4]]])


def test_resample_shapes_and_zero(rng):
    c = 4
    down = ConvSpec(rng.standard_normal((2 * c, c, 2, 2)), stride=2, padding=0)
    up = ConvSpec(rng.standard_normal((4 * c, 2 * c, 1, 1)))
    x = rng.standard_normal((c, 8, 6)).astype(np.float32)
    y = resample_down(x, down)
    assert y.shape == (2 * c, 4, 3)
    assert resample_up(y, up).shape == x.shape
    assert np.all(resample_down(np.zeros_like(x), down) == 0)
    assert np.all(resample_up(np.zeros_like(y), up) == 0)
    with pytest.raises(ShapeError):
        resample_down(np.zeros((c, 5, 6), np.float32), down)
