import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.signal import correlate

from znext import ops
from znext.gradcheck import gradcheck
from znext.tensor import ShapeError, Tensor, precision


def f64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


# conv2d

def test_conv_identity_kernel():
    x = np.ones((1, 1, 3, 3))
    with precision(np.float64):
        out = ops.conv2d(f64(x), f64(np.ones((1, 1, 1, 1)))).data
    np.testing.assert_array_equal(out, x)


def test_conv_ramp_sum():
    x = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)
    with precision(np.float64):
        out = ops.conv2d(f64(x), f64(np.ones((1, 1, 3, 3)))).data
    assert out.shape == (1, 1, 1, 1) and out.item() == 45.0


@pytest.mark.parametrize("stride,padding,groups", [(1, 0, 1), (1, 1, 1), (2, 1, 1), (2, 0, 2), (1, 1, 3)])
def test_conv_matches_scipy_correlate(stride, padding, groups):
    rng = np.random.default_rng(stride * 10 + padding + groups)
    cin, cout = 6, 6
    x = rng.normal(size=(2, cin, 7, 6))
    w = rng.normal(size=(cout, cin // groups, 3, 3))
    b = rng.normal(size=cout)
    with precision(np.float64):
        out = ops.conv2d(f64(x), f64(w), f64(b), stride=stride, padding=padding, groups=groups).data
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cg, og = cin // groups, cout // groups
    ref = np.zeros((2, cout) + correlate(xp[0, 0], w[0, 0], mode="valid").shape)
    for n in range(2):
        for o in range(cout):
            gi = o // og
            for c in range(cg):
                ref[n, o] += correlate(xp[n, gi * cg + c], w[o, c], mode="valid")
            ref[n, o] += b[o]
    ref = ref[:, :, ::stride, ::stride]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv_output_size_formula():
    x = Tensor(np.zeros((1, 2, 9, 8), np.float32))
    w = Tensor(np.zeros((3, 2, 3, 3), np.float32))
    assert ops.conv2d(x, w, stride=2, padding=1).shape == (1, 3, 5, 4)


def test_conv_gradcheck_spec_case():
    rng = np.random.default_rng(0)
    report = gradcheck(ops.conv2d, [rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(4, 3, 3, 3))])
    assert report.ok and report.max_error < 1e-4


def test_conv_shape_errors_name_dimension():
    x = Tensor(np.zeros((1, 3, 4, 4), np.float32))
    with pytest.raises(ShapeError, match="groups"):
        ops.conv2d(x, Tensor(np.zeros((2, 1, 3, 3), np.float32)), groups=2)
    with pytest.raises(ShapeError, match="w.Cin"):
        ops.conv2d(x, Tensor(np.zeros((2, 2, 3, 3), np.float32)))
    with pytest.raises(ShapeError, match="padding"):
        ops.conv2d(x, Tensor(np.zeros((2, 3, 3, 3), np.float32)), padding=-1)


# adaptive pooling

X33 = np.arange(1.0, 10.0).reshape(1, 1, 3, 3)


def test_adaptive_max_example():
    np.testing.assert_array_equal(ops.adaptive_pool(f64(X33), 2, 2, "max").data[0, 0], [[5, 6], [8, 9]])


def test_adaptive_avg_example():
    np.testing.assert_array_equal(ops.adaptive_pool(f64(X33), 2, 2, "avg").data[0, 0], [[3, 4], [6, 7]])


@pytest.mark.parametrize("mode", ["max", "avg"])
def test_adaptive_pool_identity(mode):
    x = np.random.default_rng(1).normal(size=(2, 3, 5, 4)).astype(np.float32)
    np.testing.assert_array_equal(ops.adaptive_pool(Tensor(x), 5, 4, mode).data, x)


def test_adaptive_pool_rejects_upsampling():
    with pytest.raises(ShapeError):
        ops.adaptive_pool(f64(X33), 4, 2, "max")


def _window_ref(x, oh, ow, reducer):
    h, w = x.shape[2:]
    out = np.zeros(x.shape[:2] + (oh, ow))
    for i in range(oh):
        r0, r1 = (i * h) // oh, -((-(i + 1) * h) // oh)
        for j in range(ow):
            c0, c1 = (j * w) // ow, -((-(j + 1) * w) // ow)
            out[:, :, i, j] = reducer(x[:, :, r0:r1, c0:c1], axis=(2, 3))
    return out


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.data())
def test_adaptive_pool_matches_window_definition(h, w, data):
    oh, ow = data.draw(st.integers(1, h)), data.draw(st.integers(1, w))
    x = np.random.default_rng(h * 31 + w).normal(size=(1, 2, h, w))
    with precision(np.float64):
        np.testing.assert_allclose(ops.adaptive_pool(f64(x), oh, ow, "max").data, _window_ref(x, oh, ow, np.max))
        np.testing.assert_allclose(ops.adaptive_pool(f64(x), oh, ow, "avg").data, _window_ref(x, oh, ow, np.mean),
                                   atol=1e-12)


def test_max_pool_gradient_goes_to_first_argmax():
    x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
    from znext.tensor import backward, sum as tsum
    backward(tsum(ops.adaptive_pool(x, 1, 1, "max")))
    np.testing.assert_array_equal(x.grad[0, 0], [[1, 0], [0, 0]])


# bilinear

def test_bilinear_example():
    with precision(np.float64):
        out = ops.bilinear_resize(f64([[[[0.0, 1.0]]]]), 1, 4).data
    np.testing.assert_allclose(out[0, 0, 0], [0, 0.25, 0.75, 1])


def test_bilinear_identity_and_constant():
    x = np.random.default_rng(2).normal(size=(1, 2, 5, 3)).astype(np.float32)
    np.testing.assert_array_equal(ops.bilinear_resize(Tensor(x), 5, 3).data, x)
    c = np.full((1, 1, 4, 6), 0.3, np.float32)
    np.testing.assert_allclose(ops.bilinear_resize(Tensor(c), 7, 2).data, 0.3, rtol=1e-6)


def _bilinear_ref(x, oh, ow):
    h, w = x.shape[2:]
    out = np.zeros(x.shape[:2] + (oh, ow))
    for i in range(oh):
        sy = min(max((i + 0.5) * h / oh - 0.5, 0), h - 1)
        y0 = int(np.floor(sy)); y1 = min(y0 + 1, h - 1); fy = sy - y0
        for j in range(ow):
            sx = min(max((j + 0.5) * w / ow - 0.5, 0), w - 1)
            x0 = int(np.floor(sx)); x1 = min(x0 + 1, w - 1); fx = sx - x0
            out[:, :, i, j] = ((1 - fy) * ((1 - fx) * x[:, :, y0, x0] + fx * x[:, :, y0, x1])
                               + fy * ((1 - fx) * x[:, :, y1, x0] + fx * x[:, :, y1, x1]))
    return out


@pytest.mark.parametrize("oh,ow", [(8, 3), (2, 2), (5, 11), (1, 1)])
def test_bilinear_matches_coordinate_formula(oh, ow):
    x = np.random.default_rng(oh + ow).normal(size=(2, 2, 5, 6))
    with precision(np.float64):
        np.testing.assert_allclose(ops.bilinear_resize(f64(x), oh, ow).data, _bilinear_ref(x, oh, ow), atol=1e-12)


# batchnorm

def test_bn_standardized_batch_is_unchanged():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 2, 5, 5))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    with precision(np.float64):
        out = ops.batchnorm2d(f64(x), f64(np.ones(2)), f64(np.zeros(2)), np.zeros(2), np.ones(2), True).data
    np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), atol=1e-10)


def test_bn_constant_channel_gives_beta():
    x = np.full((2, 1, 3, 3), 4.0)
    with precision(np.float64):
        out = ops.batchnorm2d(f64(x), f64([2.0]), f64([0.7]), np.zeros(1), np.ones(1), True).data
    np.testing.assert_allclose(out, 0.7)


def test_bn_running_stats_update_and_inference():
    rng = np.random.default_rng(4)
    x = rng.normal(2.0, 3.0, size=(3, 2, 4, 4))
    rm, rv = np.zeros(2), np.ones(2)
    with precision(np.float64):
        ops.batchnorm2d(f64(x), f64(np.ones(2)), f64(np.zeros(2)), rm, rv, True)
        n = x.size / 2
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))
        out = ops.batchnorm2d(f64(x), f64(np.ones(2)), f64(np.zeros(2)), rm, rv, False).data
    ref = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    np.testing.assert_allclose(out, ref)


def test_bn_gradcheck_spec_case():
    rng = np.random.default_rng(5)

    def f(x, g, b):
        return ops.batchnorm2d(x, g, b, np.zeros(3), np.ones(3), True)
    assert gradcheck(f, [rng.normal(size=(2, 3, 4, 4)), rng.normal(size=3), rng.normal(size=3)]).ok


def test_bn_rejects_empty_channel():
    with pytest.raises(ShapeError):
        ops.batchnorm2d(f64(np.zeros((0, 2, 3, 3))), f64(np.ones(2)), f64(np.zeros(2)), np.zeros(2), np.ones(2), True)


# temporal conv

def test_temporal_conv_zero_clip_is_zero():
    w = np.random.default_rng(6).normal(size=(3, 3, 4, 3, 3)).astype(np.float32)
    out = ops.temporal_conv_circular(Tensor(np.zeros((4, 3, 5, 5), np.float32)), Tensor(w))
    assert not out.data.any()


def test_temporal_conv_t1_is_plain_conv():
    rng = np.random.default_rng(7)
    x, w = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(2, 2, 1, 3, 3))
    with precision(np.float64):
        a = ops.temporal_conv_circular(f64(x), f64(w)).data
        b = ops.conv2d(f64(x), f64(w[:, :, 0]), padding=1).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_temporal_conv_identity_slice():
    x = np.random.default_rng(8).normal(size=(2, 3, 4, 4))
    w = np.zeros((3, 3, 2, 3, 3))
    w[:, :, 0, 1, 1] = np.eye(3)
    with precision(np.float64):
        np.testing.assert_allclose(ops.temporal_conv_circular(f64(x), f64(w)).data, x, atol=1e-12)


def test_temporal_conv_matches_circular_sum():
    rng = np.random.default_rng(9)
    t = 3
    x, w = rng.normal(size=(2 * t, 2, 4, 5)), rng.normal(size=(2, 2, t, 3, 3))
    with precision(np.float64):
        out = ops.temporal_conv_circular(f64(x), f64(w), t).data
        for clip in range(2):
            for f in range(t):
                ref = sum(ops.conv2d(f64(x[clip * t + (f + s) % t][None]), f64(w[:, :, s]), padding=1).data
                          for s in range(t))
                np.testing.assert_allclose(out[clip * t + f], ref[0], atol=1e-12)


def test_temporal_conv_rejects_t_mismatch():
    with pytest.raises(ShapeError):
        ops.temporal_conv_circular(Tensor(np.zeros((3, 2, 4, 4), np.float32)),
                                   Tensor(np.zeros((2, 2, 2, 3, 3), np.float32)), 3)
