import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from znext import ops
from znext.pyramid import align, align_to_main, build_pyramid, downsample, hybrid_downsample, scaled_size
from znext.tensor import ShapeError, Tensor, precision


def ramp(n=1, c=3, h=64, w=64):
    return Tensor(np.arange(n * c * h * w, dtype=np.float32).reshape(n, c, h, w) / (n * c * h * w))


def test_pyramid_sizes():
    pyr = build_pyramid(ramp())
    assert {k: v.shape[2:] for k, v in pyr.items()} == {0.5: (32, 32), 1.0: (64, 64), 1.5: (96, 96)}


def test_main_view_is_untouched():
    x = ramp()
    pyr = build_pyramid(x)
    assert pyr[1.0].data.tobytes() == x.data.tobytes()


def test_half_view_equals_direct_resize():
    x = ramp()
    assert build_pyramid(x)[0.5].data.tobytes() == ops.bilinear_resize(x, 32, 32).data.tobytes()


def test_constant_image_gives_constant_views():
    x = Tensor(np.full((1, 3, 32, 32), 0.25, np.float32))
    for view in build_pyramid(x).values():
        np.testing.assert_allclose(view.data, 0.25, rtol=1e-6)


@pytest.mark.parametrize("shape", [(1, 3, 28, 64), (1, 3, 64, 30), (1, 3, 34, 64)])
def test_pyramid_rejects_small_or_indivisible(shape):
    with pytest.raises(ShapeError):
        build_pyramid(Tensor(np.zeros(shape, np.float32)))


@settings(max_examples=20, deadline=None)
@given(st.integers(8, 40))
def test_scaled_sizes_are_even_and_integral(q):
    n = 4 * q
    assert scaled_size(n, 0.5) == n // 2
    assert scaled_size(n, 1.5) == 3 * n // 2
    assert scaled_size(n, 1.5) % 2 == 0


def test_hybrid_example():
    x = Tensor(np.array([[[[0.0, 2.0], [0.0, 2.0]]]]))
    assert hybrid_downsample(x, 1, 1).data.item() == 1.5


def test_hybrid_identity_and_constant():
    x = np.random.default_rng(0).normal(size=(1, 2, 6, 6)).astype(np.float32)
    np.testing.assert_array_equal(hybrid_downsample(Tensor(x), 6, 6).data, x)
    c = Tensor(np.full((1, 1, 9, 9), -0.5, np.float32))
    np.testing.assert_allclose(hybrid_downsample(c, 4, 3).data, -0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 12), st.integers(0, 10 ** 6))
def test_hybrid_within_window_bounds(h, oh, seed):
    oh = min(oh, h)
    x = np.random.default_rng(seed).normal(size=(1, 1, h, h))
    with precision(np.float64):
        out = hybrid_downsample(Tensor(x), oh, oh).data[0, 0]
    for i in range(oh):
        r0, r1 = (i * h) // oh, -((-(i + 1) * h) // oh)
        for j in range(oh):
            win = x[0, 0, r0:r1, (j * h) // oh:-((-(j + 1) * h) // oh)]
            assert win.min() - 1e-12 <= out[i, j] <= win.max() + 1e-12


def test_align_to_main_identity_when_same_size():
    fs = [Tensor(np.random.default_rng(i).normal(size=(1, 4, 8, 8)).astype(np.float32)) for i in range(3)]
    out = align_to_main(*fs)
    for a, b in zip(out, fs):
        assert a is b


def test_align_to_main_downsample_is_hybrid():
    rng = np.random.default_rng(1)
    f15 = Tensor(rng.normal(size=(1, 4, 12, 12)))
    f10 = Tensor(rng.normal(size=(1, 4, 8, 8)))
    f05 = Tensor(rng.normal(size=(1, 4, 4, 4)))
    a05, _, a15 = align_to_main(f05, f10, f15)
    assert a15.data.tobytes() == hybrid_downsample(f15, 8, 8).data.tobytes()
    assert a05.data.tobytes() == ops.bilinear_resize(f05, 8, 8).data.tobytes()


def test_align_to_main_constant_f15():
    f15 = Tensor(np.full((1, 2, 12, 12), 3.0))
    _, _, a15 = align_to_main(None, Tensor(np.zeros((1, 2, 8, 8))), f15)
    np.testing.assert_allclose(a15.data, 3.0)


def test_align_to_main_channel_mismatch():
    with pytest.raises(ShapeError):
        align_to_main(Tensor(np.zeros((1, 3, 4, 4))), Tensor(np.zeros((1, 4, 8, 8))), None)


def test_shapes_identical_after_alignment():
    rng = np.random.default_rng(2)
    outs = align_to_main(Tensor(rng.normal(size=(2, 4, 5, 5))), Tensor(rng.normal(size=(2, 4, 10, 10))),
                         Tensor(rng.normal(size=(2, 4, 15, 15))))
    assert len({o.shape for o in outs}) == 1


@pytest.mark.parametrize("mode", ["hybrid", "max", "avg", "bilinear", "bicubic"])
def test_downsample_modes_shape(mode):
    assert downsample(Tensor(np.zeros((1, 2, 12, 12))), 8, 8, mode).shape == (1, 2, 8, 8)


def test_align_upsamples_smaller_input():
    assert align(Tensor(np.zeros((1, 2, 4, 4))), (8, 8)).shape == (1, 2, 8, 8)
