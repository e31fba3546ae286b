"""
Tests for convolution, padding, upsampling and bilinear sampling.
"""

import numpy as np
import pytest

from ktnet import tensor as T
from ktnet.conv import bilinear_sample, conv2d, conv_output_extent, pad2d, upsample_nearest
from ktnet.errors import ShapeError
from ktnet.tensor import Tensor, no_grad

from .conftest import numeric_grad


def naive_conv(x, w, b, stride, dilation, padding):
    """Direct loop definition of cross-correlation with zero padding."""
    n, c, h, wd = x.shape
    k, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, k, oh, ow))
    for i in range(oh):
        for j in range(ow):
            for a in range(kh):
                for bb in range(kw):
                    patch = xp[:, :, i * stride + a * dilation, j * stride + bb * dilation]
                    out[:, :, i, j] += patch @ w[:, :, a, bb].T
    if b is not None:
        out += b[None, :, None, None]
    return out


class TestConv2d:
    """Forward values and validation of conv2d."""

    @pytest.mark.parametrize(
        "stride,dilation,padding",
        [(1, 1, 1), (1, 2, 2), (2, 1, 1), (1, 3, 0)],
    )
    def test_matches_naive(self, rng, stride, dilation, padding):
        x = rng.normal(size=(2, 3, 9, 9))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride, dilation, padding)
        np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, dilation, padding))

    def test_non_integral_extent(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 6, 6))), Tensor(np.zeros((1, 1, 3, 3))), stride=2)

    def test_even_kernel(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 1, 6, 6))), Tensor(np.zeros((1, 1, 2, 2))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(Tensor(np.zeros((1, 2, 6, 6))), Tensor(np.zeros((1, 3, 3, 3))), padding=1)

    def test_output_extent(self):
        assert conv_output_extent(64, 3, 1, 2, 2) == 64
        assert conv_output_extent(9, 3, 2, 1, 1) == 5

    def test_gradients(self, rng):
        x = T.parameter(rng.normal(size=(1, 2, 5, 5)))
        w = T.parameter(rng.normal(size=(3, 2, 3, 3)))
        b = T.parameter(rng.normal(size=3))
        g = rng.normal(size=(1, 3, 3, 3))

        def value() -> float:
            with no_grad():
                out = conv2d(x, w, b, stride=2, dilation=1, padding=1, padding_mode="reflect")
                return float((out.data * g).sum())

        out = conv2d(x, w, b, stride=2, dilation=1, padding=1, padding_mode="reflect")
        T.backward(T.reduce_sum(T.mul(out, Tensor(g))))
        for p in (x, w, b):
            np.testing.assert_allclose(p.grad, numeric_grad(value, p), atol=1e-6)


class TestPadding:
    """Zero and reflect borders."""

    def test_reflect_values(self):
        out = pad2d(Tensor(np.arange(16.0).reshape(4, 4)), 2, "reflect")
        assert out.shape == (8, 8)
        np.testing.assert_array_equal(out.data[2, :], [2, 1, 0, 1, 2, 3, 2, 1])

    def test_reflect_needs_room(self):
        with pytest.raises(ShapeError):
            pad2d(Tensor(np.zeros((2, 2))), 2, "reflect")

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            pad2d(Tensor(np.zeros((4, 4))), 1, "wrap")

    def test_reflect_gradient(self, rng):
        x = T.parameter(rng.normal(size=(2, 4, 5)))
        g = rng.normal(size=(2, 8, 9))

        def value() -> float:
            with no_grad():
                return float((pad2d(x, 2, "reflect").data * g).sum())

        T.backward(T.reduce_sum(T.mul(pad2d(x, 2, "reflect"), Tensor(g))))
        np.testing.assert_allclose(x.grad, numeric_grad(value, x), atol=1e-6)


class TestSampling:
    """Nearest upsampling and bilinear point sampling."""

    def test_upsample_nearest(self):
        out = upsample_nearest(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2)
        np.testing.assert_array_equal(out.data[0, :, 0], [1, 1, 3, 3])
        assert out.shape == (1, 4, 4)

    def test_upsample_gradient_sums_blocks(self):
        x = T.parameter(np.zeros((1, 2, 2)))
        T.backward(T.reduce_sum(upsample_nearest(x, 3)))
        np.testing.assert_array_equal(x.grad, np.full((1, 2, 2), 9.0))

    def test_bilinear_at_cell_centres_is_exact(self, rng):
        feat = rng.normal(size=(2, 4, 5))
        ys, xs = np.meshgrid(np.arange(4.0), np.arange(5.0), indexing="ij")
        out = bilinear_sample(Tensor(feat), ys, xs)
        np.testing.assert_allclose(out.data, feat)

    def test_bilinear_interpolates_and_clamps(self):
        feat = Tensor(np.array([[[0.0, 2.0], [4.0, 6.0]]]))
        out = bilinear_sample(feat, np.array([0.5, -3.0]), np.array([0.5, 9.0]))
        np.testing.assert_allclose(out.data, [[3.0, 2.0]])

    def test_bilinear_gradient(self, rng):
        feat = T.parameter(rng.normal(size=(2, 4, 4)))
        ys = rng.uniform(0, 3, size=(3, 3))
        xs = rng.uniform(0, 3, size=(3, 3))
        g = rng.normal(size=(2, 3, 3))

        def value() -> float:
            with no_grad():
                return float((bilinear_sample(feat, ys, xs).data * g).sum())

        T.backward(T.reduce_sum(T.mul(bilinear_sample(feat, ys, xs), Tensor(g))))
        np.testing.assert_allclose(feat.grad, numeric_grad(value, feat), atol=1e-6)

    def test_bilinear_needs_three_axes(self):
        with pytest.raises(ShapeError):
            bilinear_sample(Tensor(np.zeros((4, 4))), np.zeros(1), np.zeros(1))
