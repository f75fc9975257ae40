import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sssa.conv import (
    BNParams,
    ConfigurationError,
    ConvParams,
    batchnorm,
    conv2d,
    conv2d_backward,
    conv2d_naive,
    gl_sps,
    output_size,
)
from sssa.tensor import ShapeError


def random_conv_case(gen, max_hw=8):
    k = int(gen.choice([1, 2, 3]))
    dilation = int(gen.integers(1, 3))
    stride = int(gen.integers(1, 3))
    pad = int(gen.integers(0, 3))
    span = dilation * (k - 1) + 1
    h = int(gen.integers(max(1, span - 2 * pad), max_hw + 1))
    w = int(gen.integers(max(1, span - 2 * pad), max_hw + 1))
    cin, cout = int(gen.integers(1, 4)), int(gen.integers(1, 4))
    x = gen.normal(size=(int(gen.integers(1, 3)), cin, h, w))
    p = ConvParams(gen.normal(size=(cout, cin, k, k)), stride, dilation, pad)
    return x, p


class TestConv:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(2, 1, 5, 5))
        np.testing.assert_array_equal(conv2d(x, ConvParams(np.ones((1, 1, 1, 1)))), x)

    def test_all_ones(self):
        out = conv2d(np.ones((1, 1, 4, 4)), ConvParams(np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 9.0))

    def test_dilated_same(self):
        p = ConvParams(np.ones((1, 1, 3, 3)), stride=1, dilation=2, padding=2)
        assert conv2d(np.zeros((1, 1, 8, 8)), p).shape == (1, 1, 8, 8)
        assert output_size(8, 3, 1, 2, 2) == 8

    def test_same_helper(self):
        p = ConvParams.same(np.ones((1, 1, 3, 3)), dilation=2)
        assert p.padding == 2

    def test_output_too_small(self):
        with pytest.raises(ShapeError):
            conv2d(np.zeros((1, 1, 2, 2)), ConvParams(np.ones((1, 1, 3, 3))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            conv2d(np.zeros((1, 2, 4, 4)), ConvParams(np.ones((1, 1, 3, 3))))

    @pytest.mark.parametrize("kw", [{"stride": 0}, {"dilation": 0}, {"padding": -1}])
    def test_param_invariants(self, kw):
        with pytest.raises(ConfigurationError):
            ConvParams(np.ones((1, 1, 3, 3)), **kw)

    @given(st.integers(0, 100_000))
    @settings(max_examples=50, deadline=None)
    def test_matches_naive(self, seed):
        x, p = random_conv_case(np.random.default_rng(seed))
        np.testing.assert_allclose(conv2d(x, p), conv2d_naive(x, p), rtol=0, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_backward_finite_difference(self, seed):
        gen = np.random.default_rng(seed)
        x, p = random_conv_case(gen, max_hw=5)
        g = gen.normal(size=conv2d(x, p).shape)
        dx, dw = conv2d_backward(x, p, g)
        h = 1e-6
        for arr, grad in ((x, dx), (p.weights, dw)):
            for idx in [tuple(gen.integers(0, s) for s in arr.shape) for _ in range(5)]:
                orig = arr[idx]
                arr[idx] = orig + h
                fp = (conv2d(x, p) * g).sum()
                arr[idx] = orig - h
                fm = (conv2d(x, p) * g).sum()
                arr[idx] = orig
                assert grad[idx] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-6)


class TestBatchNorm:
    def test_standardized_input(self):
        x = np.random.default_rng(0).normal(size=(1000, 1))
        x = (x - x.mean()) / x.std()
        out = batchnorm(x, BNParams.identity(1), "train")
        np.testing.assert_allclose(out, x / np.sqrt(1 + 1e-5), rtol=1e-12)

    def test_constant_channel(self):
        p = BNParams(np.ones(2), np.array([0.3, -0.7]))
        out = batchnorm(np.full((4, 2, 3, 3), 5.0), p, "train")
        np.testing.assert_allclose(out[:, 0], 0.3, atol=1e-12)
        np.testing.assert_allclose(out[:, 1], -0.7, atol=1e-12)

    def test_affine(self):
        x = np.random.default_rng(1).normal(size=(50, 3))
        x_hat = batchnorm(x, BNParams.identity(3), "train")
        out = batchnorm(x, BNParams(np.full(3, 2.0), np.ones(3)), "train")
        np.testing.assert_allclose(out, 2 * x_hat + 1, rtol=1e-12)

    def test_running_stats(self):
        gen = np.random.default_rng(2)
        p = BNParams.identity(2)
        x = gen.normal(3.0, 2.0, size=(10, 2, 4, 4))
        batchnorm(x, p, "train")
        n = 10 * 16
        np.testing.assert_allclose(p.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(p.running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))

    def test_infer_uses_running(self):
        p = BNParams(np.ones(1), np.zeros(1), np.array([2.0]), np.array([4.0]))
        np.testing.assert_allclose(batchnorm(np.array([[6.0]]), p, "infer"), [[4.0 / np.sqrt(4 + 1e-5)]])

    def test_negative_variance_rejected(self):
        with pytest.raises(ConfigurationError):
            BNParams(np.ones(1), np.zeros(1), np.zeros(1), -np.ones(1))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            batchnorm(np.zeros((2, 3)), BNParams.identity(2))


class TestGLSPS:
    def branches(self, gen, c=1):
        conv = ConvParams(gen.normal(size=(c, c, 3, 3)), 1, 1, 1)
        dconv = ConvParams(gen.normal(size=(c, c, 3, 3)), 1, 2, 2)
        return conv, dconv

    def test_zero_input(self):
        gen = np.random.default_rng(0)
        conv, dconv = self.branches(gen, 2)
        bn1 = BNParams(np.ones(2), np.array([0.5, 1.0]))
        bn2 = BNParams(np.ones(2), np.array([0.25, -2.0]))
        out = gl_sps(np.zeros((1, 2, 8, 8)), conv, dconv, bn1, bn2)
        np.testing.assert_allclose(out[0, 0], 0.75)
        np.testing.assert_allclose(out[0, 1], -1.0)

    def test_dead_branch(self):
        gen = np.random.default_rng(1)
        conv, _ = self.branches(gen)
        dconv = ConvParams(np.zeros((1, 1, 3, 3)), 1, 2, 2)
        x = gen.normal(size=(2, 1, 8, 8))
        bn1 = BNParams.identity(1)
        expect = batchnorm(conv2d(x, conv), BNParams.identity(1))
        np.testing.assert_allclose(gl_sps(x, conv, dconv, bn1, BNParams.identity(1)), expect)

    def test_against_naive(self):
        gen = np.random.default_rng(2)
        conv, dconv = self.branches(gen)
        x = gen.normal(size=(1, 1, 8, 8))
        bn1, bn2 = BNParams.identity(1), BNParams.identity(1)
        out = gl_sps(x, conv, dconv, bn1, bn2)
        assert out.shape == (1, 1, 8, 8)
        s = np.sqrt(1 + 1e-5)
        np.testing.assert_allclose(out, (conv2d_naive(x, conv) + conv2d_naive(x, dconv)) / s, atol=1e-9)

    def test_shape_mismatch(self):
        gen = np.random.default_rng(3)
        conv = ConvParams(gen.normal(size=(1, 1, 3, 3)), 1, 1, 1)
        dconv = ConvParams(gen.normal(size=(1, 1, 3, 3)), 1, 2, 0)
        with pytest.raises(ConfigurationError):
            gl_sps(np.zeros((1, 1, 8, 8)), conv, dconv, BNParams.identity(1), BNParams.identity(1))
