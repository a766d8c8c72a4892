import numpy as np
import pytest

from intrinsics.layers import (ConvSpec, bilinear_upsample_backward,
                               bilinear_upsample_forward, concat_backward,
                               concat_channels, conv_backward, conv_forward,
                               deconv_backward, deconv_forward,
                               dropout_backward, dropout_forward,
                               max_pool_backward, max_pool_forward,
                               prelu_backward, prelu_forward)
from intrinsics.rng import Rng
from intrinsics.tensor import check_gradient

GRAD_TOL = 1e-4
GRAD_H = 1e-3


def conv_oracle(x, w, b, spec):
    """Direct nested-loop cross-correlation; the independent reference."""
    n, c, h, wd = x.shape
    oh, ow = spec.out_extent(h, wd)
    out = np.zeros((n, spec.out_channels, oh, ow))
    for ni in range(n):
        for o in range(spec.out_channels):
            for oy in range(oh):
                for ox in range(ow):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(c):
                        for ky in range(spec.kernel_h):
                            for kx in range(spec.kernel_w):
                                iy = oy * spec.stride_h + ky - spec.pad_h
                                ix = ox * spec.stride_w + kx - spec.pad_w
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += w[o, ci, ky, kx] * x[ni, ci, iy, ix]
                    out[ni, o, oy, ox] = acc
    return out


class TestConv:
    def test_1x1_identity(self):
        spec = ConvSpec(1, 1, 1, 1)
        x = Rng(0).normal((1, 1, 4, 4))
        w = np.ones((1, 1, 1, 1))
        b = np.zeros(1)
        assert np.allclose(conv_forward(x, w, b, spec), x)

    def test_3x3_ones_on_ones(self):
        spec = ConvSpec(1, 1, 3, 3, pad_h=1, pad_w=1)
        x = np.ones((1, 1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        y = conv_forward(x, w, None, spec)[0, 0]
        assert y[1, 1] == 9
        assert y[0, 0] == y[0, 2] == y[2, 0] == y[2, 2] == 4
        assert y[0, 1] == y[1, 0] == y[1, 2] == y[2, 1] == 6

    @pytest.mark.parametrize("seed,shape,spec", [
        (1, (1, 2, 6, 6), ConvSpec(2, 3, 3, 3, stride_h=2, stride_w=2)),
        (2, (2, 3, 8, 7), ConvSpec(3, 2, 3, 3, pad_h=1, pad_w=1)),
        (3, (1, 1, 5, 9), ConvSpec(1, 4, 1, 3, stride_w=2, pad_w=1)),
        (4, (2, 4, 12, 12), ConvSpec(4, 2, 5, 5, stride_h=2, stride_w=2, pad_h=2, pad_w=2)),
        (5, (1, 2, 11, 12), ConvSpec(2, 2, 4, 2, stride_h=3, pad_h=1)),
    ])
    def test_matches_nested_loop_oracle(self, seed, shape, spec):
        rng = Rng(seed)
        x = rng.normal(shape)
        w = rng.normal((spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w))
        b = rng.normal((spec.out_channels,))
        got = conv_forward(x, w, b, spec)
        want = conv_oracle(x, w, b, spec)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-10

    def test_channel_mismatch_named(self):
        spec = ConvSpec(3, 2, 3, 3)
        x = np.zeros((1, 2, 5, 5))
        w = np.zeros((2, 3, 3, 3))
        with pytest.raises(ValueError, match="channels"):
            conv_forward(x, w, None, spec)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = Rng(100 + seed)
        spec = ConvSpec(2, 3, 3, 3, stride_h=1 + seed % 2, stride_w=1 + seed % 2,
                        pad_h=seed % 2, pad_w=1)
        x = rng.normal((1 + seed % 2, 2, 6, 6))
        w = rng.normal((3, 2, 3, 3))
        b = rng.normal((3,))
        dy_fixed = rng.normal(conv_forward(x, w, b, spec).shape)

        def loss_x(xv):
            y = conv_forward(xv, w, b, spec)
            dx, _, _ = conv_backward(dy_fixed, xv, w, spec)
            return float((y * dy_fixed).sum()), dx

        def loss_w(wv):
            y = conv_forward(x, wv, b, spec)
            _, dw, _ = conv_backward(dy_fixed, x, wv, spec)
            return float((y * dy_fixed).sum()), dw

        def loss_b(bv):
            y = conv_forward(x, w, bv, spec)
            _, _, db = conv_backward(dy_fixed, x, w, spec)
            return float((y * dy_fixed).sum()), db

        assert check_gradient(loss_x, x, GRAD_H) < GRAD_TOL
        assert check_gradient(loss_w, w, GRAD_H) < GRAD_TOL
        assert check_gradient(loss_b, b, GRAD_H) < GRAD_TOL


class TestDeconv:
    @pytest.mark.parametrize("seed,spec,hw", [
        (1, ConvSpec(2, 3, 3, 3, stride_h=2, stride_w=2), (7, 7)),
        (2, ConvSpec(1, 2, 4, 4, stride_h=2, stride_w=2, pad_h=1, pad_w=1), (8, 6)),
        (3, ConvSpec(3, 2, 2, 2), (5, 5)),
        (4, ConvSpec(3, 4, 8, 8, stride_h=4, stride_w=4, pad_h=2, pad_w=2), (16, 16)),
        (5, ConvSpec(2, 2, 5, 3, pad_h=2, pad_w=1), (9, 7)),
    ])
    def test_adjoint_identity(self, seed, spec, hw):
        rng = Rng(200 + seed)
        x = rng.normal((2, spec.in_channels, *hw))
        w = rng.normal((spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w))
        y = rng.normal(conv_forward(x, w, None, spec).shape)
        lhs = float((conv_forward(x, w, None, spec) * y).sum())
        rhs = float((x * deconv_forward(y, w, None, spec)).sum())
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    def test_1x1_identity(self):
        spec = ConvSpec(1, 1, 1, 1)
        x = Rng(6).normal((1, 1, 3, 3))
        w = np.ones((1, 1, 1, 1))
        assert np.allclose(deconv_forward(x, w, None, spec), x)

    def test_stride4_head_extent(self):
        spec = ConvSpec(3, 64, 8, 8, stride_h=4, stride_w=4, pad_h=2, pad_w=2)
        x = Rng(7).normal((1, 64, 16, 16))
        w = Rng(8).normal((64, 3, 8, 8)) * 0.01
        y = deconv_forward(x, w, None, spec)
        assert y.shape == (1, 3, 64, 64)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = Rng(300 + seed)
        spec = ConvSpec(2, 3, 4, 4, stride_h=2, stride_w=2, pad_h=1, pad_w=1)
        x = rng.normal((1, 3, 4 + seed % 3, 5))
        w = rng.normal((3, 2, 4, 4))
        b = rng.normal((2,))
        dy_fixed = rng.normal(deconv_forward(x, w, b, spec).shape)

        def loss_x(xv):
            y = deconv_forward(xv, w, b, spec)
            dx, _, _ = deconv_backward(dy_fixed, xv, w, spec)
            return float((y * dy_fixed).sum()), dx

        def loss_w(wv):
            y = deconv_forward(x, wv, b, spec)
            _, dw, _ = deconv_backward(dy_fixed, x, wv, spec)
            return float((y * dy_fixed).sum()), dw

        def loss_b(bv):
            y = deconv_forward(x, w, bv, spec)
            _, _, db = deconv_backward(dy_fixed, x, w, spec)
            return float((y * dy_fixed).sum()), db

        assert check_gradient(loss_x, x, GRAD_H) < GRAD_TOL
        assert check_gradient(loss_w, w, GRAD_H) < GRAD_TOL
        assert check_gradient(loss_b, b, GRAD_H) < GRAD_TOL


class TestMaxPool:
    def test_constant_routes_to_first(self):
        x = np.ones((1, 1, 4, 4))
        out, idx = max_pool_forward(x, 2, 2)
        assert np.all(out == 1.0)
        dy = np.ones_like(out)
        dx = max_pool_backward(dy, idx, x.shape)
        want = np.zeros((4, 4))
        want[0, 0] = want[0, 2] = want[2, 0] = want[2, 2] = 1.0
        assert np.array_equal(dx[0, 0], want)

    def test_window_example(self):
        x = np.array([[1.0, 3.0], [2.0, 0.0]]).reshape(1, 1, 2, 2)
        out, idx = max_pool_forward(x, 2, 2)
        assert out.ravel()[0] == 3.0
        dx = max_pool_backward(np.ones_like(out), idx, x.shape)
        assert np.array_equal(dx[0, 0], np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_ceil_mode_extents(self):
        # clipped trailing window: 16 -> 8 for a 3x3 stride-2 pool
        x = Rng(9).normal((1, 1, 16, 16))
        out, _ = max_pool_forward(x, 3, 2)
        assert out.shape == (1, 1, 8, 8)
        # window bigger than the input still works while it overlaps
        x = Rng(9).normal((1, 1, 2, 2))
        out, _ = max_pool_forward(x, 3, 2)
        assert out.shape == (1, 1, 1, 1)
        assert out.ravel()[0] == x.max()
        # but a window that cannot overlap the input is rejected
        with pytest.raises(ValueError, match="does not overlap"):
            max_pool_forward(x, 5, 2)

    def test_oracle_small(self):
        x = Rng(10).normal((2, 2, 6, 7))
        out, _ = max_pool_forward(x, 2, 2)
        for n in range(2):
            for c in range(2):
                for i in range(out.shape[2]):
                    for j in range(out.shape[3]):
                        win = x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                        assert out[n, c, i, j] == win.max()

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_away_from_ties(self, seed):
        rng = Rng(400 + seed)
        # continuous random draws: ties have probability zero
        x = rng.normal((1, 2, 6 + seed % 3, 6))
        out0, _ = max_pool_forward(x, 3, 2)
        dy_fixed = rng.normal(out0.shape)

        def loss(xv):
            out, idx = max_pool_forward(xv, 3, 2)
            dx = max_pool_backward(dy_fixed, idx, xv.shape)
            return float((out * dy_fixed).sum()), dx

        assert check_gradient(loss, x, GRAD_H) < GRAD_TOL


class TestBilinearUpsample:
    def test_factor_one_identity(self):
        x = Rng(11).normal((1, 2, 4, 4))
        assert bilinear_upsample_forward(x, 1) is x

    def test_constant_stays_constant(self):
        for factor in (2, 3, 4, 8):
            x = np.full((1, 1, 3, 5), 0.7)
            y = bilinear_upsample_forward(x, factor)
            assert y.shape == (1, 1, 3 * factor, 5 * factor)
            assert np.allclose(y, 0.7)

    @pytest.mark.parametrize("seed,factor,hw", [
        (1, 2, (3, 4)), (2, 4, (4, 4)), (3, 8, (2, 3)), (4, 3, (5, 2)), (5, 2, (7, 7)),
    ])
    def test_adjoint_identity(self, seed, factor, hw):
        rng = Rng(500 + seed)
        x = rng.normal((2, 3, *hw))
        y = rng.normal((2, 3, hw[0] * factor, hw[1] * factor))
        lhs = float((bilinear_upsample_forward(x, factor) * y).sum())
        rhs = float((x * bilinear_upsample_backward(y, factor, x.shape)).sum())
        assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = Rng(600 + seed)
        factor = 2 + seed % 3
        x = rng.normal((1, 2, 3 + seed % 2, 4))
        dy_fixed = rng.normal((1, 2, x.shape[2] * factor, x.shape[3] * factor))

        def loss(xv):
            y = bilinear_upsample_forward(xv, factor)
            dx = bilinear_upsample_backward(dy_fixed, factor, xv.shape)
            return float((y * dy_fixed).sum()), dx

        assert check_gradient(loss, x, GRAD_H) < GRAD_TOL


class TestPrelu:
    def test_positive_passthrough(self):
        x = np.full((1, 2, 1, 1), 5.0)
        a = np.array([0.1, 0.9])
        assert np.array_equal(prelu_forward(x, a), x)

    def test_negative_scaled(self):
        x = np.full((1, 1, 1, 1), -2.0)
        a = np.array([0.25])
        assert prelu_forward(x, a).ravel()[0] == -0.5

    def test_slope_one_is_identity(self):
        x = Rng(12).normal((2, 3, 4, 4))
        assert np.array_equal(prelu_forward(x, np.ones(3)), x)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = Rng(700 + seed)
        x = rng.normal((2, 3, 4, 4))
        x[np.abs(x) < 1e-2] = 0.5  # keep clear of the kink
        a = rng.uniform((3,)) * 0.5 + 0.1
        dy_fixed = rng.normal(x.shape)

        def loss_x(xv):
            y = prelu_forward(xv, a)
            dx, _ = prelu_backward(dy_fixed, xv, a)
            return float((y * dy_fixed).sum()), dx

        def loss_a(av):
            y = prelu_forward(x, av)
            _, da = prelu_backward(dy_fixed, x, av)
            return float((y * dy_fixed).sum()), da

        assert check_gradient(loss_x, x, GRAD_H) < GRAD_TOL
        assert check_gradient(loss_a, a, GRAD_H) < GRAD_TOL


class TestDropout:
    def test_p_zero_identity(self):
        x = Rng(13).normal((1, 2, 4, 4))
        y, mask = dropout_forward(x, 0.0, Rng(1), train_mode=True)
        assert np.array_equal(y, x)
        assert mask is None

    def test_eval_identity(self):
        x = Rng(14).normal((1, 2, 4, 4))
        y, mask = dropout_forward(x, 0.7, Rng(1), train_mode=False)
        assert np.array_equal(y, x)
        assert mask is None

    def test_keep_fraction_and_scaling(self):
        x = np.ones((1, 1, 100, 100))
        y, mask = dropout_forward(x, 0.5, Rng(15), train_mode=True)
        kept = float((mask > 0).mean())
        assert abs(kept - 0.5) < 0.02
        assert abs(float(y.mean()) - 1.0) < 0.03  # inverted scaling keeps E[out] = x

    def test_backward_uses_frozen_mask(self):
        x = Rng(16).normal((1, 1, 8, 8))
        _, mask = dropout_forward(x, 0.5, Rng(17), train_mode=True)
        dy_fixed = Rng(18).normal(x.shape)

        def loss(xv):
            y = xv * mask
            return float((y * dy_fixed).sum()), dropout_backward(dy_fixed, mask)

        assert check_gradient(loss, x, GRAD_H) < GRAD_TOL

    def test_invalid_probability(self):
        with pytest.raises(ValueError):
            dropout_forward(np.zeros((1, 1, 1, 1)), 1.0, Rng(0), True)


class TestConcat:
    def test_concat_with_empty(self):
        x = Rng(19).normal((1, 3, 2, 2))
        empty = np.zeros((1, 0, 2, 2))
        assert np.array_equal(concat_channels(x, empty), x)

    def test_values_in_order(self):
        a = np.array([2.0]).reshape(1, 1, 1, 1)
        b = np.array([3.0, 4.0]).reshape(1, 2, 1, 1)
        out = concat_channels(a, b)
        assert out.shape == (1, 3, 1, 1)
        assert np.array_equal(out.ravel(), [2.0, 3.0, 4.0])

    def test_roundtrip(self):
        a = Rng(20).normal((2, 3, 4, 4))
        b = Rng(21).normal((2, 2, 4, 4))
        da, db = concat_backward(concat_channels(a, b), a.shape[1])
        assert np.array_equal(da, a)
        assert np.array_equal(db, b)

    def test_spatial_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            concat_channels(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 5, 4)))

    @pytest.mark.parametrize("seed", range(5))
    def test_gradients(self, seed):
        rng = Rng(800 + seed)
        a = rng.normal((1, 2, 3, 3))
        b = rng.normal((1, 1 + seed % 3, 3, 3))
        dy_fixed = rng.normal((1, a.shape[1] + b.shape[1], 3, 3))

        def loss_a(av):
            y = concat_channels(av, b)
            da, _ = concat_backward(dy_fixed, av.shape[1])
            return float((y * dy_fixed).sum()), da

        assert check_gradient(loss_a, a, GRAD_H) < GRAD_TOL
