import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darkdet import tensor_ops as ops
from darkdet.errors import NumericError, StructuralError
from oracles import conv2d_naive


def make_conv(filters, in_c, size, stride=1, pad=0, weights=None, bias=None):
    if weights is None:
        weights = np.ones((filters, in_c, size, size), np.float32)
    if bias is None:
        bias = np.zeros(filters, np.float32)
    return ops.ConvParams(filters, size, stride, pad, weights, bias)


class TestConv2d:
    def test_identity_kernel(self):
        x = np.random.default_rng(0).normal(size=(1, 1, 5, 4)).astype(np.float32)
        out = ops.conv2d(x, make_conv(1, 1, 1))
        np.testing.assert_array_equal(out, x)

    def test_zero_weights_give_bias(self):
        x = np.random.default_rng(1).normal(size=(1, 3, 6, 6)).astype(np.float32)
        p = make_conv(2, 3, 3, pad=1, weights=np.zeros((2, 3, 3, 3)), bias=[1.5, -2.0])
        out = ops.conv2d(x, p)
        assert out.shape == (1, 2, 6, 6)
        assert np.all(out[0, 0] == 1.5) and np.all(out[0, 1] == -2.0)

    def test_ones_kernel_on_ones(self):
        # expected values from direct sliding-window summation
        out = ops.conv2d(np.ones((1, 1, 3, 3)), make_conv(1, 1, 3, pad=1))
        np.testing.assert_array_equal(out[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_channel_mismatch_names_both_counts(self):
        with pytest.raises(StructuralError, match=r"4 channels.*expect 3"):
            ops.conv2d(np.ones((1, 4, 3, 3)), make_conv(1, 3, 1))

    def test_flat_weights_are_reshaped(self):
        p = make_conv(2, 3, 1, weights=np.arange(6, dtype=np.float32))
        assert p.weights.shape == (2, 3, 1, 1)
        assert p.in_channels == 3

    @pytest.mark.parametrize("stride", [1, 2, 3])
    @pytest.mark.parametrize("size,pad", [(1, 0), (3, 1), (3, 0), (2, 0), (5, 2)])
    def test_matches_naive_oracle(self, size, pad, stride):
        rng = np.random.default_rng(size * 100 + pad * 10 + stride)
        x = rng.normal(size=(2, 3, 9, 7)).astype(np.float32)
        w = rng.normal(size=(4, 3, size, size)).astype(np.float32)
        b = rng.normal(size=4).astype(np.float32)
        got = ops.conv2d(x, make_conv(4, 3, size, stride, pad, w, b))
        np.testing.assert_allclose(got, conv2d_naive(x, w, b, stride, pad), atol=1e-5)

    def test_batch_norm_applied_after_bias(self):
        x = np.full((1, 1, 2, 2), 2.0, np.float32)
        bn = ops.BatchNorm(gamma=[2.0], beta=[1.0], mean=[1.0], var=[3.0])
        p = ops.ConvParams(1, 1, 1, 0, np.ones((1, 1, 1, 1)), [0.0], bn)
        np.testing.assert_allclose(ops.conv2d(x, p), 2 * 1 / np.sqrt(3.00001) + 1, rtol=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(
        alpha=st.floats(-3, 3), beta=st.floats(-3, 3),
        seed=st.integers(0, 2**16), size=st.sampled_from([1, 3]), stride=st.sampled_from([1, 2]),
    )
    def test_linearity(self, alpha, beta, seed, size, stride):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        y = rng.normal(size=(1, 2, 6, 6)).astype(np.float32)
        p = make_conv(3, 2, size, stride, size // 2, rng.normal(size=(3, 2, size, size)))
        lhs = ops.conv2d(np.float32(alpha) * x + np.float32(beta) * y, p)
        rhs = alpha * ops.conv2d(x, p) + beta * ops.conv2d(y, p)
        np.testing.assert_allclose(lhs, rhs, atol=1e-4)


class TestBatchNorm:
    def test_identity_parameters(self):
        x = np.random.default_rng(2).normal(size=(1, 3, 4, 4)).astype(np.float32)
        out = ops.batch_norm_apply(x, np.ones(3), np.zeros(3), np.zeros(3), np.ones(3))
        # epsilon shrinks values by 1/sqrt(1 + 1e-5): a relative effect
        np.testing.assert_allclose(out, x, rtol=1e-5, atol=1e-7)

    def test_zero_gamma_gives_beta(self):
        x = np.random.default_rng(3).normal(size=(1, 2, 3, 3))
        out = ops.batch_norm_apply(x, np.zeros(2), np.full(2, 7.0), np.zeros(2), np.ones(2))
        assert np.all(out == 7.0)

    def test_scalar_formula(self):
        out = ops.batch_norm_apply(np.full((1, 1, 1, 1), 2.0), [2.0], [1.0], [1.0], [3.0])
        assert out.item() == pytest.approx(2.15470, abs=1e-5)

    def test_nonpositive_denominator(self):
        with pytest.raises(NumericError):
            ops.batch_norm_apply(np.ones((1, 1, 1, 1)), [1.0], [0.0], [0.0], [-1.0], epsilon=1e-5)

    def test_length_mismatch(self):
        with pytest.raises(StructuralError):
            ops.batch_norm_apply(np.ones((1, 2, 1, 1)), [1.0], [0.0], [0.0], [1.0])

    def test_negative_rolling_var_rejected(self):
        with pytest.raises(NumericError):
            ops.BatchNorm(gamma=[1.0], beta=[0.0], mean=[0.0], var=[-0.5])


class TestLeaky:
    def test_positive_pass_through(self):
        x = np.abs(np.random.default_rng(4).normal(size=(1, 2, 3, 3))).astype(np.float32)
        np.testing.assert_array_equal(ops.leaky_relu(x), x)

    def test_negative_slope(self):
        assert ops.leaky_relu(np.full((1, 1, 1, 1), -1.0)).item() == pytest.approx(-0.1)

    def test_zero_fixed_point(self):
        assert ops.leaky_relu(np.zeros((1, 1, 1, 1))).item() == 0.0


class TestMaxpool:
    def test_constant(self):
        out = ops.maxpool(np.full((1, 2, 6, 6), 3.0), 2, 2)
        assert np.all(out == 3.0)

    def test_two_by_two(self):
        out = ops.maxpool(np.array([[[[1, 2], [3, 4]]]]), 2, 2)
        np.testing.assert_array_equal(out, [[[[4]]]])

    def test_size_one_identity(self):
        x = np.random.default_rng(5).normal(size=(1, 3, 5, 4)).astype(np.float32)
        np.testing.assert_array_equal(ops.maxpool(x, 1, 1), x)

    def test_odd_input_pads_right_bottom(self):
        x = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
        out = ops.maxpool(x, 2, 2)
        np.testing.assert_array_equal(out[0, 0], [[4, 5], [7, 8]])

    def test_size2_stride1_keeps_size(self):
        x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
        out = ops.maxpool(x, 2, 1)
        assert out.shape == x.shape
        # the last row/column only sees the padded -inf neighbors
        np.testing.assert_array_equal(out[0, 0, -1], [13, 14, 15, 15])

    def test_window_too_large(self):
        with pytest.raises(StructuralError):
            ops.maxpool(np.ones((1, 1, 2, 2)), 5, 1, padding=0)

    @settings(max_examples=40, deadline=None)
    @given(
        seed=st.integers(0, 2**16), size=st.integers(1, 4), stride=st.integers(1, 3),
        h=st.integers(4, 9), w=st.integers(4, 9),
    )
    def test_bounds(self, seed, size, stride, h, w):
        x = np.random.default_rng(seed).normal(size=(1, 2, h, w)).astype(np.float32)
        out = ops.maxpool(x, size, stride)
        assert out.shape == (1, 2, ops.maxpool_output_side(h, size, stride), ops.maxpool_output_side(w, size, stride))
        assert out.max() <= x.max()
        assert np.all(np.isfinite(out))


class TestUpsample:
    def test_single_value(self):
        out = ops.upsample_nearest(np.full((1, 1, 1, 1), 5.0), 2)
        np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 5.0))

    def test_block_replication(self):
        out = ops.upsample_nearest(np.array([[[[1, 2], [3, 4]]]]), 2)
        expected = [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]
        np.testing.assert_array_equal(out[0, 0], expected)

    def test_52_to_104(self):
        assert ops.upsample_nearest(np.zeros((1, 4, 52, 52)), 2).shape == (1, 4, 104, 104)

    @pytest.mark.parametrize("factor", [1, 0, 2.5])
    def test_bad_factor(self, factor):
        with pytest.raises(StructuralError):
            ops.upsample_nearest(np.zeros((1, 1, 2, 2)), factor)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16), h=st.integers(1, 7), w=st.integers(1, 7), factor=st.integers(2, 4))
    def test_maxpool_inverts_upsample(self, seed, h, w, factor):
        x = np.random.default_rng(seed).normal(size=(1, 3, h, w)).astype(np.float32)
        up = ops.upsample_nearest(x, factor)
        np.testing.assert_array_equal(ops.maxpool(up, factor, factor, padding=0), x)
        if factor == 2:
            np.testing.assert_array_equal(ops.maxpool(up, 2, 2), x)


class TestConcatShortcut:
    def test_self_concat(self):
        x = np.random.default_rng(6).normal(size=(1, 3, 4, 4)).astype(np.float32)
        out = ops.concat_channels(x, x)
        assert out.shape == (1, 6, 4, 4)
        np.testing.assert_array_equal(out[:, :3], x)
        np.testing.assert_array_equal(out[:, 3:], x)

    def test_shape_arithmetic(self):
        out = ops.concat_channels(np.zeros((1, 3, 13, 13)), np.zeros((1, 5, 13, 13)))
        assert out.shape == (1, 8, 13, 13)

    def test_spatial_mismatch(self):
        with pytest.raises(StructuralError, match=r"\(1, 3, 13, 13\).*\(1, 3, 26, 26\)"):
            ops.concat_channels(np.zeros((1, 3, 13, 13)), np.zeros((1, 3, 26, 26)))

    def test_zero_channel_tensor_rejected(self):
        with pytest.raises(StructuralError):
            ops.concat_channels(np.zeros((1, 3, 2, 2)), np.zeros((1, 0, 2, 2)))

    def test_shortcut(self):
        a = np.array([[[[1.0, 2.0]]]])
        np.testing.assert_array_equal(ops.shortcut_add(a, [[[[3.0, 4.0]]]]), [[[[4.0, 6.0]]]])
        np.testing.assert_array_equal(ops.shortcut_add(a, np.zeros_like(a)), a)
        np.testing.assert_array_equal(ops.shortcut_add(a, a), 2 * a)

    def test_shortcut_mismatch(self):
        with pytest.raises(StructuralError):
            ops.shortcut_add(np.zeros((1, 1, 2, 2)), np.zeros((1, 2, 2, 2)))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**16), ca=st.integers(1, 5), cb=st.integers(1, 5))
    def test_concat_slice_round_trip(self, seed, ca, cb):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(1, ca, 3, 4)).astype(np.float32)
        b = rng.normal(size=(1, cb, 3, 4)).astype(np.float32)
        out = ops.concat_channels(a, b)
        assert out[:, :ca].tobytes() == a.tobytes()
        assert out[:, ca:].tobytes() == b.tobytes()


@pytest.mark.parametrize("h", [4, 7, 10])
@pytest.mark.parametrize("size", [1, 2, 3])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("pad", [0, 1])
def test_output_shape_formulas(h, size, stride, pad):
    x = np.zeros((1, 2, h, h + 1), np.float32)
    out = ops.conv2d(x, make_conv(3, 2, size, stride, pad))
    assert out.shape == (1, 3, (h + 2 * pad - size) // stride + 1, (h + 1 + 2 * pad - size) // stride + 1)
    assert ops.maxpool(x, size, stride).shape[2] == (h + size - 1 - size) // stride + 1
    assert ops.upsample_nearest(x, 2).shape == (1, 2, 2 * h, 2 * (h + 1))


def test_tensor_validation():
    with pytest.raises(StructuralError):
        ops.as_tensor(np.zeros((2, 2)))
    assert ops.as_tensor(np.zeros((1, 1, 1, 1), np.float64)).dtype == np.float32
