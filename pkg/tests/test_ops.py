import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from saugan import ops
from saugan.rng import make_rng


def conv2d_loops(x, w, b, stride, pad):
    """Direct six-nested-loop cross-correlation, the reference for conv2d."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow), dtype=x.dtype)
    for ni in range(n):
        for co in range(cout):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for a in range(kh):
                            for bb in range(kw):
                                yy = i * stride + a - pad
                                xx = j * stride + bb - pad
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += x[ni, ci, yy, xx] * w[co, ci, a, bb]
                    out[ni, co, i, j] = acc + (b[co] if b is not None else 0.0)
    return out


class TestConv2d:
    def test_scalar_kernel_doubles(self):
        x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
        w = np.array([[[[2.0]]]])
        spec = ops.ConvSpec(1, 1, 1, 1, has_bias=False)
        np.testing.assert_array_equal(ops.conv2d(x, w, None, spec), 2 * x)

    def test_identity_kernel(self):
        x = make_rng(0).normal(size=(1, 1, 3, 3))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        spec = ops.ConvSpec(1, 1, 3, 3, padding=1, has_bias=False)
        np.testing.assert_array_equal(ops.conv2d(x, w, None, spec), x)

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_matches_loop_oracle(self, stride, pad):
        rng = make_rng(11)
        x = rng.normal(size=(2, 3, 5, 5))
        w = rng.normal(size=(4, 3, 3, 3))
        b = rng.normal(size=4)
        spec = ops.ConvSpec(3, 4, 3, 3, stride=stride, padding=pad)
        got = ops.conv2d(x, w, b, spec)
        want = conv2d_loops(x, w, b, stride, pad)
        assert np.abs(got - want).max() <= 1e-12

    def test_linearity_without_bias(self):
        rng = make_rng(5)
        x = rng.normal(size=(1, 2, 4, 4))
        y = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        spec = ops.ConvSpec(2, 3, 3, 3, padding=1, has_bias=False)
        lhs = ops.conv2d(2.5 * x - 1.5 * y, w, None, spec)
        rhs = 2.5 * ops.conv2d(x, w, None, spec) - 1.5 * ops.conv2d(y, w, None, spec)
        assert np.abs(lhs - rhs).max() <= 1e-10

    def test_shape_and_finite_errors(self):
        spec = ops.ConvSpec(3, 4, 3, 3)
        x = np.zeros((1, 2, 5, 5))
        w = np.zeros((4, 3, 3, 3))
        with pytest.raises(ops.ShapeError):
            ops.conv2d(x, w, np.zeros(4), spec)
        x = np.zeros((1, 3, 5, 5))
        x[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            ops.conv2d(x, w, np.zeros(4), spec)

    def test_backward_matches_loop_oracle_gradients(self):
        # dW and dX checked against the oracle by linearity of correlation.
        rng = make_rng(3)
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(2, 2, 3, 3))
        spec = ops.ConvSpec(2, 2, 3, 3, padding=1, has_bias=False)
        dy = rng.normal(size=ops.conv2d(x, w, None, spec).shape)
        dx, dw, db = ops.conv2d_backward(x, w, spec, dy)
        assert db is None
        # scalar directional derivative against explicit perturbation
        eps = 1e-6
        v = rng.normal(size=x.shape)
        num = (np.sum(ops.conv2d(x + eps * v, w, None, spec) * dy)
               - np.sum(ops.conv2d(x - eps * v, w, None, spec) * dy)) / (2 * eps)
        assert abs(num - np.sum(dx * v)) <= 1e-6 * max(1.0, abs(num))


def zero_interleave(x, s):
    n, c, h, w = x.shape
    z = np.zeros((n, c, (h - 1) * s + 1, (w - 1) * s + 1), dtype=x.dtype)
    z[:, :, ::s, ::s] = x
    return z


def tconv_via_zero_stuffing(x, w, b, spec):
    """Transpose conv as zero-interleave + conv with the flipped kernel."""
    z = zero_interleave(x, spec.stride)
    wc = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).copy()
    q = spec.kernel_h - 1 - spec.padding
    cs = ops.ConvSpec(spec.in_channels, spec.out_channels, spec.kernel_h,
                      spec.kernel_w, stride=1, padding=q, has_bias=False)
    y = ops.conv2d(z, wc, None, cs)
    if b is not None:
        y = y + b.reshape(1, -1, 1, 1)
    return y


class TestTransposeConv2d:
    def test_single_pixel_scatter(self):
        x = np.ones((1, 1, 1, 1))
        w = np.ones((1, 1, 2, 2))
        spec = ops.ConvSpec(1, 1, 2, 2, stride=2, padding=0, has_bias=False)
        np.testing.assert_array_equal(ops.transpose_conv2d(x, w, None, spec), np.ones((1, 1, 2, 2)))

    def test_zero_input_gives_bias(self):
        x = np.zeros((1, 2, 3, 3))
        w = make_rng(1).normal(size=(2, 3, 3, 3))
        b = np.array([1.0, -2.0, 0.5])
        spec = ops.ConvSpec(2, 3, 3, 3, stride=2, padding=1)
        y = ops.transpose_conv2d(x, w, b, spec)
        np.testing.assert_array_equal(y, np.broadcast_to(b.reshape(1, 3, 1, 1), y.shape))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (2, 0), (2, 1)])
    def test_matches_zero_stuffing_oracle(self, stride, pad):
        rng = make_rng(7)
        x = rng.normal(size=(2, 3, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=2)
        spec = ops.ConvSpec(3, 2, 3, 3, stride=stride, padding=pad)
        got = ops.transpose_conv2d(x, w, b, spec)
        want = tconv_via_zero_stuffing(x, w, b, spec)
        assert got.shape == want.shape
        assert np.abs(got - want).max() <= 1e-12

    def test_output_extent_formula(self):
        spec = ops.ConvSpec(1, 1, 3, 3, stride=2, padding=1, has_bias=False)
        x = np.zeros((1, 1, 8, 8))
        w = np.zeros((1, 1, 3, 3))
        assert ops.transpose_conv2d(x, w, None, spec).shape == (1, 1, 15, 15)


class TestInstanceNorm:
    def test_constant_slice_is_zero(self):
        x = np.full((2, 3, 4, 4), 7.0)
        y = ops.instance_norm(x, np.ones(3), np.zeros(3))
        np.testing.assert_array_equal(y, np.zeros_like(x))

    def test_zero_gamma_gives_beta(self):
        x = make_rng(2).normal(size=(1, 2, 3, 3))
        beta = np.array([1.5, -0.5])
        y = ops.instance_norm(x, np.zeros(2), beta)
        np.testing.assert_array_equal(y, np.broadcast_to(beta.reshape(1, 2, 1, 1), x.shape))

    def test_normalizes_mean_and_variance(self):
        x = make_rng(3).normal(scale=10.0, size=(2, 4, 6, 6))
        y = ops.instance_norm(x, np.ones(4), np.zeros(4), eps=1e-5)
        mean = y.mean(axis=(2, 3))
        var = y.var(axis=(2, 3))
        assert np.abs(mean).max() <= 1e-10
        assert np.abs(var - 1.0).max() <= 1e-6


class TestPointwise:
    def test_relu(self):
        np.testing.assert_array_equal(ops.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_add_zeros_is_identity(self):
        x = make_rng(4).normal(size=(1, 2, 3, 3))
        np.testing.assert_array_equal(ops.elementwise("add", x, np.zeros_like(x)), x)

    def test_mul_matches_scalar_loop(self):
        rng = make_rng(5)
        a = rng.normal(size=(2, 2, 2, 2))
        b = rng.normal(size=(2, 2, 2, 2))
        got = ops.elementwise("mul", a, b)
        for idx in np.ndindex(a.shape):
            assert got[idx] == a[idx] * b[idx]

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ops.ShapeError):
            ops.elementwise("add", np.zeros((2, 3)), np.zeros((3, 2)))

    def test_leaky_relu_slope(self):
        x = np.array([-2.0, 3.0])
        np.testing.assert_allclose(ops.leaky_relu(x, 0.1), [-0.2, 3.0])


class TestChannelSoftmax:
    def test_uniform_on_zeros(self):
        y = ops.channel_softmax(np.zeros((1, 4, 2, 2)))
        np.testing.assert_allclose(y, 0.25)

    def test_analytic_case(self):
        x = np.zeros((1, 4, 1, 1))
        x[0, 0] = np.log(2.0)
        y = ops.channel_softmax(x)[:, :, 0, 0].ravel()
        np.testing.assert_allclose(y, [2 / 5, 1 / 5, 1 / 5, 1 / 5], atol=1e-15)

    def test_matches_exp_normalize_oracle(self):
        x = make_rng(6).normal(size=(2, 5, 3, 3))
        y = ops.channel_softmax(x)
        e = np.exp(x)
        np.testing.assert_allclose(y, e / e.sum(axis=1, keepdims=True), atol=1e-12)
        assert np.abs(y.sum(axis=1) - 1.0).max() <= 1e-6

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
    def test_properties(self, c, h, w, seed):
        x = make_rng(seed).normal(scale=3.0, size=(1, c, h, w))
        y = ops.channel_softmax(x)
        assert y.min() >= 0
        assert np.abs(y.sum(axis=1) - 1.0).max() <= 1e-6
        np.testing.assert_array_equal(y.argmax(axis=1), x.argmax(axis=1))


class TestPixelShuffle:
    def test_defining_convention(self):
        x = np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1)
        y = ops.pixel_shuffle(x, 2)
        np.testing.assert_array_equal(y[0, 0], [[1.0, 2.0], [3.0, 4.0]])

    def test_s1_identity(self):
        x = make_rng(7).normal(size=(2, 3, 4, 4))
        np.testing.assert_array_equal(ops.pixel_shuffle(x, 1), x)

    def test_bijection_against_index_map(self):
        rng = make_rng(8)
        x = rng.normal(size=(2, 8, 3, 3))
        y = ops.pixel_shuffle(x, 2)
        assert y.shape == (2, 2, 6, 6)
        # explicit index map oracle
        for n in range(2):
            for c in range(2):
                for h in range(3):
                    for w in range(3):
                        for dh in range(2):
                            for dw in range(2):
                                assert y[n, c, h * 2 + dh, w * 2 + dw] == x[n, c * 4 + dh * 2 + dw, h, w]
        # values preserved as a multiset and the inverse map recovers the input
        assert sorted(y.ravel()) == sorted(x.ravel())
        np.testing.assert_array_equal(ops.pixel_shuffle_backward(y, 2), x)

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ops.ShapeError):
            ops.pixel_shuffle(np.zeros((1, 3, 2, 2)), 2)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 10_000))
    def test_roundtrip_property(self, c, s, h, w, seed):
        x = make_rng(seed).normal(size=(1, c * s * s, h, w))
        np.testing.assert_array_equal(ops.pixel_shuffle_backward(ops.pixel_shuffle(x, s), s), x)


class TestNearestUpsample:
    def test_single_pixel(self):
        y = ops.nearest_upsample(np.full((1, 1, 1, 1), 3.5), 2)
        np.testing.assert_array_equal(y, np.full((1, 1, 2, 2), 3.5))

    def test_s1_identity(self):
        x = make_rng(9).normal(size=(1, 2, 3, 3))
        np.testing.assert_array_equal(ops.nearest_upsample(x, 1), x)

    def test_index_rule(self):
        x = make_rng(10).normal(size=(2, 3, 3, 4))
        s = 3
        y = ops.nearest_upsample(x, s)
        for i in range(3 * s):
            for j in range(4 * s):
                np.testing.assert_array_equal(y[:, :, i, j], x[:, :, i // s, j // s])


class TestUnfold:
    def test_single_pixel_padding(self):
        y = ops.unfold(np.full((1, 1, 1, 1), 5.0), 3)
        want = np.zeros(9)
        want[4] = 5.0
        np.testing.assert_array_equal(y[0, :, 0, 0], want)

    def test_k1_identity(self):
        x = make_rng(11).normal(size=(2, 3, 4, 4))
        np.testing.assert_array_equal(ops.unfold(x, 1), x)

    def test_even_k_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            ops.unfold(np.zeros((1, 1, 2, 2)), 2)

    def test_matches_gather_oracle(self):
        x = make_rng(12).normal(size=(1, 2, 4, 4))
        k, r = 3, 1
        y = ops.unfold(x, k)
        for c in range(2):
            for a in range(k):
                for b in range(k):
                    for i in range(4):
                        for j in range(4):
                            yy, xx = i + a - r, j + b - r
                            want = x[0, c, yy, xx] if 0 <= yy < 4 and 0 <= xx < 4 else 0.0
                            assert y[0, c * k * k + a * k + b, i, j] == want


def interp_1d_oracle(src, size, mode):
    """Per-coordinate interpolation weights, recomputed independently."""
    src = min(max(src, 0.0), size - 1.0)
    i0 = int(np.floor(src))
    f = src - i0
    if mode == "linear":
        i1 = min(i0 + 1, size - 1)
        return [(i0, 1.0 - f), (i1, f)]
    taps = []
    for t in range(-1, 3):
        d = abs(f - t)
        if d <= 1:
            w = 1.5 * d ** 3 - 2.5 * d ** 2 + 1
        elif d < 2:
            w = -0.5 * d ** 3 + 2.5 * d ** 2 - 4 * d + 2
        else:
            w = 0.0
        taps.append((min(max(i0 + t, 0), size - 1), w))
    return taps


class TestInterpolatedUpsample:
    @pytest.mark.parametrize("fn", [ops.bilinear_upsample, ops.bicubic_upsample])
    def test_constant_stays_constant(self, fn):
        y = fn(np.full((1, 2, 3, 3), 4.25), 2)
        np.testing.assert_allclose(y, 4.25, atol=1e-12)

    @pytest.mark.parametrize("fn", [ops.bilinear_upsample, ops.bicubic_upsample])
    def test_s1_identity(self, fn):
        x = make_rng(13).normal(size=(1, 2, 4, 4))
        np.testing.assert_allclose(fn(x, 1), x, atol=1e-14)

    @pytest.mark.parametrize("mode,fn", [("linear", ops.bilinear_upsample),
                                         ("cubic", ops.bicubic_upsample)])
    def test_matches_per_pixel_oracle(self, mode, fn):
        x = make_rng(14).normal(size=(1, 1, 4, 4))
        s = 2
        y = fn(x, s)
        for i in range(8):
            for j in range(8):
                acc = 0.0
                for ih, wh in interp_1d_oracle((i + 0.5) / s - 0.5, 4, mode):
                    for iw, ww in interp_1d_oracle((j + 0.5) / s - 0.5, 4, mode):
                        acc += wh * ww * x[0, 0, ih, iw]
                assert abs(y[0, 0, i, j] - acc) <= 1e-12


class TestNearestResize:
    def test_identity(self):
        x = make_rng(15).normal(size=(1, 2, 5, 5))
        np.testing.assert_array_equal(ops.nearest_resize(x, 5, 5), x)

    def test_integer_upsample_matches_nearest_upsample(self):
        x = make_rng(16).normal(size=(1, 2, 3, 3))
        np.testing.assert_array_equal(ops.nearest_resize(x, 6, 6), ops.nearest_upsample(x, 2))

    def test_downsample_picks_strided_samples(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        y = ops.nearest_resize(x, 2, 2)
        np.testing.assert_array_equal(y[0, 0], [[0.0, 2.0], [8.0, 10.0]])

    def test_adjoint_identity(self):
        # <A x, y> == <x, A^T y> for the resize operator
        rng = make_rng(17)
        x = rng.normal(size=(1, 1, 5, 7))
        y = rng.normal(size=(1, 1, 3, 4))
        lhs = np.sum(ops.nearest_resize(x, 3, 4) * y)
        rhs = np.sum(x * ops.nearest_resize_backward(y, x.shape))
        assert abs(lhs - rhs) <= 1e-12
