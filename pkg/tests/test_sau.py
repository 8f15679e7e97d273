import numpy as np
import pytest

from saugan import ops
from saugan.rng import derive_seed, make_rng
from saugan.sau import (
    SauConfig,
    SauParams,
    init_sau_params,
    oracle_sweep,
    safu_backward,
    safu_forward,
    sakg_forward,
    sau_backward,
    sau_forward,
    sau_forward_ctx,
    sau_naive,
)


def small_cfg(k=3, s=2, c=2, cc=2):
    return SauConfig(channels=c, compressed=cc, k=k, s=s)


def one_hot_center_field(n, k, hs, ws, dtype=np.float64):
    fn = np.zeros((n, k * k, hs, ws), dtype=dtype)
    fn[:, (k // 2) * k + (k // 2)] = 1.0
    return fn


def one_hot_center_params(cfg, dtype=np.float64):
    """Zero conv weights plus a bias split so softmax saturates to an exact
    one-hot kernel at the center tap (the off taps underflow to 0)."""
    center = (cfg.k // 2) * cfg.k + (cfg.k // 2)
    p = SauParams(
        np.zeros((cfg.compressed, cfg.channels, 1, 1), dtype=dtype),
        np.zeros(cfg.compressed, dtype=dtype),
        np.zeros((cfg.kernel_channels, cfg.compressed,
                  cfg.kernelgen_size, cfg.kernelgen_size), dtype=dtype),
        np.full(cfg.kernel_channels, -500.0, dtype=dtype),
    )
    s2 = cfg.s * cfg.s
    p.kernelgen_b[center * s2 : (center + 1) * s2] = 500.0
    return p


class TestSakg:
    def test_zero_input_zero_bias_gives_uniform_kernels(self):
        cfg = small_cfg(k=3)
        params = init_sau_params(cfg, make_rng(0), dtype=np.float64)
        f_n = sakg_forward(np.zeros((1, 2, 3, 3)), params, cfg)
        np.testing.assert_allclose(f_n, 1.0 / 9.0, atol=1e-15)

    def test_field_shape_contract(self):
        cfg = small_cfg(k=5, s=2, c=3, cc=2)
        params = init_sau_params(cfg, make_rng(1), dtype=np.float64)
        f_n = sakg_forward(make_rng(2).normal(size=(2, 3, 4, 5)), params, cfg)
        assert f_n.shape == (2, 25, 8, 10)

    def test_kernels_are_normalized(self):
        cfg = small_cfg(k=3, c=4, cc=3)
        rng = make_rng(3)
        params = init_sau_params(cfg, rng, dtype=np.float64)
        f_n = sakg_forward(rng.normal(size=(2, 4, 5, 5)), params, cfg)
        assert f_n.min() >= 0.0
        assert np.abs(f_n.sum(axis=1) - 1.0).max() <= 1e-6


class TestSafu:
    def test_one_hot_center_equals_nearest_upsample_bitwise(self):
        cfg = small_cfg(k=5, s=2)
        f = make_rng(4).normal(size=(1, 2, 4, 4))
        fn = one_hot_center_field(1, 5, 8, 8)
        out = safu_forward(f, fn, cfg)
        assert np.array_equal(out, ops.nearest_upsample(f, 2))

    def test_uniform_field_is_box_average(self):
        cfg = small_cfg(k=3, s=2)
        f = make_rng(5).normal(size=(1, 2, 3, 3))
        fn = np.full((1, 9, 6, 6), 1.0 / 9.0)
        got = safu_forward(f, fn, cfg)
        # zero-padded k x k box filter of the nearest-expanded input
        fe = ops.nearest_upsample(f, 2)
        want = ops.unfold(fe, 3).reshape(1, 2, 9, 6, 6).sum(axis=2) / 9.0
        np.testing.assert_allclose(got, want, atol=1e-13)

    def test_matches_explicit_loop_oracle(self):
        cfg = small_cfg(k=3, s=2)
        rng = make_rng(6)
        f = rng.normal(size=(2, 2, 3, 4))
        fn = ops.channel_softmax(rng.normal(size=(2, 9, 6, 8)))
        got = safu_forward(f, fn, cfg)
        hs, ws, r = 6, 8, 1
        for n in range(2):
            for c in range(2):
                for i in range(hs):
                    for j in range(ws):
                        acc = 0.0
                        for p in range(-r, r + 1):
                            for q in range(-r, r + 1):
                                y, x = i + p, j + q
                                if 0 <= y < hs and 0 <= x < ws:
                                    acc += f[n, c, y // 2, x // 2] * fn[n, (p + r) * 3 + q + r, i, j]
                        assert abs(got[n, c, i, j] - acc) <= 1e-12

    def test_extent_mismatch_rejected(self):
        cfg = small_cfg(k=3, s=2)
        with pytest.raises(ops.ShapeError):
            safu_forward(np.zeros((1, 2, 3, 3)), np.zeros((1, 9, 5, 6)), cfg)

    def test_convex_combination_bound(self):
        cfg = small_cfg(k=3, s=2, c=3)
        rng = make_rng(7)
        f = rng.normal(size=(1, 3, 4, 4))
        fn = ops.channel_softmax(rng.normal(scale=2.0, size=(1, 9, 8, 8)))
        out = safu_forward(f, fn, cfg)
        fe = ops.nearest_upsample(f, 2)
        hood = ops.unfold(fe, 3).reshape(1, 3, 9, 8, 8)
        assert np.all(out <= hood.max(axis=2) + 1e-12)
        assert np.all(out >= hood.min(axis=2) - 1e-12)

    def test_locality_radius_with_frozen_field(self):
        cfg = small_cfg(k=5, s=2, c=1, cc=1)
        rng = make_rng(8)
        f = rng.normal(size=(1, 1, 6, 6))
        fn = ops.channel_softmax(rng.normal(size=(1, 25, 12, 12)))
        base = safu_forward(f, fn, cfg)
        i, j, r = 3, 2, 2
        f2 = f.copy()
        f2[0, 0, i, j] += 1.0
        diff = np.abs(safu_forward(f2, fn, cfg) - base)[0, 0]
        changed = np.argwhere(diff > 0)
        # the perturbed source pixel expands to the s x s block at (2i, 2j);
        # influence may not exceed Chebyshev radius k//2 around that block
        for ci, cj in changed:
            assert min(abs(ci - (2 * i)), abs(ci - (2 * i + 1))) <= r
            assert min(abs(cj - (2 * j)), abs(cj - (2 * j + 1))) <= r

    def test_backward_one_hot_field_is_nearest_adjoint(self):
        cfg = small_cfg(k=3, s=2)
        f = make_rng(9).normal(size=(1, 2, 3, 3))
        fn = one_hot_center_field(1, 3, 6, 6)
        dy = make_rng(10).normal(size=(1, 2, 6, 6))
        d_f, _ = safu_backward(f, fn, cfg, dy)
        np.testing.assert_array_equal(d_f, ops.nearest_upsample_backward(dy, 2))


class TestSauComposition:
    def test_s1_k1_is_identity(self):
        cfg = SauConfig(channels=3, compressed=2, k=1, s=1)
        rng = make_rng(11)
        params = init_sau_params(cfg, rng, dtype=np.float64)
        f = rng.normal(size=(2, 3, 4, 4))
        assert np.array_equal(sau_forward(f, params, cfg), f)
        assert np.array_equal(sau_naive(f, params, cfg), f)

    def test_shape_contract_with_defaults(self):
        cfg = SauConfig(channels=64)  # C'=64, k=5, s=2
        rng = make_rng(12)
        params = init_sau_params(cfg, rng, dtype=np.float64)
        out = sau_forward(rng.normal(size=(2, 64, 8, 8)), params, cfg)
        assert out.shape == (2, 64, 16, 16)

    def test_one_hot_center_params_give_nearest_upsample(self):
        cfg = small_cfg(k=3, s=2)
        params = one_hot_center_params(cfg)
        f = make_rng(13).normal(size=(1, 2, 4, 4))
        want = ops.nearest_upsample(f, 2)
        assert np.array_equal(sau_forward(f, params, cfg), want)
        assert np.array_equal(sau_naive(f, params, cfg), want)

    def test_matches_naive_on_random_cases(self):
        for i in range(8):
            _, err = oracle_sweep(1, derive_seed(2024, i))[0]
            assert err <= 1e-12

    def test_kernel_field_validity_over_random_evaluations(self):
        rng = make_rng(14)
        for _ in range(20):
            c = int(rng.integers(1, 9))
            cfg = SauConfig(channels=c, compressed=int(rng.integers(1, c + 1)),
                            k=int(rng.choice([1, 3, 5])), s=int(rng.choice([1, 2])))
            params = init_sau_params(cfg, rng, dtype=np.float64)
            f = rng.normal(size=(1, c, int(rng.integers(1, 7)), int(rng.integers(1, 7))))
            f_n = sakg_forward(f, params, cfg)
            assert f_n.min() >= 0.0
            assert np.abs(f_n.sum(axis=1) - 1.0).max() <= 1e-6


class TestSauBackward:
    def test_zero_upstream_gives_zero_gradients(self):
        cfg = small_cfg()
        rng = make_rng(15)
        params = init_sau_params(cfg, rng, dtype=np.float64)
        f = rng.normal(size=(1, 2, 3, 3))
        out, ctx = sau_forward_ctx(f, params, cfg)
        d_f, d_p = sau_backward(ctx, np.zeros_like(out))
        assert not d_f.any()
        for g in (d_p.compress_w, d_p.compress_b, d_p.kernelgen_w, d_p.kernelgen_b):
            assert not g.any()

    def test_adjoint_linearity(self):
        # gradient of a sum of outputs equals the sum of per-output gradients
        cfg = small_cfg()
        rng = make_rng(16)
        params = init_sau_params(cfg, rng, dtype=np.float64)
        f = rng.normal(size=(1, 2, 3, 3))
        out, ctx = sau_forward_ctx(f, params, cfg)
        u1 = rng.normal(size=out.shape)
        u2 = rng.normal(size=out.shape)
        d1, _ = sau_backward(ctx, u1)
        d2, _ = sau_backward(ctx, u2)
        d12, _ = sau_backward(ctx, u1 + u2)
        np.testing.assert_allclose(d12, d1 + d2, atol=1e-12)

    def test_safu_adjoint_linearity(self):
        cfg = small_cfg()
        rng = make_rng(18)
        f = rng.normal(size=(1, 2, 3, 3))
        fn = ops.channel_softmax(rng.normal(size=(1, 9, 6, 6)))
        u1 = rng.normal(size=(1, 2, 6, 6))
        u2 = rng.normal(size=(1, 2, 6, 6))
        df1, dn1 = safu_backward(f, fn, cfg, u1)
        df2, dn2 = safu_backward(f, fn, cfg, u2)
        df12, dn12 = safu_backward(f, fn, cfg, u1 + u2)
        np.testing.assert_allclose(df12, df1 + df2, atol=1e-12)
        np.testing.assert_allclose(dn12, dn1 + dn2, atol=1e-12)

    def test_gradcheck_small_case(self):
        from saugan.gradcheck import check_op, _sau_checks

        sau_check = [c for c in _sau_checks() if c.name == "sau_forward"][0]
        report = check_op(sau_check, make_rng(17))
        assert report.passed, report.rel_err
