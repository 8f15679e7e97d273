import numpy as np
import pytest

from saugan import ops
from saugan.gradcheck import (
    OpCheck,
    check_op,
    finite_diff,
    rel_error,
    _ops_checks,
    _sau_checks,
)
from saugan.rng import make_rng
from saugan.sau import SauConfig, init_sau_params, sau_backward, sau_forward_ctx


class TestFiniteDiff:
    def test_sum_of_squares(self):
        g = finite_diff(lambda x: float(np.sum(x * x)), np.array([1.0, 2.0]))
        np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-6)

    def test_constant_function(self):
        g = finite_diff(lambda x: 3.0, np.array([1.0, -2.0, 0.5]))
        assert np.abs(g).max() <= 1e-8

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff(lambda x: 0.0, np.zeros(2), step=0.0)

    def test_rejects_non_finite_values(self):
        with pytest.raises(ValueError, match="non-finite"):
            finite_diff(lambda x: float("nan"), np.zeros(2))

    def test_agrees_with_analytic_sau_backward(self):
        cfg = SauConfig(channels=2, compressed=2, k=3, s=2)
        rng = make_rng(40)
        params = init_sau_params(cfg, rng, dtype=np.float64)
        f = rng.normal(size=(1, 2, 3, 3))
        out, ctx = sau_forward_ctx(f, params, cfg)
        analytic, _ = sau_backward(ctx, np.ones_like(out))

        def total(x):
            from saugan.sau import sau_forward

            return float(np.sum(sau_forward(x, params, cfg)))

        numeric = finite_diff(total, f)
        assert rel_error(analytic, numeric) <= 1e-4


class TestCheckOp:
    def test_channel_softmax_passes(self):
        check = {c.name: c for c in _ops_checks()}["channel_softmax"]
        report = check_op(check, make_rng(7))
        assert report.passed and report.rel_err["x"] <= 1e-4

    def test_conv2d_passes(self):
        check = {c.name: c for c in _ops_checks()}["conv2d"]
        report = check_op(check, make_rng(7))
        assert report.passed
        assert set(report.rel_err) == {"x", "w", "b"}

    def test_corrupted_backward_fails(self):
        bad = OpCheck(
            "corrupted_mul",
            lambda rng: {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=(2, 3))},
            lambda inp: inp["a"] * inp["b"],
            lambda inp, dy: {"a": dy * inp["b"] * 1.5, "b": dy * inp["a"]},
        )
        report = check_op(bad, make_rng(9))
        assert not report.passed
        assert report.rel_err["a"] > 1e-4
        assert report.rel_err["b"] <= 1e-4

    def test_gradient_shape_mismatch_raises(self):
        bad = OpCheck(
            "bad_shape",
            lambda rng: {"a": rng.normal(size=(2, 3))},
            lambda inp: inp["a"] * 2.0,
            lambda inp, dy: {"a": np.zeros((3, 2))},
        )
        with pytest.raises(ValueError, match="shape"):
            check_op(bad, make_rng(0))

    def test_report_rows_format(self):
        check = {c.name: c for c in _ops_checks()}["relu"]
        report = check_op(check, make_rng(3))
        ((op, name, err, ok),) = report.rows()
        assert op == "relu" and name == "x" and ok and err <= 1e-4


class TestOpsRegistry:
    @pytest.mark.parametrize("check", _ops_checks(), ids=lambda c: c.name)
    def test_primitive_backward(self, check):
        report = check_op(check, make_rng(100))
        assert report.passed, f"{check.name}: {report.rel_err}"

    @pytest.mark.parametrize("check", _sau_checks(), ids=lambda c: c.name)
    def test_sau_backward(self, check):
        report = check_op(check, make_rng(101))
        assert report.passed, f"{check.name}: {report.rel_err}"

    def test_conv2d_adjoint_linearity(self):
        rng = make_rng(55)
        x = rng.normal(size=(1, 2, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        spec = ops.ConvSpec(2, 3, 3, 3, padding=1, has_bias=False)
        y = ops.conv2d(x, w, None, spec)
        u1 = rng.normal(size=y.shape)
        u2 = rng.normal(size=y.shape)
        dx1 = ops.conv2d_backward(x, w, spec, u1)[0]
        dx2 = ops.conv2d_backward(x, w, spec, u2)[0]
        dx12 = ops.conv2d_backward(x, w, spec, u1 + u2)[0]
        np.testing.assert_allclose(dx12, dx1 + dx2, atol=1e-12)
