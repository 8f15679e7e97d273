import numpy as np
import pytest

from saugan import losses
from saugan.rng import make_rng

LN2 = float(np.log(2.0))
LN4 = float(np.log(4.0))


class TestGanLosses:
    def test_zero_logits_give_two_ln2_per_patch(self):
        loss, _, _ = losses.gan_d_loss(np.zeros((1, 1, 3, 3)), np.zeros((1, 1, 3, 3)))
        assert loss == pytest.approx(2 * LN2, abs=1e-12)

    def test_saturated_logits_drive_d_loss_to_zero(self):
        loss, _, _ = losses.gan_d_loss(np.full((1, 1, 2, 2), 60.0), np.full((1, 1, 2, 2), -60.0))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_generator_loss_zero_logits(self):
        loss, _ = losses.gan_g_loss(np.zeros((1, 1, 4, 4)))
        assert loss == pytest.approx(LN2, abs=1e-12)

    def test_gradient_signs(self):
        _, d_real, d_fake = losses.gan_d_loss(np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))
        assert d_real[0, 0, 0, 0] < 0  # push real logits up
        assert d_fake[0, 0, 0, 0] > 0  # push fake logits down
        _, d_g = losses.gan_g_loss(np.zeros((1, 1, 1, 1)))
        assert d_g[0, 0, 0, 0] < 0  # generator pushes fake logits up

    def test_hinge_forms(self):
        loss, _, _ = losses.gan_d_loss(np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)), "hinge")
        assert loss == pytest.approx(2.0)
        loss, d = losses.gan_g_loss(np.full((1, 1, 1, 1), 3.0), "hinge")
        assert loss == pytest.approx(-3.0)
        assert d[0, 0, 0, 0] == -1.0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            losses.gan_d_loss(np.zeros(1), np.zeros(1), "wasserstein")


def partition_masks(labels, n):
    b, h, w = labels.shape
    masks = np.zeros((b, n, h, w))
    for i in range(n):
        masks[:, i][labels == i] = 1.0
    return masks


class TestMaskedL1:
    def test_perfect_outputs_give_zero(self):
        rng = make_rng(0)
        real = rng.normal(size=(1, 3, 4, 4))
        masks = partition_masks(rng.integers(0, 3, size=(1, 4, 4)), 3)
        outs = [real * masks[:, i : i + 1] for i in range(3)]
        assert losses.masked_l1(real, outs, masks) == 0.0

    def test_single_class_constant_offset(self):
        rng = make_rng(1)
        real = rng.normal(size=(1, 3, 4, 4))
        masks = np.ones((1, 1, 4, 4))
        out = real + 0.37
        assert losses.masked_l1(real, [out], masks) == pytest.approx(0.37, abs=1e-12)

    def test_matches_pointwise_oracle(self):
        rng = make_rng(2)
        real = rng.normal(size=(1, 3, 4, 4))
        masks = partition_masks(rng.integers(0, 2, size=(1, 4, 4)), 2)
        outs = [rng.normal(size=(1, 3, 4, 4)) for _ in range(2)]
        got = losses.masked_l1(real, outs, masks)
        want = 0.0
        for i in range(2):
            acc = 0.0
            for idx in np.ndindex(real.shape):
                m = masks[idx[0], i, idx[2], idx[3]]
                acc += abs(real[idx] * m - outs[i][idx])
            want += acc / real.size
        assert got == pytest.approx(want, rel=1e-12)

    def test_backward_is_subgradient(self):
        rng = make_rng(3)
        real = rng.normal(size=(1, 3, 2, 2))
        masks = np.ones((1, 1, 2, 2))
        outs = [real + 1.0]
        (g,) = losses.masked_l1_backward(real, outs, masks)
        np.testing.assert_allclose(g, 1.0 / real.size)


class TestClassCE:
    def test_all_void_gives_zero(self):
        logits = make_rng(4).normal(size=(2, 4, 4))
        valid = np.zeros((2, 4))
        loss, d = losses.class_ce(logits, valid)
        assert loss == 0.0
        assert not d.any()

    def test_confident_correct_gives_zero(self):
        n = 4
        logits = np.full((1, n, n), -50.0)
        logits[0, np.arange(n), np.arange(n)] = 50.0
        loss, _ = losses.class_ce(logits, np.ones((1, n)))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_uniform_logits_give_ln4(self):
        loss, _ = losses.class_ce(np.zeros((1, 4, 4)), np.ones((1, 4)))
        assert loss == pytest.approx(LN4, abs=1e-12)

    def test_void_rows_bitwise_inert(self):
        rng = make_rng(5)
        logits = rng.normal(size=(1, 4, 4))
        valid = np.array([[1.0, 0.0, 1.0, 0.0]])
        base, d = losses.class_ce(logits, valid)
        perturbed = logits.copy()
        perturbed[0, 1] += rng.normal(size=4) * 10
        again, _ = losses.class_ce(perturbed, valid)
        assert base == again
        assert not d[0, 1].any() and not d[0, 3].any()

    def test_mean_over_valid_classes(self):
        # two valid rows with uniform logits -> still ln N, not 2 ln N
        loss, _ = losses.class_ce(np.zeros((1, 4, 4)), np.array([[1.0, 1.0, 0.0, 0.0]]))
        assert loss == pytest.approx(LN4, abs=1e-12)

    def test_bad_shapes_rejected(self):
        with pytest.raises(ValueError):
            losses.class_ce(np.zeros((1, 3, 4)), np.ones((1, 3)))
        with pytest.raises(ValueError):
            losses.class_ce(np.zeros((1, 3, 3)), np.ones((2, 3)))
