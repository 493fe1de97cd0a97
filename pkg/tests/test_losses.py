"""Objective arithmetic oracles and loss-log round trips."""

import numpy as np
import pytest

from bcenhance import losses, nn
from bcenhance.errors import ConfigError, DimensionError
from bcenhance.losses import LEAST_SQUARES, NEGATIVE_LOG_LIKELIHOOD, LossWeights
from bcenhance.nn import tensor as ops


def T(x, grad=False):
    return nn.Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestCycleAndIdentity:
    def test_fixed_point(self):
        b = T([0.3, -0.7, 2.0])
        assert losses.cycle_loss(b, T([0.3, -0.7, 2.0])).item() == 0.0
        assert losses.identity_loss(b, T([0.3, -0.7, 2.0])).item() == 0.0

    def test_hand_values(self):
        assert losses.cycle_loss(T([0.0, 0.0]), T([1.0, -1.0])).item() == 1.0
        assert losses.identity_loss(T([2.0]), T([5.0])).item() == 3.0

    def test_scaling_homogeneity(self):
        rng = np.random.default_rng(0)
        b = rng.standard_normal(10)
        rec = rng.standard_normal(10)
        base = losses.cycle_loss(T(b), T(rec)).item()
        scaled = losses.cycle_loss(T(2.5 * b), T(2.5 * rec)).item()
        np.testing.assert_allclose(scaled, 2.5 * base, rtol=1e-12)

    def test_triangle_inequality_in_first_argument(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x, y, z = (T(rng.standard_normal(8)) for _ in range(3))
            lhs = losses.cycle_loss(x, z).item()
            rhs = losses.cycle_loss(x, y).item() + losses.cycle_loss(y, z).item()
            assert lhs <= rhs + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            losses.cycle_loss(T([1.0, 2.0]), T([1.0]))

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            assert losses.identity_loss(T(rng.standard_normal(6)), T(rng.standard_normal(6))).item() >= 0.0


class TestAdversarial:
    def test_least_squares_perfect_discriminator(self):
        d = losses.adv_d_loss(T([1.0]), T([0.0]), LEAST_SQUARES)
        g = losses.adv_g_loss(T([0.0]), LEAST_SQUARES)
        assert d.item() == 0.0
        assert g.item() == 1.0

    def test_least_squares_uninformative_discriminator(self):
        d = losses.adv_d_loss(T([0.5]), T([0.5]), LEAST_SQUARES)
        np.testing.assert_allclose(d.item(), 0.5, atol=1e-15)

    def test_nll_uninformative_discriminator(self):
        d = losses.adv_d_loss(T([0.5]), T([0.5]), NEGATIVE_LOG_LIKELIHOOD)
        np.testing.assert_allclose(d.item(), -np.log(0.25), atol=1e-12)

    def test_nll_generator_is_saturating_form(self):
        g = losses.adv_g_loss(T([0.5]), NEGATIVE_LOG_LIKELIHOOD)
        np.testing.assert_allclose(g.item(), np.log(0.5), atol=1e-12)

    def test_real_only_objective(self):
        d = losses.adv_d_loss(T([0.5]), None, LEAST_SQUARES)
        np.testing.assert_allclose(d.item(), 0.25, atol=1e-15)

    def test_means_over_score_vectors(self):
        d = losses.adv_d_loss(T([1.0, 0.5]), T([0.0, 0.5]), LEAST_SQUARES)
        np.testing.assert_allclose(d.item(), 0.125 + 0.125, atol=1e-15)

    def test_nonnegative_least_squares(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            r, f = T(rng.uniform(0, 1, 5)), T(rng.uniform(0, 1, 5))
            assert losses.adv_d_loss(r, f, LEAST_SQUARES).item() >= 0.0
            assert losses.adv_g_loss(f, LEAST_SQUARES).item() >= 0.0

    def test_invalid_form_rejected(self):
        with pytest.raises(ConfigError):
            losses.adv_g_loss(T([0.5]), "wasserstein")

    def test_g_loss_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        s = T(rng.uniform(0.1, 0.9, 6), grad=True)

        def f(s):
            return losses.adv_g_loss(s, LEAST_SQUARES)

        assert nn.gradcheck(f, [s]) < 1e-4
        s.grad = None
        ops.backward(f(s))
        np.testing.assert_allclose(s.grad, 2.0 * (s.data - 1.0) / s.data.size, rtol=1e-12)

    def test_d_loss_gradients_both_forms(self):
        rng = np.random.default_rng(5)
        r = T(rng.uniform(0.2, 0.8, 4), grad=True)
        f = T(rng.uniform(0.2, 0.8, 4), grad=True)
        for form in (LEAST_SQUARES, NEGATIVE_LOG_LIKELIHOOD):
            assert nn.gradcheck(lambda r, f: losses.adv_d_loss(r, f, form), [r, f]) < 1e-4

    def test_saturated_scores_stay_finite_in_nll(self):
        d = losses.adv_d_loss(T([0.0]), T([1.0]), NEGATIVE_LOG_LIKELIHOOD)
        assert np.isfinite(d.item())


class TestDual:
    def test_perfect_discriminators_sum_to_two(self):
        adc, add = losses.dual_adv_losses(T([0.0]), T([0.0]), LEAST_SQUARES)
        assert (adc.item(), add.item()) == (1.0, 1.0)

    def test_uninformative_defect_head(self):
        _, add = losses.dual_adv_losses(T([0.9]), T([0.5]), LEAST_SQUARES)
        np.testing.assert_allclose(add.item(), 0.25, atol=1e-15)

    def test_identical_scores_give_identical_terms(self):
        scores = np.random.default_rng(6).uniform(0.1, 0.9, 7)
        adc, add = losses.dual_adv_losses(T(scores), T(scores.copy()), LEAST_SQUARES)
        assert adc.item() == add.item()


class TestTotalObjective:
    def test_dual_combination(self):
        w = LossWeights(lambda_cyc=10.0, lambda_id=5.0)
        total = losses.total_objective({"adc": 1.0, "add": 1.0, "cyc": 0.2, "id": 0.1}, w, losses.DUAL)
        np.testing.assert_allclose(total, 4.5, atol=1e-15)

    def test_zero_weights_leave_adversarial_terms(self):
        w = LossWeights(lambda_cyc=0.0, lambda_id=0.0)
        total = losses.total_objective({"adc": 1.5, "add": 0.5, "cyc": 9.0, "id": 9.0}, w, losses.DUAL)
        np.testing.assert_allclose(total, 2.0, atol=1e-15)

    def test_dual_with_zero_defect_equals_baseline(self):
        w = LossWeights()
        parts = {"adc": 0.7, "add": 0.0, "cyc": 0.3, "id": 0.2}
        dual = losses.total_objective(parts, w, losses.DUAL)
        base = losses.total_objective({"adv": 0.7, "cyc": 0.3, "id": 0.2}, w, losses.BASELINE)
        assert dual == base

    def test_linear_in_each_part(self):
        w = LossWeights(lambda_cyc=10.0, lambda_id=5.0)
        parts = {"adc": 0.4, "add": 0.6, "cyc": 0.2, "id": 0.3}
        base = losses.total_objective(parts, w, losses.DUAL)
        bumped = dict(parts, cyc=parts["cyc"] + 0.01)
        np.testing.assert_allclose(
            losses.total_objective(bumped, w, losses.DUAL) - base, 10.0 * 0.01, atol=1e-12
        )

    def test_missing_part_rejected(self):
        with pytest.raises(ConfigError):
            losses.total_objective({"adc": 1.0, "cyc": 0.0, "id": 0.0}, LossWeights(), losses.DUAL)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            losses.total_objective({}, LossWeights(), "triple")

    def test_works_on_tensors(self):
        w = LossWeights()
        parts = {"adc": T(1.0), "add": T(1.0), "cyc": T(0.2), "id": T(0.1)}
        total = losses.total_objective(parts, w, losses.DUAL)
        np.testing.assert_allclose(total.item(), 4.5, atol=1e-15)

    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(lambda_cyc=-1.0)


class TestLossLog:
    def test_record_roundtrip(self):
        rec = losses.LossRecord(7, 0.123456789012345678, 0.0, 1.5, 2.5, 42.0)
        parsed = losses.parse_loss_log([rec.format()])
        assert parsed == [rec]

    def test_blank_and_comment_lines_skipped(self):
        rec = losses.LossRecord(1, 1.0, 2.0, 3.0, 4.0, 5.0)
        parsed = losses.parse_loss_log(["# header", "", rec.format()])
        assert parsed == [rec]

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            losses.parse_loss_log(["1\t2\t3"])
