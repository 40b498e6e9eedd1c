import math

import numpy as np
import pytest

from nptransfer.core import (
    ClassSamples,
    ConfigurationError,
    LossSpec,
    ParamVector,
    empirical_risk,
    hinge_loss,
    logistic_loss,
    make_error_budgets,
    make_generator,
    max_feature_norm,
    predict,
    risk_gradient,
    surrogate_eval,
    validate_loss_cover,
)
from conftest import finite_difference_gradient


class TestSurrogateEval:
    def test_hinge_normalization_at_zero(self):
        assert surrogate_eval(hinge_loss(3.0), 0.0) == 1.0

    def test_hinge_below_kink(self):
        assert surrogate_eval(hinge_loss(3.0), -2.0) == 0.0

    def test_logistic_at_zero(self):
        # log2(1 + e^0) = log2(2) = 1 by direct evaluation
        assert surrogate_eval(logistic_loss(3.0), 0.0) == pytest.approx(1.0, abs=1e-15)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            surrogate_eval(hinge_loss(1.0), float("nan"))
        with pytest.raises(ValueError):
            surrogate_eval(logistic_loss(1.0), float("inf"))

    def test_hinge_clips_at_c(self):
        loss = LossSpec("hinge", L=1.0, C=2.0)
        assert surrogate_eval(loss, 5.0) == 2.0


class TestLossProperties:
    @pytest.mark.parametrize("loss", [hinge_loss(4.0), logistic_loss(4.0)])
    def test_bounds_and_normalization_on_grid(self, loss):
        z = np.linspace(-4.0, 4.0, 10_000)
        v = loss.value(z)
        assert float(loss.value(0.0)) == pytest.approx(1.0, abs=1e-15)
        assert np.all(v >= 0.0)
        assert np.all(v <= loss.C + 1e-12)

    @pytest.mark.parametrize("loss", [hinge_loss(4.0), logistic_loss(4.0)])
    def test_monotone_and_lipschitz_on_sampled_pairs(self, loss):
        g = make_generator(1)
        z1 = g.uniform(-4, 4, size=2000)
        z2 = g.uniform(-4, 4, size=2000)
        lo = np.minimum(z1, z2)
        hi = np.maximum(z1, z2)
        assert np.all(loss.value(hi) - loss.value(lo) >= -1e-12)
        assert np.all(np.abs(loss.value(z1) - loss.value(z2)) <= loss.L * np.abs(z1 - z2) + 1e-12)

    @pytest.mark.parametrize("loss", [hinge_loss(4.0), logistic_loss(4.0)])
    def test_convexity_probes(self, loss):
        g = make_generator(2)
        for _ in range(200):
            z1, z2 = g.uniform(-4, 4, size=2)
            t = g.random()
            mid = loss.value(t * z1 + (1 - t) * z2)
            assert mid <= t * loss.value(z1) + (1 - t) * loss.value(z2) + 1e-12

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            LossSpec("quadratic", L=1.0, C=1.0)


class TestPredict:
    def test_inner_product(self):
        assert predict(ParamVector(np.array([1.0, 0.0]), 10.0), np.array([0.5, 9.0])) == 0.5

    def test_zero_parameter(self):
        assert predict(ParamVector(np.zeros(3), 1.0), np.array([4.0, -1.0, 7.0])) == 0.0

    def test_hand_evaluation(self):
        assert predict(ParamVector(np.array([2.0, -1.0]), 10.0), np.array([1.0, 2.0])) == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            predict(ParamVector(np.array([1.0]), 2.0), np.array([1.0, 2.0]))


class TestParamVector:
    def test_norm_bound_enforced(self):
        with pytest.raises(ConfigurationError):
            ParamVector(np.array([3.0, 4.0]), 4.9)

    def test_immutable(self):
        pv = ParamVector(np.array([1.0, 0.0]), 2.0)
        with pytest.raises(ValueError):
            pv.theta[0] = 5.0


class TestClassSamples:
    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            ClassSamples(np.zeros((0, 2)), 0, "T")

    def test_immutable(self):
        s = ClassSamples(np.ones((2, 2)), 0, "T")
        with pytest.raises(ValueError):
            s.features[0, 0] = 3.0

    def test_bad_labels(self):
        with pytest.raises(ConfigurationError):
            ClassSamples(np.ones((2, 2)), 2, "T")
        with pytest.raises(ConfigurationError):
            ClassSamples(np.ones((2, 2)), 0, "X")


class TestEmpiricalRisk:
    def test_zero_theta_gives_one(self):
        g = make_generator(3)
        s = ClassSamples(g.standard_normal((17, 3)), 0, "T")
        for loss in (hinge_loss(5.0), logistic_loss(5.0)):
            assert empirical_risk(np.zeros(3), s, loss) == pytest.approx(1.0, abs=1e-12)

    def test_class0_hand_value(self):
        # (hinge(1) + hinge(-1)) / 2 = (2 + 0) / 2
        s = ClassSamples(np.array([[1.0], [-1.0]]), 0, "T")
        assert empirical_risk(np.array([1.0]), s, hinge_loss(2.0)) == pytest.approx(1.0)

    def test_class1_hand_value(self):
        # class 1 flips the margin sign: (hinge(-1) + hinge(1)) / 2
        s = ClassSamples(np.array([[1.0], [-1.0]]), 1, "T")
        assert empirical_risk(np.array([1.0]), s, hinge_loss(2.0)) == pytest.approx(1.0)

    def test_range(self):
        g = make_generator(4)
        loss = logistic_loss(2.0 * 3.0)
        s = ClassSamples(np.clip(g.standard_normal((40, 2)), -3, 3), 1, "S")
        for _ in range(20):
            th = g.uniform(-1, 1, size=2)
            r = empirical_risk(th, s, loss)
            assert 0.0 <= r <= loss.C

    def test_convexity_in_theta(self):
        g = make_generator(5)
        loss = logistic_loss(8.0)
        s0 = ClassSamples(g.standard_normal((25, 2)), 0, "T")
        s1 = ClassSamples(g.standard_normal((25, 2)), 1, "T")
        for s in (s0, s1):
            for _ in range(100):
                th1 = g.uniform(-2, 2, size=2)
                th2 = g.uniform(-2, 2, size=2)
                t = g.random()
                mid = empirical_risk(t * th1 + (1 - t) * th2, s, loss)
                bound = t * empirical_risk(th1, s, loss) + (1 - t) * empirical_risk(th2, s, loss)
                assert mid <= bound + 1e-12


class TestRiskGradient:
    def test_logistic_at_zero_matches_closed_form(self):
        # derivative of log2(1 + e^z) at z = 0 is 1 / (2 ln 2)
        x = np.array([[0.7, -0.3]])
        s = ClassSamples(x, 0, "T")
        grad = risk_gradient(np.zeros(2), s, logistic_loss(4.0))
        assert grad == pytest.approx(x[0] * 0.7213475204444817, rel=1e-12)

    def test_hinge_flat_region_is_zero(self):
        s = ClassSamples(np.array([[1.0], [2.0]]), 0, "T")
        grad = risk_gradient(np.array([-3.0]), s, hinge_loss(10.0))
        assert np.all(grad == 0.0)

    def test_matches_finite_differences(self):
        g = make_generator(6)
        loss = logistic_loss(12.0)
        checked = 0
        while checked < 100:
            n = int(g.integers(5, 30))
            d = int(g.integers(1, 4))
            cls = int(g.integers(0, 2))
            s = ClassSamples(g.standard_normal((n, d)), cls, "T")
            th = g.uniform(-2, 2, size=d)
            grad = risk_gradient(th, s, loss)
            fd = finite_difference_gradient(lambda t: empirical_risk(t, s, loss), th)
            assert np.linalg.norm(grad - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))
            checked += 1

    def test_hinge_matches_finite_differences_away_from_kinks(self):
        g = make_generator(7)
        loss = hinge_loss(12.0)
        checked = 0
        while checked < 100:
            n = int(g.integers(5, 30))
            s = ClassSamples(g.standard_normal((n, 2)), 0, "T")
            th = g.uniform(-2, 2, size=2)
            margins = s.features @ th
            if np.min(np.abs(margins + 1.0)) < 1e-3:
                continue
            grad = risk_gradient(th, s, loss)
            fd = finite_difference_gradient(lambda t: empirical_risk(t, s, loss), th)
            assert np.linalg.norm(grad - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))
            checked += 1

    def test_norm_bounded_by_lipschitz_times_feature_norm(self):
        g = make_generator(8)
        loss = logistic_loss(10.0)
        s = ClassSamples(g.standard_normal((30, 3)), 1, "S")
        bound = loss.L * max_feature_norm(s)
        for _ in range(20):
            grad = risk_gradient(g.uniform(-2, 2, size=3), s, loss)
            assert np.linalg.norm(grad) <= bound + 1e-12


class TestErrorBudgets:
    def test_reference_arithmetic(self):
        b = make_error_budgets(100, 100, 100, 100, b_h=1.0, lipschitz=1.0, bound=2.0, delta=0.05)
        assert b.c_tilde == pytest.approx(18.864812125924956, rel=1e-12)
        for eps in (b.eps_0s, b.eps_0t, b.eps_1s, b.eps_1t):
            assert eps == pytest.approx(1.8864812125924957, rel=1e-12)

    def test_large_n_limit(self):
        b = make_error_budgets(100, 100, 100, 10**12, 1.0, 1.0, 2.0, 0.05)
        assert b.eps_1t < 2e-5

    def test_small_constant_limit(self):
        b = make_error_budgets(100, 100, 100, 100, 1e-12, 1.0, 1e-12, 0.05)
        assert b.c_tilde < 1e-10

    def test_quadrupling_n_halves_eps_exactly(self):
        for n in (7, 40, 123, 1000):
            b1 = make_error_budgets(n, n, n, n, 0.3, 1.2, 1.7, 0.1)
            b4 = make_error_budgets(4 * n, 4 * n, 4 * n, 4 * n, 0.3, 1.2, 1.7, 0.1)
            assert b4.eps_0t == b1.eps_0t / 2.0
            assert b4.eps_1s == b1.eps_1s / 2.0

    def test_delta_range_enforced(self):
        with pytest.raises(ConfigurationError):
            make_error_budgets(10, 10, 10, 10, 1.0, 1.0, 1.0, 1.5)
        with pytest.raises(ConfigurationError):
            make_error_budgets(10, 10, 10, 10, 1.0, 1.0, 1.0, 0.0)

    def test_sample_count_enforced(self):
        with pytest.raises(ConfigurationError):
            make_error_budgets(0, 10, 10, 10, 1.0, 1.0, 1.0, 0.1)


class TestLossCover:
    def test_undersized_c_rejected(self):
        g = make_generator(9)
        s = ClassSamples(3.0 * g.standard_normal((20, 2)), 0, "T")
        small = LossSpec("hinge", L=1.0, C=1.5)
        with pytest.raises(ConfigurationError):
            validate_loss_cover(small, 2.0, s)

    def test_properly_sized_c_accepted(self):
        g = make_generator(10)
        s = ClassSamples(g.standard_normal((20, 2)), 0, "T")
        bound = 2.0 * max_feature_norm(s)
        validate_loss_cover(hinge_loss(bound), 2.0, s)
        validate_loss_cover(logistic_loss(bound), 2.0, s)
