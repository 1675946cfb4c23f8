import math

import numpy as np
import pytest

from maic.data_model import MomentSpec, OutcomeKind
from maic.errors import (
    BoundaryProportion,
    NoComparatorArm,
    SeparationError,
)
from maic.estimators import (
    Method,
    OutcomeLink,
    Scale,
    bucher,
    fit_logistic_irls,
    maic_acb,
    maic_nab,
    naive,
    stc,
    weighted_arm_mean,
)
from maic.weighting import WeightModel, solve_weights

from conftest import make_agd, make_arm, make_ipd


def logit(u):
    return math.log(u / (1.0 - u))


def unit_model(ipd):
    return WeightModel(
        alpha1=np.zeros(ipd.p), centering=np.zeros(ipd.p),
        weights=np.ones(ipd.n), spec=MomentSpec.FIRST, converged=True,
        iterations=0, objective=1.0, ess={},
    )


class TestScale:
    def test_identity_is_pass_through(self):
        assert Scale.IDENTITY.g(0.3) == 0.3
        assert Scale.IDENTITY.g_prime(0.3) == 1.0
        assert Scale.IDENTITY.g_inverse(0.3) == 0.3

    def test_logit_round_trip(self):
        for u in (0.01, 0.25, 0.5, 0.99):
            assert Scale.LOGIT.g_inverse(Scale.LOGIT.g(u)) == pytest.approx(u)

    def test_logit_derivative(self):
        u, h = 0.3, 1e-7
        numeric = (Scale.LOGIT.g(u + h) - Scale.LOGIT.g(u - h)) / (2 * h)
        assert Scale.LOGIT.g_prime(u) == pytest.approx(numeric, rel=1e-6)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
    def test_boundary_proportion(self, u):
        with pytest.raises(BoundaryProportion):
            Scale.LOGIT.g(u)


class TestMaicNab:
    def test_equal_weights_difference_of_means(self):
        ipd = make_ipd([1.0, 1.0, 1.0, 0.0, 0.0], [1] * 5, np.zeros((5, 1)))
        agd = make_agd(active=make_arm(y_mean=0.45))
        est = maic_nab(ipd, agd, unit_model(ipd))
        assert est.delta == pytest.approx(0.6 - 0.45)
        assert est.method is Method.MAIC_NAB

    def test_weighted_mean_arithmetic(self):
        ipd = make_ipd([0.0, 1.0], [1, 1], [[0.0], [1.0]])
        model = unit_model(ipd)
        object.__setattr__(model, "weights", np.array([1.0, 3.0]))
        agd = make_agd(active=make_arm(y_mean=0.5))
        est = maic_nab(ipd, agd, model)
        assert est.mu1 == pytest.approx(0.75)
        assert est.delta == pytest.approx(0.25)

    def test_logit_link_arithmetic(self):
        ipd = make_ipd([0.0, 1.0], [1, 1], [[0.0], [1.0]])
        model = unit_model(ipd)
        object.__setattr__(model, "weights", np.array([1.0, 3.0]))
        agd = make_agd(active=make_arm(y_mean=0.5))
        est = maic_nab(ipd, agd, model, Scale.LOGIT)
        assert est.delta == pytest.approx(math.log(3.0))

    def test_weight_scale_invariance(self, rng):
        x = rng.normal(size=(50, 2))
        y = rng.random(50)
        z = np.concatenate([np.ones(30, int), np.zeros(20, int)])
        ipd = make_ipd(y, z, x)
        agd = make_agd(active=make_arm(y_mean=0.5, x_mean=[0.1, 0.1]),
                       comparator=make_arm(y_mean=0.4, x_mean=[0.1, 0.1]),
                       names=("x1", "x2"))
        model = solve_weights(ipd, np.array([0.1, 0.1]))
        scaled = WeightModel(
            alpha1=model.alpha1, centering=model.centering,
            weights=model.weights * 17.3, spec=model.spec, converged=True,
            iterations=model.iterations, objective=model.objective, ess=model.ess,
        )
        for fn in (maic_nab, maic_acb):
            a = fn(ipd, agd, model).delta
            b = fn(ipd, agd, scaled).delta
            assert b == pytest.approx(a, rel=1e-12)


class TestMaicAcb:
    def _pair(self):
        ipd = make_ipd([1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0],
                       [1, 1, 1, 1, 1, 0, 0, 0, 0, 0], np.zeros((10, 1)))
        agd = make_agd(active=make_arm(y_mean=0.55),
                       comparator=make_arm(y_mean=0.35))
        return ipd, agd

    def test_identity_arithmetic(self):
        ipd, agd = self._pair()
        est = maic_acb(ipd, agd, unit_model(ipd))
        # (0.6 - 0.55) - (0.4 - 0.35) = 0
        assert est.delta == pytest.approx(0.0, abs=1e-12)
        assert est.anchor_terms == pytest.approx((0.4, 0.35))

    def test_logit_arithmetic(self):
        ipd, agd = self._pair()
        est = maic_acb(ipd, agd, unit_model(ipd), Scale.LOGIT)
        expected = (logit(0.6) - logit(0.55)) - (logit(0.4) - logit(0.35))
        assert est.delta == pytest.approx(expected)
        assert est.delta == pytest.approx(-0.0088, abs=5e-4)

    def test_zero_anchor_collapses_to_nab(self, rng):
        y = rng.random(40)
        z = np.concatenate([np.ones(20, int), np.zeros(20, int)])
        ipd = make_ipd(y, z, rng.normal(size=(40, 1)))
        model = unit_model(ipd)
        mu0 = float(y[z == 0].mean())
        agd = make_agd(active=make_arm(y_mean=0.5),
                       comparator=make_arm(y_mean=mu0))
        assert maic_acb(ipd, agd, model).delta == pytest.approx(
            maic_nab(ipd, agd, model).delta, abs=1e-14
        )

    def test_requires_comparators(self):
        ipd, agd = self._pair()
        with pytest.raises(NoComparatorArm):
            maic_acb(ipd, make_agd(active=make_arm(y_mean=0.55)), unit_model(ipd))
        single = make_ipd([1.0, 0.0], [1, 1], [[0.0], [0.0]])
        with pytest.raises(NoComparatorArm):
            maic_acb(single, agd, unit_model(single))


class TestBucher:
    def test_arithmetic(self):
        ipd = make_ipd([1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0],
                       [1, 1, 1, 1, 1, 0, 0, 0, 0, 0], np.zeros((10, 1)))
        agd = make_agd(active=make_arm(y_mean=0.55),
                       comparator=make_arm(y_mean=0.35))
        assert bucher(ipd, agd).delta == pytest.approx(0.0, abs=1e-12)

    def test_anchoring_removes_baseline_shift(self):
        ipd = make_ipd([1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0],
                       [1, 1, 1, 1, 0, 0, 0, 0], np.zeros((8, 1)))
        # both trials show a 0.5-point effect from different baselines
        agd = make_agd(active=make_arm(y_mean=0.9),
                       comparator=make_arm(y_mean=0.4))
        assert bucher(ipd, agd).delta == pytest.approx(0.0, abs=1e-12)

    def test_negative_contrast(self):
        ipd = make_ipd([1.0, 0.0, 1.0, 0.0], [1, 1, 0, 0], np.zeros((4, 1)))
        agd = make_agd(active=make_arm(y_mean=0.3),
                       comparator=make_arm(y_mean=0.2))
        assert bucher(ipd, agd).delta == pytest.approx(-0.1)


class TestNaive:
    def test_arithmetic(self):
        ipd = make_ipd([1.0, 1.0, 1.0, 0.0, 0.0], [1] * 5, np.zeros((5, 1)))
        agd = make_agd(active=make_arm(y_mean=0.45))
        assert naive(ipd, agd).delta == pytest.approx(0.15)

    def test_equal_means_zero_on_both_scales(self):
        ipd = make_ipd([1.0, 0.0], [1, 1], np.zeros((2, 1)))
        agd = make_agd(active=make_arm(y_mean=0.5))
        for scale in Scale:
            assert naive(ipd, agd, scale).delta == pytest.approx(0.0, abs=1e-14)

    def test_null_weights_collapse(self, rng):
        """alpha1 = 0 makes the weighted methods equal their unweighted twins."""
        y = (rng.random(60) < 0.5).astype(float)
        z = np.concatenate([np.ones(30, int), np.zeros(30, int)])
        x = rng.normal(size=(60, 2))
        ipd = make_ipd(y, z, x, outcome_kind=OutcomeKind.BINARY)
        agd = make_agd(active=make_arm(y_mean=0.5, x_mean=[0.0, 0.0]),
                       comparator=make_arm(y_mean=0.4, x_mean=[0.0, 0.0]),
                       names=("x1", "x2"))
        model = unit_model(ipd)
        assert maic_nab(ipd, agd, model).delta == naive(ipd, agd).delta
        assert maic_acb(ipd, agd, model).delta == bucher(ipd, agd).delta


class TestStc:
    def test_null_logistic_model_predicts_half(self):
        # y split 50/50 with no covariate signal: fitted curve is flat at .5
        ipd = make_ipd([0.0, 1.0, 0.0, 1.0], [1] * 4,
                       [[-1.0], [-1.0], [1.0], [1.0]])
        agd = make_agd(active=make_arm(y_mean=0.4, x_mean=[5.0]))
        with pytest.warns(UserWarning, match="extrapolat"):
            est = stc(ipd, agd)
        assert est.mu1 == pytest.approx(0.5, abs=1e-8)

    def test_linear_link_exact_interpolation(self):
        ipd = make_ipd([0.0, 1.0], [1, 1], [[0.0], [1.0]])
        agd = make_agd(active=make_arm(y_mean=0.5, x_mean=[0.75]))
        est = stc(ipd, agd, outcome_link=OutcomeLink.LINEAR)
        assert est.mu1 == pytest.approx(0.75, abs=1e-10)
        assert est.delta == pytest.approx(0.25, abs=1e-10)

    def test_pooled_means_across_arms(self):
        ipd = make_ipd([0.0, 1.0], [1, 1], [[0.0], [1.0]])
        agd = make_agd(active=make_arm(n=10, y_mean=0.5, x_mean=[0.5]),
                       comparator=make_arm(n=30, y_mean=0.4, x_mean=[0.9]))
        est = stc(ipd, agd, outcome_link=OutcomeLink.LINEAR)
        assert est.mu1 == pytest.approx(0.8, abs=1e-10)  # pooled mean 0.8

    def test_differs_from_weighting_under_nonlinearity(self, rng):
        # strong X-Y association and a shifted target: averaging then
        # transforming is not transforming then averaging
        n = 400
        x = rng.normal(size=(n, 1))
        prob = 1.0 / (1.0 + np.exp(-(2.5 * x[:, 0] - 0.5)))
        y = (rng.random(n) < prob).astype(float)
        ipd = make_ipd(y, np.ones(n, int), x, outcome_kind=OutcomeKind.BINARY)
        agd = make_agd(active=make_arm(y_mean=0.5, x_mean=[0.8]))
        model = solve_weights(ipd, np.array([0.8]))
        a = maic_nab(ipd, agd, model).delta
        b = stc(ipd, agd).delta
        assert abs(a - b) > 1e-3

    def test_separation_raises(self):
        x = np.concatenate([-np.ones(10), np.ones(10)])[:, None]
        y = (x[:, 0] > 0).astype(float)
        ipd = make_ipd(y, np.ones(20, int), x)
        agd = make_agd(active=make_arm(y_mean=0.5, x_mean=[0.0]))
        with pytest.raises(SeparationError):
            stc(ipd, agd)


class TestWeightedArmMean:
    def test_missing_arm(self):
        ipd = make_ipd([1.0], [1], [[0.0]])
        with pytest.raises(NoComparatorArm):
            weighted_arm_mean(ipd, np.ones(1), z=0)


class TestLogisticIrls:
    def test_recovers_known_coefficients(self, rng):
        n = 20_000
        x = rng.normal(size=(n, 1))
        design = np.hstack([np.ones((n, 1)), x])
        truth = np.array([-0.4, 0.9])
        y = (rng.random(n) < 1.0 / (1.0 + np.exp(-design @ truth))).astype(float)
        fit = fit_logistic_irls(design, y)
        np.testing.assert_allclose(fit, truth, atol=0.08)
