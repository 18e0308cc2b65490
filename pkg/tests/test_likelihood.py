import math

import numpy as np
import pytest
from scipy.integrate import quad

from lcrisk.cohort import Cohort
from lcrisk.hazard import ModelId, ParamSet, param_count, unpack
from lcrisk.likelihood import (KNOT_PRIOR_SD, event_density, log_likelihood,
                               log_posterior, log_prior, make_objective,
                               simplex_log_jacobian)

LOG_2PI = math.log(2 * math.pi)


def single_class_constant(rate: float, n_cov: int = 3,
                          t_max: float = 20.0) -> ParamSet:
    return ParamSet(model=ModelId(1, 1, 3), t_max=t_max, weights=np.ones(1),
                    frailty=np.array([[math.log(rate)]]),
                    assoc=np.zeros((1, 1, n_cov)),
                    log_knots=np.zeros((1, 1, 1)))


def _cohort(times, events, z, n_risks=1):
    z = np.asarray(z, dtype=float)
    return Cohort(ids=tuple(str(i) for i in range(len(times))),
                  time=np.asarray(times, dtype=float),
                  event=np.asarray(events, dtype=int),
                  covariates=z.reshape(len(times), -1), n_risks=n_risks)


class TestEventDensity:
    def test_single_class_exponential(self):
        params = single_class_constant(0.3)
        value = event_density(params, np.zeros(3), 2.0, 1)
        assert value == pytest.approx(0.3 * math.exp(-0.6), rel=1e-12)
        assert value == pytest.approx(0.16464349, abs=1e-8)

    def test_density_normalizes_parametric_mode(self):
        # one true risk plus a parametric censoring risk, both constant
        params = ParamSet(model=ModelId(1, 1, 3), t_max=1e9, weights=np.ones(1),
                          frailty=np.array([[math.log(0.25)]]),
                          assoc=np.zeros((1, 1, 2)),
                          log_knots=np.zeros((1, 1, 1)),
                          cens_log_knots=np.array([math.log(0.1)]))
        z = np.array([0.4, -0.2])
        total = 0.0
        for r in (0, 1):
            val, _ = quad(lambda t: event_density(params, z, t, r), 0, 400,
                          limit=300)
            total += val
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_degenerate_mixture_reduces_to_single_class(self):
        single = single_class_constant(0.3)
        two = ParamSet(model=ModelId(1, 2, 3), t_max=20.0,
                       weights=np.array([1.0, 0.0]),
                       frailty=np.array([[math.log(0.3), math.log(7.0)]]),
                       assoc=np.zeros((1, 2, 3)),
                       log_knots=np.zeros((1, 2, 1)))
        for t in (0.5, 2.0, 10.0):
            assert (event_density(two, np.zeros(3), t, 1)
                    == pytest.approx(event_density(single, np.zeros(3), t, 1),
                                     rel=1e-12))


class TestLogLikelihood:
    def test_single_individual(self):
        params = single_class_constant(0.3)
        cohort = _cohort([2.0], [1], np.zeros((1, 3)))
        value = log_likelihood(params, cohort)
        assert value == pytest.approx(math.log(0.3) - 0.6, rel=1e-12)
        assert value == pytest.approx(-1.80397280, abs=1e-7)

    def test_duplication_doubles(self):
        params = single_class_constant(0.2)
        rng = np.random.default_rng(0)
        z = rng.standard_normal((5, 3))
        t = rng.uniform(0.1, 10, 5)
        ev = [1, 0, 1, 1, 0]
        one = log_likelihood(params, _cohort(t, ev, z))
        two = log_likelihood(params, _cohort(np.tile(t, 2), ev * 2,
                                             np.tile(z, (2, 1))))
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_permutation_invariant(self):
        params = single_class_constant(0.2)
        rng = np.random.default_rng(1)
        z = rng.standard_normal((6, 3))
        t = rng.uniform(0.1, 10, 6)
        ev = [1, 0, 1, 1, 0, 1]
        base = log_likelihood(params, _cohort(t, ev, z))
        perm = rng.permutation(6)
        shuffled = log_likelihood(
            params, _cohort(t[perm], list(np.asarray(ev)[perm]), z[perm]))
        assert shuffled == pytest.approx(base, rel=1e-14)

    def test_time_beyond_horizon_clamped_with_warning(self):
        params = single_class_constant(0.3, t_max=5.0)
        cohort = _cohort([6.0], [1], np.zeros((1, 3)))
        with pytest.warns(UserWarning):
            value = log_likelihood(params, cohort)
        assert np.isfinite(value)   # clamped to t_max, not zero density

    def test_zero_density_individual_warns_and_returns_minus_inf(self):
        # survival underflows to exactly zero once the exposure overflows
        params = ParamSet(model=ModelId(1, 1, 3), t_max=50.0,
                          weights=np.ones(1), frailty=np.array([[400.0]]),
                          assoc=np.array([[[400.0, 0.0, 0.0]]]),
                          log_knots=np.zeros((1, 1, 1)))
        cohort = _cohort([50.0], [1], np.array([[1.0, 0.0, 0.0]]))
        with pytest.warns(UserWarning, match="zero observation density"):
            value = log_likelihood(params, cohort)
        assert value == float("-inf")


class TestClassPermutationInvariance:
    def test_likelihood_invariant(self):
        rng = np.random.default_rng(7)
        model = ModelId(3, 3, 3)
        params = unpack(rng.standard_normal(param_count(model, 2, 2)),
                        model, 2, 2, 12.0)
        z = rng.standard_normal((40, 2))
        t = rng.uniform(0.01, 11.9, 40)
        ev = rng.integers(0, 3, 40)
        cohort = _cohort(t, ev, z, n_risks=2)
        base = log_likelihood(params, cohort)
        for order in ([1, 2, 0], [2, 1, 0], [0, 2, 1]):
            permuted = params.permute_classes(order)
            assert log_likelihood(permuted, cohort) == pytest.approx(
                base, abs=1e-12 * max(1, abs(base)))


class TestMixtureConsistency:
    def test_two_identical_classes_match_single(self):
        rng = np.random.default_rng(3)
        z = rng.standard_normal((30, 3))
        t = rng.uniform(0.1, 19, 30)
        ev = rng.integers(0, 2, 30)
        cohort = _cohort(t, ev, z)
        single = single_class_constant(0.3)
        for w1 in (0.2, 0.5, 0.9):
            double = ParamSet(model=ModelId(1, 2, 3), t_max=20.0,
                              weights=np.array([w1, 1 - w1]),
                              frailty=np.full((1, 2), math.log(0.3)),
                              assoc=np.zeros((1, 2, 3)),
                              log_knots=np.zeros((1, 2, 1)))
            assert (log_likelihood(double, cohort)
                    == pytest.approx(log_likelihood(single, cohort), abs=1e-10))


class TestLogPrior:
    def test_gaussian_block_at_zero(self):
        params = ParamSet(model=ModelId(1, 1, 2), t_max=10.0, weights=np.ones(1),
                          frailty=np.zeros((2, 1)), assoc=np.zeros((2, 1, 3)),
                          log_knots=np.zeros((2, 1, 1)))
        n_beta = 2 + 6
        assert log_prior(params) == pytest.approx(-(n_beta / 2) * LOG_2PI)

    def test_weight_block_flat(self):
        for w1 in (0.1, 0.5, 0.77):
            params = ParamSet(model=ModelId(1, 2, 2), t_max=10.0,
                              weights=np.array([w1, 1 - w1]),
                              frailty=np.zeros((1, 2)),
                              assoc=np.zeros((1, 2, 1)),
                              log_knots=np.zeros((1, 1, 1)))
            # log (L-1)! = log 1! = 0 plus the Gaussian normalisations
            assert log_prior(params) == pytest.approx(-(4 / 2) * LOG_2PI)

    def test_association_quadratic_difference(self):
        def with_beta(b):
            return ParamSet(model=ModelId(1, 1, 1), t_max=10.0,
                            weights=np.ones(1), frailty=np.zeros((1, 1)),
                            assoc=np.array([[[b]]]),
                            log_knots=np.zeros((1, 1, 1)))

        assert (log_prior(with_beta(2.0)) - log_prior(with_beta(0.0))
                == pytest.approx(-2.0, rel=1e-12))

    def test_knot_prior_scale(self):
        def with_knot(g):
            return ParamSet(model=ModelId(2, 1, 1), t_max=10.0,
                            weights=np.ones(1), frailty=np.zeros((1, 1)),
                            assoc=np.zeros((1, 1, 1)),
                            log_knots=np.array([[[0.0, g]]]))

        delta = log_prior(with_knot(2.0)) - log_prior(with_knot(0.0))
        assert delta == pytest.approx(-4.0 / (2 * KNOT_PRIOR_SD ** 2), rel=1e-12)

    def test_three_class_weight_constant(self):
        params = ParamSet(model=ModelId(1, 3, 2), t_max=10.0,
                          weights=np.array([0.2, 0.3, 0.5]),
                          frailty=np.zeros((1, 3)), assoc=np.zeros((1, 3, 1)),
                          log_knots=np.zeros((1, 1, 1)))
        expected = math.log(2.0) - (6 / 2) * LOG_2PI   # log (3-1)! plus Gaussians
        assert log_prior(params) == pytest.approx(expected, rel=1e-12)


class TestObjective:
    def test_posterior_decomposition(self):
        params = single_class_constant(0.3)
        cohort = _cohort([2.0, 5.0], [1, 0], np.zeros((2, 3)))
        value = log_posterior(params, cohort, per_individual=True)
        assert value.log_posterior == pytest.approx(
            value.log_likelihood + value.log_prior, rel=1e-15)
        assert value.per_individual.shape == (2,)
        assert value.per_individual.sum() == pytest.approx(value.log_likelihood)

    def test_objective_matches_components(self):
        rng = np.random.default_rng(2)
        model = ModelId(2, 2, 2)
        z = rng.standard_normal((25, 2))
        t = rng.uniform(0.1, 9, 25)
        ev = rng.integers(0, 2, 25)
        cohort = _cohort(t, ev, z)
        objective, core = make_objective(model, cohort, "administrative")
        vec = rng.standard_normal(param_count(model, 1, 2))
        params = unpack(vec, model, 1, 2, core.t_max, "administrative")
        expected = -(log_likelihood(params, cohort, t_max=core.t_max)
                     + log_prior(params)
                     + simplex_log_jacobian(params.weights))
        assert objective(vec) == pytest.approx(expected, rel=1e-12)

    def test_non_finite_vector_rejected(self):
        model = ModelId(1, 1, 1)
        cohort = _cohort([1.0], [1], np.zeros((1, 1)))
        objective, _ = make_objective(model, cohort, "administrative")
        assert objective(np.array([np.nan, 0.0])) == float("inf")

    def test_directional_smoothness_across_knots(self):
        # numerical directional derivatives stay finite when event times sit
        # near and on the anchor times
        model = ModelId(4, 2, 3)
        t_max = 12.0
        anchors = np.linspace(0, t_max, 4)
        times = np.concatenate([anchors[1:], anchors[1:-1] - 1e-7,
                                anchors[1:-1] + 1e-7, [0.5, 11.9]])
        rng = np.random.default_rng(4)
        z = rng.standard_normal((times.size, 2))
        ev = np.ones(times.size, dtype=int)
        cohort = Cohort(ids=tuple(map(str, range(times.size))), time=times,
                        event=ev, covariates=z, n_risks=1, trial_end=t_max)
        objective, _ = make_objective(model, cohort, "administrative")
        vec = 0.3 * rng.standard_normal(param_count(model, 1, 2))
        h = 1e-6
        for _ in range(5):
            direction = rng.standard_normal(vec.size)
            direction /= np.linalg.norm(direction)
            deriv = (objective(vec + h * direction)
                     - objective(vec - h * direction)) / (2 * h)
            assert np.isfinite(deriv)
