import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mlelab.errors import ConfigError, DomainError, QuadratureFailure
from mlelab.families import REGISTRY, get_family
from mlelab.family_core import (choose_delta, derivative_mismatch, draw_sample, expectation,
                                expected_envelope, fisher_information, identity_checks,
                                log_density, score_derivative, third_derivative_envelope)
from mlelab.quadrature import QuadratureSpec, integrate_interval, sum_counting
from mlelab.rng import child_stream

# one interior parameter per family, with an independent scipy.stats oracle
REFERENCE = {
    "normal_location": (0.3, lambda x, t: stats.norm.logpdf(x, t, 1.0)),
    "normal_scale": (1.5, lambda x, t: stats.norm.logpdf(x, 1.0, t)),
    "exponential": (2.0, lambda x, t: stats.expon.logpdf(x, scale=1.0 / t)),
    "weibull": (1.5, lambda x, t: stats.weibull_min.logpdf(x, 2.0, scale=t)),
    "gamma_shape": (2.5, lambda x, t: stats.gamma.logpdf(x, t, scale=1.0)),
    "gamma_scale": (1.2, lambda x, t: stats.gamma.logpdf(x, 3.0, scale=t)),
    "poisson": (2.0, lambda x, t: stats.poisson.logpmf(x, t)),
    "beta_mean": (0.3, lambda x, t: stats.beta.logpdf(x, 5.0 * t, 5.0 * (1 - t))),
    "beta_scale": (1.0, lambda x, t: stats.beta.logpdf(x, 2.0 * t, 3.0 * t)),
    "cauchy_location": (0.0, lambda x, t: stats.cauchy.logpdf(x, t)),
    "quartic_location": (0.2, lambda x, t: stats.gennorm.logpdf(x, 4.0, loc=t)),
    "example62": (0.7, lambda x, t: stats.norm.logpdf(
        x, t / (1 + t * t), math.sqrt(((1 + t) ** 3 - t) / (1 + t ** 3)))),
}


def theta_for(name):
    return REFERENCE[name][0]


class TestPointwise:
    def test_normal_at_mode(self):
        f = get_family("normal_location")
        assert log_density(f, 0.0, 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-15)

    def test_exponential_rate(self):
        assert log_density(get_family("exponential"), 1.0, 1.0) == pytest.approx(-1.0, abs=1e-15)

    def test_poisson_zero(self):
        assert log_density(get_family("poisson"), 0, 2.0) == pytest.approx(-2.0, abs=1e-15)

    def test_normal_derivatives(self):
        f = get_family("normal_location")
        assert score_derivative(f, 1.0, 0.0, 1) == 1.0
        assert score_derivative(f, 3.7, 0.2, 2) == -1.0
        assert score_derivative(f, -2.0, 1.0, 3) == 0.0

    def test_domain_errors(self):
        f = get_family("exponential")
        with pytest.raises(DomainError):
            log_density(f, -1.0, 1.0)
        with pytest.raises(DomainError):
            log_density(f, 1.0, -1.0)
        with pytest.raises(DomainError):
            log_density(get_family("poisson"), 1.5, 2.0)
        with pytest.raises(DomainError):
            score_derivative(f, 1.0, 1.0, 4)

    def test_unknown_family(self):
        with pytest.raises(ConfigError):
            get_family("no_such_family")

    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_log_density_matches_scipy(self, name):
        t, oracle = REFERENCE[name]
        f = get_family(name)
        x = f.sampler(t, 40, child_stream(11, 40, 0))
        np.testing.assert_allclose(f.log_density(x, t), oracle(x, t), rtol=1e-11, atol=1e-11)

    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_derivative_consistency(self, name):
        f = get_family(name)
        t0 = theta_for(name)
        delta = choose_delta(f, t0)
        rng = np.random.default_rng(5)
        thetas = rng.uniform(t0 - delta, t0 + delta, 50)
        xs = [f.sampler(float(t), 1, rng)[0] for t in thetas]
        worst = max(derivative_mismatch(f, float(x), float(t)) for x, t in zip(xs, thetas))
        assert worst <= 1e-5


class TestEnvelope:
    def test_normal_zero(self):
        f = get_family("normal_location")
        np.testing.assert_array_equal(third_derivative_envelope(f, np.array([-3.0, 0.0, 8.0]), 0.0, 1.0), 0.0)

    def test_poisson_monotone(self):
        v = third_derivative_envelope(get_family("poisson"), 3, 2.0, 0.5)
        assert v == pytest.approx(6.0 / 1.5 ** 3, rel=2e-9)
        assert v >= 6.0 / 1.5 ** 3

    def test_cauchy_refinement_oracle(self):
        f = get_family("cauchy_location")
        v = float(third_derivative_envelope(f, np.array([1.0]), 0.0, 0.5)[0])
        fine = np.linspace(-0.5, 0.5, 10 * 101 * 10)
        ref = np.max(np.abs(f.d3(1.0, fine)))
        assert v >= ref
        assert v == pytest.approx(ref, rel=1e-6)

    def test_cauchy_exact_critical_points(self):
        # |d3| of the Cauchy score peaks at u = +-(sqrt2 -+ 1); u = x - theta
        f = get_family("cauchy_location")
        u_star = math.sqrt(2.0) - 1.0
        peak = abs(float(f.d3(u_star, 0.0)))
        v = float(third_derivative_envelope(f, np.array([u_star + 0.1]), 0.0, 0.3)[0])
        # the envelope carries a 1e-9 relative safety margin
        assert v == pytest.approx(peak, rel=3e-9)
        assert v >= peak

    def test_interval_must_fit(self):
        with pytest.raises(DomainError):
            third_derivative_envelope(get_family("exponential"), 1.0, 0.3, 0.5)

    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_grid_path_dominates(self, name):
        # the grid search never falls below a brute-force 5001-point maximum
        f = get_family(name)
        t0 = theta_for(name)
        delta = choose_delta(f, t0)
        x = f.sampler(t0, 30, child_stream(3, 30, 0))
        env = third_derivative_envelope(f, x, t0, delta, use_hint=False)
        grid = np.linspace(t0 - delta, t0 + delta, 5001)
        brute = np.max(np.abs(f.d3(x[:, None], grid[None, :]) + 0 * grid), axis=1)
        assert np.all(env >= brute * (1 - 1e-12))
        if f.envelope_hint is not None:
            hint = third_derivative_envelope(f, x, t0, delta)
            assert np.all(hint >= brute * (1 - 1e-12))


class TestExpectation:
    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_identities_on_theta_grid(self, name):
        f = get_family(name)
        t0 = theta_for(name)
        lo, hi = f.parameter_space
        room = min(t0 - lo, hi - t0, 1.0)
        for t in t0 + room * np.array([-0.6, -0.3, 0.0, 0.3, 0.6]):
            one = expectation(f, t, lambda x: np.ones_like(np.asarray(x, float)))
            assert abs(one - 1) <= 1e-7
            assert abs(expectation(f, t, lambda x: f.d1(x, t))) <= 1e-6
            info = fisher_information(f, t)
            assert abs(info + expectation(f, t, lambda x: f.d2(x, t))) <= 1e-5 * info

    def test_fisher_values(self):
        assert fisher_information(get_family("normal_location"), 0.7) == pytest.approx(1.0, abs=1e-6)
        assert fisher_information(get_family("poisson"), 2.0) == pytest.approx(0.5, abs=1e-6)
        assert fisher_information(get_family("exponential"), 3.0) == pytest.approx(1 / 9, abs=1e-6)
        assert fisher_information(get_family("cauchy_location"), 0.0) == pytest.approx(0.5, abs=1e-9)
        assert fisher_information(get_family("gamma_scale"), 2.0) == pytest.approx(3 / 4, rel=1e-9)

    def test_poisson_information_identity(self):
        f = get_family("poisson")
        a = expectation(f, 2.0, lambda x: f.d1(x, 2.0) ** 2)
        b = -expectation(f, 2.0, lambda x: f.d2(x, 2.0))
        assert abs(a - b) <= 2e-11

    def test_quadrature_failure_surfaces(self):
        spec = QuadratureSpec(abs_tol=1e-14, rel_tol=1e-14, max_subdivisions=2)
        with pytest.raises(QuadratureFailure):
            integrate_interval(lambda x: 1.0 / math.sqrt(abs(x - 0.3)) if x != 0.3 else 0.0,
                               0.0, 1.0, spec)

    def test_counting_sum(self):
        lam = 3.0
        pmf = lambda k: stats.poisson.pmf(k, lam)
        total = sum_counting(lambda k: k * pmf(k), pmf, 40.0, QuadratureSpec())
        assert total == pytest.approx(lam, abs=1e-11)

    def test_expected_envelope_poisson(self):
        # R* = 2x/(theta0 - delta)^3, so E R* = 2 theta0 / (theta0 - delta)^3
        v = expected_envelope(get_family("poisson"), 2.0, 0.25)
        assert v == pytest.approx(4.0 / 1.75 ** 3, rel=3e-9)


class TestDelta:
    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_default_delta_condition(self, name):
        f = get_family(name)
        t0 = theta_for(name)
        d = choose_delta(f, t0)
        assert fisher_information(f, t0) - d * expected_envelope(f, t0, d) > 0

    def test_rejects_large_delta(self):
        with pytest.raises(DomainError):
            choose_delta(get_family("poisson"), 2.0, 0.5)

    def test_identity_checks_report(self):
        res = identity_checks(get_family("gamma_scale"), 1.0, 0.125, seed=1)
        assert [c.name for c in res] == ["normalization", "score_mean", "information_identity",
                                         "derivative_consistency", "envelope_dominance"]
        assert all(c.passed for c in res)


class TestSampling:
    def test_determinism(self):
        f = get_family("cauchy_location")
        a = draw_sample(f, 0.0, 100, child_stream(42, 1))
        b = draw_sample(f, 0.0, 100, child_stream(42, 1))
        np.testing.assert_array_equal(a, b)

    def test_normal_mean_band(self):
        x = draw_sample(get_family("normal_location"), 3.0, 100_000, child_stream(1, 2))
        assert abs(x.mean() - 3.0) <= 3.0 / math.sqrt(1e5)

    def test_poisson_zero_frequency(self):
        x = draw_sample(get_family("poisson"), 2.0, 100_000, child_stream(1, 3))
        p0 = math.exp(-2.0)
        assert abs(np.mean(x == 0) - p0) <= 3 * math.sqrt(p0 * (1 - p0) / 1e5)

    @pytest.mark.parametrize("name", sorted(REGISTRY))
    def test_samples_in_support(self, name):
        f = get_family(name)
        x = draw_sample(f, theta_for(name), 2000, child_stream(9, 4))
        assert np.all(f.in_support(x))

    def test_needs_positive_n(self):
        with pytest.raises(DomainError):
            draw_sample(get_family("poisson"), 2.0, 0, child_stream(1))


@settings(max_examples=60, deadline=None)
@given(theta=st.floats(0.2, 5.0), x=st.integers(0, 30), delta_frac=st.floats(0.05, 0.9))
def test_envelope_dominates_random_points_poisson(theta, x, delta_frac):
    f = get_family("poisson")
    delta = delta_frac * theta
    env = float(third_derivative_envelope(f, float(x), theta, delta))
    taus = np.linspace(theta - delta, theta + delta, 20)
    assert np.all(np.abs(f.d3(float(x), taus)) <= env)


@settings(max_examples=40, deadline=None)
@given(x=st.floats(-30, 30), theta0=st.floats(-5, 5), delta=st.floats(0.01, 2.0))
def test_envelope_dominates_random_points_cauchy(x, theta0, delta):
    f = get_family("cauchy_location")
    env = float(third_derivative_envelope(f, np.array([x]), theta0, delta)[0])
    taus = np.random.default_rng(0).uniform(theta0 - delta, theta0 + delta, 20)
    assert np.all(np.abs(f.d3(x, taus)) <= env)
