import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlelab.delta_method import (DeltaContext, ball_inside_domain, estimate_m_star, f_pm,
                                 fibonacci_sphere, linear_part, lipschitz_estimate,
                                 quadratic_root, ray_directions, select_epsilon, standardize)
from mlelab.errors import DomainError, NonFinite
from mlelab.families import get_family
from mlelab.mle_engine import bracket_from_aggregates


@pytest.fixture(scope="module")
def poisson_ctx():
    return DeltaContext.from_family(get_family("poisson"), 2.0, 0.25)


def ball_points(eps, m, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((m, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * eps * rng.random((m, 1)) ** (1 / 3)


class TestFpm:
    def test_origin(self):
        ctx = DeltaContext.build(0.5, 2.0)
        assert f_pm(ctx, "+", (0, 0, 0)) == 0.0
        assert f_pm(ctx, "-", (0, 0, 0)) == 0.0

    def test_envelope_free_collapse(self):
        ctx = DeltaContext.build(1.0, 0.0)
        for a in (-0.3, 0.05, 0.4):
            assert f_pm(ctx, "+", (a, 0, 0)) == pytest.approx(a, abs=1e-15)
            assert f_pm(ctx, "-", (a, 0, 0)) == pytest.approx(a, abs=1e-15)

    def test_outside_domain_is_zero(self):
        # Z = 0.3, U = 0.6, R* = 2.5 has U^2 < 2|Z| R*, so the point is outside D
        ctx = DeltaContext.build(0.5, 2.0)
        x = (0.3, 0.1, 0.5)
        assert not ctx.in_domain(x)
        assert f_pm(ctx, "+", x) == 0.0 and f_pm(ctx, "-", x) == 0.0
        tm, tp, disc = bracket_from_aggregates(0.3, 0.6, 2.5)
        assert disc < 0 and np.isnan(tp)

    @pytest.mark.parametrize("x", [(0.05, 0.1, 0.1), (-0.04, -0.2, 0.3), (0.1, 0.0, -0.1)])
    def test_matches_bracket_statistics(self, x):
        ctx = DeltaContext.build(1.0, 0.2)
        assert ctx.in_domain(x)
        tm, tp, _ = bracket_from_aggregates(x[0], x[1] + 1.0, x[2] + 0.2)
        assert f_pm(ctx, "+", x) == pytest.approx(float(tp), rel=1e-14)
        assert f_pm(ctx, "-", x) == pytest.approx(float(tm), rel=1e-14)

    def test_bad_sign(self):
        with pytest.raises(DomainError):
            f_pm(DeltaContext.build(1.0, 0.0), "*", (0, 0, 0))

    def test_ordering_and_bracket(self, poisson_ctx):
        rng = np.random.default_rng(1)
        x = ball_points(poisson_ctx.epsilon, 1000, 2)
        fp = f_pm(poisson_ctx, "+", x)
        fm = f_pm(poisson_ctx, "-", x)
        pos = x[:, 0] >= 0
        assert np.all(fm[pos] <= fp[pos])
        assert np.all(fm[~pos] >= fp[~pos])
        bound = np.abs(x[:, 2] + poisson_ctx.e_rstar)
        r = rng.uniform(-1, 1, 1000) * bound
        q = quadratic_root(poisson_ctx, x, r)
        lo, hi = np.minimum(fm, fp), np.maximum(fm, fp)
        assert np.all((lo - 1e-15 <= q) & (q <= hi + 1e-15))


class TestLinearPart:
    def test_depends_on_first_coordinate(self):
        ctx = DeltaContext.build(0.5, 0.0)
        assert linear_part(ctx, (0, 5, -3)) == 0.0
        assert linear_part(ctx, (1, 0, 0)) == 2.0

    def test_first_order_limit(self, poisson_ctx):
        dirs = fibonacci_sphere(20) * poisson_ctx.epsilon
        ts = np.array([1e-2, 1e-3, 1e-4, 1e-5, 1e-6])
        for sign in "+-":
            errs = np.array([np.max(np.abs(f_pm(poisson_ctx, sign, t * dirs) / t
                                           - linear_part(poisson_ctx, dirs))) for t in ts])
            assert errs[-1] < 1e-5
            # first-order convergence: each tenfold step shrinks the error about tenfold
            ratios = errs[:-2] / errs[1:-1]
            assert np.all((ratios > 5) & (ratios < 20))


class TestStandardize:
    def test_values(self):
        ctx = DeltaContext.build(1.0, 0.0)
        assert standardize(ctx, 0.0, 10) == 0.0
        assert standardize(ctx, 0.1, 100) == pytest.approx(1.0, abs=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(e_u=st.floats(0.05, 20), dev=st.floats(-1, 1), n=st.integers(1, 10_000))
    def test_sigma_tilde_roundtrip(self, e_u, dev, n):
        ctx = DeltaContext.build(e_u, 0.0)
        assert standardize(ctx, dev, n) == pytest.approx(dev * math.sqrt(n) / ctx.sigma_tilde,
                                                        rel=1e-12, abs=1e-300)

    def test_needs_n(self):
        with pytest.raises(DomainError):
            standardize(DeltaContext.build(1.0, 0.0), 0.1, 0)


class TestEpsilon:
    def test_spec_context(self):
        assert select_epsilon(0.5, 2.0) == 0.03125

    def test_ball_inside(self, poisson_ctx):
        assert ball_inside_domain(poisson_ctx.e_u, poisson_ctx.e_rstar, poisson_ctx.epsilon)
        assert not ball_inside_domain(poisson_ctx.e_u, poisson_ctx.e_rstar, 10.0)

    def test_rejects_bad_context(self):
        with pytest.raises(DomainError):
            DeltaContext.build(-1.0, 0.0)
        with pytest.raises(DomainError):
            DeltaContext.build(1.0, -0.1)
        with pytest.raises(DomainError):
            DeltaContext.build(0.5, 2.0, epsilon=1.0)

    @settings(max_examples=30, deadline=None)
    @given(e_u=st.floats(0.05, 10), e_r=st.floats(0, 50))
    def test_selected_ball_inside(self, e_u, e_r):
        eps = select_epsilon(e_u, e_r)
        assert ball_inside_domain(e_u, e_r, eps, directions=300, radii=8)


class TestMStar:
    def test_paper_function(self):
        f = lambda x: x[..., 0] / (1 + np.abs(x[..., 0]))
        assert estimate_m_star(f, 0.5, d=1) == pytest.approx(2.0, rel=0.02)

    def test_linear_zero(self):
        w = np.array([0.3, -1.7, 2.2])
        assert estimate_m_star(lambda x: x @ w + 4.0, 0.7) <= 1e-6
        assert estimate_m_star(lambda x: 3.0 * x[..., 0], 1.0, d=1) <= 1e-6

    def test_quadratic(self):
        # |x|^2 has ray second derivative 2|x|^2
        assert estimate_m_star(lambda x: np.sum(x * x, axis=-1), 1.0) == pytest.approx(2.0, rel=1e-6)

    def test_non_finite(self):
        with pytest.raises(NonFinite), np.errstate(invalid="ignore"):
            estimate_m_star(lambda x: np.log(0.5 - np.abs(x[..., 0])), 1.0, d=1)
        with pytest.raises(DomainError):
            estimate_m_star(lambda x: x[..., 0], 0.0, d=1)

    @pytest.mark.parametrize("sign", "+-")
    def test_poisson_refinement(self, poisson_ctx, sign):
        f = lambda x: f_pm(poisson_ctx, sign, x)
        a = estimate_m_star(f, poisson_ctx.epsilon, directions=256)
        b = estimate_m_star(f, poisson_ctx.epsilon, directions=512)
        assert 0 < a < math.inf
        assert abs(b - a) <= 0.05 * a

    @pytest.mark.parametrize("sign", "+-")
    def test_smoothness_bound(self, poisson_ctx, sign):
        f = lambda x: f_pm(poisson_ctx, sign, x)
        m = 1.1 * estimate_m_star(f, poisson_ctx.epsilon)
        x = ball_points(poisson_ctx.epsilon, 1000, 8)
        gap = np.abs(f(x) - linear_part(poisson_ctx, x))
        assert np.all(gap <= 0.5 * m * np.sum(x * x, axis=1))

    @pytest.mark.parametrize("sign", "+-")
    def test_lipschitz_finite(self, poisson_ctx, sign):
        lip = lipschitz_estimate(lambda x: f_pm(poisson_ctx, sign, x), poisson_ctx.epsilon / 2)
        assert 0 < lip < 10.0 / poisson_ctx.e_u

    def test_directions_unit(self):
        d = ray_directions(3, 100, seed=2)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, rtol=1e-14)
        np.testing.assert_array_equal(ray_directions(1, 5), [[1.0], [-1.0]])
