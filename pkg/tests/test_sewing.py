import math

import numpy as np
import pytest
from scipy import integrate

from roughsew import controlled_path as cp
from roughsew.controls import time_control
from roughsew.errors import ConvergenceError, GridError, InvariantViolation
from roughsew.roughpath import eval_level
from roughsew.sewing import (
    refinement_discrepancy_bound,
    rough_integral,
    sew,
    young_remove_point,
    young_telescoping,
    zeta,
)

from .conftest import random_walk, sine_path, smooth_path


def square(s, t):
    return (t - s) ** 2


def young_instance(seed):
    """Ξ_{s,t} for ∫ cos(c g) dg, g(r) = a sin(b r) + r, plus the exact integrand."""
    rng = np.random.default_rng(seed)
    a, b, c = rng.uniform(0.1, 0.4), rng.uniform(1.0, 3.0), rng.uniform(0.5, 2.0)

    def g(r):
        return a * math.sin(b * r) + r

    def taylor(s, t):
        x, dg = g(s), g(t) - g(s)
        return (
            math.cos(c * x) * dg
            - 0.5 * c * math.sin(c * x) * dg**2
            - c**2 * math.cos(c * x) * dg**3 / 6.0
        )

    def left_point(s, t):
        return math.cos(c * g(s)) * (g(t) - g(s))

    def integrand(r):
        return math.cos(c * g(r)) * (a * b * math.cos(b * r) + 1.0)

    return taylor, left_point, integrand


class TestZeta:
    def test_known_values(self):
        assert zeta(1.5) == pytest.approx(2.612375348685488, abs=1e-12)
        assert zeta(2.0) == pytest.approx(math.pi**2 / 6.0, rel=1e-14)

    @pytest.mark.parametrize("x", [1.0, 0.5, -2.0])
    def test_needs_x_above_one(self, x):
        with pytest.raises(ValueError):
            zeta(x)


class TestSew:
    def test_additive_function_is_reproduced(self):
        result = sew(lambda s, t: t**3 - s**3, (0.0, 2.0), time_control(2.0), 0.5)
        assert result.value == pytest.approx(8.0, abs=1e-14)
        assert result.rounds == 1
        assert result.bound == pytest.approx(0.0, abs=1e-12)

    def test_linear_in_the_interval_length(self):
        result = sew(lambda s, t: 3.0 * (t - s), (0.25, 1.0), time_control(1.0), 0.5)
        assert result.value == pytest.approx(2.25, abs=1e-14)

    def test_square_is_sewn_to_zero(self):
        result = sew(square, (0.0, 1.0), time_control(1.0), 0.5, tol=1e-4)
        assert abs(result.value) < 1e-4
        assert result.bound >= abs(result.value - 1.0)

    @pytest.mark.parametrize("seed", range(20))
    def test_third_order_expansion_matches_quadrature(self, seed):
        taylor, _, integrand = young_instance(seed)
        exact, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
        result = sew(taylor, (0.0, 1.0), time_control(1.0), 1.0 / 3.0, tol=1e-10)
        assert result.value == pytest.approx(exact, abs=1e-8)
        assert abs(result.value - taylor(0.0, 1.0)) <= result.bound

    @pytest.mark.parametrize("seed", range(20))
    def test_left_point_sums_obey_the_bound(self, seed):
        _, left_point, integrand = young_instance(seed)
        exact, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13)
        result = sew(left_point, (0.0, 1.0), time_control(1.0), 0.5, tol=1e-3)
        assert result.value == pytest.approx(exact, abs=5e-3)
        assert abs(result.value - left_point(0.0, 1.0)) <= result.bound

    def test_refinement_on_an_allowed_grid(self):
        grid = np.linspace(0.0, 1.0, 5)
        result = sew(lambda s, t: t**2 - s**2, (0.0, 1.0), time_control(1.0), 0.5,
                     grid=grid, refine_to_grid=True)
        assert result.partition_sizes == (2, 3, 5)
        assert result.value == pytest.approx(1.0, abs=1e-15)

    def test_grid_refinement_stays_on_the_grid(self):
        grid = np.array([0.0, 0.1, 0.7, 0.8, 1.0])
        seen = []

        def xi(s, t):
            seen.extend((s, t))
            return t - s

        sew(xi, (0.1, 1.0), time_control(1.0), 0.5, grid=grid, refine_to_grid=True)
        assert set(seen) <= set(grid[1:].tolist())

    def test_refine_to_grid_needs_a_grid(self):
        with pytest.raises(ValueError, match="grid"):
            sew(square, (0.0, 1.0), time_control(1.0), 0.5, refine_to_grid=True)

    @pytest.mark.parametrize("beta", [0.0, 1.0, 1.5])
    def test_beta_range(self, beta):
        with pytest.raises(ValueError):
            sew(square, (0.0, 1.0), time_control(1.0), beta)

    def test_reversed_interval(self):
        with pytest.raises(GridError):
            sew(square, (1.0, 0.0), time_control(1.0), 0.5)

    def test_initial_partition_is_refined_at_midpoints(self):
        seen = []

        def xi(s, t):
            seen.append((s, t))
            return square(s, t)

        result = sew(xi, (0.0, 1.0), time_control(1.0), 0.5, tol=1e-2, initial=[0.0, 0.25, 1.0],
                     estimate_bound=False)
        assert result.partition_sizes[:3] == (3, 5, 9)
        assert seen[:2] == [(0.0, 0.25), (0.25, 1.0)]
        assert result.value == pytest.approx(sum(square(a, b) for a, b in seen[-(result.partition_sizes[-1] - 1):]))

    def test_initial_partition_on_a_grid(self):
        grid = np.linspace(0.0, 1.0, 9)
        result = sew(lambda s, t: t - s, (0.25, 1.0), time_control(1.0), 0.5, grid=grid,
                     initial=grid[2:], estimate_bound=False)
        assert result.partition_sizes == (7,)
        assert result.rounds == 0 and result.gap == 0.0
        assert result.value == pytest.approx(0.75)

    @pytest.mark.parametrize("initial", [[0.0, 0.5], [0.25, 1.0], [0.0, 0.6, 0.4, 1.0], [0.0]])
    def test_initial_partition_must_span_the_interval(self, initial):
        with pytest.raises(GridError, match="Initial partition"):
            sew(square, (0.0, 1.0), time_control(1.0), 0.5, initial=initial)

    def test_gap_is_the_last_difference(self):
        result = sew(square, (0.0, 1.0), time_control(1.0), 0.5, tol=1e-2)
        assert result.gap == pytest.approx(abs(result.sums[-1] - result.sums[-2]))
        assert result.gap < 1e-2

    def test_non_convergence_carries_the_last_sums(self):
        with pytest.raises(ConvergenceError) as info:
            sew(square, (0.0, 1.0), time_control(1.0), 0.5, tol=1e-14, max_rounds=2)
        assert info.value.previous == pytest.approx(0.5)
        assert info.value.last == pytest.approx(0.25)

    def test_discrepancy_bound_formula(self):
        value = refinement_discrepancy_bound(2.0, 1.0, 0.5, 0.25)
        assert value == pytest.approx(4.0 * zeta(2.0) * 2.0 * 0.25)


class TestPointRemoval:
    def test_uniform_partition_ties_go_left(self):
        m_star, cost = young_remove_point(square, [0.0, 1 / 3, 2 / 3, 1.0], 0.5, time_control(1.0))
        assert m_star == 1
        assert cost == pytest.approx(2.0 / 9.0)

    def test_additive_function_costs_nothing(self):
        m_star, cost = young_remove_point(
            lambda s, t: t**2 - s**2, [0.0, 0.2, 0.5, 1.0], 0.5, time_control(1.0)
        )
        assert (m_star, cost) == (1, 0.0)

    def test_cheapest_point(self):
        m_star, _ = young_remove_point(square, [0.0, 0.1, 0.5, 0.55, 1.0], 0.5, time_control(1.0))
        assert m_star == 2

    def test_needs_three_points(self):
        with pytest.raises(GridError):
            young_remove_point(square, [0.0, 1.0], 0.5, time_control(1.0))

    def test_understated_norm_is_reported(self):
        with pytest.raises(InvariantViolation) as info:
            young_remove_point(square, [0.0, 0.5, 1.0], 0.5, time_control(1.0), delta_norm=1e-6)
        assert info.value.context["index"] == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_telescoping_total_is_bounded(self, seed):
        _, left_point, _ = young_instance(seed)
        rng = np.random.default_rng(100 + seed)
        points = np.concatenate(([0.0], np.sort(rng.uniform(0.0, 1.0, size=12)), [1.0]))
        costs, total, bound = young_telescoping(left_point, points, 0.5, time_control(1.0))
        assert len(costs) == 12
        assert total <= bound
        riemann = math.fsum(left_point(a, b) for a, b in zip(points[:-1], points[1:]))
        assert abs(riemann - left_point(0.0, 1.0)) <= total + 1e-14


class TestRoughIntegral:
    @pytest.mark.parametrize("seed", range(3))
    def test_tautological_level_two_is_exact(self, seed):
        X = random_walk(seed, p=2.0, level=3)
        s, t = X.times[2], X.times[13]
        result = rough_integral(cp.tautological(X), s, t)
        expected = np.outer(X.values[2], eval_level(X, 1, s, t)) + eval_level(X, 2, s, t).reshape(2, 2)
        np.testing.assert_allclose(result.value, expected, atol=1e-12)
        assert result.theta == pytest.approx(1.5)
        assert result.bound == pytest.approx(0.0, abs=1e-12)

    def test_young_regime_without_derivatives(self):
        X = random_walk(4, p=1.5, level=2)
        Y = cp.constant(X, [2.0])
        result = rough_integral(Y, X.times[0], X.times[-1])
        np.testing.assert_allclose(result.value[0], 2.0 * (X.values[-1] - X.values[0]), atol=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_composition_stays_within_its_bound(self, seed):
        X = smooth_path(seed, segments=16, p=2.5)
        Y = sine_path(X)
        s, t = X.times[0], X.times[-1]
        result = rough_integral(Y, s, t)
        assert np.isfinite(result.bound)
        assert np.linalg.norm(result.value - cp.local_approx(Y, s, t)) <= result.bound
        assert result.value.shape == (1, 2)

    def test_sums_start_from_the_driver_grid(self):
        X = random_walk(6, p=2.5)
        Y = sine_path(X)
        result = rough_integral(Y, X.times[3], X.times[11], with_bound=False)
        assert result.sewing.partition_sizes == (9,)
        assert result.sewing.rounds == 0
        manual = sum(cp.local_approx(Y, a, b) for a, b in zip(X.times[3:11], X.times[4:12]))
        np.testing.assert_allclose(result.value, manual, atol=1e-13)

    def test_skipping_the_bound(self):
        X = random_walk(5, p=2.0)
        result = rough_integral(cp.tautological(X), X.times[0], X.times[4], with_bound=False)
        assert result.bound is None
