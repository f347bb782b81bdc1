import math

import numpy as np
import pytest
from scipy.special import iv

from roughsew import joint
from roughsew.errors import GridError, IncompatibleAlphabetError, TruncationError
from roughsew.roughpath import lift
from roughsew.sigkernel import (
    as_joint_path,
    decay_tail_bound,
    fit_decay_constant,
    goursat_oracle,
    kernel_derivative,
    kernel_derivative_table,
    kernel_first_remainder,
    kernel_instance,
    kernel_second_remainder,
    kernel_value,
    tail_bound,
)

from .conftest import random_triples, smooth_path

BESSEL_AT_TWO = 2.2795853023360673


def linear_path(points=3, level=12):
    times = np.linspace(0.0, 1.0, points)
    return lift(times, times[:, None], p=2, level=level)


class TestKernelValue:
    def test_unit_segment_is_a_bessel_value(self, unit_segment):
        KI = kernel_instance(unit_segment)
        result = kernel_value(KI, 1.0, 1.0)
        assert result.value == pytest.approx(BESSEL_AT_TWO, abs=1e-10)
        assert result.value == pytest.approx(iv(0, 2.0), abs=1e-10)
        assert 0.0 < result.tail_bound < 1e-15

    def test_interior_nodes(self):
        KI = kernel_instance(linear_path(points=5))
        for s, u in [(0.25, 1.0), (0.5, 0.5), (0.75, 0.25)]:
            expected = iv(0, 2.0 * math.sqrt(s * u))
            assert kernel_value(KI, s, u).value == pytest.approx(expected, abs=1e-12)

    def test_base_edges_are_one(self):
        X = smooth_path(1, segments=6)
        KI = kernel_instance(X)
        for u in X.times:
            assert kernel_value(KI, 0.0, float(u)).value == 1.0

    @pytest.mark.parametrize("level", [2, 4, 6])
    def test_truncation_error_within_the_tail_bound(self, unit_segment, level):
        KI = kernel_instance(unit_segment, series_level=level)
        result = kernel_value(KI, 1.0, 1.0)
        assert abs(result.value - BESSEL_AT_TWO) <= result.tail_bound * (1.0 + 1e-12) + 1e-14

    def test_decay_tail_bound(self):
        KI = kernel_instance(smooth_path(2, segments=6), series_level=8)
        bound = decay_tail_bound(KI, 1.0, 1.0)
        assert np.isfinite(bound) and bound > 0.0
        assert decay_tail_bound(KI, 0.0, 1.0) == 0.0

    def test_fitted_decay_constant(self):
        X = smooth_path(3, segments=6)
        beta = fit_decay_constant(X)
        assert np.isfinite(beta) and beta > 0.0
        flat = lift([0.0, 0.5, 1.0], np.zeros((3, 2)), p=2, level=4)
        assert fit_decay_constant(flat) == 1.0

    def test_before_the_base_point(self):
        X = smooth_path(4, segments=6)
        KI = kernel_instance(X, base=X.times[3])
        with pytest.raises(GridError):
            kernel_value(KI, X.times[1], X.times[4])
        assert kernel_value(KI, X.times[3], X.times[5]).value == pytest.approx(
            kernel_value(KI, X.times[5], X.times[3]).value
        )

    def test_one_driver_keeps_one_base_point(self):
        X = smooth_path(6, segments=6)
        KI = kernel_instance(X, base=X.times[2])
        assert KI.base2 == KI.base == X.times[2]
        nodes = X.times[2:]
        K = np.array([[kernel_value(KI, s, u).value for u in nodes] for s in nodes])
        np.testing.assert_allclose(K, K.T, rtol=1e-12)
        table = as_joint_path(KI).first[0][0][:, :, 0, 0]
        np.testing.assert_allclose(table, K, rtol=1e-10)

    def test_explicit_second_base_point(self):
        X = smooth_path(6, segments=6)
        KI = kernel_instance(X, base=X.times[2], base2=X.times[0])
        assert KI.base2 == X.times[0]
        with pytest.raises(GridError):
            kernel_value(KI, X.times[1], X.times[4])
        assert kernel_value(KI, X.times[2], X.times[1]).value == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(IncompatibleAlphabetError):
            kernel_instance(smooth_path(0, dim=2), smooth_path(1, dim=3))

    def test_short_drivers_are_lifted_again(self):
        X = smooth_path(5, segments=4, level=3)
        KI = kernel_instance(X, series_level=10)
        assert KI.driver.level == 10 and KI.driver2 is KI.driver


class TestDerivatives:
    def test_zeroth_derivative_is_the_kernel(self):
        X = smooth_path(6, segments=6)
        KI = kernel_instance(X, smooth_path(7, segments=6))
        s, u = X.times[4], X.times[2]
        assert kernel_derivative(KI, 1, 0, 0, s, u)[0, 0] == pytest.approx(
            kernel_value(KI, s, u).value, rel=1e-12
        )

    def test_table_matches_pointwise(self):
        X = smooth_path(8, segments=5)
        KI = kernel_instance(X, smooth_path(9, segments=5))
        table = kernel_derivative_table(KI, 1, 1)
        for a, c in [(0, 0), (2, 4), (5, 1)]:
            np.testing.assert_allclose(
                table[a, c], kernel_derivative(KI, 1, 1, 1, X.times[a], X.times[c]), rtol=1e-12, atol=1e-14
            )

    def test_second_arrangement_is_the_transpose(self):
        X = smooth_path(10, segments=5)
        KI = kernel_instance(X)
        s, u = X.times[3], X.times[4]
        np.testing.assert_array_equal(
            kernel_derivative(KI, 2, 1, 0, s, u), kernel_derivative(KI, 1, 1, 0, s, u).T
        )

    def test_order_out_of_range(self):
        X = smooth_path(10, segments=5)
        with pytest.raises(ValueError):
            kernel_derivative(kernel_instance(X), 1, 2, 0, X.times[1], X.times[1])


class TestClosedFormRemainders:
    @pytest.fixture(scope="class")
    def instance(self):
        X = smooth_path(12, segments=6, amplitude=0.2)
        X2 = smooth_path(13, segments=6, amplitude=0.2)
        KI = kernel_instance(X, X2)
        return KI, as_joint_path(KI)

    def test_first_remainders(self, instance):
        KI, J = instance
        rng = np.random.default_rng(3)
        times, times2 = J.driver.times, J.driver2.times
        for _ in range(10):
            s = float(rng.choice(times))
            u, v = np.sort(rng.choice(times2, size=2, replace=False))
            for j in range(2):
                for k in range(2):
                    np.testing.assert_allclose(
                        kernel_first_remainder(KI, 1, j, k, s, u, v),
                        joint.first_remainder(J, 1, j, k, s, u, v),
                        atol=1e-10,
                    )
                    np.testing.assert_allclose(
                        kernel_first_remainder(KI, 2, j, k, float(u), s, float(times[-1])),
                        joint.first_remainder(J, 2, j, k, float(u), s, float(times[-1])),
                        atol=1e-10,
                    )

    def test_second_remainders(self, instance):
        KI, J = instance
        rng = np.random.default_rng(4)
        for (s, _, t), (u, _, v) in zip(
            random_triples(rng, J.driver.times, 8), random_triples(rng, J.driver2.times, 8)
        ):
            for j in range(2):
                for k in range(2):
                    np.testing.assert_allclose(
                        kernel_second_remainder(KI, j, k, s, t, u, v),
                        joint.second_remainder(J, j, k, s, t, u, v),
                        atol=1e-10,
                    )

    def test_unordered_rectangle(self, instance):
        KI, J = instance
        times = J.driver.times
        with pytest.raises(GridError):
            kernel_second_remainder(KI, 0, 0, times[3], times[1], times[0], times[2])


class TestJointPath:
    def test_kernel_as_a_joint_path(self):
        X = smooth_path(14, segments=6)
        KI = kernel_instance(X)
        J = as_joint_path(KI)
        assert J is as_joint_path(KI)
        assert J.driver2 is J.driver
        assert joint.symmetry_residual(J) == 0.0
        s, u = X.times[2], X.times[5]
        assert J.derivative(1, 0, 0, s, u)[0, 0] == pytest.approx(kernel_value(KI, s, u).value)

    def test_series_level_too_low(self):
        KI = kernel_instance(smooth_path(15, segments=4), series_level=5)
        with pytest.raises(TruncationError):
            as_joint_path(KI)

    def test_tail_above_tolerance(self):
        KI = kernel_instance(smooth_path(15, segments=4), series_level=6)
        with pytest.raises(TruncationError, match="Tail bound"):
            as_joint_path(KI, tol=1e-300)

    def test_shifted_base_point(self):
        X = smooth_path(16, segments=6)
        KI = kernel_instance(X, base=X.times[2])
        J = as_joint_path(KI)
        assert J.driver.times[0] == X.times[2]
        assert J.first[0][0][0, 0, 0, 0] == pytest.approx(1.0)


class TestGoursat:
    def test_unit_segment(self):
        result = goursat_oracle([[0.0], [1.0]], [[0.0], [1.0]], refine=128)
        assert result.values[1, 1] == pytest.approx(BESSEL_AT_TWO, abs=1e-6)
        assert result.error < 1e-6
        assert 1.0 <= result.order <= 6.0

    @pytest.mark.parametrize("seed", range(10))
    def test_agrees_with_the_series(self, seed):
        X = smooth_path(seed, segments=8)
        X2 = smooth_path(seed + 50, segments=8)
        series = kernel_derivative_table(kernel_instance(X, X2), 0, 0)[:, :, 0, 0]
        oracle = goursat_oracle(X.values, X2.values, tol=1e-9, rtol=1e-5)
        np.testing.assert_allclose(oracle.values, series, rtol=1e-4, atol=1e-8)

    def test_constant_path(self):
        result = goursat_oracle(np.zeros((4, 2)), np.ones((3, 2)), refine=2)
        np.testing.assert_array_equal(result.values, np.ones((4, 3)))
        assert result.error == 0.0

    def test_tolerance(self):
        with pytest.raises(TruncationError):
            goursat_oracle([[0.0], [2.0]], [[0.0], [2.0]], refine=1, tol=1e-15, max_refine=4)

    def test_demanding_tolerance_doubles_the_refinement(self):
        loose = goursat_oracle([[0.0], [1.0]], [[0.0], [1.0]], refine=2)
        tight = goursat_oracle([[0.0], [1.0]], [[0.0], [1.0]], refine=2, rtol=1e-5)
        assert loose.refine == 2
        assert tight.refine > 2 and tight.refine & (tight.refine - 1) == 0
        assert tight.error <= 1e-5 * float(np.max(np.abs(tight.values)))
        assert tight.values[1, 1] == pytest.approx(BESSEL_AT_TWO, rel=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(IncompatibleAlphabetError):
            goursat_oracle(np.zeros((3, 2)), np.zeros((3, 1)))

    def test_refine_must_be_positive(self):
        with pytest.raises(ValueError):
            goursat_oracle([[0.0], [1.0]], [[0.0], [1.0]], refine=0)


def test_tail_bound_vanishes_at_the_base(unit_segment):
    assert tail_bound(kernel_instance(unit_segment), 0.0, 1.0) == 0.0
