import numpy as np
import pytest

from roughsew import controlled_path as cp
from roughsew.errors import IncompatibleAlphabetError
from roughsew.roughpath import eval_level

from .conftest import random_triples, random_walk, sine_path, smooth_path


def tabulated(X, seed):
    rng = np.random.default_rng(seed)
    n = X.times.size
    return cp.from_table(X, [rng.normal(size=(n, 2, X.dim**j)) for j in range(X.order + 1)])


CONSTRUCTORS = {
    "tautological": cp.tautological,
    "composition": sine_path,
    "tabulated": lambda X: tabulated(X, 17),
}


class TestRemainder:
    def test_constant_path_has_no_remainder(self):
        X = random_walk(0, p=3.2)
        Y = cp.constant(X, [1.5, -2.0])
        for j in range(Y.order + 1):
            assert not np.any(cp.remainder(Y, j, X.times[1], X.times[7]))

    def test_tautological_path_is_exact(self):
        X = random_walk(1, p=2.5)
        Y = cp.tautological(X)
        assert np.allclose(cp.remainder(Y, 0, X.times[2], X.times[11]), 0.0, atol=1e-12)

    def test_top_remainder_is_the_increment(self):
        X = random_walk(2, p=3.4, dim=2)
        Y = tabulated(X, 3)
        s, t = X.times[4], X.times[9]
        N = Y.order
        np.testing.assert_allclose(
            cp.remainder(Y, N, s, t), Y.derivative(N, t) - Y.derivative(N, s), atol=1e-14
        )

    def test_vanishes_on_the_diagonal(self):
        X = random_walk(3, p=2.5)
        Y = sine_path(X)
        t = X.times[5]
        for j in range(Y.order + 1):
            assert np.allclose(cp.remainder(Y, j, t, t), 0.0, atol=1e-14)

    def test_table_matches_pointwise(self):
        X = random_walk(4, segments=6, p=3.1)
        Y = tabulated(X, 5)
        table = cp.remainder_table(Y, 1)
        for a in range(7):
            for b in range(a, 7):
                np.testing.assert_allclose(
                    table[a, b], cp.remainder(Y, 1, X.times[a], X.times[b]), atol=1e-12
                )

    def test_smooth_composition_is_controlled(self):
        X = smooth_path(6, segments=16, p=2.5)
        Y = sine_path(X)
        for j in range(Y.order + 1):
            norm = cp.remainder_norm(Y, j, X.times[0], X.times[-1])
            assert not norm.unbounded and np.isfinite(norm.value)

    def test_index_out_of_range(self):
        X = random_walk(3, p=2.5)
        with pytest.raises(ValueError):
            cp.remainder(cp.tautological(X), 2, X.times[0], X.times[1])

    def test_wrong_table_shape(self):
        X = random_walk(3, p=2.5)
        with pytest.raises(IncompatibleAlphabetError):
            cp.from_table(X, [np.zeros((X.times.size, 1, 1)), np.zeros((X.times.size, 1, 3))])


class TestLocalApproximation:
    def test_zero_path(self):
        X = random_walk(0)
        Y = cp.constant(X, [0.0])
        assert not np.any(cp.local_approx(Y, X.times[0], X.times[-1]))

    def test_constant_scalar_with_p_below_two(self):
        X = random_walk(1, p=1.5, dim=3)
        Y = cp.constant(X, [2.5])
        s, t = X.times[3], X.times[8]
        np.testing.assert_allclose(cp.local_approx(Y, s, t)[0], 2.5 * (X.values[8] - X.values[3]))

    def test_hand_expansion_of_the_second_order_sum(self):
        X = random_walk(2, p=2.5, dim=2)
        Y = tabulated(X, 9)
        s, t = X.times[1], X.times[6]
        expected = Y.derivative(0, s)[:, :1] * eval_level(X, 1, s, t)[None, :]
        expected = expected + Y.derivative(1, s) @ eval_level(X, 2, s, t).reshape(2, 2)
        np.testing.assert_allclose(cp.local_approx(Y, s, t), expected, atol=1e-12)

    def test_vanishes_on_the_diagonal(self):
        X = random_walk(3)
        Y = sine_path(X)
        assert not np.any(cp.local_approx(Y, X.times[4], X.times[4]))


class TestDefects:
    def test_additive_function_has_no_defect(self):
        def xi(s, t):
            return t**3 - s**3

        assert cp.delta_defect(xi, 0.1, 0.4, 0.9) == pytest.approx(0.0, abs=1e-15)

    def test_square_of_the_interval(self):
        s, m, t = 0.2, 0.5, 1.3
        value = cp.delta_defect(lambda a, b: (b - a) ** 2, s, m, t)
        assert value == pytest.approx(2.0 * (m - s) * (t - m))

    def test_rejects_unordered_triple(self):
        with pytest.raises(ValueError):
            cp.delta_defect(lambda a, b: b - a, 0.5, 0.2, 1.0)

    def test_zero_path_identity(self):
        X = random_walk(0)
        Y = cp.constant(X, [0.0])
        assert cp.defect_identity_check(Y, X.times[0], X.times[5], X.times[-1]) == 0.0

    @pytest.mark.parametrize("name", sorted(CONSTRUCTORS))
    @pytest.mark.parametrize("p", [1.5, 2.5, 3.3])
    def test_identity_on_random_triples(self, name, p, rng):
        X = random_walk(int(p * 10), segments=12, dim=2, p=p, level=4)
        Y = CONSTRUCTORS[name](X)
        for s, m, t in random_triples(rng, X.times, 50):
            assert cp.defect_identity_check(Y, s, m, t, relative=True) <= 1e-10

    def test_second_differences_telescope(self):
        X = random_walk(8, p=2.5)
        Y = sine_path(X)

        def xi(a, b):
            return cp.local_approx(Y, a, b)

        a, b, c, d = X.times[[1, 4, 9, 13]]
        lhs = cp.delta_defect(xi, a, b, d) + cp.delta_defect(xi, b, c, d)
        rhs = cp.delta_defect(xi, a, c, d) + cp.delta_defect(xi, a, b, c)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)
