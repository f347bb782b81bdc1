"""
Controls, p-variation, mixed (p, q)-variation and ω-controlled norms.

Every supremum here is taken over sub-partitions of a finite sample grid.
For piecewise-linear data the supremum over the knot grid is the one we
report; finer partitions are reached by re-lifting on a finer grid.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence, Tuple, Union

import numpy as np

from . import internal_utils as util
from .constants import DEGENERATE_ATOL, EXACT_MIXED_CAP
from .errors import GridError, UnboundedNormError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Control:
    """A superadditive function ω(s, t) on the simplex of [0, T].

    Attributes:
        evaluator: Callable (s, t) -> ω(s, t).
        horizon: Right end T of the time interval.
        grid: Sample grid the table refers to, if tabulated.
        table: Precomputed ω over all grid pairs (upper triangle), if any.
        name: Label used in logs and reports.
    """

    evaluator: Callable[[float, float], float]
    horizon: float
    grid: Optional[np.ndarray] = field(default=None, repr=False)
    table: Optional[np.ndarray] = field(default=None, repr=False)
    name: str = "control"

    def __call__(self, s: float, t: float) -> float:
        if t < s:
            raise ValueError(f"Control needs s <= t, got s={s}, t={t}")
        return float(self.evaluator(s, t))

    def matrix(self, points: Sequence[float]) -> np.ndarray:
        """ω over every pair of ``points``; entry [a, b] is ω(points[a], points[b]) for a <= b."""
        points = np.asarray(points, dtype=float)
        if self.table is not None:
            idx = util._grid_indices(self.grid, points)
            return np.triu(self.table[np.ix_(idx, idx)])
        n = points.size
        out = np.zeros((n, n))
        for a in range(n):
            for b in range(a + 1, n):
                out[a, b] = self(points[a], points[b])
        return out


@dataclass(frozen=True)
class NormValue:
    """An ω-norm estimate, or the +∞ indicator when ``unbounded`` is set."""

    value: float
    unbounded: bool = False

    def require_finite(self, what: str = "norm") -> float:
        if self.unbounded:
            raise UnboundedNormError(f"{what} is unbounded on the sampled grid")
        return self.value


def time_control(horizon: float) -> Control:
    """The control ω(s, t) = t - s."""
    return Control(lambda s, t: max(0.0, t - s), float(horizon), name="time")


def sum_control(first: Control, second: Control) -> Control:
    """Pointwise sum of two controls (again superadditive)."""
    table = grid = None
    if (
        first.table is not None
        and second.table is not None
        and first.grid.shape == second.grid.shape
        and np.array_equal(first.grid, second.grid)
    ):
        grid, table = first.grid, first.table + second.table
    return Control(
        lambda s, t: first(s, t) + second(s, t),
        max(first.horizon, second.horizon),
        grid=grid,
        table=table,
        name=f"{first.name}+{second.name}",
    )


def _magnitude(value: Any) -> float:
    return float(np.linalg.norm(np.asarray(value, dtype=float)))


def _pvar_dp(dist: np.ndarray, p: float) -> Tuple[float, list]:
    """
    Maximise sum |f(a_{k-1}, a_k)|^p over increasing index chains 0 -> n-1.

    ``dist`` is an (n, n) table whose upper triangle holds |f|. The triangle
    inequality is not needed, which keeps the DP valid for remainders.
    """
    n = dist.shape[0]
    if n == 1:
        return 0.0, [0]
    powered = np.triu(dist, k=1) ** p
    best = np.zeros(n)
    link = np.zeros(n, dtype=int)
    for j in range(1, n):
        cand = best[:j] + powered[:j, j]
        m = int(np.argmax(cand))
        best[j] = cand[m]
        link[j] = m
    points = [n - 1]
    while points[-1] != 0:
        points.append(int(link[points[-1]]))
    points.reverse()
    return float(best[-1]), points


def _increment_table(f: Callable[[float, float], Any], grid: np.ndarray) -> np.ndarray:
    n = grid.size
    dist = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            dist[a, b] = _magnitude(f(grid[a], grid[b]))
    return dist


def p_variation(
    f: Callable[[float, float], Any],
    interval: Tuple[float, float],
    p: float,
    grid: Sequence[float],
    return_points: bool = False,
) -> Union[float, Tuple[float, list]]:
    """
    Exact p-variation of an increment function over sub-partitions of a grid.

    Args:
        f: Callable (s, t) -> increment (scalar or array; its norm is used).
        interval: (s, t); the grid must start at s and end at t.
        p (float): Exponent, at least 1.
        grid: Sorted sample partition of the interval.
        return_points (bool): Also return the maximising sub-partition.

    Returns:
        float: (sup_D sum |f|^p)^(1/p), optionally with the maximiser.

    Raises:
        ValueError: If p < 1.
        GridError: If the grid does not span the interval.
    """
    p = util._validate_exponent(p)
    grid = util._as_times(grid)
    s, t = interval
    if not (np.isclose(grid[0], s) and np.isclose(grid[-1], t)):
        raise GridError(f"Grid [{grid[0]}, {grid[-1]}] does not span [{s}, {t}]")
    total, points = _pvar_dp(_increment_table(f, grid), p)
    value = total ** (1.0 / p)
    if return_points:
        return value, [float(grid[i]) for i in points]
    return value


def p_variation_from_table(dist: np.ndarray, p: float) -> float:
    """p-variation when |f| is already tabulated over all grid pairs."""
    total, _ = _pvar_dp(np.asarray(dist, dtype=float), util._validate_exponent(p))
    return total ** (1.0 / p)


def pvar_control(times: Sequence[float], values: np.ndarray, p: float) -> Control:
    """
    The control ω(s, t) = p-variation^p of the sampled path on [s, t].

    The whole table over grid pairs is computed eagerly, so evaluation is a
    lookup and gives identical values in any order. Superadditivity holds
    because optimal partitions of adjacent intervals concatenate.

    Args:
        times: Sorted sample times.
        values: Array (M+1, d) of samples.
        p (float): Variation exponent.

    Returns:
        Control: Tabulated on ``times``.
    """
    p = util._validate_exponent(p)
    grid = util._as_times(times).copy()
    vals = np.asarray(values, dtype=float).reshape(grid.size, -1)
    diff = vals[None, :, :] - vals[:, None, :]
    powered = np.linalg.norm(diff, axis=-1) ** p
    n = grid.size
    table = np.zeros((n, n))
    for i in range(n):
        row = table[i]
        for j in range(i + 1, n):
            row[j] = np.max(row[i:j] + powered[i:j, j])
    table.setflags(write=False)
    grid.setflags(write=False)
    logger.debug("Tabulated %g-variation control on %d points", p, n)

    def evaluate(s: float, t: float) -> float:
        return float(table[util._grid_index(grid, s), util._grid_index(grid, t)])

    return Control(evaluate, float(grid[-1]), grid=grid, table=table, name=f"{p:g}-var")


def sup_ratio(norms: np.ndarray, denoms: np.ndarray) -> NormValue:
    """sup of norms/denoms over matching entries, skipping 0/0 and flagging nonzero/0."""
    norms = np.asarray(norms, dtype=float)
    denoms = np.asarray(denoms, dtype=float)
    zero = denoms <= 0.0
    if np.any(zero & (norms > DEGENERATE_ATOL)):
        return NormValue(0.0, unbounded=True)
    live = ~zero
    if not np.any(live):
        return NormValue(0.0)
    return NormValue(float(np.max(norms[live] / denoms[live])))


def omega_norm(
    A: Callable[..., Any],
    control: Control,
    exponent: float,
    grid: Sequence[float],
    control2: Optional[Control] = None,
    exponent2: Optional[float] = None,
    grid2: Optional[Sequence[float]] = None,
) -> NormValue:
    """
    Sampled ω-controlled norm.

    One parameter: sup |A(s, t)| / ω(s, t)^exponent over grid pairs s < t.
    Two parameters (``control2`` given): sup |A(s, t, u, v)| /
    (ω(s, t)^exponent ω2(u, v)^exponent2) over grid rectangles.

    Args:
        A: Increment function, one or two parameter.
        control (Control): ω on the first axis.
        exponent (float): 1/p.
        grid: Sample grid of the first axis.
        control2 (Control): ω on the second axis, for the two-parameter case.
        exponent2 (float): 1/q.
        grid2: Sample grid of the second axis (defaults to ``grid``).

    Returns:
        NormValue: The estimate, or the unbounded indicator.
    """
    grid = np.asarray(grid, dtype=float)
    pairs = [(a, b) for a in range(grid.size) for b in range(a + 1, grid.size)]
    om = control.matrix(grid)
    if control2 is None:
        norms = [_magnitude(A(grid[a], grid[b])) for a, b in pairs]
        denoms = [om[a, b] ** exponent for a, b in pairs]
        return sup_ratio(np.array(norms), np.array(denoms))
    grid2 = grid if grid2 is None else np.asarray(grid2, dtype=float)
    om2 = control2.matrix(grid2)
    pairs2 = [(c, e) for c in range(grid2.size) for e in range(c + 1, grid2.size)]
    norms, denoms = [], []
    for a, b in pairs:
        for c, e in pairs2:
            norms.append(_magnitude(A(grid[a], grid[b], grid2[c], grid2[e])))
            denoms.append(om[a, b] ** exponent * om2[c, e] ** exponent2)
    return sup_ratio(np.array(norms), np.array(denoms))


def _axes(grid: Any) -> Tuple[np.ndarray, np.ndarray]:
    if hasattr(grid, "axis1"):
        return np.asarray(grid.axis1, dtype=float), np.asarray(grid.axis2, dtype=float)
    first, second = grid
    return util._as_times(first), util._as_times(second)


def _cell_table(A: Callable[..., Any], axis1: np.ndarray, axis2: np.ndarray) -> np.ndarray:
    m, n = axis1.size, axis2.size
    table = np.zeros((m, m, n, n))
    for a in range(m):
        for b in range(a + 1, m):
            for c in range(n):
                for e in range(c + 1, n):
                    table[a, b, c, e] = _magnitude(A(axis1[a], axis1[b], axis2[c], axis2[e]))
    return table


def _best_axis2(cells: np.ndarray, chain: Sequence[int], p: float, q: float) -> float:
    """Inner l^p over the axis-1 chain, then the best axis-2 chain for l^q."""
    chain = np.asarray(chain)
    inner = np.sum(cells[chain[:-1], chain[1:]], axis=0) ** (q / p)
    total, _ = _pvar_dp(inner, 1.0)
    return total


def _mixed_exact(cells: np.ndarray, p: float, q: float) -> float:
    m = cells.shape[0]
    best = 0.0
    for mask in itertools.product((False, True), repeat=m - 2):
        chain = [0] + [i + 1 for i, keep in enumerate(mask) if keep] + [m - 1]
        best = max(best, _best_axis2(cells, chain, p, q))
    return best


def _mixed_greedy(cells: np.ndarray, p: float, q: float) -> float:
    m = cells.shape[0]
    best = 0.0
    for start in (list(range(m)), [0, m - 1]):
        chain = start
        value = _best_axis2(cells, chain, p, q)
        improved = True
        while improved:
            improved = False
            moves = [sorted(set(chain) ^ {i}) for i in range(1, m - 1)]
            for cand in moves:
                cand_value = _best_axis2(cells, cand, p, q)
                if cand_value > value:
                    chain, value, improved = cand, cand_value, True
        best = max(best, value)
    return best


def mixed_variation(
    A: Callable[..., Any],
    rect: Tuple[float, float, float, float],
    p: float,
    q: float,
    grid: Any,
    mode: str = "exact",
) -> float:
    """
    Mixed (p, q)-variation of a two-parameter function over a grid.

    The value is sup over sub-partitions D x D' of
    (sum_n (sum_m |A(cell_mn)|^p)^(q/p))^(1/q).

    Args:
        A: Callable (s, t, u, v) -> value (scalar or array).
        rect: (s, t, u, v).
        p (float): Inner exponent, at least 1.
        q (float): Outer exponent, at least 1.
        grid: GridPartition, or a pair of axis point arrays, spanning rect.
        mode (str): "exact" (both axes at most 12 points) or "greedy"
            (a certified lower bound of the exact value).

    Returns:
        float: The mixed variation.

    Raises:
        ValueError: If p or q < 1, mode is unknown, or exact mode is over
            the size cap.
    """
    p = util._validate_exponent(p, "p")
    q = util._validate_exponent(q, "q")
    axis1, axis2 = _axes(grid)
    s, t, u, v = rect
    if not (
        np.isclose(axis1[0], s)
        and np.isclose(axis1[-1], t)
        and np.isclose(axis2[0], u)
        and np.isclose(axis2[-1], v)
    ):
        raise GridError(f"Grid does not span the rectangle {rect}")
    if mode == "exact" and max(axis1.size, axis2.size) > EXACT_MIXED_CAP:
        raise ValueError(
            f"Exact mixed variation is capped at {EXACT_MIXED_CAP} points per axis, "
            f"got {axis1.size} x {axis2.size}"
        )
    cells = _cell_table(A, axis1, axis2) ** p
    if mode == "exact":
        total = _mixed_exact(cells, p, q)
    elif mode == "greedy":
        total = _mixed_greedy(cells, p, q)
    else:
        raise ValueError(f"Unknown mixed-variation mode: {mode!r}")
    return total ** (1.0 / q)
