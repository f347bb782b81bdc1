"""
Sewing of almost-additive two-parameter functions.

The integrator refines dyadically, either in index space on an allowed set
of grid times or at real midpoints, and reports the last Riemann sum once
two successive sums agree. Every partial sum is reduced left to right.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import zeta as hurwitz_zeta

from . import controls
from . import internal_utils as util
from .constants import (
    BOUND_SLACK,
    DEFAULT_TOLERANCE,
    DEGENERATE_ATOL,
    MAX_REFINEMENT_ROUNDS,
    RANDOM_TRIPLES,
)
from .controlled_path import ControlledPath, delta_defect, local_approx, remainder_norm
from .controls import Control, NormValue
from .errors import ConvergenceError, GridError, InvariantViolation
from .roughpath import level_omega_norm

logger = logging.getLogger(__name__)

TwoParam = Callable[[float, float], Any]


def zeta(x: float) -> float:
    """Riemann zeta function, x > 1."""
    if x <= 1.0:
        raise ValueError(f"zeta needs x > 1, got {x}")
    return float(hurwitz_zeta(x, 1.0))


@dataclass(frozen=True, eq=False)
class SewResult:
    """Outcome of :func:`sew`.

    Attributes:
        value: Riemann sum on the finest partition used.
        bound: 2^(1/β) ζ(1/β) ω(s,t)^(1/β) ‖δΞ‖, or None if not estimated.
        delta_norm: Sampled ‖δΞ‖_{β,ω}.
        partition_sizes: Number of points per round.
        sums: Riemann sum per round.
        rounds: Refinement rounds performed.
    """

    value: Any
    bound: Optional[float]
    delta_norm: Optional[NormValue]
    partition_sizes: Tuple[int, ...]
    sums: Tuple[Any, ...]
    rounds: int

    @property
    def gap(self) -> float:
        """Distance between the last two Riemann sums, 0 for a single sum."""
        if len(self.sums) < 2:
            return 0.0
        return _distance(self.sums[-1], self.sums[-2])


def _riemann_sum(xi: TwoParam, points: Sequence[float]) -> Any:
    return util._ordered_sum(np.asarray(xi(a, b), dtype=float) for a, b in zip(points[:-1], points[1:]))


def _distance(a: Any, b: Any) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def _delta_norm(
    xi: TwoParam,
    control: Control,
    beta: float,
    triples: Sequence[Tuple[float, float, float]],
) -> NormValue:
    norms = [np.linalg.norm(delta_defect(xi, a, b, c)) for a, b, c in triples]
    denoms = [control(a, c) ** (1.0 / beta) for a, b, c in triples]
    return controls.sup_ratio(np.array(norms), np.array(denoms))


def _consecutive_triples(points: Sequence[float]) -> List[Tuple[float, float, float]]:
    return [(points[m - 1], points[m], points[m + 1]) for m in range(1, len(points) - 1)]


def sew(
    xi: TwoParam,
    interval: Tuple[float, float],
    control: Control,
    beta: float,
    grid: Optional[Sequence[float]] = None,
    tol: float = DEFAULT_TOLERANCE,
    max_rounds: int = MAX_REFINEMENT_ROUNDS,
    refine_to_grid: bool = False,
    estimate_bound: bool = True,
    seed: int = 0,
    initial: Optional[Sequence[float]] = None,
) -> SewResult:
    """
    Sew Ξ into an additive function on ``interval``.

    Args:
        xi: Callable (a, b) -> Ξ_{a,b}, scalar or array valued.
        interval: (s, t).
        control (Control): ω used for the bound.
        beta (float): Exponent in (0, 1); |δΞ_{a,b,c}| <= N ω(a,c)^(1/β).
        grid: Allowed partition times. Refinement then runs in index space
            and never leaves the grid. Without it, real dyadic midpoints.
        tol (float): Successive sums must differ by less than this.
        max_rounds (int): Refinement rounds before giving up.
        refine_to_grid (bool): Keep refining until the grid is exhausted
            and report the full-grid sum (needs ``grid``).
        estimate_bound (bool): Sample ‖δΞ‖ and assemble the error bound.
        seed (int): Seed of the random triples added to the norm sample.
        initial: Starting partition of [s, t], on the grid when one is given.
            Defaults to {s, t}.

    Returns:
        SewResult: Value, bound and refinement history.

    Raises:
        ValueError: If beta is not in (0, 1).
        ConvergenceError: If the last two sums still differ by tol or more.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    s, t = float(interval[0]), float(interval[1])
    if t < s:
        raise GridError(f"Need s <= t, got s={s}, t={t}")
    allowed = None
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        lo, hi = util._grid_index(grid, s), util._grid_index(grid, t)
        allowed = grid[lo : hi + 1]
        nodes: List = [0, allowed.size - 1]
        if initial is not None:
            nodes = [util._grid_index(grid, x) - lo for x in initial]
    else:
        nodes = [s, t] if initial is None else [float(x) for x in initial]
    if initial is not None:
        ends = (s, t) if allowed is None else (0, allowed.size - 1)
        increasing = all(b > a for a, b in zip(nodes[:-1], nodes[1:]))
        if len(nodes) < 2 or (nodes[0], nodes[-1]) != ends or not increasing:
            raise GridError(f"Initial partition must increase from {s} to {t}")
    if refine_to_grid and allowed is None:
        raise ValueError("refine_to_grid needs a grid")

    def times_of(idx: Sequence) -> List[float]:
        return [float(allowed[i]) for i in idx] if allowed is not None else list(idx)

    history = [times_of(nodes)]
    sums = [_riemann_sum(xi, history[-1])]
    converged = s == t
    rounds = 0
    while rounds < max_rounds or refine_to_grid:
        finer = util._refine(nodes, allowed)
        if len(finer) == len(nodes):
            break
        nodes, rounds = finer, rounds + 1
        history.append(times_of(nodes))
        sums.append(_riemann_sum(xi, history[-1]))
        gap = _distance(sums[-1], sums[-2])
        logger.debug("sewing round %d: %d points, gap %.3e", rounds, len(nodes), gap)
        converged = gap < tol
        if converged and not refine_to_grid:
            break
    if len(sums) == 1:
        converged = True
    if not converged:
        raise ConvergenceError(
            f"Sewing on [{s}, {t}] did not settle after {rounds} rounds "
            f"(last gap {_distance(sums[-1], sums[-2]):.3e} >= tol {tol:.1e})",
            previous=sums[-2],
            last=sums[-1],
        )

    bound = norm = None
    if estimate_bound:
        triples = [tr for pts in history for tr in _consecutive_triples(pts)]
        finest = history[-1]
        if len(finest) >= 3:
            rng = np.random.default_rng(seed)
            for _ in range(RANDOM_TRIPLES):
                a, b, c = sorted(rng.choice(len(finest), size=3, replace=False))
                triples.append((finest[a], finest[b], finest[c]))
        norm = _delta_norm(xi, control, beta, triples) if triples else NormValue(0.0)
        if norm.unbounded:
            logger.warning("‖δΞ‖ is unbounded on the sampled triples; no bound reported")
        else:
            bound = 2.0 ** (1.0 / beta) * zeta(1.0 / beta) * control(s, t) ** (1.0 / beta) * norm.value
            gap = _distance(sums[-1], xi(s, t))
            if gap > bound * (1.0 + BOUND_SLACK) + DEGENERATE_ATOL:
                logger.warning(
                    "Sewing gap %.3e exceeds the sampled bound %.3e; ‖δΞ‖ is under-sampled",
                    gap,
                    bound,
                )
    return SewResult(
        value=sums[-1],
        bound=bound,
        delta_norm=norm,
        partition_sizes=tuple(len(h) for h in history),
        sums=tuple(sums),
        rounds=rounds,
    )


def young_remove_point(
    xi: TwoParam,
    partition: Sequence[float],
    beta: float,
    control: Control,
    delta_norm: Optional[float] = None,
) -> Tuple[int, float]:
    """
    Pick the interior point whose removal changes the Riemann sum least.

    Args:
        xi: Callable (a, b) -> Ξ_{a,b}.
        partition: Points s_0 < ... < s_{m0}, at least three.
        beta (float): Exponent in (0, 1).
        control (Control): ω.
        delta_norm (float): ‖δΞ‖ to assert against; sampled from the
            partition's consecutive triples when omitted.

    Returns:
        tuple: (m*, cost) with cost = |δΞ_{s_{m*-1}, s_{m*}, s_{m*+1}}|;
            ties go to the smallest index.

    Raises:
        GridError: If the partition has fewer than three points.
        InvariantViolation: If cost^β > 2 ω(s,t) ‖δΞ‖^β / (m0 - 1).
    """
    points = [float(x) for x in partition]
    if len(points) < 3:
        raise GridError(f"Point removal needs at least 3 points, got {len(points)}")
    triples = _consecutive_triples(points)
    costs = np.array([np.linalg.norm(delta_defect(xi, a, b, c)) for a, b, c in triples])
    m_star = int(np.argmin(costs))
    cost = float(costs[m_star])
    if delta_norm is None:
        sampled = _delta_norm(xi, control, beta, triples)
        if sampled.unbounded:
            return m_star + 1, cost
        delta_norm = sampled.value
    m0 = len(points) - 1
    limit = 2.0 * control(points[0], points[-1]) * delta_norm**beta / (m0 - 1)
    if cost**beta > limit * (1.0 + BOUND_SLACK) + DEGENERATE_ATOL:
        raise InvariantViolation(
            f"Point removal cost {cost:.6e} breaks the bound {limit ** (1.0 / beta):.6e}",
            context={"partition": points, "index": m_star + 1, "cost": cost},
        )
    return m_star + 1, cost


def young_telescoping(
    xi: TwoParam, partition: Sequence[float], beta: float, control: Control
) -> Tuple[List[float], float, float]:
    """
    Remove points one at a time down to {s, t}.

    Returns:
        tuple: (costs, total cost, 2^(1/β) ζ(1/β) ω(s,t)^(1/β) N) where N is
            the largest sampled ‖δΞ‖ over every partition visited.
    """
    points = [float(x) for x in partition]
    s, t = points[0], points[-1]
    visited: List[Tuple[float, float, float]] = []
    costs: List[float] = []
    while len(points) >= 3:
        visited.extend(_consecutive_triples(points))
        sampled = _delta_norm(xi, control, beta, visited)
        norm = None if sampled.unbounded else sampled.value
        index, cost = young_remove_point(xi, points, beta, control, delta_norm=norm)
        points.pop(index)
        costs.append(cost)
    norm = _delta_norm(xi, control, beta, visited) if visited else NormValue(0.0)
    bound = (
        2.0 ** (1.0 / beta)
        * zeta(1.0 / beta)
        * control(s, t) ** (1.0 / beta)
        * norm.require_finite("‖δΞ‖")
    )
    return costs, math.fsum(costs), bound


def refinement_discrepancy_bound(
    delta_norm: float, omega_st: float, beta: float, mesh_omega: float
) -> float:
    """2^(1/β) ζ(1/β) ω(s,t) ‖δΞ‖ δ^(1/β - 1), δ the largest ω over the coarse cells."""
    return (
        2.0 ** (1.0 / beta)
        * zeta(1.0 / beta)
        * omega_st
        * delta_norm
        * mesh_omega ** (1.0 / beta - 1.0)
    )


@dataclass(frozen=True, eq=False)
class RoughIntegral:
    """Value and error bound of a one-parameter rough integral.

    Attributes:
        value: ∫_s^t Y dX as an (e, d) array.
        bound: ζ(θ) ω(s,t)^θ (Σ_j c_j^(1/θ))^θ, or None if skipped.
        theta: (floor(p) + 1) / p.
        sewing: The underlying SewResult.
    """

    value: np.ndarray
    bound: Optional[float]
    theta: float
    sewing: SewResult


def rough_integral(
    Y: ControlledPath,
    s: float,
    t: float,
    with_bound: bool = True,
) -> RoughIntegral:
    """
    ∫_s^t Y dX as the sewing of the local approximation Ξ^Y.

    The Riemann sum starts from every driver node in [s, t], which the grid
    cannot refine further, so the value is the full-grid sum.

    Args:
        Y (ControlledPath): Integrand.
        s, t (float): Grid times.
        with_bound (bool): Estimate the remainder norms and assemble the
            bound ζ(θ) ω(s,t)^θ (Σ_j (‖X^{j+1}‖ ‖R^(j)‖)^(1/θ))^θ.

    Returns:
        RoughIntegral: Value of shape (e, d) and bound.

    Raises:
        UnboundedNormError: If a remainder norm is unbounded.
        InvariantViolation: If |value - Ξ^Y_{s,t}| exceeds the bound.
    """
    X = Y.driver
    theta = (X.floor_p + 1) / X.p

    def xi(a: float, b: float) -> np.ndarray:
        return local_approx(Y, a, b)

    i, j = X.index(s), X.index(t)
    sewn = sew(
        xi,
        (s, t),
        X.control,
        1.0 / theta,
        grid=X.times,
        estimate_bound=False,
        initial=X.times[i : j + 1] if j > i else None,
    )
    value = np.asarray(sewn.value, dtype=float).reshape(Y.codomain, X.dim)
    bound = None
    if with_bound:
        weights = []
        for j in range(Y.order + 1):
            x_norm = level_omega_norm(X, j + 1, s, t).require_finite(f"‖X^{j + 1}‖")
            r_norm = remainder_norm(Y, j, s, t).require_finite(f"‖R^({j})‖")
            weights.append((x_norm * r_norm) ** (1.0 / theta))
        bound = zeta(theta) * X.control(s, t) ** theta * math.fsum(weights) ** theta
        gap = float(np.linalg.norm(value - local_approx(Y, s, t)))
        if gap > bound * (1.0 + BOUND_SLACK) + DEGENERATE_ATOL * max(1.0, float(np.linalg.norm(value))):
            raise InvariantViolation(
                f"Rough integral gap {gap:.6e} exceeds the bound {bound:.6e}",
                context={"s": s, "t": t, "gap": gap, "bound": bound},
            )
        logger.debug("rough integral on [%g, %g]: gap %.3e, bound %.3e", s, t, gap, bound)
    return RoughIntegral(value=value, bound=bound, theta=theta, sewing=sewn)
