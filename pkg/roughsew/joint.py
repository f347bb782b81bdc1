"""
Jointly controlled two-parameter paths and their double rough integrals.

A joint path carries two tables of Gubinelli derivatives over the product
of two driver grids. ``first[j][k]`` holds Y^(1;j,k)_{s,u} in [x, y]
layout, shape (M+1, M~+1, d^j, d~^k); ``second[k][j]`` holds
Y^(2;k,j)_{s,u} in [y, x] layout. With a single driver both axes see the
same rough path.

Everything that is stated for the second arrangement is computed on the
transposed joint path, which swaps the drivers, the two tables and their
grid axes.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import controlled_path as cp
from . import controls
from . import internal_utils as util
from .constants import BOUND_SLACK, DEFAULT_TOLERANCE, DEGENERATE_ATOL, MAX_REFINEMENT_ROUNDS
from .controlled_path import ControlledPath
from .controls import NormValue
from .errors import (
    ConvergenceError,
    GridError,
    IncompatibleAlphabetError,
    InvariantViolation,
    UnboundedNormError,
)
from .roughpath import RoughPath, increment_table, restrict
from .sewing import rough_integral, zeta

logger = logging.getLogger(__name__)

Rect = Tuple[float, float, float, float]


@dataclass(frozen=True, eq=False)
class JointPath:
    """Derivative tables of a jointly (X, X~)-controlled path with scalar values.

    Attributes:
        driver: X, order N.
        driver2: X~, order N~ (the same object in one-driver mode).
        first: first[j][k] of shape (M+1, M~+1, d^j, d~^k).
        second: second[k][j] of shape (M+1, M~+1, d~^k, d^j).
        q: Remainder exponents q_j of the first axis.
        q2: Remainder exponents q~_k of the second axis.
        name: Label for logs.
    """

    driver: RoughPath
    driver2: RoughPath
    first: Tuple[Tuple[np.ndarray, ...], ...]
    second: Tuple[Tuple[np.ndarray, ...], ...]
    q: Tuple[float, ...]
    q2: Tuple[float, ...]
    name: str = "joint"
    _cache: Dict = field(default_factory=dict, compare=False, repr=False)
    _lock: Any = field(default_factory=threading.RLock, compare=False, repr=False)

    @property
    def order(self) -> int:
        return self.driver.order

    @property
    def order2(self) -> int:
        return self.driver2.order

    @property
    def dim(self) -> int:
        return self.driver.dim

    @property
    def transposed(self) -> "JointPath":
        """The same path with the axes swapped: drivers, tables, grid axes and exponents."""

        def build() -> "JointPath":
            other = JointPath(
                self.driver2,
                self.driver,
                _swap_grid(self.second),
                _swap_grid(self.first),
                self.q2,
                self.q,
                name=f"{self.name}^T",
            )
            other._cache["transposed"] = self
            return other

        return util._memoized(self, "transposed", build)

    def derivative(self, i: int, j: int, k: int, s: float, u: float) -> np.ndarray:
        """Y^(1;j,k)_{s,u} in [x, y] layout (i = 1) or Y^(2;k,j)_{s,u} in [y, x] layout (i = 2)."""
        _check_indices(self, j, k)
        a, c = self.driver.index(s), self.driver2.index(u)
        if i == 1:
            return self.first[j][k][a, c]
        if i == 2:
            return self.second[k][j][a, c]
        raise ValueError(f"Arrangement must be 1 or 2, got {i}")


def _swap_grid(family: Tuple[Tuple[np.ndarray, ...], ...]) -> Tuple[Tuple[np.ndarray, ...], ...]:
    """Reindex every table from [s-node, u-node] to [u-node, s-node]."""
    return tuple(tuple(np.swapaxes(table, 0, 1) for table in row) for row in family)


def _check_indices(J: JointPath, j: int, k: int) -> None:
    if not 0 <= j <= J.order:
        raise ValueError(f"First-axis order {j} out of range 0..{J.order}")
    if not 0 <= k <= J.order2:
        raise ValueError(f"Second-axis order {k} out of range 0..{J.order2}")


def default_exponents(X: RoughPath) -> Tuple[float, ...]:
    """q_l = p / (floor(p) - l)."""
    return tuple(X.p / (X.floor_p - l) for l in range(X.order + 1))


def _freeze(table: np.ndarray, shape: Tuple[int, ...], label: str) -> np.ndarray:
    table = np.array(table, dtype=float)
    if table.shape != shape:
        raise IncompatibleAlphabetError(f"{label} has shape {table.shape}, expected {shape}")
    table.setflags(write=False)
    return table


def tabulated_joint(
    X: RoughPath,
    X2: Optional[RoughPath],
    first: Mapping[Tuple[int, int], np.ndarray],
    second: Optional[Mapping[Tuple[int, int], np.ndarray]] = None,
    q: Optional[Sequence[float]] = None,
    q2: Optional[Sequence[float]] = None,
    name: str = "tabulated",
) -> JointPath:
    """
    Build a joint path from dense derivative tables.

    Args:
        X (RoughPath): First driver.
        X2 (RoughPath): Second driver, or None for the one-driver mode.
        first: Mapping (j, k) -> array (M+1, M~+1, d^j, d~^k).
        second: Mapping (k, j) -> array (M+1, M~+1, d~^k, d^j). Defaults
            to the transpose of ``first``, which makes the symmetry exact.
        q, q2: Remainder exponents; default p / (floor(p) - l).
        name (str): Label.

    Returns:
        JointPath: The validated, read-only path.

    Raises:
        IncompatibleAlphabetError: If the drivers differ in dimension or a
            table has the wrong shape.
        ValueError: If an exponent pair fails (l+1)/p + 1/q_l > 1.
    """
    X2 = X if X2 is None else X2
    if X.dim != X2.dim:
        raise IncompatibleAlphabetError(
            f"Drivers must share a dimension to pair, got {X.dim} and {X2.dim}"
        )
    n1, n2, d = X.times.size, X2.times.size, X.dim
    rows = []
    for j in range(X.order + 1):
        rows.append(
            tuple(
                _freeze(first[(j, k)], (n1, n2, d**j, d**k), f"Y^(1;{j},{k})")
                for k in range(X2.order + 1)
            )
        )
    if second is None:
        second = {(k, j): np.swapaxes(rows[j][k], 2, 3) for j in range(X.order + 1) for k in range(X2.order + 1)}
    cols = []
    for k in range(X2.order + 1):
        cols.append(
            tuple(
                _freeze(second[(k, j)], (n1, n2, d**k, d**j), f"Y^(2;{k},{j})")
                for j in range(X.order + 1)
            )
        )
    q = default_exponents(X) if q is None else tuple(float(x) for x in q)
    q2 = default_exponents(X2) if q2 is None else tuple(float(x) for x in q2)
    for driver, exps in ((X, q), (X2, q2)):
        if len(exps) != driver.order + 1:
            raise ValueError(f"Need {driver.order + 1} exponents, got {len(exps)}")
        for l, ql in enumerate(exps):
            util._validate_exponent(ql, f"q_{l}")
            if (l + 1) / driver.p + 1.0 / ql <= 1.0:
                raise ValueError(f"Exponent q_{l} = {ql} gives theta <= 1")
    logger.debug("Built joint path %r on a %d x %d grid", name, n1, n2)
    return JointPath(X, X2, tuple(rows), tuple(cols), q, q2, name=name)


def constant_joint(X: RoughPath, X2: Optional[RoughPath], value: float) -> JointPath:
    """Y ≡ value with every higher derivative zero."""
    X2 = X if X2 is None else X2
    n1, n2, d = X.times.size, X2.times.size, X.dim
    first = {
        (j, k): np.zeros((n1, n2, d**j, d**k))
        for j in range(X.order + 1)
        for k in range(X2.order + 1)
    }
    first[(0, 0)] = np.full((n1, n2, 1, 1), float(value))
    return tabulated_joint(X, X2, first, name="constant")


def product_joint(a: ControlledPath, b: ControlledPath) -> JointPath:
    """Y_{s,u} = a_s b_u for scalar controlled paths, Y^(1;j,k) = a^(j)_s (x) b^(k)_u."""
    if a.codomain != 1 or b.codomain != 1:
        raise IncompatibleAlphabetError(
            f"Product paths need scalar factors, got codomains {a.codomain} and {b.codomain}"
        )
    first = {
        (j, k): np.einsum("sx,uy->suxy", a.derivatives[j][:, 0, :], b.derivatives[k][:, 0, :])
        for j in range(a.order + 1)
        for k in range(b.order + 1)
    }
    X2 = None if b.driver is a.driver else b.driver
    return tabulated_joint(a.driver, X2, first, name=f"{a.name}*{b.name}")


def symmetry_residual(J: JointPath) -> float:
    """max |Y^(1;j,k)_{s,u}(y)(x) - Y^(2;k,j)_{s,u}(x)(y)| relative to the table scale."""
    worst = 0.0
    for j in range(J.order + 1):
        for k in range(J.order2 + 1):
            a, b = J.first[j][k], np.swapaxes(J.second[k][j], 2, 3)
            scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
            worst = max(worst, float(np.max(np.abs(a - b), initial=0.0)) / scale)
    return worst


@dataclass(frozen=True, eq=False)
class GridPartition:
    """A grid-like partition D x D' of a rectangle.

    Attributes:
        axis1: Points s_0 < ... < s_m0.
        axis2: Points u_0 < ... < u_n0.
    """

    axis1: np.ndarray
    axis2: np.ndarray

    def __post_init__(self):
        for name in ("axis1", "axis2"):
            pts = util._as_times(getattr(self, name)).copy()
            pts.setflags(write=False)
            object.__setattr__(self, name, pts)

    @property
    def rect(self) -> Rect:
        return (
            float(self.axis1[0]),
            float(self.axis1[-1]),
            float(self.axis2[0]),
            float(self.axis2[-1]),
        )

    @property
    def mesh(self) -> Tuple[float, float]:
        """Largest adjacent gap on each axis."""
        return float(np.max(np.diff(self.axis1))), float(np.max(np.diff(self.axis2)))

    @property
    def max_mesh(self) -> float:
        return max(self.mesh)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.axis1.size, self.axis2.size

    def is_trivial(self, axis: int) -> bool:
        return (self.axis1 if axis == 1 else self.axis2).size == 2

    def remove(self, axis: int, index: int) -> "GridPartition":
        """Drop the interior point ``index`` of one axis."""
        pts = self.axis1 if axis == 1 else self.axis2
        if not 0 < index < pts.size - 1:
            raise GridError(f"Only interior points can be removed, got index {index} of {pts.size}")
        kept = np.delete(pts, index)
        return GridPartition(kept, self.axis2) if axis == 1 else GridPartition(self.axis1, kept)

    def transposed(self) -> "GridPartition":
        return GridPartition(self.axis2, self.axis1)

    def refine_within(self, allowed1: Sequence[float], allowed2: Sequence[float]) -> "GridPartition":
        """Bisect every interval in index space of the allowed points of each axis."""
        out = []
        for pts, allowed in ((self.axis1, allowed1), (self.axis2, allowed2)):
            allowed = np.asarray(allowed, dtype=float)
            idx = list(util._grid_indices(allowed, pts))
            out.append(allowed[util._refine(idx, allowed)])
        return GridPartition(*out)


def trivial_partition(rect: Rect) -> GridPartition:
    s, t, u, v = rect
    return GridPartition(np.array([s, t]), np.array([u, v]))


def _rect_indices(J: JointPath, rect: Rect) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of every driver node inside the rectangle, per axis."""
    s, t, u, v = rect
    a, b = J.driver.index(s), J.driver.index(t)
    c, e = J.driver2.index(u), J.driver2.index(v)
    if b < a or e < c:
        raise GridError(f"Rectangle {rect} is not ordered")
    return np.arange(a, b + 1), np.arange(c, e + 1)


def rect_partition(J: JointPath, rect: Rect) -> GridPartition:
    """The partition made of every driver node inside the rectangle."""
    S, U = _rect_indices(J, rect)
    return GridPartition(J.driver.times[S], J.driver2.times[U])


def uniform_partition(J: JointPath, rect: Rect, cells: int, cells2: Optional[int] = None) -> GridPartition:
    """Every (n/cells)-th driver node of each axis; the node counts must divide."""
    cells2 = cells if cells2 is None else cells2
    S, U = _rect_indices(J, rect)
    axes = []
    for idx, times, n in ((S, J.driver.times, cells), (U, J.driver2.times, cells2)):
        span = idx.size - 1
        if n <= 0 or span % n:
            raise GridError(f"{span} grid intervals cannot be split into {n} equal cells")
        axes.append(times[idx[:: span // n]])
    return GridPartition(*axes)


def random_partition(
    rng: np.random.Generator, J: JointPath, rect: Rect, points: int, points2: Optional[int] = None
) -> GridPartition:
    """Random driver nodes inside the rectangle, always keeping the corners."""
    points2 = points if points2 is None else points2
    S, U = _rect_indices(J, rect)
    axes = []
    for idx, times, n in ((S, J.driver.times, points), (U, J.driver2.times, points2)):
        inner = idx[1:-1]
        take = min(max(n - 2, 0), inner.size)
        chosen = np.sort(rng.choice(inner, size=take, replace=False)) if take else np.array([], dtype=int)
        axes.append(times[np.concatenate(([idx[0]], chosen, [idx[-1]]))])
    return GridPartition(*axes)


def _partition_indices(J: JointPath, G: GridPartition) -> Tuple[np.ndarray, np.ndarray]:
    return (
        util._grid_indices(J.driver.times, G.axis1),
        util._grid_indices(J.driver2.times, G.axis2),
    )


# ---------------------------------------------------------------------
# Remainders
# ---------------------------------------------------------------------


def _first_remainder_block(J: JointPath, j: int, k: int, S: np.ndarray, U: np.ndarray) -> np.ndarray:
    """
    R^(1;j,k)_{s;u,v} for s in S and u <= v in U.

    Returns:
        np.ndarray: Shape (|S|, |U|, |U|, d^j, d~^k), entry [a, c, e] for
            s = S[a], u = U[c], v = U[e]; zero when e < c.
    """
    d2 = J.driver2.dim
    A, C = S.size, U.size
    base = J.first[j][k][np.ix_(S, U)]
    out = np.broadcast_to(base[:, None], (A, C) + base.shape[1:]).copy()
    for l in range(J.order2 - k + 1):
        deriv = J.first[j][k + l][np.ix_(S, U)]
        deriv = deriv.reshape(A, C, deriv.shape[2], d2**l, -1)
        inc = increment_table(J.driver2, l)[np.ix_(U, U)]
        out -= np.einsum("acxly,cel->acexy", deriv, inc)
    lower = np.tril_indices(C, -1)
    out[:, lower[0], lower[1]] = 0.0
    return out


def _remainder_blocks(J: JointPath, j: int, k: int, S: np.ndarray, U: np.ndarray) -> List[np.ndarray]:
    """First remainders of orders (j, k), (j+1, k), ..., (N, k)."""
    return [_first_remainder_block(J, j + m, k, S, U) for m in range(J.order - j + 1)]


def _second_remainder_rows(
    J: JointPath, blocks: List[np.ndarray], S: np.ndarray, rows: np.ndarray
) -> np.ndarray:
    """
    𝐑^(1;j,k)_{s,t;u,v} for s = S[rows], t in S and every u <= v.

    Returns:
        np.ndarray: Shape (|rows|, |S|, |U|, |U|, d^j, d~^k); zero unless
            s <= t and u <= v.
    """
    d = J.driver.dim
    head = blocks[0]
    out = head[None, :] - head[rows][:, None]
    for m in range(1, len(blocks)):
        r = blocks[m][rows]
        r = r.reshape(r.shape[:3] + (d**m, -1) + r.shape[4:])
        inc = increment_table(J.driver, m)[np.ix_(S[rows], S)]
        out -= np.einsum("acemxy,abm->abcexy", r, inc)
    before = np.arange(S.size)[None, :] < np.asarray(rows)[:, None]
    out[before] = 0.0
    return out


def first_remainder(J: JointPath, i: int, j: int, k: int, fixed: float, a: float, b: float) -> np.ndarray:
    """
    First-order remainder of the derivative tables.

    For i = 1: R^(1;j,k)_{s;u,v} = Y^(1;j,k)_{s,v} - sum_l Y^(1;j,k+l)_{s,u}(X~^l_{u,v}),
    with s = fixed and (u, v) = (a, b), in [x, y] layout. For i = 2:
    R^(2;k,j)_{u;s,t} with u = fixed and (s, t) = (a, b), in [y, x] layout.

    Raises:
        ValueError: If i, j or k is out of range.
        GridError: If a time is off the grid or a > b.
    """
    _check_indices(J, j, k)
    if i == 2:
        return first_remainder(J.transposed, 1, k, j, fixed, a, b)
    if i != 1:
        raise ValueError(f"Arrangement must be 1 or 2, got {i}")
    c, e = J.driver2.index(a), J.driver2.index(b)
    if e < c:
        raise GridError(f"Need a <= b, got a={a}, b={b}")
    S = np.array([J.driver.index(fixed)])
    return _first_remainder_block(J, j, k, S, np.array([c, e]))[0, 0, 1]


def second_remainder(
    J: JointPath, j: int, k: int, s: float, t: float, u: float, v: float, arrangement: int = 1
) -> np.ndarray:
    """
    Second-order remainder on a grid rectangle.

    Arrangement 1: 𝐑^(1;j,k)_{s,t;u,v} = R^(1;j,k)_{t;u,v} - R^(1;j,k)_{s;u,v}
    - sum_{m>=1} R^(1;j+m,k)_{s;u,v}(X^m_{s,t}) in [x, y] layout.
    Arrangement 2: 𝐑^(2;k,j)_{u,v;s,t} in [y, x] layout.
    """
    _check_indices(J, j, k)
    if arrangement == 2:
        return second_remainder(J.transposed, k, j, u, v, s, t)
    if arrangement != 1:
        raise ValueError(f"Arrangement must be 1 or 2, got {arrangement}")
    S = np.array([J.driver.index(s), J.driver.index(t)])
    U = np.array([J.driver2.index(u), J.driver2.index(v)])
    if S[1] < S[0] or U[1] < U[0]:
        raise GridError(f"Rectangle ({s}, {t}, {u}, {v}) is not ordered")
    blocks = _remainder_blocks(J, j, k, S, U)
    return _second_remainder_rows(J, blocks, S, np.array([0]))[0, 1, 0, 1]


def remainder_relation_residual(J: JointPath, s: float, t: float, u: float, v: float) -> float:
    """max over (j, k) of |𝐑^(1;j,k)_{s,t;u,v}(y)(x) - 𝐑^(2;k,j)_{u,v;s,t}(x)(y)|, relative."""
    worst = 0.0
    for j in range(J.order + 1):
        for k in range(J.order2 + 1):
            lhs = second_remainder(J, j, k, s, t, u, v)
            rhs = second_remainder(J, j, k, s, t, u, v, arrangement=2).T
            scale = max(1.0, float(np.max(np.abs(lhs))))
            worst = max(worst, float(np.max(np.abs(lhs - rhs))) / scale)
    return worst


def remainder_controlled_path(J: JointPath, j: int, s: float, t: float) -> ControlledPath:
    """
    For fixed (s, t), the X~-controlled path u -> R^(2;k,j)_{u;s,t}, k = 0..N~.

    Values live in V^(x)j, so entry k of the derivative table has shape
    (M~+1, d^j, d~^k). Its one-parameter remainders are 𝐑^(1;j,k)_{s,t;.,.}.
    """
    _check_indices(J, j, 0)
    T = J.transposed
    S = np.arange(J.driver2.times.size)
    U = np.array([J.driver.index(s), J.driver.index(t)])
    tables = []
    for k in range(J.order2 + 1):
        block = _first_remainder_block(T, k, j, S, U)
        tables.append(np.swapaxes(block[:, 0, 1], 1, 2))
    return cp.from_table(J.driver2, tables, name=f"R^(2;.,{j})_[{s},{t}]")


# ---------------------------------------------------------------------
# Local approximation and its defects
# ---------------------------------------------------------------------


def _omega_pairs(
    J: JointPath, left: np.ndarray, right: np.ndarray, left2: np.ndarray, right2: np.ndarray
) -> np.ndarray:
    """Ω on every rectangle [left[m], right[m]] x [left2[n], right2[n]], shape (m, n)."""
    d = J.dim
    total = np.zeros((left.size, left2.size))
    for j in range(J.order + 1):
        x_inc = increment_table(J.driver, j + 1)[left, right].reshape(left.size, -1, d)
        for k in range(J.order2 + 1):
            y_inc = increment_table(J.driver2, k + 1)[left2, right2].reshape(left2.size, -1, d)
            deriv = J.first[j][k][np.ix_(left, left2)]
            total = total + np.einsum("mnxy,mxa,nya->mn", deriv, x_inc, y_inc)
    return total


def omega_local(J: JointPath, s: float, t: float, u: float, v: float, arrangement: int = 1) -> float:
    """
    Local approximation Ω(s, t; u, v) = sum_{j,k} Y^(1;j,k)_{s,u}(X~^{k+1}_{u,v})(X^{j+1}_{s,t}).

    The two free last factors are paired with the Euclidean inner product.
    Arrangement 2 evaluates the same sum from the Y^(2;k,j) table.
    """
    if arrangement == 2:
        return omega_local(J.transposed, u, v, s, t)
    if arrangement != 1:
        raise ValueError(f"Arrangement must be 1 or 2, got {arrangement}")
    a, b = J.driver.index(s), J.driver.index(t)
    c, e = J.driver2.index(u), J.driver2.index(v)
    if b < a or e < c:
        raise GridError(f"Rectangle ({s}, {t}, {u}, {v}) is not ordered")
    return float(_omega_pairs(J, np.array([a]), np.array([b]), np.array([c]), np.array([e]))[0, 0])


def gamma_defect(
    J: JointPath, triple: Tuple[float, float, float], interval: Tuple[float, float], axis: int = 1
) -> float:
    """
    Γ = -δΩ along one axis.

    axis 1: Ω(s,s';u,v) + Ω(s',t;u,v) - Ω(s,t;u,v) for triple (s, s', t)
    and interval (u, v). axis 2: the same along (u, u', v) with (s, t) fixed.
    """
    a, b, c = triple
    if not a <= b <= c:
        raise ValueError(f"Need an ordered triple, got {triple}")
    lo, hi = interval
    if axis == 1:
        return omega_local(J, a, b, lo, hi) + omega_local(J, b, c, lo, hi) - omega_local(J, a, c, lo, hi)
    if axis == 2:
        return omega_local(J, lo, hi, a, b) + omega_local(J, lo, hi, b, c) - omega_local(J, lo, hi, a, c)
    raise ValueError(f"Axis must be 1 or 2, got {axis}")


def theta_defect(
    J: JointPath, triple: Tuple[float, float, float], triple2: Tuple[float, float, float]
) -> float:
    """Θ = Γ(.; u, u') + Γ(.; u', v) - Γ(.; u, v) for triple2 = (u, u', v)."""
    u, u_mid, v = triple2
    if not u <= u_mid <= v:
        raise ValueError(f"Need an ordered triple, got {triple2}")
    return (
        gamma_defect(J, triple, (u, u_mid))
        + gamma_defect(J, triple, (u_mid, v))
        - gamma_defect(J, triple, (u, v))
    )


def _split(X: RoughPath, level: int, a: float, b: float) -> np.ndarray:
    return increment_table(X, level)[X.index(a), X.index(b)].reshape(-1, X.dim)


def gamma_identity_residual(
    J: JointPath, triple: Tuple[float, float, float], interval: Tuple[float, float]
) -> float:
    """
    |Γ - sum_{j,k} R^(2;k,j)_{u;s,s'}(X^{j+1}_{s',t})(X~^{k+1}_{u,v})|, relative.

    The scale is max(1, sum of the three |Ω| entering Γ).
    """
    s, s_mid, t = triple
    u, v = interval
    terms = []
    for j in range(J.order + 1):
        x_inc = _split(J.driver, j + 1, s_mid, t)
        for k in range(J.order2 + 1):
            rem = first_remainder(J, 2, j, k, u, s, s_mid)
            terms.append(np.einsum("yx,xa,ya->", rem, x_inc, _split(J.driver2, k + 1, u, v)))
    rhs = float(util._ordered_sum(terms))
    lhs = gamma_defect(J, triple, interval)
    scale = sum(abs(omega_local(J, a, b, u, v)) for a, b in ((s, s_mid), (s_mid, t), (s, t)))
    return abs(lhs - rhs) / max(1.0, scale)


def theta_identity_residual(
    J: JointPath, triple: Tuple[float, float, float], triple2: Tuple[float, float, float]
) -> float:
    """|Θ - sum_{j,k} 𝐑^(1;j,k)_{s,s';u,u'}(X~^{k+1}_{u',v})(X^{j+1}_{s',t})|, relative."""
    s, s_mid, t = triple
    u, u_mid, v = triple2
    terms = []
    for j in range(J.order + 1):
        x_inc = _split(J.driver, j + 1, s_mid, t)
        for k in range(J.order2 + 1):
            rem = second_remainder(J, j, k, s, s_mid, u, u_mid)
            terms.append(np.einsum("xy,xa,ya->", rem, x_inc, _split(J.driver2, k + 1, u_mid, v)))
    rhs = float(util._ordered_sum(terms))
    lhs = theta_defect(J, triple, triple2)
    scale = sum(
        abs(gamma_defect(J, triple, pair)) for pair in ((u, u_mid), (u_mid, v), (u, v))
    )
    return abs(lhs - rhs) / max(1.0, scale)


def grid_sum(J: JointPath, G: GridPartition) -> float:
    """Σ_{D x D'} Ω, reduced row-major (axis 1 outer) left to right."""
    S, U = _partition_indices(J, G)
    cells = _omega_pairs(J, S[:-1], S[1:], U[:-1], U[1:])
    return float(util._ordered_sum(cells.ravel().tolist()))


# ---------------------------------------------------------------------
# Maximal inequality
# ---------------------------------------------------------------------


def theta_star(J: JointPath) -> float:
    """min over both axes of (l+1)/p + 1/q_l."""
    thetas = [(j + 1) / J.driver.p + 1.0 / qj for j, qj in enumerate(J.q)]
    thetas += [(k + 1) / J.driver2.p + 1.0 / qk for k, qk in enumerate(J.q2)]
    return min(thetas)


def default_alpha(J: JointPath) -> float:
    return 0.5 * (1.0 / theta_star(J) + 1.0)


def constants_row(theta: float, alpha: float, n1: int, n2: int) -> Dict[str, float]:
    """
    The constants of the maximal inequality for n1 x n2 derivative orders.

    Returns:
        dict: alpha, theta_star, ζ(1/α), ζ(αθ*), C, C', C'' and C''' under their
            report column names.
    """
    C = n1 * n2 * max(n1, n2) ** (alpha * theta)
    z_alpha, z_theta = zeta(1.0 / alpha), zeta(alpha * theta)
    core = (C * z_theta) ** (1.0 / alpha)
    C_prime = z_alpha * core
    return {
        "alpha": alpha,
        "theta_star": theta,
        "zeta_inv_alpha": z_alpha,
        "zeta_alpha_theta": z_theta,
        "C": C,
        "C_prime": C_prime,
        "C_double_prime": C_prime + 2.0 * z_alpha,
        "C_triple_prime": 2.0 ** ((1.0 - alpha) / alpha) * (core + 1.0),
    }


def driver_constants(p: float, p2: Optional[float] = None) -> Dict[str, float]:
    """constants_row under the default exponents q_l = p / (floor(p) - l), where θ* = (floor(p) + 1) / p."""
    p2 = p if p2 is None else p2
    n1, n2 = util._floor_p(p), util._floor_p(p2)
    theta = min((n1 + 1) / p, (n2 + 1) / p2)
    return constants_row(theta, 0.5 * (1.0 / theta + 1.0), n1, n2)


def _check_alpha(J: JointPath, alpha: Optional[float]) -> float:
    theta = theta_star(J)
    alpha = default_alpha(J) if alpha is None else float(alpha)
    if not 1.0 / theta < alpha < 1.0:
        raise ValueError(f"alpha must lie in ({1.0 / theta:.6g}, 1), got {alpha}")
    return alpha


@dataclass(frozen=True)
class MaximalQuantities:
    """Variation quantities and constants of the maximal inequality on one rectangle.

    Attributes:
        rect: (s, t, u, v).
        alpha: Exponent in (1/θ*, 1).
        theta_star: Smallest regularity sum θ*.
        V1, V2: 𝐕 built from 𝐑^(1) and from 𝐑^(2).
        eta1, eta2: η^(1) and η^(2).
        C: Constant of the Θ-variation estimate.
        C_prime: ζ(1/α) (C ζ(αθ*))^(1/α).
        C_double: C' + 2 ζ(1/α).
        C_triple: 2^((1-α)/α) ((C ζ(αθ*))^(1/α) + 1).
        zeta_alpha: ζ(1/α).
        zeta_theta: ζ(αθ*).
        mixed: Mixed-variation mode used for 𝐕.
    """

    rect: Rect
    alpha: float
    theta_star: float
    V1: float
    V2: float
    eta1: float
    eta2: float
    C: float
    C_prime: float
    C_double: float
    C_triple: float
    zeta_alpha: float
    zeta_theta: float
    mixed: str

    @property
    def V(self) -> float:
        return min(self.V1, self.V2)

    @property
    def maximal_rhs(self) -> float:
        """C'' (min(𝐕1, 𝐕2) + η1 + η2)."""
        return self.C_double * (self.V + self.eta1 + self.eta2)

    @property
    def mixed_rhs(self) -> float:
        return self.C_prime * self.V

    def _axis(self, axis: int) -> Tuple[float, float]:
        if axis == 1:
            return self.V1, self.eta1
        if axis == 2:
            return self.V2, self.eta2
        raise ValueError(f"Axis must be 1 or 2, got {axis}")

    def endpoint_rhs(self, axis: int) -> float:
        """ζ(1/α) η: bound on the sum over D x {u, v} (axis 1) or {s, t} x D' (axis 2)."""
        return self.zeta_alpha * self._axis(axis)[1]

    def variation_rhs(self, n0: int) -> float:
        """Bound on the α-power sum of Θ at the best interior point of an (n0+1)-point axis."""
        return self.C / (n0 - 1) ** (self.alpha * self.theta_star) * self.V1**self.alpha

    def delta_rhs(self, axis: int) -> float:
        """Bound on sum_m |Δ^(axis;m)|^α over the interior points of one axis."""
        V, eta = self._axis(axis)
        return self.C * self.zeta_theta * V**self.alpha + eta**self.alpha

    def removal_rhs(self, axis: int, m0: int) -> float:
        """C''' (1/(m0-1))^(1/α) (𝐕 + η) for an axis of m0 + 1 points."""
        V, eta = self._axis(axis)
        return self.C_triple * (1.0 / (m0 - 1)) ** (1.0 / self.alpha) * (V + eta)

    def telescoping_rhs(self, axis: int, other_trivial: bool) -> float:
        """Bound on the total cost of removing every interior point of one axis."""
        V, eta = self._axis(axis)
        if other_trivial:
            return self.zeta_alpha * eta
        return self.C_triple * self.zeta_alpha * (V + eta)

    def as_row(self) -> Dict[str, float]:
        return {
            "alpha": self.alpha,
            "theta_star": self.theta_star,
            "zeta_inv_alpha": self.zeta_alpha,
            "zeta_alpha_theta": self.zeta_theta,
            "C": self.C,
            "C_prime": self.C_prime,
            "C_double_prime": self.C_double,
            "C_triple_prime": self.C_triple,
        }


def _driver_variations(X: RoughPath, idx: np.ndarray) -> List[float]:
    """V^{p/(j+1)}(X^{j+1}) on the nodes idx, j = 0..N."""
    out = []
    for j in range(X.order + 1):
        dist = np.linalg.norm(increment_table(X, j + 1)[np.ix_(idx, idx)], axis=-1)
        out.append(controls.p_variation_from_table(dist, X.p / (j + 1)))
    return out


def _one_param_variation(table: np.ndarray, q: float) -> float:
    """q-variation of a tabulated (n, n, ...) increment over index chains."""
    dist = np.linalg.norm(table.reshape(table.shape[0], table.shape[1], -1), axis=-1)
    return controls.p_variation_from_table(dist, q)


def _envelope(J: JointPath, j: int, k: int, S: np.ndarray, U: np.ndarray) -> float:
    """‖𝐑^(1;j,k)‖ ω(s,t)^(1/q_j) ω~(u,v)^(1/q~_k), an upper bound of the mixed variation."""
    om = J.driver.control.table[np.ix_(S, S)] ** (1.0 / J.q[j])
    om2 = J.driver2.control.table[np.ix_(U, U)] ** (1.0 / J.q2[k])
    blocks = _remainder_blocks(J, j, k, S, U)
    upper = np.triu(np.ones((S.size, S.size), dtype=bool), 1)
    upper2 = np.triu(np.ones((U.size, U.size), dtype=bool), 1)
    sup, unbounded = 0.0, False
    for a in range(S.size - 1):
        rows = _second_remainder_rows(J, blocks, S, np.array([a]))[0]
        norms = np.linalg.norm(rows.reshape(rows.shape[:3] + (-1,)), axis=-1)
        keep = upper[a][:, None, None] & upper2[None]
        ratio = controls.sup_ratio(norms[keep], (om[a][:, None, None] * om2[None])[keep])
        unbounded = unbounded or ratio.unbounded
        sup = max(sup, ratio.value)
    if unbounded:
        return math.inf
    return sup * om[0, -1] * om2[0, -1]


def _mixed_term(J: JointPath, j: int, k: int, S: np.ndarray, U: np.ndarray, mode: str) -> float:
    if mode == "envelope":
        return _envelope(J, j, k, S, U)
    blocks = _remainder_blocks(J, j, k, S, U)
    full = _second_remainder_rows(J, blocks, S, np.arange(S.size))
    pos = {float(x): i for i, x in enumerate(J.driver.times[S])}
    pos2 = {float(x): i for i, x in enumerate(J.driver2.times[U])}

    def lookup(s, t, u, v):
        return full[pos[float(s)], pos[float(t)], pos2[float(u)], pos2[float(v)]]

    axes = (J.driver.times[S], J.driver2.times[U])
    rect = (axes[0][0], axes[0][-1], axes[1][0], axes[1][-1])
    return controls.mixed_variation(lookup, rect, J.q[j], J.q2[k], axes, mode=mode)


def _axis_quantities(J: JointPath, rect: Rect, alpha: float, mixed: str) -> Tuple[float, float]:
    """(𝐕^(1), η^(1)) of J on the rectangle; the second axis comes from J.transposed."""
    S, U = _rect_indices(J, rect)
    if S.size < 2 or U.size < 2:
        return 0.0, 0.0
    var1 = _driver_variations(J.driver, S)
    var2 = _driver_variations(J.driver2, U)
    V = 0.0
    for j in range(J.order + 1):
        for k in range(J.order2 + 1):
            if var1[j] == 0.0 or var2[k] == 0.0:
                continue
            V = max(V, var1[j] * var2[k] * _mixed_term(J, j, k, S, U, mixed))
    T = J.transposed
    eta_terms = []
    for k in range(J.order2 + 1):
        y_inc = float(np.linalg.norm(increment_table(J.driver2, k + 1)[U[0], U[-1]]))
        for j in range(J.order + 1):
            rem = _first_remainder_block(T, k, j, U[:1], S)[0]
            eta_terms.append((y_inc * var1[j] * _one_param_variation(rem, J.q[j])) ** alpha)
    eta = math.fsum(eta_terms) ** (1.0 / alpha)
    return V, eta


def maximal_quantities(
    J: JointPath, rect: Rect, alpha: Optional[float] = None, mixed: str = "envelope"
) -> MaximalQuantities:
    """
    Assemble 𝐕^(1), 𝐕^(2), η^(1), η^(2) and the constants C, C', C'', C'''.

    Args:
        J (JointPath): The integrand.
        rect: (s, t, u, v) on the driver grids.
        alpha (float): In (1/θ*, 1); defaults to the midpoint (1/θ* + 1)/2.
        mixed (str): "envelope" bounds the mixed variations from above and
            keeps every bound check sound. "exact" searches all grid
            sub-partitions (at most 12 nodes per axis). "greedy" is a lower
            bound, for exploration only.

    Returns:
        MaximalQuantities: The record, with every right-hand side on it.

    Raises:
        ValueError: If alpha is out of range or the mode is unknown.
    """
    alpha = _check_alpha(J, alpha)
    if mixed not in ("envelope", "exact", "greedy"):
        raise ValueError(f"Unknown mixed-variation mode: {mixed!r}")
    if mixed == "greedy":
        logger.warning("Greedy mixed variation is a lower bound; bound checks are not certified")
    theta = theta_star(J)
    s, t, u, v = rect
    V1, eta1 = _axis_quantities(J, rect, alpha, mixed)
    V2, eta2 = _axis_quantities(J.transposed, (u, v, s, t), alpha, mixed)
    row = constants_row(theta, alpha, J.order + 1, J.order2 + 1)
    q = MaximalQuantities(
        rect=tuple(float(x) for x in rect),
        alpha=alpha,
        theta_star=theta,
        V1=V1,
        V2=V2,
        eta1=eta1,
        eta2=eta2,
        C=row["C"],
        C_prime=row["C_prime"],
        C_double=row["C_double_prime"],
        C_triple=row["C_triple_prime"],
        zeta_alpha=row["zeta_inv_alpha"],
        zeta_theta=row["zeta_alpha_theta"],
        mixed=mixed,
    )
    logger.debug("maximal quantities on %s: V1=%.3e V2=%.3e eta1=%.3e eta2=%.3e", rect, V1, V2, eta1, eta2)
    return q


@dataclass(frozen=True)
class MaximalCheck:
    """|Σ_{D x D'} Ω - Ω(s,t;u,v)| against C'' (𝐕 + η1 + η2)."""

    lhs: float
    rhs: float
    ratio: float
    quantities: MaximalQuantities


def check_maximal_inequality(
    J: JointPath,
    G: GridPartition,
    alpha: Optional[float] = None,
    quantities: Optional[MaximalQuantities] = None,
) -> MaximalCheck:
    """
    Ratio of both sides of the maximal inequality on a grid partition.

    Args:
        J (JointPath): The integrand.
        G (GridPartition): Partition of the rectangle.
        alpha (float): Exponent, see :func:`maximal_quantities`.
        quantities (MaximalQuantities): Reused when given; must belong to G.rect.

    Returns:
        MaximalCheck: lhs, rhs and their ratio (0 when both vanish).
    """
    q = quantities if quantities is not None else maximal_quantities(J, G.rect, alpha)
    lhs = abs(grid_sum(J, G) - omega_local(J, *G.rect))
    rhs = q.maximal_rhs
    if rhs > 0.0:
        ratio = lhs / rhs
    else:
        ratio = 0.0 if lhs <= DEGENERATE_ATOL else math.inf
    return MaximalCheck(lhs=lhs, rhs=rhs, ratio=ratio, quantities=q)


def _deltas(J: JointPath, G: GridPartition, axis: int) -> np.ndarray:
    """Δ^(axis;m) for every interior point m, each a sum of Γ over the other axis."""
    S, U = _partition_indices(J, G)
    cells = _omega_pairs(J, S[:-1], S[1:], U[:-1], U[1:])
    if axis == 1:
        skip = _omega_pairs(J, S[:-2], S[2:], U[:-1], U[1:])
        gammas = cells[:-1] + cells[1:] - skip
    else:
        skip = _omega_pairs(J, S[:-1], S[1:], U[:-2], U[2:])
        gammas = (cells[:, :-1] + cells[:, 1:] - skip).T
    return np.array([util._ordered_sum(row.tolist()) for row in gammas])


def remove_point(
    J: JointPath,
    G: GridPartition,
    axis: int = 1,
    alpha: Optional[float] = None,
    quantities: Optional[MaximalQuantities] = None,
) -> Tuple[int, GridPartition, float]:
    """
    Remove the interior point of one axis whose removal moves the grid sum least.

    Returns:
        tuple: (index, smaller partition, |Δ| at that index); ties go to
            the smallest index.

    Raises:
        GridError: If the axis has fewer than three points.
        InvariantViolation: If the cost breaks C''' (1/(m0-1))^(1/α) (𝐕 + η).
    """
    if axis not in (1, 2):
        raise ValueError(f"Axis must be 1 or 2, got {axis}")
    pts = G.axis1 if axis == 1 else G.axis2
    if pts.size < 3:
        raise GridError(f"Point removal needs at least 3 points on axis {axis}, got {pts.size}")
    q = quantities if quantities is not None else maximal_quantities(J, G.rect, alpha)
    deltas = np.abs(_deltas(J, G, axis))
    m_star = int(np.argmin(deltas))
    cost = float(deltas[m_star])
    limit = q.removal_rhs(axis, pts.size - 1)
    if cost > limit * (1.0 + BOUND_SLACK) + DEGENERATE_ATOL:
        raise InvariantViolation(
            f"Removal cost {cost:.6e} on axis {axis} breaks the bound {limit:.6e}",
            context={"axis1": G.axis1.tolist(), "axis2": G.axis2.tolist(), "index": m_star + 1},
        )
    return m_star + 1, G.remove(axis, m_star + 1), cost


@dataclass(frozen=True, eq=False)
class RemovalTrace:
    """Costs of removing every interior point of one axis, in removal order."""

    costs: Tuple[float, ...]
    total: float
    bound: float
    partition: GridPartition


def remove_points_to_trivial(
    J: JointPath, G: GridPartition, axis: int = 1, alpha: Optional[float] = None
) -> RemovalTrace:
    """
    Repeat :func:`remove_point` until the axis is {s, t} (or {u, v}).

    The total cost is checked against ζ(1/α) η when the other axis is
    already trivial and against C''' ζ(1/α) (𝐕 + η) otherwise.

    Raises:
        InvariantViolation: If a single removal or the total breaks its bound.
    """
    q = maximal_quantities(J, G.rect, alpha)
    other_trivial = G.is_trivial(2 if axis == 1 else 1)
    costs = []
    while not G.is_trivial(axis):
        _, G, cost = remove_point(J, G, axis, quantities=q)
        costs.append(cost)
    total = math.fsum(costs)
    bound = q.telescoping_rhs(axis, other_trivial)
    if total > bound * (1.0 + BOUND_SLACK) + DEGENERATE_ATOL:
        raise InvariantViolation(
            f"Telescoping total {total:.6e} on axis {axis} breaks the bound {bound:.6e}",
            context={"costs": costs},
        )
    return RemovalTrace(costs=tuple(costs), total=total, bound=bound, partition=G)


# ---------------------------------------------------------------------
# Integrals
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class UniformityReport:
    """sup_s ‖R^(1;j,k)_s‖ and sup_u ‖R^(2;k,j)_u‖ over the rectangle, maximised over (j, k)."""

    first: NormValue
    second: NormValue

    @property
    def bounded(self) -> bool:
        return not (self.first.unbounded or self.second.unbounded)


def _uniform_first(J: JointPath, rect: Rect) -> NormValue:
    S, U = _rect_indices(J, rect)
    upper = np.triu(np.ones((U.size, U.size), dtype=bool), 1)
    best, unbounded = 0.0, False
    for j in range(J.order + 1):
        for k in range(J.order2 + 1):
            block = _first_remainder_block(J, j, k, S, U)
            norms = np.linalg.norm(block.reshape(block.shape[:3] + (-1,)), axis=-1)
            om = J.driver2.control.table[np.ix_(U, U)] ** (1.0 / J.q2[k])
            denoms = np.broadcast_to(om, norms.shape)
            ratio = controls.sup_ratio(norms[:, upper], denoms[:, upper])
            unbounded = unbounded or ratio.unbounded
            best = max(best, ratio.value)
    return NormValue(best, unbounded)


def uniformity_constant(J: JointPath, rect: Rect) -> UniformityReport:
    """Uniform-in-the-fixed-coordinate remainder norms on the grid inside ``rect``."""
    s, t, u, v = rect
    return UniformityReport(
        first=_uniform_first(J, rect), second=_uniform_first(J.transposed, (u, v, s, t))
    )


def fit_decay_order(meshes: Sequence[float], gaps: Sequence[float]) -> float:
    """
    Least-squares slope of log(gap) against log(mesh).

    Non-positive or non-finite gaps are skipped.

    Raises:
        ValueError: If fewer than two usable points remain.
    """
    meshes = np.asarray(meshes, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    live = (gaps > 0.0) & np.isfinite(gaps) & (meshes > 0.0)
    if np.count_nonzero(live) < 2:
        raise ValueError("Need at least two positive gaps to fit a decay order")
    slope, _ = np.polyfit(np.log(meshes[live]), np.log(gaps[live]), 1)
    return float(slope)


@dataclass(frozen=True, eq=False)
class JointIntegralResult:
    """Outcome of :func:`joint_integral`.

    Attributes:
        value: Grid sum on the finest partition used.
        bound: C'' (𝐕 + η1 + η2), or None if skipped.
        omega: Ω(s, t; u, v).
        sums: Grid sum per refinement round.
        partition_sizes: (points on axis 1, points on axis 2) per round.
        rounds: Refinement rounds performed.
        quantities: The maximal-inequality record behind the bound.
    """

    value: float
    bound: Optional[float]
    omega: float
    sums: Tuple[float, ...]
    partition_sizes: Tuple[Tuple[int, int], ...]
    rounds: int
    quantities: Optional[MaximalQuantities] = None


def joint_integral(
    J: JointPath,
    rect: Rect,
    tol: float = DEFAULT_TOLERANCE,
    with_bound: bool = True,
    grid: Optional[GridPartition] = None,
    refine_to_grid: bool = False,
    alpha: Optional[float] = None,
    max_rounds: int = MAX_REFINEMENT_ROUNDS,
) -> JointIntegralResult:
    """
    ∫∫ Y d(X, X~) over ``rect`` as the limit of grid sums of Ω.

    Both axes are bisected in index space each round, inside the allowed
    points, until two successive sums differ by less than ``tol``.

    Args:
        J (JointPath): Integrand.
        rect: (s, t, u, v) on the driver grids.
        tol (float): Required agreement of successive grid sums.
        with_bound (bool): Check the uniformity condition and the bound
            C'' (min(𝐕1, 𝐕2) + η1 + η2).
        grid (GridPartition): Allowed points; every driver node by default.
        refine_to_grid (bool): Report the sum on the full allowed grid.
        alpha (float): Exponent of the bound.
        max_rounds (int): Refinement rounds before giving up.

    Returns:
        JointIntegralResult: Value, bound and history.

    Raises:
        ConvergenceError: If the allowed grid is exhausted before two sums
            agree; carries the last two sums and the fitted decay order.
        UnboundedNormError: If a uniform remainder norm is unbounded.
        InvariantViolation: If |value - Ω(s,t;u,v)| exceeds the bound.
    """
    omega = omega_local(J, *rect)
    S, U = _rect_indices(J, rect)
    if S.size < 2 or U.size < 2:
        return JointIntegralResult(0.0, 0.0 if with_bound else None, omega, (0.0,), ((S.size, U.size),), 0)
    allowed = grid if grid is not None else rect_partition(J, rect)
    if not np.allclose(allowed.rect, rect, rtol=0.0, atol=1e-12 * max(1.0, np.max(np.abs(rect)))):
        raise GridError(f"Allowed grid spans {allowed.rect}, not {rect}")
    chains = [[0, allowed.axis1.size - 1], [0, allowed.axis2.size - 1]]
    G = GridPartition(allowed.axis1[chains[0]], allowed.axis2[chains[1]])
    sums, sizes, meshes = [grid_sum(J, G)], [G.shape], [G.max_mesh]
    converged, rounds = True, 0
    while rounds < max_rounds or refine_to_grid:
        finer = [util._refine(chains[0], allowed.axis1), util._refine(chains[1], allowed.axis2)]
        if finer == chains:
            break
        chains, rounds = finer, rounds + 1
        G = GridPartition(allowed.axis1[chains[0]], allowed.axis2[chains[1]])
        sums.append(grid_sum(J, G))
        sizes.append(G.shape)
        meshes.append(G.max_mesh)
        gap = abs(sums[-1] - sums[-2])
        logger.debug("joint round %d: %s points, gap %.3e", rounds, G.shape, gap)
        converged = gap < tol
        if converged and not refine_to_grid:
            break
    if not converged:
        gaps = np.abs(np.diff(sums))
        try:
            order = fit_decay_order(meshes[1:], gaps)
        except ValueError:
            order = None
        raise ConvergenceError(
            f"Joint integral on {rect} did not settle after {rounds} rounds "
            f"(last gap {gaps[-1]:.3e} >= tol {tol:.1e})",
            previous=sums[-2],
            last=sums[-1],
            decay_exponent=order,
        )

    bound, q = None, None
    if with_bound:
        uniform = uniformity_constant(J, rect)
        if not uniform.bounded:
            raise UnboundedNormError(f"Uniform remainder norms are unbounded on {rect}; no bound")
        q = maximal_quantities(J, rect, alpha)
        bound = q.maximal_rhs
        gap = abs(sums[-1] - omega)
        if gap > bound * (1.0 + BOUND_SLACK) + DEGENERATE_ATOL * max(1.0, abs(sums[-1])):
            raise InvariantViolation(
                f"Joint integral gap {gap:.6e} exceeds the bound {bound:.6e}",
                context={"rect": rect, "gap": gap, "bound": bound},
            )
    return JointIntegralResult(
        value=sums[-1],
        bound=bound,
        omega=omega,
        sums=tuple(sums),
        partition_sizes=tuple(sizes),
        rounds=rounds,
        quantities=q,
    )


def _restricted(X: RoughPath, start: float, end: float) -> RoughPath:
    if X.index(start) == 0 and X.index(end) == X.times.size - 1:
        return X
    return restrict(X, start, end)


def inner_integral_path(J: JointPath, rect: Rect, axis: int = 1) -> ControlledPath:
    """
    The controlled path of inner integrals feeding an iterated integral.

    For axis 1 it lives on X over [s, t]: Z^(j)_s = ∫_u^v Y^(1;j,.)_{s,r} dX~_r,
    one rough integral per node and order, stored transposed as
    (M+1, d, d^j) so that the outer pairing is a trace. Axis 2 swaps roles.
    """
    s, t, u, v = rect
    if axis == 2:
        return inner_integral_path(J.transposed, (u, v, s, t), 1)
    if axis != 1:
        raise ValueError(f"Axis must be 1 or 2, got {axis}")
    key = ("inner", tuple(float(x) for x in rect))
    return util._memoized(J, key, lambda: _inner_integrals(J, rect))


def _inner_integrals(J: JointPath, rect: Rect) -> ControlledPath:
    s, t, u, v = rect
    S, U = _rect_indices(J, rect)
    outer = _restricted(J.driver, s, t)
    inner = _restricted(J.driver2, u, v)
    d = J.dim
    tables = [np.empty((S.size, d, d**j)) for j in range(J.order + 1)]
    for pos, a in enumerate(S):
        for j in range(J.order + 1):
            W = cp.from_table(
                inner, [J.first[j][k][a, U] for k in range(J.order2 + 1)], name=f"Y^(1;{j},.)"
            )
            tables[j][pos] = rough_integral(W, u, v, with_bound=False).value.T
    Z = cp.from_table(outer, tables, name=f"inner integral of {J.name}")
    logger.debug("Inner integrals of %r on %d nodes", J.name, S.size)
    return Z


@dataclass(frozen=True)
class IteratedIntegrals:
    """∫(∫ Y dX~) dX and ∫(∫ Y dX) dX~ over one rectangle."""

    first_order: float
    second_order: float

    @property
    def gap(self) -> float:
        return abs(self.first_order - self.second_order)


def iterated_integrals(J: JointPath, rect: Rect, with_bound: bool = False) -> IteratedIntegrals:
    """
    Both iterated integrals, each an outer rough integral of inner rough integrals.

    Args:
        J (JointPath): Integrand.
        rect: (s, t, u, v).
        with_bound (bool): Check the one-parameter bound of the outer integrals.

    Returns:
        IteratedIntegrals: I_12 (inner over X~ first) and I_21.
    """
    s, t, u, v = rect
    if J.driver.index(s) == J.driver.index(t) or J.driver2.index(u) == J.driver2.index(v):
        return IteratedIntegrals(0.0, 0.0)
    values = []
    for axis, (lo, hi) in ((1, (s, t)), (2, (u, v))):
        Z = inner_integral_path(J, rect, axis)
        outer = rough_integral(Z, lo, hi, with_bound=with_bound)
        values.append(float(np.trace(outer.value)))
    return IteratedIntegrals(*values)


def _outer_sum(Z: ControlledPath, points: np.ndarray) -> float:
    return float(
        util._ordered_sum(
            float(np.trace(cp.local_approx(Z, a, b))) for a, b in zip(points[:-1], points[1:])
        )
    )


@dataclass(frozen=True)
class FubiniCheck:
    """The three discrete double integrals on one partition and their largest gap."""

    mesh: float
    first_order: float
    second_order: float
    joint: float

    @property
    def gap(self) -> float:
        vals = (self.first_order, self.second_order, self.joint)
        return max(abs(a - b) for a in vals for b in vals)


def fubini_check(J: JointPath, G: GridPartition) -> FubiniCheck:
    """
    Iterated sums on the axes of G, with inner integrals over the full grid,
    against the grid sum on G.
    """
    first = _outer_sum(inner_integral_path(J, G.rect, 1), G.axis1)
    second = _outer_sum(inner_integral_path(J, G.rect, 2), G.axis2)
    return FubiniCheck(mesh=G.max_mesh, first_order=first, second_order=second, joint=grid_sum(J, G))


# ---------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------


@dataclass(frozen=True)
class StabilityReport:
    """Distances between two joint paths and the gap of their integrals.

    Attributes:
        driver_distance: Σ_l V^{p/l}(X1^l - X2^l) over both axes.
        distance: d, the derivative and remainder-norm gaps.
        gap: |∫∫ Y1 - ∫∫ Y2|.
        constant: gap / (driver_distance + distance).
        value1, value2: The two integrals.
    """

    driver_distance: float
    distance: float
    gap: float
    constant: float
    value1: float
    value2: float


def _driver_distance(X1: RoughPath, X2: RoughPath, idx: np.ndarray) -> float:
    total = []
    for l in range(1, X1.floor_p + 1):
        diff = increment_table(X1, l)[np.ix_(idx, idx)] - increment_table(X2, l)[np.ix_(idx, idx)]
        total.append(controls.p_variation_from_table(np.linalg.norm(diff, axis=-1), X1.p / l))
    return math.fsum(total)


def _check_compatible(J1: JointPath, J2: JointPath) -> None:
    for a, b in ((J1.driver, J2.driver), (J1.driver2, J2.driver2)):
        if a.dim != b.dim or a.order != b.order:
            raise IncompatibleAlphabetError("Joint paths differ in dimension or order")
        if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
            raise GridError("Joint paths must share their driver grids")


def _uniform_gap(J1: JointPath, J2: JointPath, rect: Rect, control2: controls.Control) -> float:
    """Σ_{j,k} sup_s ‖R1^(1;j,k)_s - R2^(1;j,k)_s‖ against a common control."""
    S, U = _rect_indices(J1, rect)
    upper = np.triu(np.ones((U.size, U.size), dtype=bool), 1)
    total = []
    for j in range(J1.order + 1):
        for k in range(J1.order2 + 1):
            diff = _first_remainder_block(J1, j, k, S, U) - _first_remainder_block(J2, j, k, S, U)
            norms = np.linalg.norm(diff.reshape(diff.shape[:3] + (-1,)), axis=-1)
            om = np.broadcast_to(control2.table[np.ix_(U, U)] ** (1.0 / J1.q2[k]), norms.shape)
            ratio = controls.sup_ratio(norms[:, upper], om[:, upper])
            total.append(math.inf if ratio.unbounded else ratio.value)
    return math.fsum(total)


def _mixed_gap(
    J1: JointPath, J2: JointPath, rect: Rect, control: controls.Control, control2: controls.Control
) -> float:
    """Σ_{j,k} ‖𝐑1^(1;j,k) - 𝐑2^(1;j,k)‖ against common controls."""
    S, U = _rect_indices(J1, rect)
    om_all = control.table[np.ix_(S, S)]
    om2_all = control2.table[np.ix_(U, U)]
    upper = np.triu(np.ones((S.size, S.size), dtype=bool), 1)
    upper2 = np.triu(np.ones((U.size, U.size), dtype=bool), 1)
    total = []
    for j in range(J1.order + 1):
        for k in range(J1.order2 + 1):
            b1 = _remainder_blocks(J1, j, k, S, U)
            b2 = _remainder_blocks(J2, j, k, S, U)
            om, om2 = om_all ** (1.0 / J1.q[j]), om2_all ** (1.0 / J1.q2[k])
            sup, unbounded = 0.0, False
            for a in range(S.size - 1):
                rows = np.array([a])
                diff = (_second_remainder_rows(J1, b1, S, rows) - _second_remainder_rows(J2, b2, S, rows))[0]
                norms = np.linalg.norm(diff.reshape(diff.shape[:3] + (-1,)), axis=-1)
                keep = upper[a][:, None, None] & upper2[None]
                ratio = controls.sup_ratio(norms[keep], (om[a][:, None, None] * om2[None])[keep])
                unbounded = unbounded or ratio.unbounded
                sup = max(sup, ratio.value)
            total.append(math.inf if unbounded else sup)
    return math.fsum(total)


def stability_distance(J1: JointPath, J2: JointPath, rect: Rect) -> StabilityReport:
    """
    Compare two joint paths on one rectangle.

    d sums |Y1^(1;j,k)_{s,u} - Y2^(1;j,k)_{s,u}| at the corner with the
    uniform first-remainder gaps of both arrangements and the mixed norm of
    the second-remainder gap, all against ω1 + ω2 on each axis. The constant
    reported is the measured gap over (driver distance + d).

    Raises:
        IncompatibleAlphabetError: If dimensions or orders differ.
        GridError: If the driver grids differ.
    """
    _check_compatible(J1, J2)
    s, t, u, v = rect
    S, U = _rect_indices(J1, rect)
    control = controls.sum_control(J1.driver.control, J2.driver.control)
    control2 = controls.sum_control(J1.driver2.control, J2.driver2.control)
    driver_distance = _driver_distance(J1.driver, J2.driver, S) + _driver_distance(J1.driver2, J2.driver2, U)
    corner = [
        float(np.linalg.norm(J1.first[j][k][S[0], U[0]] - J2.first[j][k][S[0], U[0]]))
        for j in range(J1.order + 1)
        for k in range(J1.order2 + 1)
    ]
    distance = math.fsum(
        corner
        + [
            _uniform_gap(J1, J2, rect, control2),
            _uniform_gap(J1.transposed, J2.transposed, (u, v, s, t), control),
            _mixed_gap(J1, J2, rect, control, control2),
        ]
    )
    value1 = joint_integral(J1, rect, with_bound=False, refine_to_grid=True, tol=math.inf).value
    value2 = joint_integral(J2, rect, with_bound=False, refine_to_grid=True, tol=math.inf).value
    gap = abs(value1 - value2)
    denom = driver_distance + distance
    if gap == 0.0:
        constant = 0.0
    elif denom == 0.0:
        constant = math.inf
    else:
        constant = gap / denom
    logger.info("stability: driver %.3e, d %.3e, gap %.3e", driver_distance, distance, gap)
    return StabilityReport(driver_distance, distance, gap, constant, value1, value2)
