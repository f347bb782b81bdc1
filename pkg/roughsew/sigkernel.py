"""
The signature kernel as a jointly controlled two-parameter path.

K(s, u) = sum_l <X^l_{s0,s}, X~^l_{u0,u}> is evaluated from truncated
signatures. Its Gubinelli derivatives and remainders are closed-form series
over the same signatures, and a Goursat finite-difference solver gives an
independent value for piecewise-linear drivers.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import gammaln

from . import internal_utils as util
from . import tensor_algebra as ta
from .constants import (
    DEFAULT_SERIES_LEVEL,
    GOURSAT_MAX_REFINE,
    GOURSAT_REFINE,
    SERIES_MARGIN,
    TAIL_TERMS,
)
from .errors import GridError, IncompatibleAlphabetError, TruncationError
from .joint import JointPath, tabulated_joint
from .roughpath import (
    RoughPath,
    base_signatures,
    lift,
    one_variation_length,
    restrict,
    signature,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class KernelInstance:
    """Two drivers, their base points and the series truncation.

    Attributes:
        driver: X, lifted at least to ``series_level``.
        driver2: X~, same dimension.
        base: s0, a node of X.
        base2: u0, a node of X~.
        series_level: L_ser, the last level kept in every series.
        beta_p: Fitted factorial-decay constant of X.
        beta_p2: Fitted factorial-decay constant of X~.
    """

    driver: RoughPath
    driver2: RoughPath
    base: float
    base2: float
    series_level: int
    beta_p: float
    beta_p2: float
    _cache: Dict = field(default_factory=dict, compare=False, repr=False)
    _lock: Any = field(default_factory=threading.RLock, compare=False, repr=False)


@dataclass(frozen=True)
class KernelValue:
    value: float
    tail_bound: float


def fit_decay_constant(X: RoughPath, level: Optional[int] = None, base: Optional[float] = None) -> float:
    """
    Largest β with ‖X^l_{s,t}‖ <= ω(s,t)^{l/p} / (β Γ(l/p + 1)) on the sampled pairs.

    The pairs are (base, t) for every later node together with every single
    sample interval, for levels 1..level.

    Returns:
        float: β_p, or 1.0 when every sampled increment vanishes.
    """
    level = X.level if level is None else level
    base = float(X.times[0]) if base is None else base
    i0 = X.index(base)
    rows = base_signatures(X, base, level)
    omega_row = X.control.table[i0, i0:]
    omega_seg = np.diagonal(X.control.table, 1)
    ratios = []
    for l in range(1, level + 1):
        lg = gammaln(l / X.p + 1.0)
        seg_norms = np.array([ta.level_norm(seg, l) for seg in X.segments]) if l <= X.level else np.zeros(0)
        for norms, om in ((np.linalg.norm(rows[l], axis=-1), omega_row), (seg_norms, omega_seg)):
            live = norms > 0.0
            if np.any(live & (om <= 0.0)):
                continue
            live &= om > 0.0
            if np.any(live):
                ratios.append(np.min(np.exp((l / X.p) * np.log(om[live]) - lg) / norms[live]))
    if not ratios:
        return 1.0
    return float(min(ratios))


def kernel_instance(
    X: RoughPath,
    X2: Optional[RoughPath] = None,
    base: Optional[float] = None,
    base2: Optional[float] = None,
    series_level: int = DEFAULT_SERIES_LEVEL,
) -> KernelInstance:
    """
    Set up K over X and X~ (X~ = X when omitted).

    Drivers stored below ``series_level`` are lifted again at that level.

    Raises:
        IncompatibleAlphabetError: If the drivers differ in dimension.
        LevelCapError: If the series level breaks a cap.
    """
    X2 = X if X2 is None else X2
    if X.dim != X2.dim:
        raise IncompatibleAlphabetError(f"Kernel drivers differ in dimension: {X.dim} vs {X2.dim}")
    same = X2 is X
    if X.level < series_level:
        X = lift(X.times, X.values, X.p, series_level)
    if same:
        X2 = X
    elif X2.level < series_level:
        X2 = lift(X2.times, X2.values, X2.p, series_level)
    base = float(X.times[0]) if base is None else float(X.times[X.index(base)])
    if base2 is None:
        # One driver keeps one base point, so K stays symmetric.
        base2 = base if same else float(X2.times[0])
    else:
        base2 = float(X2.times[X2.index(base2)])
    beta = fit_decay_constant(X, series_level, base)
    beta2 = beta if same and base == base2 else fit_decay_constant(X2, series_level, base2)
    logger.debug("Kernel instance at level %d, beta_p %.4g / %.4g", series_level, beta, beta2)
    return KernelInstance(X, X2, base, base2, series_level, beta, beta2)


def _after_base(X: RoughPath, base: float, t: float, label: str) -> None:
    if X.index(t) < X.index(base):
        raise GridError(f"{label} = {t} precedes the base point {base}")


def _pair_block(A: np.ndarray, B: np.ndarray, j: int, k: int, dim: int) -> np.ndarray:
    """
    <A (x) x, B (x) y> over basis words x of length j and y of length k.

    A has level l - j and B level l - k. Returns a (d^j, d^k) matrix in
    [x, y] layout.
    """
    if j >= k:
        c = A @ B.reshape(A.size, dim ** (j - k))
        return np.kron(c[:, None], np.eye(dim**k))
    c = B @ A.reshape(B.size, dim ** (k - j))
    return np.kron(c[None, :], np.eye(dim**j))


def kernel_value(KI: KernelInstance, s: float, u: float) -> KernelValue:
    """
    K(s, u) truncated at L_ser, with the bounded-variation tail bound.

    Examples:
        >>> X = lift([0.0, 1.0], [[0.0], [1.0]], p=2, level=12)
        >>> round(kernel_value(kernel_instance(X), 1.0, 1.0).value, 10)
        2.2795853023
    """
    _after_base(KI.driver, KI.base, s, "s")
    _after_base(KI.driver2, KI.base2, u, "u")
    L = KI.series_level
    a = signature(KI.driver, KI.base, s, L)
    b = signature(KI.driver2, KI.base2, u, L)
    value = util._ordered_sum(ta.level_inner(a, b, l) for l in range(L + 1))
    return KernelValue(float(value), tail_bound(KI, s, u))


def _series_tail(log_ratio: float, first: int, divisors: Tuple[float, float], beta: float = 1.0) -> float:
    """sum_{l >= first} exp(l log_ratio) / (β^2 Γ(l/a + 1) Γ(l/b + 1)) over TAIL_TERMS terms."""
    if log_ratio == -math.inf:
        return 0.0
    terms = []
    for l in range(first, first + TAIL_TERMS):
        terms.append(
            math.exp(l * log_ratio - gammaln(l / divisors[0] + 1.0) - gammaln(l / divisors[1] + 1.0))
        )
    return math.fsum(terms) / beta**2


def tail_bound(KI: KernelInstance, s: float, u: float) -> float:
    """sum_{l > L} (ℓ ℓ~)^l / (l!)^2 with ℓ, ℓ~ the lengths of the drivers from the base points."""
    length = one_variation_length(KI.driver, KI.base, s) * one_variation_length(KI.driver2, KI.base2, u)
    log_ratio = math.log(length) if length > 0.0 else -math.inf
    return _series_tail(log_ratio, KI.series_level + 1, (1.0, 1.0))


def decay_tail_bound(KI: KernelInstance, s: float, u: float) -> float:
    """The factorial-decay form sum_{l > L} ω^{l/p} ω~^{l/p~} / (β_p β_p~ Γ(l/p + 1) Γ(l/p~ + 1))."""
    X, X2 = KI.driver, KI.driver2
    om, om2 = X.control(KI.base, s), X2.control(KI.base2, u)
    if om <= 0.0 or om2 <= 0.0:
        return 0.0
    # a common exponent per term: ω^{l/p} ω~^{l/p~} = exp(l (log ω / p + log ω~ / p~))
    log_ratio = math.log(om) / X.p + math.log(om2) / X2.p
    return _series_tail(log_ratio, KI.series_level + 1, (X.p, X2.p), math.sqrt(KI.beta_p * KI.beta_p2))


def _check_orders(KI: KernelInstance, j: int, k: int) -> None:
    if not 0 <= j <= KI.driver.order:
        raise ValueError(f"First-axis order {j} out of range 0..{KI.driver.order}")
    if not 0 <= k <= KI.driver2.order:
        raise ValueError(f"Second-axis order {k} out of range 0..{KI.driver2.order}")


def kernel_derivative(KI: KernelInstance, i: int, j: int, k: int, s: float, u: float) -> np.ndarray:
    """
    Y^(1;j,k)_{s,u}(y)(x) = sum_{l >= max(j,k)} <X^{l-j}_{s0,s} (x) x, X~^{l-k}_{u0,u} (x) y>.

    Returns:
        np.ndarray: (d^j, d^k) in [x, y] layout for i = 1, its transpose
            Y^(2;k,j) for i = 2.
    """
    _check_orders(KI, j, k)
    if i not in (1, 2):
        raise ValueError(f"Arrangement must be 1 or 2, got {i}")
    _after_base(KI.driver, KI.base, s, "s")
    _after_base(KI.driver2, KI.base2, u, "u")
    L, d = KI.series_level, KI.driver.dim
    a = signature(KI.driver, KI.base, s, L)
    b = signature(KI.driver2, KI.base2, u, L)
    out = util._ordered_sum(_pair_block(a[l - j], b[l - k], j, k, d) for l in range(max(j, k), L + 1))
    return out if i == 1 else out.T


def kernel_derivative_table(KI: KernelInstance, j: int, k: int) -> np.ndarray:
    """Y^(1;j,k) at every pair of nodes from the base points on, shape (M', M~', d^j, d^k)."""
    return util._memoized(KI, ("derivative", j, k), lambda: _derivative_table(KI, j, k))


def _derivative_table(KI: KernelInstance, j: int, k: int) -> np.ndarray:
    L, d = KI.series_level, KI.driver.dim
    rows = _base_rows(KI, 1)
    rows2 = _base_rows(KI, 2)
    A, B = rows[0].shape[0], rows2[0].shape[0]
    table = np.zeros((A, B, d**j, d**k))
    for l in range(max(j, k), L + 1):
        if j >= k:
            left = rows[l - j]
            right = rows2[l - k].reshape(B, left.shape[1], d ** (j - k))
            c = np.einsum("aw,bwz->abz", left, right)
            block = c[:, :, :, None, None] * np.eye(d**k)[None, None, None]
        else:
            right = rows2[l - k]
            left = rows[l - j].reshape(A, right.shape[1], d ** (k - j))
            c = np.einsum("awz,bw->abz", left, right)
            block = c[:, :, None, :, None] * np.eye(d**j)[None, None, :, None, :]
        table += block.reshape(A, B, d**j, d**k)
    table.setflags(write=False)
    return table


def _base_rows(KI: KernelInstance, axis: int) -> List[np.ndarray]:
    X, base = (KI.driver, KI.base) if axis == 1 else (KI.driver2, KI.base2)
    return util._memoized(KI, ("rows", axis), lambda: base_signatures(X, base, KI.series_level))


def kernel_first_remainder(
    KI: KernelInstance, i: int, j: int, k: int, fixed: float, a: float, b: float
) -> np.ndarray:
    """
    First remainders of the kernel from their closed-form series.

    i = 2 gives R^(2;k,j)_{u;s,t} with u = fixed and (s, t) = (a, b):
    sum_{m >= floor(p)-j} sum_{l >= m+j} <X^{l-j-m}_{s0,s} (x) X^m_{s,t} (x) x, X~^{l-k}_{u0,u} (x) y>,
    in [y, x] layout. i = 1 gives R^(1;j,k)_{s;u,v} with s = fixed, the
    inner index running over the second driver, in [x, y] layout.
    """
    _check_orders(KI, j, k)
    L, d = KI.series_level, KI.driver.dim
    if i == 1:
        X, X2, base, base2 = KI.driver, KI.driver2, KI.base, KI.base2
        s, u, v = fixed, a, b
        jj, kk = j, k
    elif i == 2:
        X, X2, base, base2 = KI.driver2, KI.driver, KI.base2, KI.base
        s, u, v = fixed, a, b
        jj, kk = k, j
    else:
        raise ValueError(f"Arrangement must be 1 or 2, got {i}")
    if X2.index(v) < X2.index(u):
        raise GridError(f"Need a <= b, got a={a}, b={b}")
    _after_base(X, base, s, "fixed")
    _after_base(X2, base2, u, "a")
    left = signature(X, base, s, L)
    right = signature(X2, base2, u, L)
    step = signature(X2, u, v, L)
    terms = []
    for n in range(X2.floor_p - kk, L - kk + 1):
        for l in range(max(n + kk, jj), L + 1):
            B = np.kron(right[l - kk - n], step[n])
            terms.append(_pair_block(left[l - jj], B, jj, kk, d))
    out = util._ordered_sum(terms) if terms else np.zeros((d**jj, d**kk))
    return out


def kernel_second_remainder(
    KI: KernelInstance, j: int, k: int, s: float, t: float, u: float, v: float
) -> np.ndarray:
    """
    𝐑^(1;j,k)_{s,t;u,v} as the triple series over l, m >= floor(p)-j and
    n >= floor(p~)-k of <X^{l-j-m} (x) X^m (x) x, X~^{l-k-n} (x) X~^n (x) y>,
    in [x, y] layout.
    """
    _check_orders(KI, j, k)
    X, X2 = KI.driver, KI.driver2
    if X.index(t) < X.index(s) or X2.index(v) < X2.index(u):
        raise GridError(f"Rectangle ({s}, {t}, {u}, {v}) is not ordered")
    _after_base(X, KI.base, s, "s")
    _after_base(X2, KI.base2, u, "u")
    L, d = KI.series_level, X.dim
    left, step = signature(X, KI.base, s, L), signature(X, s, t, L)
    right, step2 = signature(X2, KI.base2, u, L), signature(X2, u, v, L)
    terms = []
    for m in range(X.floor_p - j, L - j + 1):
        for n in range(X2.floor_p - k, L - k + 1):
            for l in range(max(m + j, n + k), L + 1):
                A = np.kron(left[l - j - m], step[m])
                B = np.kron(right[l - k - n], step2[n])
                terms.append(_pair_block(A, B, j, k, d))
    return util._ordered_sum(terms) if terms else np.zeros((d**j, d**k))


def as_joint_path(KI: KernelInstance, tol: Optional[float] = None) -> JointPath:
    """
    The kernel as a jointly (X, X~)-controlled path on [s0, T] x [u0, T~].

    Args:
        KI (KernelInstance): The instance.
        tol (float): Largest acceptable tail bound at the far corner.

    Returns:
        JointPath: Over the drivers restricted to start at the base points.

    Raises:
        TruncationError: If L_ser < 2 floor(p) + 2 or the tail bound
            exceeds ``tol``.
    """
    need = 2 * max(KI.driver.floor_p, KI.driver2.floor_p) + SERIES_MARGIN
    if KI.series_level < need:
        raise TruncationError(f"Series level {KI.series_level} is below {need}")
    end, end2 = float(KI.driver.times[-1]), float(KI.driver2.times[-1])
    if tol is not None:
        tail = tail_bound(KI, end, end2)
        if tail > tol:
            raise TruncationError(f"Tail bound {tail:.3e} at the far corner exceeds {tol:.1e}")
    return util._memoized(KI, "joint", lambda: _kernel_joint(KI))


def _kernel_joint(KI: KernelInstance) -> JointPath:
    X = _from_base(KI.driver, KI.base)
    X2 = X if KI.driver2 is KI.driver and KI.base == KI.base2 else _from_base(KI.driver2, KI.base2)
    first = {
        (j, k): kernel_derivative_table(KI, j, k)
        for j in range(X.order + 1)
        for k in range(X2.order + 1)
    }
    return tabulated_joint(X, None if X2 is X else X2, first, name="signature kernel")


def _from_base(X: RoughPath, base: float) -> RoughPath:
    if X.index(base) == 0:
        return X
    return restrict(X, base, float(X.times[-1]))


@dataclass(frozen=True, eq=False)
class GoursatResult:
    """Finite-difference kernel on the sample nodes.

    Attributes:
        values: K at every pair of sample nodes, shape (M+1, M~+1).
        error: Richardson error estimate (max over nodes).
        order: Measured convergence order used for the extrapolation.
        refine: Sub-steps per sample interval of the coarsest solve.
    """

    values: np.ndarray
    error: float
    order: float
    refine: int


def _goursat_solve(inc: np.ndarray) -> np.ndarray:
    """k_{i+1,j+1} = (k_{i+1,j} + k_{i,j+1})(1 + c/2 + c^2/12) - k_{i,j}(1 - c^2/12), swept by anti-diagonals."""
    P, Q = inc.shape
    k = np.ones((P + 1, Q + 1))
    grow = 1.0 + inc / 2.0 + inc**2 / 12.0
    keep = 1.0 - inc**2 / 12.0
    for diag in range(P + Q - 1):
        i = np.arange(max(0, diag - Q + 1), min(diag, P - 1) + 1)
        j = diag - i
        k[i + 1, j + 1] = (k[i + 1, j] + k[i, j + 1]) * grow[i, j] - k[i, j] * keep[i, j]
    return k


def _goursat_at(steps: np.ndarray, steps2: np.ndarray, refine: int) -> np.ndarray:
    inc = (steps @ steps2.T) / refine**2
    fine = np.repeat(np.repeat(inc, refine, axis=0), refine, axis=1)
    return _goursat_solve(fine)[::refine, ::refine]


def goursat_oracle(
    values: np.ndarray,
    values2: np.ndarray,
    refine: int = GOURSAT_REFINE,
    tol: Optional[float] = None,
    rtol: Optional[float] = None,
    max_refine: int = GOURSAT_MAX_REFINE,
) -> GoursatResult:
    """
    Solve k_{su} = <dx_s, dx~_u> k with k = 1 on both base edges.

    Each linear piece is split into r, 2r and 4r sub-steps. The convergence
    order is measured from the two successive differences and the two finest
    solves are combined by Richardson extrapolation. While some node's error
    estimate exceeds tol + rtol |K|, r is doubled and the two finer solves
    are reused.

    Args:
        values: Samples of x, shape (M+1, d).
        values2: Samples of x~, shape (M~+1, d).
        refine (int): Sub-steps per sample interval of the first coarsest solve.
        tol (float): Absolute error allowed at every node.
        rtol (float): Error allowed relative to |K| at every node.
        max_refine (int): Largest coarsest refinement tried.

    Returns:
        GoursatResult: K at the sample nodes.

    Raises:
        TruncationError: If the estimate is still too large at ``max_refine``.
    """
    steps = np.diff(np.asarray(values, dtype=float).reshape(len(values), -1), axis=0)
    steps2 = np.diff(np.asarray(values2, dtype=float).reshape(len(values2), -1), axis=0)
    if steps.shape[1] != steps2.shape[1]:
        raise IncompatibleAlphabetError(f"Paths differ in dimension: {steps.shape[1]} vs {steps2.shape[1]}")
    if refine < 1:
        raise ValueError(f"refine must be positive, got {refine}")
    r = refine
    solves = [_goursat_at(steps, steps2, m * r) for m in (1, 2, 4)]
    while True:
        coarse, mid, fine = solves
        first_gap = float(np.max(np.abs(mid - coarse)))
        second_gap = float(np.max(np.abs(fine - mid)))
        order = 2.0
        if first_gap > 0.0 and second_gap > 0.0:
            order = float(np.clip(np.log2(first_gap / second_gap), 1.0, 6.0))
        factor = 2.0**order
        result = (factor * fine - mid) / (factor - 1.0)
        node_error = np.abs(fine - mid) / (factor - 1.0)
        error = second_gap / (factor - 1.0)
        logger.debug("Goursat solve: refine %d, order %.2f, error %.3e", r, order, error)
        if tol is None and rtol is None:
            break
        allowed = (0.0 if tol is None else tol) + (0.0 if rtol is None else rtol) * np.abs(result)
        if np.all(node_error <= allowed):
            break
        if 2 * r > max_refine:
            raise TruncationError(
                f"Goursat error estimate {error:.3e} still too large at refine {r}; raise max_refine"
            )
        r *= 2
        solves = [mid, fine, _goursat_at(steps, steps2, 4 * r)]
    return GoursatResult(values=result, error=error, order=order, refine=r)
