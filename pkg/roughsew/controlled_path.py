"""
One-parameter X-controlled paths.

A controlled path is a tuple (Y^(0), ..., Y^(N)) of Gubinelli derivatives
tabulated on the driver grid. Y^(j) at a grid node is an (e, d^j) matrix
that eats the LEADING j tensor factors of its argument.
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Sequence, Tuple

import numpy as np

from . import controls
from . import internal_utils as util
from . import tensor_algebra as ta
from .controls import NormValue
from .errors import GridError, IncompatibleAlphabetError
from .roughpath import RoughPath, eval_level, increment_table

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControlledPath:
    """Gubinelli derivative tables over the grid of a driver.

    Attributes:
        driver: The rough path X.
        derivatives: N+1 arrays, entry j of shape (M+1, e, d^j).
        codomain: e, the dimension of the values.
        name: Label for logs.
    """

    driver: RoughPath
    derivatives: Tuple[np.ndarray, ...]
    codomain: int
    name: str = "controlled"
    _cache: Dict = field(default_factory=dict, compare=False, repr=False)
    _lock: Any = field(default_factory=threading.RLock, compare=False, repr=False)

    def __post_init__(self):
        X = self.driver
        if len(self.derivatives) != X.order + 1:
            raise ValueError(
                f"Expected {X.order + 1} Gubinelli derivatives, got {len(self.derivatives)}"
            )
        frozen = []
        for j, table in enumerate(self.derivatives):
            table = np.array(table, dtype=float)
            expected = (X.times.size, self.codomain, X.dim**j)
            if table.shape != expected:
                raise IncompatibleAlphabetError(
                    f"Derivative {j} has shape {table.shape}, expected {expected}"
                )
            table.setflags(write=False)
            frozen.append(table)
        object.__setattr__(self, "derivatives", tuple(frozen))

    @property
    def order(self) -> int:
        return self.driver.order

    @property
    def exponents(self) -> Tuple[float, ...]:
        """q_j = p / (floor(p) - j), the regularity of each remainder."""
        X = self.driver
        return tuple(X.p / (X.floor_p - j) for j in range(X.order + 1))

    def derivative(self, j: int, t: float) -> np.ndarray:
        _check_order(self, j)
        return self.derivatives[j][self.driver.index(t)]


def _check_order(Y: ControlledPath, j: int) -> None:
    if not 0 <= j <= Y.order:
        raise ValueError(f"Derivative index {j} out of range 0..{Y.order}")


def tautological(X: RoughPath) -> ControlledPath:
    """Y = x itself, with Y' = identity and vanishing higher derivatives."""
    n, d = X.times.size, X.dim
    tables = [X.values[:, :, None]]
    if X.order >= 1:
        tables.append(np.broadcast_to(np.eye(d), (n, d, d)))
    for j in range(2, X.order + 1):
        tables.append(np.zeros((n, d, d**j)))
    return ControlledPath(X, tuple(tables), d, name="tautological")


def constant(X: RoughPath, value: Sequence[float]) -> ControlledPath:
    """A constant path: Y^(0) = value, all derivatives zero."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    n, e = X.times.size, value.size
    tables = [np.broadcast_to(value[None, :, None], (n, e, 1))]
    tables += [np.zeros((n, e, X.dim**j)) for j in range(1, X.order + 1)]
    return ControlledPath(X, tuple(tables), e, name="constant")


def from_function(
    X: RoughPath,
    derivative_fns: Sequence[Callable[[np.ndarray], np.ndarray]],
) -> ControlledPath:
    """
    Y_t = f(x_t) with Y^(j)_t = D^j f(x_t).

    For a geometric driver the symmetric derivative tensors need no
    factorial: D^j f eats Sym(X^j) = x^(x)j / j!.

    Args:
        X (RoughPath): Driver.
        derivative_fns: N+1 callables, the j-th mapping a point of R^d to
            D^j f as an array of shape (e, d^j) (or (d^j,) when e = 1).

    Returns:
        ControlledPath: The composition.
    """
    if len(derivative_fns) != X.order + 1:
        raise ValueError(f"Need {X.order + 1} derivative functions, got {len(derivative_fns)}")
    tables = []
    for j, fn in enumerate(derivative_fns):
        rows = [np.asarray(fn(x), dtype=float).reshape(-1, X.dim**j) for x in X.values]
        tables.append(np.stack(rows))
    return ControlledPath(X, tuple(tables), tables[0].shape[1], name="composition")


def from_table(X: RoughPath, tables: Sequence[np.ndarray], name: str = "tabulated") -> ControlledPath:
    """Wrap externally computed derivative tables, entry j of shape (M+1, e, d^j)."""
    tables = tuple(np.asarray(t, dtype=float) for t in tables)
    return ControlledPath(X, tables, tables[0].shape[1], name=name)


def remainder(Y: ControlledPath, j: int, s: float, t: float) -> np.ndarray:
    """
    R^(j)_{s,t} = Y^(j)_t - sum_{k=0}^{N-j} Y^(j+k)_s(X^k_{s,t}).

    Returns:
        np.ndarray: Shape (e, d^j); zero when s == t.
    """
    _check_order(Y, j)
    X = Y.driver
    a, b = X.index(s), X.index(t)
    if b < a:
        raise GridError(f"Need s <= t, got s={s}, t={t}")
    out = Y.derivatives[j][b].copy()
    for k in range(Y.order - j + 1):
        out -= ta.contract_leading(Y.derivatives[j + k][a], eval_level(X, k, s, t))
    return out


def remainder_table(Y: ControlledPath, j: int) -> np.ndarray:
    """R^(j) over every pair of grid nodes, shape (M+1, M+1, e, d^j), zero below the diagonal."""
    _check_order(Y, j)

    def build() -> np.ndarray:
        X = Y.driver
        n, dj = X.times.size, X.dim**j
        table = np.broadcast_to(Y.derivatives[j][None, :, :, :], (n, n, Y.codomain, dj)).copy()
        for k in range(Y.order - j + 1):
            deriv = Y.derivatives[j + k].reshape(n, Y.codomain, X.dim**k, dj)
            table -= np.einsum("aekx,abk->abex", deriv, increment_table(X, k))
        table[np.tril_indices(n, -1)] = 0.0
        table.setflags(write=False)
        return table

    return util._memoized(Y, ("remainder", j), build)


def local_approx(Y: ControlledPath, s: float, t: float) -> np.ndarray:
    """
    Xi^Y_{s,t} = sum_j Y^(j)_s(X^{j+1}_{s,t}), last factor left free.

    Returns:
        np.ndarray: Shape (e, d).
    """
    X = Y.driver
    a = X.index(s)
    out = np.zeros((Y.codomain, X.dim))
    for j in range(Y.order + 1):
        out += Y.derivatives[j][a] @ ta.split_last_factor(eval_level(X, j + 1, s, t), X.dim)
    return out


def delta_defect(xi: Callable[[float, float], np.ndarray], s: float, s_mid: float, t: float) -> np.ndarray:
    """δΞ_{s,s',t} = Ξ_{s,t} - Ξ_{s,s'} - Ξ_{s',t}."""
    if not s <= s_mid <= t:
        raise ValueError(f"Need s <= s' <= t, got {s}, {s_mid}, {t}")
    return np.asarray(xi(s, t)) - np.asarray(xi(s, s_mid)) - np.asarray(xi(s_mid, t))


def defect_identity_check(
    Y: ControlledPath, s: float, s_mid: float, t: float, relative: bool = False
) -> float:
    """
    Residual of -δΞ^Y_{s,s',t} = sum_j R^(j)_{s,s'}(X^{j+1}_{s',t}).

    Args:
        Y (ControlledPath): The path.
        s, s_mid, t (float): Grid triple.
        relative (bool): Divide by max(1, |Ξ_{s,t}| + |Ξ_{s,s'}| + |Ξ_{s',t}|).

    Returns:
        float: Frobenius norm of the difference of both sides.
    """
    X = Y.driver

    def xi(a: float, b: float) -> np.ndarray:
        return local_approx(Y, a, b)

    lhs = delta_defect(xi, s, s_mid, t)
    rhs = np.zeros_like(lhs)
    for j in range(Y.order + 1):
        rhs += remainder(Y, j, s, s_mid) @ ta.split_last_factor(
            eval_level(X, j + 1, s_mid, t), X.dim
        )
    residual = float(np.linalg.norm(lhs + rhs))
    if relative:
        scale = sum(np.linalg.norm(xi(a, b)) for a, b in ((s, t), (s, s_mid), (s_mid, t)))
        residual /= max(1.0, scale)
    return residual


def remainder_norm(Y: ControlledPath, j: int, s: float, t: float) -> NormValue:
    """‖R^(j)‖ with exponent (floor(p) - j)/p over grid pairs inside [s, t]."""
    X = Y.driver
    a, b = X.index(s), X.index(t)
    table = remainder_table(Y, j)[a : b + 1, a : b + 1]
    norms = np.linalg.norm(table.reshape(table.shape[0], table.shape[1], -1), axis=-1)
    omega = X.control.table[a : b + 1, a : b + 1]
    iu = np.triu_indices(b - a + 1, 1)
    return controls.sup_ratio(norms[iu], omega[iu] ** ((X.floor_p - j) / X.p))
