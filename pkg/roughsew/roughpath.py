"""
Geometric p-rough paths lifted from piecewise-linear samples.

Every adjacent sample interval carries the truncated exponential of its
increment. Signatures over longer grid intervals are Chen products folded
left to right and memoised per starting node.
"""

import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from . import internal_utils as util
from . import tensor_algebra as ta
from .constants import CSV_FLOAT_FORMAT, DEFAULT_LEVEL
from .controls import Control, NormValue, pvar_control, sup_ratio
from .errors import GridError, LevelCapError, PathFileError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RoughPath:
    """A piecewise-linear path together with its signature lift.

    Attributes:
        times: Sample times t_0 < ... < t_M.
        values: Samples, shape (M+1, d).
        p: Roughness exponent; N = floor(p) - 1.
        level: Stored truncation level, at least floor(p).
        segments: Signature of each adjacent sample interval.
        control: The p-variation control of the samples.

    Signature rows and level tables are memoised on first use; the cache is
    filled under a re-entrant lock, so one path may be shared across threads.
    """

    times: np.ndarray
    values: np.ndarray
    p: float
    level: int
    segments: Tuple[ta.TensorSequence, ...]
    control: Control
    _cache: Dict = field(default_factory=dict, compare=False, repr=False)
    _lock: Any = field(default_factory=threading.RLock, compare=False, repr=False)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def floor_p(self) -> int:
        return util._floor_p(self.p)

    @property
    def order(self) -> int:
        """N = floor(p) - 1, the highest Gubinelli derivative index."""
        return self.floor_p - 1

    @property
    def n_segments(self) -> int:
        return self.times.size - 1

    def index(self, t: float) -> int:
        return util._grid_index(self.times, t)


def lift(
    times: Sequence[float],
    values: Union[Sequence[float], np.ndarray],
    p: float,
    level: int = DEFAULT_LEVEL,
) -> RoughPath:
    """
    Lift samples to a geometric p-rough path.

    Args:
        times: Strictly increasing sample times.
        values: Samples, shape (M+1, d) or (M+1,) for d = 1.
        p (float): Roughness exponent, at least 1.
        level (int): Truncation level L, at least floor(p).

    Returns:
        RoughPath: The lift, with its p-variation control.

    Raises:
        GridError: If the times are not strictly increasing.
        LevelCapError: If L < floor(p) or L breaks a cap.

    Examples:
        >>> X = lift([0.0, 1.0], [[0.0], [1.0]], p=2, level=3)
        >>> eval_level(X, 3, 0.0, 1.0)
        array([0.16666667])
    """
    p = util._validate_exponent(p)
    grid = util._as_times(times).copy()
    vals = np.array(values, dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != grid.size:
        raise GridError(f"{grid.size} times but {vals.shape[0]} samples")
    level = util._validate_level(vals.shape[1], level)
    if level < util._floor_p(p):
        raise LevelCapError(f"Level {level} is below floor(p) = {util._floor_p(p)}")
    grid.setflags(write=False)
    vals.setflags(write=False)
    segments = tuple(ta.segment_exp(inc, level) for inc in np.diff(vals, axis=0))
    logger.debug("Lifted %d segments in dimension %d at level %d", len(segments), vals.shape[1], level)
    return RoughPath(grid, vals, p, level, segments, pvar_control(grid, vals, p))


def restrict(X: RoughPath, start: float, end: float) -> RoughPath:
    """The same rough path on the sub-grid [start, end]."""
    i, j = X.index(start), X.index(end)
    if j <= i:
        raise GridError(f"Empty restriction [{start}, {end}]")
    return lift(X.times[i : j + 1], X.values[i : j + 1], X.p, X.level)


def _row(X: RoughPath, i: int, level: int) -> Tuple[ta.TensorSequence, ...]:
    """Signatures S(X)_{t_i, t_j} for j = i..M, truncated at ``level``."""

    def build() -> Tuple[ta.TensorSequence, ...]:
        acc = ta.unit(X.dim, level)
        out = [acc]
        for seg in X.segments[i:]:
            acc = ta.tensor_mul(acc, seg.truncate(level))
            out.append(acc)
        return tuple(out)

    return util._memoized(X, ("row", i, level), build)


def _check_pair(X: RoughPath, s: float, t: float) -> Tuple[int, int]:
    i, j = X.index(s), X.index(t)
    if j < i:
        raise GridError(f"Need s <= t, got s={s}, t={t}")
    return i, j


def signature(X: RoughPath, s: float, t: float, level: Optional[int] = None) -> ta.TensorSequence:
    """Truncated signature over the grid interval [s, t]."""
    level = X.level if level is None else level
    if level > X.level:
        raise LevelCapError(f"Level {level} exceeds the stored level {X.level}")
    i, j = _check_pair(X, s, t)
    return _row(X, i, level)[j - i]


def eval_level(X: RoughPath, j: int, s: float, t: float) -> np.ndarray:
    """
    Level j component X^j_{s,t} on grid times.

    Args:
        X (RoughPath): The rough path.
        j (int): Level, at most the stored level.
        s, t (float): Grid times with s <= t.

    Returns:
        np.ndarray: Flat array of d^j entries.

    Raises:
        GridError: If s or t is off the grid, or s > t.
        ValueError: If j is out of range.
    """
    if not 0 <= j <= X.level:
        raise ValueError(f"Level {j} out of range 0..{X.level}")
    return signature(X, s, t, max(j, X.floor_p))[j]


def increment_table(X: RoughPath, level: int) -> np.ndarray:
    """
    X^level over every pair of grid nodes.

    Returns:
        np.ndarray: Shape (M+1, M+1, d^level); entry [a, b] holds
            X^level_{t_a, t_b} for a <= b and zeros below the diagonal.
    """
    if not 0 <= level <= X.level:
        raise ValueError(f"Level {level} out of range 0..{X.level}")

    def build() -> np.ndarray:
        n = X.times.size
        table = np.zeros((n, n, X.dim**level))
        depth = max(level, X.floor_p)
        for a in range(n):
            row = _row(X, a, depth)
            table[a, a:] = np.stack([sig[level] for sig in row])
        table.setflags(write=False)
        return table

    return util._memoized(X, ("table", level), build)


def base_signatures(X: RoughPath, s0: float, level: int) -> list:
    """Per level arrays (M+1-i0, d^l) of X^l_{s0, t} for grid t >= s0."""
    i0 = X.index(s0)
    row = _row(X, i0, level)
    return [np.stack([sig[l] for sig in row]) for l in range(level + 1)]


def one_variation_length(X: RoughPath, s: float, t: float) -> float:
    """Euclidean length of the piecewise-linear path on [s, t]."""
    i, j = _check_pair(X, s, t)
    return float(np.sum(np.linalg.norm(np.diff(X.values[i : j + 1], axis=0), axis=1)))


def read_path_csv(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Read a ``t,x1,...,xd`` CSV file.

    Args:
        path: File location.

    Returns:
        tuple: (times, values) with values of shape (M+1, d).

    Raises:
        PathFileError: If the file is unreadable, the header is wrong, a
            value is not numeric, or the times are not strictly increasing.
    """
    try:
        frame = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise PathFileError(f"Cannot read path file {path}: {exc}")
    columns = [str(c).strip() for c in frame.columns]
    expected = ["t"] + [f"x{k}" for k in range(1, len(columns))]
    if len(columns) < 2 or columns != expected:
        raise PathFileError(f"Path file {path} needs header t,x1,...,xd, got {','.join(columns)}")
    try:
        data = frame.to_numpy(dtype=float)
    except (TypeError, ValueError):
        raise PathFileError(f"Path file {path} contains non-numeric entries")
    if data.shape[0] < 2 or not np.all(np.isfinite(data)):
        raise PathFileError(f"Path file {path} needs at least two finite rows")
    if np.any(np.diff(data[:, 0]) <= 0.0):
        raise PathFileError(f"Times in {path} must be strictly increasing")
    return data[:, 0], data[:, 1:]


def write_path_csv(path: Union[str, Path], times: Sequence[float], values: np.ndarray) -> None:
    vals = np.asarray(values, dtype=float).reshape(len(times), -1)
    frame = pd.DataFrame(vals, columns=[f"x{k + 1}" for k in range(vals.shape[1])])
    frame.insert(0, "t", np.asarray(times, dtype=float))
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)


def smooth_random_samples(
    rng: np.random.Generator,
    n_segments: int,
    dim: int,
    horizon: float = 1.0,
    modes: int = 3,
    amplitude: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Samples of a random Fourier curve starting at the origin.

    Args:
        rng: numpy Generator driving the coefficients.
        n_segments (int): Number of equal sample intervals.
        dim (int): Dimension d.
        horizon (float): Right end of the time interval.
        modes (int): Number of Fourier modes per coordinate.
        amplitude (float): Overall scale.

    Returns:
        tuple: (times, values) with values of shape (n_segments+1, dim).
    """
    times = np.linspace(0.0, horizon, n_segments + 1)
    coeffs = rng.normal(size=(modes, dim))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(modes, dim))
    freq = np.arange(1, modes + 1)[:, None, None]
    wave = np.sin(2.0 * np.pi * freq * times[None, :, None] / horizon + phases[:, None, :])
    wave -= np.sin(phases)[:, None, :]
    values = amplitude * np.sum(coeffs[:, None, :] * wave / freq, axis=0)
    return times, values


def level_omega_norm(X: RoughPath, level: int, s: float, t: float) -> NormValue:
    """‖X^level‖ with exponent level/p over grid pairs inside [s, t]."""
    a, b = _check_pair(X, s, t)
    table = increment_table(X, level)[a : b + 1, a : b + 1]
    omega = X.control.table[a : b + 1, a : b + 1]
    iu = np.triu_indices(b - a + 1, 1)
    return sup_ratio(np.linalg.norm(table[iu], axis=-1), omega[iu] ** (level / X.p))
