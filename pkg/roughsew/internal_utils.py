import logging
import math
import os
from functools import reduce
from typing import Any, Callable, Iterable, Sequence, Union

import numpy as np

from .constants import (
    GRID_MATCH_RTOL,
    LEVEL_CAP_ENV,
    LEVEL_HARD_CAP,
    MAX_TENSOR_ENTRIES,
)
from .errors import GridError, LevelCapError

logger = logging.getLogger(__name__)


def _level_cap() -> int:
    """
    Resolve the hard truncation cap.

    The environment variable ``ROUGHSEW_MAX_LEVEL`` overrides the default
    cap of 16 when set.

    Returns:
        int: Largest admissible truncation level.

    Raises:
        ValueError: If the variable is set to something other than a
            positive integer.
    """
    raw = os.environ.get(LEVEL_CAP_ENV)
    if raw is None or raw.strip() == "":
        return LEVEL_HARD_CAP
    try:
        cap = int(raw)
    except ValueError:
        raise ValueError(f"{LEVEL_CAP_ENV} must be an integer, got {raw!r}")
    if cap <= 0:
        raise ValueError(f"{LEVEL_CAP_ENV} must be positive, got {cap}")
    return cap


def _validate_level(dim: int, level: int) -> int:
    """
    Check a truncation level against the level and memory caps.

    Args:
        dim (int): Alphabet size d.
        level (int): Requested truncation L.

    Returns:
        int: The level, as an int.

    Raises:
        LevelCapError: If L exceeds the cap or d^L exceeds the entry cap.
        ValueError: If d or L is negative.
    """
    dim, level = int(dim), int(level)
    if dim <= 0:
        raise ValueError(f"Dimension must be positive, got {dim}")
    if level < 0:
        raise ValueError(f"Truncation level must be non-negative, got {level}")
    cap = _level_cap()
    if level > cap:
        raise LevelCapError(f"Truncation level {level} exceeds the cap {cap}")
    if dim**level > MAX_TENSOR_ENTRIES:
        raise LevelCapError(
            f"d^L = {dim}^{level} exceeds the entry cap {MAX_TENSOR_ENTRIES:.0e}"
        )
    return level


def _validate_exponent(value: Union[int, float], name: str = "p") -> float:
    """Reject variation exponents below one."""
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise TypeError(f"Invalid exponent {name}: {value!r}")
    if not math.isfinite(value) or value < 1.0:
        raise ValueError(f"Exponent {name} must be a finite real >= 1, got {value}")
    return value


def _as_times(times: Iterable[float]) -> np.ndarray:
    """Convert to a float array and require strictly increasing entries."""
    arr = np.asarray(times, dtype=float).ravel()
    if arr.size < 2:
        raise GridError(f"A grid needs at least two points, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise GridError("Grid times must be finite")
    if np.any(np.diff(arr) <= 0.0):
        raise GridError("Grid times must be strictly increasing")
    return arr


def _grid_index(times: np.ndarray, t: float) -> int:
    """
    Locate a time on a sorted grid.

    Args:
        times (np.ndarray): Sorted grid.
        t (float): Query time.

    Returns:
        int: Index i with times[i] == t up to a relative tolerance.

    Raises:
        GridError: If t is not a grid node.
    """
    t = float(t)
    i = int(np.searchsorted(times, t))
    scale = max(1.0, abs(times[0]), abs(times[-1]))
    for cand in (i - 1, i):
        if 0 <= cand < times.size and abs(times[cand] - t) <= GRID_MATCH_RTOL * scale:
            return cand
    raise GridError(f"Time {t!r} is not a node of the sample grid")


def _grid_indices(times: np.ndarray, points: Sequence[float]) -> np.ndarray:
    """Vector form of :func:`_grid_index`."""
    return np.array([_grid_index(times, t) for t in points], dtype=int)


def _ordered_sum(terms: Iterable[Any]) -> Any:
    """Left fold in the given order so reductions are bit-stable."""
    terms = list(terms)
    if not terms:
        return 0.0
    return reduce(lambda acc, term: acc + term, terms[1:], terms[0])


def _floor_p(p: float) -> int:
    """Integer part of p, taken literally for integer p."""
    return int(math.floor(p))


def _refine(points: list, allowed: Any = None) -> list:
    """Insert a midpoint into every interval; in index space when ``allowed`` is set."""
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        if allowed is None:
            out.append((a + b) / 2.0)
        elif b - a >= 2:
            out.append((a + b) // 2)
        out.append(b)
    return out


def _memoized(owner: Any, key: Any, build: Callable[[], Any]) -> Any:
    """owner._cache[key], built at most once under owner._lock (re-entrant for nested builds)."""
    value = owner._cache.get(key)
    if value is None:
        with owner._lock:
            value = owner._cache.get(key)
            if value is None:
                value = build()
                owner._cache[key] = value
    return value
