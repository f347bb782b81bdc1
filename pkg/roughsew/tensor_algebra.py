"""
Truncated tensor algebra over V = R^d.

A level l tensor is stored as a flat array of d^l entries in row-major
order: the word (i_1, ..., i_l) sits at index sum_k i_k d^(l-k), so the
first factor is the most significant. Concatenation of words is then
``np.kron`` on flat arrays.
"""

import logging
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from . import internal_utils as util
from .errors import IncompatibleAlphabetError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TensorSequence:
    """An element (a_0, a_1, ..., a_L) of the truncated tensor algebra.

    Attributes:
        dim: Alphabet size d.
        max_level: Truncation level L.
        levels: L+1 read-only arrays, level l with d^l entries.
    """

    dim: int
    max_level: int
    levels: Tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.levels) != self.max_level + 1:
            raise ValueError(
                f"Expected {self.max_level + 1} levels, got {len(self.levels)}"
            )
        frozen = []
        for l, arr in enumerate(self.levels):
            arr = np.array(arr, dtype=float).ravel()
            if arr.size != self.dim**l:
                raise ValueError(
                    f"Level {l} must have {self.dim ** l} entries, got {arr.size}"
                )
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "levels", tuple(frozen))

    def __getitem__(self, l: int) -> np.ndarray:
        return self.levels[l]

    def truncate(self, level: int) -> "TensorSequence":
        """Drop every level above ``level``."""
        if level > self.max_level:
            raise ValueError(f"Cannot truncate level {self.max_level} up to {level}")
        return TensorSequence(self.dim, level, self.levels[: level + 1])

    def flat(self) -> np.ndarray:
        """All levels concatenated, level 0 first."""
        return np.concatenate(self.levels)


def unit(dim: int, max_level: int) -> TensorSequence:
    """The identity element (1, 0, 0, ...)."""
    util._validate_level(dim, max_level)
    levels = [np.ones(1)] + [np.zeros(dim**l) for l in range(1, max_level + 1)]
    return TensorSequence(dim, max_level, tuple(levels))


def zero(dim: int, max_level: int) -> TensorSequence:
    util._validate_level(dim, max_level)
    return TensorSequence(
        dim, max_level, tuple(np.zeros(dim**l) for l in range(max_level + 1))
    )


def from_levels(dim: int, levels: Sequence[Union[float, Sequence[float]]]) -> TensorSequence:
    """Build a tensor sequence from per-level arrays (level 0 may be a scalar)."""
    max_level = len(levels) - 1
    util._validate_level(dim, max_level)
    return TensorSequence(dim, max_level, tuple(np.atleast_1d(lv) for lv in levels))


def _check_alphabet(a: TensorSequence, b: TensorSequence) -> None:
    if a.dim != b.dim:
        raise IncompatibleAlphabetError(
            f"Incompatible alphabets: dimension {a.dim} vs {b.dim}"
        )


def tensor_mul(a: TensorSequence, b: TensorSequence) -> TensorSequence:
    """
    Truncated tensor product (concatenation product).

    Level l of the result is sum_{i+j=l} a_i (x) b_j, truncated at the
    smaller of the two truncation levels.

    Args:
        a (TensorSequence): Left factor.
        b (TensorSequence): Right factor.

    Returns:
        TensorSequence: The product.

    Raises:
        IncompatibleAlphabetError: If the dimensions differ.

    Examples:
        >>> a = from_levels(1, [1.0, [2.0], [0.0]])
        >>> b = from_levels(1, [1.0, [3.0], [0.0]])
        >>> tensor_mul(a, b).levels[2]
        array([6.])
    """
    _check_alphabet(a, b)
    top = min(a.max_level, b.max_level)
    levels = []
    for l in range(top + 1):
        acc = np.zeros(a.dim**l)
        for i in range(l + 1):
            acc += np.kron(a.levels[i], b.levels[l - i])
        levels.append(acc)
    return TensorSequence(a.dim, top, tuple(levels))


def segment_exp(increment: Sequence[float], max_level: int) -> TensorSequence:
    """
    Signature of a linear segment: level l is increment^(x)l / l!.

    Args:
        increment: Vector of length d.
        max_level (int): Truncation level L.

    Returns:
        TensorSequence: The truncated exponential.
    """
    inc = np.asarray(increment, dtype=float).ravel()
    util._validate_level(inc.size, max_level)
    levels = [np.ones(1)]
    for l in range(1, max_level + 1):
        levels.append(np.kron(levels[-1], inc) / l)
    return TensorSequence(inc.size, max_level, tuple(levels))


def _check_level(a: TensorSequence, l: int) -> None:
    if not 0 <= l <= a.max_level:
        raise ValueError(f"Level {l} out of range 0..{a.max_level}")


def level_inner(a: TensorSequence, b: TensorSequence, l: int) -> float:
    """Euclidean dot product of the level l components."""
    _check_alphabet(a, b)
    _check_level(a, l)
    _check_level(b, l)
    return float(np.dot(a.levels[l], b.levels[l]))


def level_norm(a: TensorSequence, l: int) -> float:
    """Hilbert-Schmidt norm of level l."""
    _check_level(a, l)
    return float(np.linalg.norm(a.levels[l]))


def factorial_scaled_norms(a: TensorSequence) -> np.ndarray:
    """(level_norm * l!)^(1/l) for l >= 1, bounded for signatures."""
    out = np.empty(a.max_level)
    for l in range(1, a.max_level + 1):
        out[l - 1] = (level_norm(a, l) * math.factorial(l)) ** (1.0 / l)
    return out


def contract_leading(arr: np.ndarray, tensor: np.ndarray) -> np.ndarray:
    """
    Feed a level m tensor into the leading factors of the last axis.

    ``arr`` has shape (..., d^(m+j)). The result has shape (..., d^j) with
    entries sum_alpha arr[..., alpha * d^j + x] * tensor[alpha].
    """
    tensor = np.asarray(tensor, dtype=float).ravel()
    last = arr.shape[-1]
    head = tensor.size
    if last % head:
        raise IncompatibleAlphabetError(
            f"Cannot contract {head} leading entries out of {last}"
        )
    tail = last // head
    shaped = arr.reshape(arr.shape[:-1] + (head, tail))
    return np.einsum("...at,a->...t", shaped, tensor)


def split_last_factor(tensor: np.ndarray, dim: int) -> np.ndarray:
    """Reshape a level l+1 tensor into a (d^l, d) matrix."""
    tensor = np.asarray(tensor, dtype=float)
    return tensor.reshape(tensor.shape[:-1] + (tensor.shape[-1] // dim, dim))
