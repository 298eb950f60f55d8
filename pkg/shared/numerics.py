"""
Dense vector/matrix helpers, seeded random streams and finite-difference utilities.

Vectors and matrices are plain float64 numpy arrays; the helpers here validate
shape and finiteness at the boundaries of the library.
"""

import math
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, List, Sequence, Tuple, TypeVar, Union

import numpy as np
from numpy.typing import NDArray

from shared.errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

Vec = NDArray[np.float64]
Mat = NDArray[np.float64]

T = TypeVar('T')

_UINT64_LIMIT = 2**64


def as_vec(values: Any, name: str = 'vector') -> Vec:
    """Convert to a 1-D float64 array with finite entries."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


def as_mat(values: Any, name: str = 'matrix') -> Mat:
    """Convert to a 2-D float64 array with finite entries."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValidationError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


class RngStream:
    """
    Reproducible random stream identified by (seed, stream_id).

    Backed by numpy's counter-based Philox generator. Child streams are derived
    from the identifiers alone, never from consumed state, so block b of a Monte
    Carlo run draws the same numbers whatever the thread count.
    """

    def __init__(self, seed: int, stream_id: int = 0, path: Tuple[int, ...] = ()):
        for label, value in (('seed', seed), ('stream_id', stream_id)):
            if not 0 <= int(value) < _UINT64_LIMIT:
                raise ValidationError(f"{label} must be a 64-bit unsigned integer, got {value}")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self.path = tuple(int(p) for p in path)
        sequence = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id, *self.path))
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def child(self, index: int) -> 'RngStream':
        return RngStream(self.seed, self.stream_id, self.path + (int(index),))

    def fresh(self) -> 'RngStream':
        """A rewound copy; used for common random numbers."""
        return RngStream(self.seed, self.stream_id, self.path)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"


def default_step(x0: float) -> float:
    return 1e-4 * max(1.0, abs(x0))


def finite_difference_scalar(f: Callable[[float], float], x0: float, h: float = None) -> float:
    """
    Central difference (f(x0+h) - f(x0-h)) / (2h).

    Args:
        f: Real-valued function of one real variable
        x0: Evaluation point
        h: Step, defaults to 1e-4 * max(1, |x0|)

    Returns:
        The central-difference derivative estimate
    """
    if h is None:
        h = default_step(x0)
    if not h > 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")

    upper = _checked_eval(f, x0 + h)
    lower = _checked_eval(f, x0 - h)
    return (upper - lower) / (2.0 * h)


def forward_difference_richardson(f: Callable[[float], float], x0: float, h: float = None) -> float:
    """Forward difference with one Richardson step; only evaluates at x0, x0+h/2, x0+h."""
    if h is None:
        h = default_step(x0)
    if not h > 0:
        raise ValidationError(f"finite-difference step must be positive, got {h}")

    f0 = _checked_eval(f, x0)
    half = (_checked_eval(f, x0 + 0.5 * h) - f0) / (0.5 * h)
    full = (_checked_eval(f, x0 + h) - f0) / h
    return (4.0 * half - full) / 3.0


def _checked_eval(f: Callable[[float], float], x: float) -> float:
    value = float(f(x))
    if not math.isfinite(value):
        raise NumericalError(f"function value is not finite at x={x!r}")
    return value


def mat_frobenius_distance(a: Mat, b: Mat) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def compensated_sum(values: Any) -> float:
    return math.fsum(np.ravel(np.asarray(values, dtype=np.float64)).tolist())


def block_sizes(total: int, block_size: int) -> List[int]:
    """Split a Monte Carlo budget into fixed-size blocks (last block may be short)."""
    if total < 1:
        raise ValidationError(f"sample budget must be >= 1, got {total}")
    full, rest = divmod(int(total), int(block_size))
    sizes = [int(block_size)] * full
    if rest:
        sizes.append(rest)
    return sizes


def run_blocks(fn: Callable[[int], T], count: int, threads: int = 1) -> List[T]:
    """
    Run fn(0..count-1) and return results ordered by block index.

    Callers reduce the list in order, which keeps results independent of threads.
    """
    if threads <= 1 or count <= 1:
        return [fn(index) for index in range(count)]
    logger.debug(f"Running {count} blocks on {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


# CSV: one row per line, '.' decimal separator, no header, shortest round-trip repr

def mat_to_csv(mat: Any) -> str:
    arr = np.asarray(mat, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    return '\n'.join(','.join(repr(float(v)) for v in row) for row in arr) + '\n'


def mat_from_csv(text: str) -> Mat:
    rows: List[List[float]] = []
    for line_number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(token) for token in line.split(',')])
        except ValueError:
            raise ValidationError(f"CSV line {line_number} is not numeric: {line!r}")
    if not rows:
        raise ValidationError("CSV contains no rows")
    if len({len(row) for row in rows}) != 1:
        raise ValidationError("CSV rows have different lengths")
    return as_mat(rows, name='CSV matrix')


def vec_from_csv(text: str) -> Vec:
    """Accepts a single row or a single column."""
    mat = mat_from_csv(text)
    if mat.shape[0] != 1 and mat.shape[1] != 1:
        raise ValidationError(f"CSV vector must be a single row or column, got shape {mat.shape}")
    return mat.reshape(-1)


def read_csv(path: Union[str, Path]) -> Mat:
    return mat_from_csv(Path(path).read_text(encoding='utf-8'))


def read_vec_csv(path: Union[str, Path]) -> Vec:
    return vec_from_csv(Path(path).read_text(encoding='utf-8'))


def write_csv(path: Union[str, Path], mat: Any) -> None:
    Path(path).write_text(mat_to_csv(mat), encoding='utf-8')


def require_shape(arr: NDArray, shape: Sequence[int], name: str) -> None:
    if tuple(arr.shape) != tuple(shape):
        raise ValidationError(f"{name} must have shape {tuple(shape)}, got {tuple(arr.shape)}")
