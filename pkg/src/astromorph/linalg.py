"""Dense float64 matrix helpers, seeded randomness and the matrix CSV format.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64 stored in
C (row-major) order. The helpers here add the dimension and finiteness checks
the rest of the package relies on; numpy does the arithmetic.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Callable, Union

import numpy as np

Matrix = np.ndarray
PathLike = Union[str, Path]


class DimensionError(ValueError):
    """Raised when operand shapes cannot be combined."""


class NonFiniteError(ValueError):
    """Raised when a NaN or infinity appears where it must not."""


def as_matrix(a, name: str = "matrix") -> Matrix:
    """Coerce ``a`` to a finite 2-D float64 row-major array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D array, got shape {m.shape}")
    check_finite(m, name)
    return m


def check_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        bad = int(np.size(a) - np.count_nonzero(np.isfinite(a)))
        raise NonFiniteError(f"{name}: {bad} non-finite entries")
    return a


def zeros(rows: int, cols: int) -> Matrix:
    return np.zeros((rows, cols), dtype=np.float64)


def ones(rows: int, cols: int) -> Matrix:
    return np.ones((rows, cols), dtype=np.float64)


def eye(n: int) -> Matrix:
    return np.eye(n, dtype=np.float64)


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


def hadamard(a: Matrix, b: Matrix) -> Matrix:
    """Elementwise product.

    ``b`` may either match ``a`` exactly or be an ``(a.rows, 1)`` column, in
    which case row ``i`` of ``a`` is scaled by ``b[i, 0]``. No other
    broadcasting is accepted.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if b.shape != a.shape and b.shape != (a.shape[0], 1):
        raise DimensionError(f"hadamard: {a.shape} vs {b.shape}")
    return check_finite(a * b, "hadamard result")


def transpose(a: Matrix) -> Matrix:
    return np.ascontiguousarray(as_matrix(a).T)


def row_sum(a: Matrix) -> Matrix:
    """Sum across columns; returns an ``(rows, 1)`` column."""
    return as_matrix(a).sum(axis=1, keepdims=True)


def col_sum(a: Matrix) -> Matrix:
    """Sum down rows; returns a ``(1, cols)`` row."""
    return as_matrix(a).sum(axis=0, keepdims=True)


def elementwise(a: Matrix, f: Callable[[np.ndarray], np.ndarray]) -> Matrix:
    out = np.asarray(f(as_matrix(a)), dtype=np.float64)
    return check_finite(out, "elementwise result")


def scale(a: Matrix, c: float) -> Matrix:
    return check_finite(as_matrix(a) * float(c), "scale result")


class SeededRng:
    """Counter-based (Philox) generator with named, order-independent children.

    ``child("head0")`` always yields the same stream for a given parent seed
    regardless of how many draws were taken from the parent or other children.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        key = _derive_key(self.seed, self.path)
        self.gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, name: str) -> "SeededRng":
        return SeededRng(self.seed, self.path + (str(name),))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self.gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self.gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self.gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def random(self, shape=None) -> np.ndarray:
        return self.gen.random(size=shape)

    def exponential(self, scale: float, size=None) -> np.ndarray:
        return self.gen.exponential(scale, size=size)


def _derive_key(seed: int, path: tuple[str, ...]) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(seed.to_bytes(8, "little"))
    for part in path:
        h.update(b"/")
        h.update(part.encode())
    return int.from_bytes(h.digest(), "little")


def write_matrix_csv(path: PathLike, a: Matrix) -> None:
    """Header line ``rows,cols`` then one comma-separated line per row."""
    a = as_matrix(a)
    rows, cols = a.shape
    lines = [f"{rows},{cols}"]
    lines.extend(",".join(repr(float(x)) for x in row) for row in a)
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path: PathLike) -> Matrix:
    text = Path(path).read_text().strip().splitlines()
    if not text:
        raise ValueError(f"{path}: empty matrix file")
    rows, cols = (int(x) for x in text[0].split(","))
    body = [line for line in text[1:] if line.strip()]
    if len(body) != rows:
        raise DimensionError(f"{path}: header says {rows} rows, found {len(body)}")
    data = np.zeros((rows, cols), dtype=np.float64)
    for i, line in enumerate(body):
        vals = [float(x) for x in line.split(",")]
        if len(vals) != cols:
            raise DimensionError(f"{path}: row {i} has {len(vals)} values, expected {cols}")
        data[i] = vals
    return check_finite(data, str(path))
