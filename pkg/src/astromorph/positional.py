"""Astrocytic positional activity built from relative token distances.

The learnable basis ``M`` (m x N) maps the fixed signed-distance matrix
``P`` (N x N) into hidden space, ``D = M P M^T``. Edges are ``a = M^T D``
(N x m) and the astrocytic activity is ``W_astro = phi(a)^T`` (m x N), one
column per token position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .features import FeatureMapKind, as_float, phi
from .linalg import DimensionError, Matrix, PathLike, SeededRng, read_matrix_csv, write_matrix_csv

DEFAULT_CLIP_K = 8


def build_distance_matrix(n: int, clip_k: int = DEFAULT_CLIP_K) -> Matrix:
    """``P[i, j] = clip(j - i, -k, k) / k``; antisymmetric, entries in [-1, 1]."""
    if n < 1 or clip_k < 1:
        raise ValueError(f"need n >= 1 and clip_k >= 1, got n={n}, clip_k={clip_k}")
    idx = np.arange(n)
    rel = idx[None, :] - idx[:, None]
    return np.clip(rel, -clip_k, clip_k).astype(np.float64) / clip_k


@dataclass
class PositionalBasis:
    m: int
    n_max: int
    M: Matrix
    p_pos: Matrix
    clip_k: int = DEFAULT_CLIP_K

    def __post_init__(self):
        self.M = as_float(self.M)
        self.p_pos = as_float(self.p_pos)
        if self.M.shape != (self.m, self.n_max):
            raise DimensionError(f"M must be ({self.m}, {self.n_max}), got {self.M.shape}")
        if self.p_pos.shape != (self.n_max, self.n_max):
            raise DimensionError(f"p_pos must be ({self.n_max}, {self.n_max}), got {self.p_pos.shape}")

    @classmethod
    def init(cls, m: int, n_max: int, rng: SeededRng, clip_k: int = DEFAULT_CLIP_K) -> "PositionalBasis":
        bound = 1.0 / math.sqrt(n_max)
        M = rng.uniform(-bound, bound, (m, n_max))
        return cls(m=m, n_max=n_max, M=M, p_pos=build_distance_matrix(n_max, clip_k), clip_k=clip_k)

    def sliced(self, n: Optional[int] = None) -> tuple[Matrix, Matrix]:
        """``(M[:, :n], P[:n, :n])`` for an actual sequence length ``n``."""
        n = self.n_max if n is None else n
        if not 1 <= n <= self.n_max:
            raise DimensionError(f"sequence length {n} outside [1, {self.n_max}]")
        return self.M[:, :n], self.p_pos[:n, :n]

    def save(self, directory: PathLike, prefix: str = "basis") -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(d / f"{prefix}_M.csv", self.M)
        write_matrix_csv(d / f"{prefix}_P.csv", self.p_pos)

    @classmethod
    def load(cls, directory: PathLike, prefix: str = "basis", clip_k: int = DEFAULT_CLIP_K) -> "PositionalBasis":
        d = Path(directory)
        M = read_matrix_csv(d / f"{prefix}_M.csv")
        P = read_matrix_csv(d / f"{prefix}_P.csv")
        return cls(m=M.shape[0], n_max=M.shape[1], M=M, p_pos=P, clip_k=clip_k)


def basis_transform(basis: PositionalBasis, n: Optional[int] = None) -> Matrix:
    """``D = M P M^T`` (m x m)."""
    M, P = basis.sliced(n)
    return M @ P @ M.T


def edges(basis: PositionalBasis, n: Optional[int] = None) -> Matrix:
    """``a = M^T D`` (N x m)."""
    M, _ = basis.sliced(n)
    return M.T @ basis_transform(basis, n)


def w_astro(basis: PositionalBasis, fmap: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE,
            n: Optional[int] = None) -> Matrix:
    """Astrocytic activity ``phi(a)^T`` (m x N)."""
    return np.ascontiguousarray(phi(edges(basis, n), fmap).T)
