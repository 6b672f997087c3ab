"""Write-mode accumulation of Hebbian weights and presynaptic plasticity.

Tokens are written one at a time (``write_token``) or all at once
(``write_batch``); both produce the same ``WriteState``. The sigmoid and the
alpha exponent are applied only when the state is read.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .features import FeatureMapKind, SquashKind, phi, squash
from .linalg import DimensionError, Matrix, PathLike, read_matrix_csv, write_matrix_csv


class WriteOverflowError(RuntimeError):
    pass


class NegativePresynapticError(ValueError):
    pass


@dataclass
class WriteState:
    h_neuron: Matrix
    h_astro: Matrix
    g_raw: Matrix
    t: int = 0
    n_max: Optional[int] = None

    @property
    def m(self) -> int:
        return self.h_neuron.shape[0]

    @property
    def d(self) -> int:
        return self.h_neuron.shape[1]

    def save(self, directory: PathLike) -> None:
        """Three CSV matrices plus a ``t.txt`` counter."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_matrix_csv(d / "h_neuron.csv", self.h_neuron)
        write_matrix_csv(d / "h_astro.csv", self.h_astro)
        write_matrix_csv(d / "g_raw.csv", self.g_raw)
        (d / "t.txt").write_text(f"{self.t}\n")

    @classmethod
    def load(cls, directory: PathLike) -> "WriteState":
        d = Path(directory)
        return cls(
            h_neuron=read_matrix_csv(d / "h_neuron.csv"),
            h_astro=read_matrix_csv(d / "h_astro.csv"),
            g_raw=read_matrix_csv(d / "g_raw.csv"),
            t=int((d / "t.txt").read_text().strip()),
        )


def write_init(m: int, d: int, n_max: Optional[int] = None) -> WriteState:
    if m < 1 or d < 1:
        raise ValueError(f"m and d must be >= 1, got m={m}, d={d}")
    return WriteState(
        h_neuron=np.zeros((m, d)),
        h_astro=np.zeros((m, d)),
        g_raw=np.zeros((1, m)),
        t=0,
        n_max=n_max,
    )


def write_token(state: WriteState, k_t: Matrix, v_t: Matrix, w_astro_col: Matrix,
                fmap: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE) -> WriteState:
    """Write one token. ``k_t`` is the raw (pre-feature-map) 1 x m key."""
    if state.n_max is not None and state.t >= state.n_max:
        raise WriteOverflowError(f"token {state.t + 1} exceeds n_max={state.n_max}")
    k_t = np.asarray(k_t, dtype=np.float64).reshape(1, -1)
    v_t = np.asarray(v_t, dtype=np.float64).reshape(1, -1)
    w_col = np.asarray(w_astro_col, dtype=np.float64).reshape(-1, 1)
    m, d = state.m, state.d
    if k_t.shape[1] != m or v_t.shape[1] != d or w_col.shape[0] != m:
        raise DimensionError(
            f"write_token: key {k_t.shape}, value {v_t.shape}, w_astro column {w_col.shape} "
            f"for state m={m}, d={d}"
        )
    h_t = phi(k_t, fmap)
    return replace(
        state,
        h_neuron=state.h_neuron + (h_t.T @ v_t) / m,
        h_astro=state.h_astro + (w_col @ v_t) / m,
        g_raw=state.g_raw + h_t,
        t=state.t + 1,
    )


def write_batch(K: Matrix, V: Matrix, W_astro: Matrix,
                fmap: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE) -> WriteState:
    """Closed-form write of all N tokens: raw keys N x m, values N x d, W_astro m x N."""
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    W_astro = np.asarray(W_astro, dtype=np.float64)
    n, m = K.shape
    if V.shape[0] != n or W_astro.shape != (m, n):
        raise DimensionError(f"write_batch: K {K.shape}, V {V.shape}, W_astro {W_astro.shape}")
    fK = phi(K, fmap)
    return WriteState(
        h_neuron=(fK.T @ V) / m,
        h_astro=(W_astro @ V) / m,
        g_raw=fK.sum(axis=0, keepdims=True),
        t=n,
    )


def hebbian_weight(state: WriteState, kind: SquashKind = SquashKind.SIGMOID) -> Matrix:
    return squash(state.h_neuron + state.h_astro, kind)


def presyn_plasticity(state: WriteState, alpha: float) -> Matrix:
    """Elementwise ``g_raw ** alpha`` (1 x m)."""
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    g_raw = state.g_raw
    if np.any(g_raw < 0):
        j = int(np.argmin(g_raw))
        raise NegativePresynapticError(
            f"g_raw[{j}] = {g_raw.flat[j]:.3g} < 0; negative key sums only occur with the "
            f"identity feature map"
        )
    return np.power(g_raw, alpha)


def per_token_presyn_variant(K: Matrix, alpha: float,
                             fmap: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE) -> Matrix:
    """Experimental: accumulate ``phi(k_t) ** alpha`` inside the token loop.

    Not used by the attention path, which raises the total sum to ``alpha``
    once at read time.
    """
    fK = phi(np.asarray(K, dtype=np.float64), fmap)
    return np.power(fK, alpha).sum(axis=0, keepdims=True)
