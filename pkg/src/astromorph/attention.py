"""Astromorphic attention (write then read) and the two baseline attentions.

Per head, write mode accumulates

    H = squash((phi(K)^T V + W_astro V) / m),   g = (sum_t phi(k_t)) ** alpha

and read mode returns

    L = rowscale(phi(Q) H, 1 / (phi(Q) g^T)) + X

where the reciprocal is masked to zero for calcium responses <= eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .features import FeatureMapKind, SquashKind, phi, softmax_rows
from .linalg import DimensionError, Matrix, SeededRng
from .plasticity import WriteState, hebbian_weight, presyn_plasticity, write_batch
from .positional import DEFAULT_CLIP_K, PositionalBasis, w_astro

MASK_EPS = 1e-12


class DegenerateWriteError(RuntimeError):
    """Every token's calcium response was masked; the write phase stored nothing."""


@dataclass
class AttentionConfig:
    d: int
    m: int
    n_max: int
    heads: int = 1
    alpha: float = 0.25
    fmap: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE
    squash: SquashKind = SquashKind.SIGMOID
    use_positional: bool = True
    clip_k: int = DEFAULT_CLIP_K
    eps: float = MASK_EPS

    def __post_init__(self):
        self.fmap = FeatureMapKind(self.fmap)
        self.squash = SquashKind(self.squash)
        if self.heads < 1 or self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.m < 1 or self.n_max < 1:
            raise ValueError(f"m and n_max must be >= 1 (m={self.m}, n_max={self.n_max})")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        return {
            "d": self.d, "m": self.m, "n_max": self.n_max, "heads": self.heads,
            "alpha": self.alpha, "fmap": self.fmap.value, "squash": self.squash.value,
            "use_positional": self.use_positional, "clip_k": self.clip_k, "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AttentionConfig":
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass
class HeadParams:
    """Projections for one head: keys/queries d_h x m, values d_h x d_h."""

    w_k: Matrix
    w_q: Matrix
    w_v: Matrix
    basis: PositionalBasis

    @classmethod
    def init(cls, cfg: AttentionConfig, rng: SeededRng) -> "HeadParams":
        dh, m = cfg.d_head, cfg.m
        bound = 1.0 / math.sqrt(dh)
        return cls(
            w_k=rng.child("w_k").uniform(-bound, bound, (dh, m)),
            w_q=rng.child("w_q").uniform(-bound, bound, (dh, m)),
            w_v=rng.child("w_v").uniform(-bound, bound, (dh, dh)),
            basis=PositionalBasis.init(m, cfg.n_max, rng.child("basis"), cfg.clip_k),
        )


def init_attention_params(cfg: AttentionConfig, rng: SeededRng) -> list[HeadParams]:
    return [HeadParams.init(cfg, rng.child(f"head{i}")) for i in range(cfg.heads)]


def calcium_response(h: Matrix, g: Matrix) -> Matrix:
    """``C = h g^T``: N x m queries against the 1 x m plasticity vector."""
    h = np.asarray(h, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64).reshape(1, -1)
    if h.shape[-1] != g.shape[1]:
        raise DimensionError(f"calcium_response: h {h.shape} vs g {g.shape}")
    return h @ g.T


def modulation_weight(c: Matrix, eps: float = MASK_EPS) -> Matrix:
    """Masked reciprocal: ``1 / c`` where ``c > eps``, else 0."""
    c = np.asarray(c, dtype=np.float64)
    keep = c > eps
    return np.where(keep, 1.0 / np.where(keep, c, 1.0), 0.0)


def positional_activity(head: HeadParams, cfg: AttentionConfig, n: int) -> Matrix:
    if not cfg.use_positional:
        return np.zeros((cfg.m, n))
    return w_astro(head.basis, cfg.fmap, n)


def write(head: HeadParams, X: Matrix, cfg: AttentionConfig) -> WriteState:
    X = _check_input(X, cfg)
    K = X @ head.w_k
    V = X @ head.w_v
    return write_batch(K, V, positional_activity(head, cfg, X.shape[0]), cfg.fmap)


def read(head: HeadParams, state: WriteState, X: Matrix, cfg: AttentionConfig) -> Matrix:
    X = _check_input(X, cfg)
    if state.t != X.shape[0]:
        raise DimensionError(f"state holds {state.t} tokens but X has {X.shape[0]} rows")
    h = phi(X @ head.w_q, cfg.fmap)
    H = hebbian_weight(state, cfg.squash)
    g = presyn_plasticity(state, cfg.alpha)
    c = calcium_response(h, g)
    p_mod = modulation_weight(c, cfg.eps)
    if not np.any(p_mod):
        raise DegenerateWriteError("all calcium responses are <= eps")
    return (h @ H) * p_mod + X


def astromorphic_attention(head: HeadParams, X: Matrix, cfg: AttentionConfig) -> Matrix:
    """Single-head write followed by read; output has the shape of ``X``."""
    return read(head, write(head, X, cfg), X, cfg)


def multi_head(heads: Sequence[HeadParams], X: Matrix, cfg: AttentionConfig) -> Matrix:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != cfg.d:
        raise DimensionError(f"X has {X.shape[1]} columns, config d={cfg.d}")
    if len(heads) != cfg.heads:
        raise ValueError(f"{len(heads)} head parameter sets for heads={cfg.heads}")
    head_cfg = head_config(cfg)
    dh = cfg.d_head
    outs = [astromorphic_attention(hp, X[:, i * dh:(i + 1) * dh], head_cfg)
            for i, hp in enumerate(heads)]
    return np.concatenate(outs, axis=1)


def linearized_attention(w_q: Matrix, w_k: Matrix, w_v: Matrix, X: Matrix,
                         fmap: FeatureMapKind = FeatureMapKind.ELU_PLUS_ONE,
                         eps: float = MASK_EPS) -> Matrix:
    """Kernelized attention computed right-to-left in O(N D^2)."""
    X = np.asarray(X, dtype=np.float64)
    fQ = phi(X @ w_q, fmap)
    fK = phi(X @ w_k, fmap)
    V = X @ w_v
    return linearized_core(fQ, fK, V, eps)


def linearized_core(fQ: Matrix, fK: Matrix, V: Matrix, eps: float = MASK_EPS) -> Matrix:
    num = fQ @ (fK.T @ V)
    den = fQ @ fK.sum(axis=0, keepdims=True).T
    return num * modulation_weight(den, eps)


def softmax_attention(w_q: Matrix, w_k: Matrix, w_v: Matrix, X: Matrix) -> Matrix:
    """Softmax attention scaled by the square root of the query width."""
    X = np.asarray(X, dtype=np.float64)
    return softmax_core(X @ w_q, X @ w_k, X @ w_v)


def softmax_core(Q: Matrix, K: Matrix, V: Matrix) -> Matrix:
    return softmax_rows(Q @ K.T / math.sqrt(Q.shape[1])) @ V


def head_config(cfg: AttentionConfig) -> AttentionConfig:
    if cfg.heads == 1:
        return cfg
    data = cfg.to_dict()
    data.update(d=cfg.d_head, heads=1)
    return AttentionConfig.from_dict(data)


def _check_input(X: Matrix, cfg: AttentionConfig) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected N x d_h input, got shape {X.shape}")
    if X.shape[0] > cfg.n_max:
        raise DimensionError(f"{X.shape[0]} tokens exceed n_max={cfg.n_max}")
    return X
