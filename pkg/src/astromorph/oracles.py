"""Slow reference implementations used only by tests and ``selftest``.

Everything here is written with explicit Python loops over scalars so it
shares no arithmetic path with the vectorized production code. The
quadratic attention-weight construction lives here and nowhere else.
"""

from __future__ import annotations

import math

import numpy as np


def phi_scalar(x: float) -> float:
    return x + 1.0 if x >= 0.0 else math.exp(x)


def sigmoid_scalar(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def matmul_loop(a, b) -> np.ndarray:
    a, b = np.asarray(a, float), np.asarray(b, float)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def col_sum_loop(a) -> np.ndarray:
    a = np.asarray(a, float)
    out = np.zeros((1, a.shape[1]))
    for j in range(a.shape[1]):
        for i in range(a.shape[0]):
            out[0, j] += a[i, j]
    return out


def row_scale_loop(a, col) -> np.ndarray:
    a = np.asarray(a, float)
    col = np.asarray(col, float).reshape(-1)
    out = np.zeros_like(a)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[i, j] = a[i, j] * col[i]
    return out


def _map(a, f) -> np.ndarray:
    a = np.asarray(a, float)
    out = np.empty_like(a)
    for idx in np.ndindex(a.shape):
        out[idx] = f(float(a[idx]))
    return out


def linear_attention_weights(fQ, fK) -> np.ndarray:
    """Explicit N x N weights ``phi(q_i).phi(k_j) / sum_j' phi(q_i).phi(k_j')``."""
    n = fQ.shape[0]
    sims = matmul_loop(fQ, np.asarray(fK).T)
    w = np.zeros((n, n))
    for i in range(n):
        den = sum(sims[i, j] for j in range(n))
        for j in range(n):
            w[i, j] = sims[i, j] / den if den > 1e-12 else 0.0
    return w


def linearized_attention_quadratic(w_q, w_k, w_v, X, identity_map: bool = False) -> np.ndarray:
    """Kernelized attention built from the explicit N x N weight matrix, O(N^2 D)."""
    f = (lambda x: x) if identity_map else phi_scalar
    fQ = _map(matmul_loop(X, w_q), f)
    fK = _map(matmul_loop(X, w_k), f)
    V = matmul_loop(X, w_v)
    return matmul_loop(linear_attention_weights(fQ, fK), V)


def distance_matrix(n: int, k: int) -> np.ndarray:
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = max(-k, min(k, j - i)) / k
    return out


def w_astro_loop(M, P) -> np.ndarray:
    """``phi((M^T M P M^T))^T`` composed one product at a time."""
    MT = np.asarray(M, float).T
    D = matmul_loop(matmul_loop(M, P), MT)
    a = matmul_loop(MT, D)
    return _map(a, phi_scalar).T


def astromorphic_token_loop(w_k, w_q, w_v, X, W_astro, alpha: float, squash: bool = True,
                            identity_map: bool = False, eps: float = 1e-12) -> np.ndarray:
    """Per-token write then per-token read, scalar arithmetic throughout.

    Returns ``L`` including the residual.
    """
    X = np.asarray(X, float)
    f = (lambda x: x) if identity_map else phi_scalar
    n, dh = X.shape
    m = w_k.shape[1]
    K = matmul_loop(X, w_k)
    Q = matmul_loop(X, w_q)
    V = matmul_loop(X, w_v)
    S = [[0.0] * dh for _ in range(m)]
    g_raw = [0.0] * m
    for t in range(n):
        h = [f(K[t, a]) for a in range(m)]
        for a in range(m):
            g_raw[a] += h[a]
            for c in range(dh):
                S[a][c] += (h[a] * V[t, c] + W_astro[a, t] * V[t, c]) / m
    H = [[sigmoid_scalar(S[a][c]) if squash else S[a][c] for c in range(dh)] for a in range(m)]
    g = [x ** alpha for x in g_raw]
    out = np.zeros((n, dh))
    for i in range(n):
        hq = [f(Q[i, a]) for a in range(m)]
        c_i = sum(hq[a] * g[a] for a in range(m))
        p = 1.0 / c_i if c_i > eps else 0.0
        for c in range(dh):
            out[i, c] = p * sum(hq[a] * H[a][c] for a in range(m)) + X[i, c]
    return out
