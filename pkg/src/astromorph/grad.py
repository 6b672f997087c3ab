"""Hand-written reverse pass for the encoder and a finite-difference checker.

Each forward op in :mod:`astromorph.encoder` has a matching vector-Jacobian
product here. ``backward`` walks them in reverse using the forward cache and
returns a gradient for every entry of ``EncoderParams.named()``.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .attention import AttentionConfig, HeadParams, head_config
from .encoder import EncoderConfig, EncoderParams, ForwardCache, HeadCache, LayerCache, encoder_forward
from .features import phi_grad, squash_grad_from_output
from .linalg import SeededRng
from .losses import cross_entropy_batch

POW_GUARD = 1e-12

GradSet = dict[str, np.ndarray]


class MissingCacheError(RuntimeError):
    pass


def zero_grads(params: EncoderParams) -> GradSet:
    return {name: np.zeros_like(arr) for name, arr in params.named().items()}


def _bsum(x: np.ndarray) -> np.ndarray:
    """Sum a (B, r, c) array over the batch axis."""
    return x.sum(axis=0)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def pow_backward(x: np.ndarray, alpha: float, dy: np.ndarray) -> np.ndarray:
    """VJP of ``x ** alpha`` with the base floored at ``POW_GUARD``."""
    return dy * alpha * np.power(np.maximum(x, POW_GUARD), alpha - 1.0)


def masked_reciprocal_backward(p_mod: np.ndarray, keep: np.ndarray, dp: np.ndarray) -> np.ndarray:
    # d(1/c) = -1/c^2 = -p^2; masked entries pass no gradient
    return np.where(keep, -dp * p_mod * p_mod, 0.0)


def layer_norm_backward(dy: np.ndarray, xhat: np.ndarray, rstd: np.ndarray,
                        gain: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns ``(dx, dgain, dbias)``."""
    axes = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=axes).reshape(gain.shape)
    dbias = dy.sum(axis=axes).reshape(gain.shape)
    dxhat = dy * gain
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def basis_backward(hp: HeadParams, cfg: AttentionConfig, n: int, d_wastro: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the full (m x n_max) basis from dL/dW_astro (m x n).

    ``W_astro = phi(a)^T`` with ``a = M^T D`` and ``D = M P M^T``; ``M``
    occurs three times, so three product-rule terms accumulate.
    """
    M, P = hp.basis.sliced(n)
    D = M @ P @ M.T
    a = M.T @ D
    da = d_wastro.T * phi_grad(a, cfg.fmap)
    dM = D @ da.T
    dD = M @ da
    dM += dD @ M @ P.T + dD.T @ M @ P
    full = np.zeros_like(hp.basis.M)
    full[:, :n] = dM
    return full


def head_backward(hp: HeadParams, hc: HeadCache, cfg: AttentionConfig,
                  dA: np.ndarray) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Reverse of ``head_forward``: returns dX and the head's parameter grads."""
    m = cfg.m
    n = hc.X.shape[-2]
    dnum = dA * hc.p_mod
    dp = (dA * hc.num).sum(axis=-1, keepdims=True)
    dC = masked_reciprocal_backward(hc.p_mod, hc.keep, dp)
    # C = fQ g^T and num = fQ H
    dfQ = dC @ hc.g + dnum @ _swap(hc.H)
    dg = _swap(dC) @ hc.fQ
    dH = _swap(hc.fQ) @ dnum
    dg_raw = pow_backward(hc.g_raw, cfg.alpha, dg)
    dS = dH * squash_grad_from_output(hc.H, cfg.squash) / m
    # S*m = fK^T V + W_astro V ; g_raw = sum_t fK
    dfK = hc.V @ _swap(dS) + dg_raw
    dV = hc.fK @ dS + hc.W_astro.T @ dS
    dK = dfK * phi_grad(hc.K, cfg.fmap)
    dQ = dfQ * phi_grad(hc.Q, cfg.fmap)
    grads = {
        "w_k": _bsum(_swap(hc.X) @ dK),
        "w_q": _bsum(_swap(hc.X) @ dQ),
        "w_v": _bsum(_swap(hc.X) @ dV),
    }
    if cfg.use_positional:
        d_wastro = _bsum(dS @ _swap(hc.V))
        grads["M"] = basis_backward(hp, cfg, n, d_wastro)
    else:
        grads["M"] = np.zeros_like(hp.basis.M)
    dX = dK @ hp.w_k.T + dQ @ hp.w_q.T + dV @ hp.w_v.T
    return dX, grads


def layer_backward(lp, lc: LayerCache, cfg: EncoderConfig, dZ: np.ndarray,
                   prefix: str, grads: GradSet) -> np.ndarray:
    dR, grads[f"{prefix}.ln2_gain"], grads[f"{prefix}.ln2_bias"] = layer_norm_backward(
        dZ, lc.ln2_xhat, lc.ln2_rstd, lp.ln2_gain)
    grads[f"{prefix}.ffn_w2"] = _bsum(_swap(lc.E) @ dR)
    dU = (dR @ lp.ffn_w2.T) * np.where(lc.U >= 0.0, 1.0, lc.E + 1.0)
    grads[f"{prefix}.ffn_w1"] = _bsum(_swap(lc.Y) @ dU)
    dY = dR + dU @ lp.ffn_w1.T
    dLd, grads[f"{prefix}.ln1_gain"], grads[f"{prefix}.ln1_bias"] = layer_norm_backward(
        dY, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_gain)
    dL = dLd * lc.drop_mask if lc.drop_mask is not None else dLd
    acfg = cfg.attn
    hcfg = head_config(acfg)
    dh = acfg.d_head
    dX = dL.copy()
    for j, (hp, hc) in enumerate(zip(lp.heads, lc.heads)):
        sl = slice(j * dh, (j + 1) * dh)
        dXh, hg = head_backward(hp, hc, hcfg, dL[..., sl])
        dX[..., sl] += dXh
        for name, g in hg.items():
            grads[f"{prefix}.head{j}.{name}"] = g
    return dX


def backward(cache: ForwardCache, score_grad: np.ndarray) -> GradSet:
    """Gradients of a scalar loss given its gradient w.r.t. the pre-softmax scores."""
    if cache.pooled is None or len(cache.layers) != len(cache.params.layers):
        raise MissingCacheError("forward cache is incomplete; run encoder_forward first")
    params, cfg = cache.params, cache.cfg
    ds = np.asarray(score_grad, dtype=np.float64).reshape(cache.pooled.shape[0], -1)
    grads: GradSet = {}
    grads["classifier"] = cache.pooled.T @ ds
    dpooled = ds @ params.classifier.T
    n = cache.layers[-1].Z.shape[1]
    dZ = np.repeat(dpooled[:, None, :] / n, n, axis=1)
    for i in reversed(range(len(params.layers))):
        dZ = layer_backward(params.layers[i], cache.layers[i], cfg, dZ, f"layer{i}", grads)
    return {name: grads[name] for name in params.named()}


def loss_and_grads(params: EncoderParams, cfg: EncoderConfig, X: np.ndarray, labels: np.ndarray,
                   train_mode: bool = False, rng: Optional[SeededRng] = None
                   ) -> tuple[float, GradSet]:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    probs, cache = encoder_forward(params, cfg, X, train_mode, rng)
    loss, ds = cross_entropy_batch(probs, np.atleast_1d(labels))
    return float(loss), backward(cache, ds)


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def central_difference(f: Callable[[], float], arr: np.ndarray, index: tuple, h: float) -> float:
    """``(f(theta + h) - f(theta - h)) / 2h`` perturbing ``arr[index]`` in place."""
    old = arr[index]
    try:
        arr[index] = old + h
        fp = f()
        arr[index] = old - h
        fm = f()
    finally:
        arr[index] = old
    return (fp - fm) / (2.0 * h)


def fd_check(params: EncoderParams, cfg: EncoderConfig, X: np.ndarray, labels: np.ndarray,
             name: str, indices: Sequence[tuple], h_rel: float = 1e-6,
             train_mode: bool = False, seed: Optional[int] = None,
             oracle_dtype=np.longdouble) -> list[tuple[float, float, float]]:
    """Compare analytic and central-difference gradients at ``indices`` of ``name``.

    Returns ``(analytic, numeric, rel_err)`` per index. The analytic side is
    the float64 reverse pass; the difference quotient is evaluated on a copy
    of the model cast to ``oracle_dtype`` so that roundoff in the loss stays
    well below the step size. In train mode every loss evaluation reuses
    ``seed``, keeping the dropout mask fixed. Step: ``h_rel * max(|theta|, 1)``.
    """
    def rng():
        return SeededRng(seed) if seed is not None else None

    _, grads = loss_and_grads(params, cfg, X, labels, train_mode, rng())
    oracle = params.copy(dtype=oracle_dtype)
    Xo = np.asarray(X).astype(oracle_dtype)
    arr = oracle.named()[name]

    def loss() -> float:
        return loss_value(oracle, cfg, Xo, labels, train_mode, rng())

    out = []
    for idx in indices:
        idx = tuple(int(i) for i in idx)
        h = h_rel * max(abs(float(arr[idx])), 1.0)
        numeric = float(central_difference(loss, arr, idx, h))
        analytic = float(grads[name][idx])
        out.append((analytic, numeric, relative_error(analytic, numeric)))
    return out


def loss_value(params: EncoderParams, cfg: EncoderConfig, X: np.ndarray, labels: np.ndarray,
               train_mode: bool = False, rng: Optional[SeededRng] = None):
    """Mean cross-entropy, in whatever float precision ``params`` and ``X`` carry."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    probs, _ = encoder_forward(params, cfg, X, train_mode, rng)
    return cross_entropy_batch(probs, np.atleast_1d(labels))[0]


def tiny_config(dropout_p: float = 0.1) -> EncoderConfig:
    """d=4, m=6, N=5, two heads, three classes."""
    return EncoderConfig(attn=AttentionConfig(d=4, m=6, n_max=5, heads=2), classes=3, dropout_p=dropout_p)


def gradcheck_rows(cfg: EncoderConfig, seed: int, coords: int = 5, batch: int = 2,
                   h_rel: float = 1e-6, train_mode: bool = True) -> list[tuple[str, tuple, float, float, float]]:
    """Finite-difference check of ``coords`` random entries of every parameter slot.

    Rows are ``(param, index, analytic, numeric, rel_err)``.
    """
    rng = SeededRng(seed, ("gradcheck",))
    params = EncoderParams.init(cfg, rng.child("params"))
    X = rng.child("x").normal((batch, cfg.attn.n_max, cfg.attn.d))
    labels = rng.child("labels").integers(0, cfg.classes, size=batch)
    pick = rng.child("coords")
    rows = []
    for name, arr in params.named().items():
        flat = pick.integers(0, arr.size, size=coords)
        idxs = [np.unravel_index(int(f), arr.shape) for f in flat]
        res = fd_check(params, cfg, X, labels, name, idxs, h_rel=h_rel,
                       train_mode=train_mode, seed=seed)
        rows.extend((name, tuple(int(i) for i in idx), a, n, e) for idx, (a, n, e) in zip(idxs, res))
    return rows
