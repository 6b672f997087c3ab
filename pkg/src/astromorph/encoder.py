"""Encoder block around astromorphic attention and the classification head.

Forward order per layer: multi-head attention (residual inside) -> dropout
(train only) -> layer norm -> FFN + residual -> layer norm. After the last
layer tokens are mean-pooled, projected by the classifier and softmaxed.

The forward pass is batched over a leading axis and keeps every
intermediate needed by :mod:`astromorph.grad`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .attention import AttentionConfig, HeadParams, head_config, init_attention_params, positional_activity
from .features import as_float, elu, phi, softmax_rows, squash
from .linalg import DimensionError, Matrix, NonFiniteError, PathLike, SeededRng, read_matrix_csv, write_matrix_csv
from .plasticity import NegativePresynapticError
from .positional import PositionalBasis

LN_EPS = 1e-5


@dataclass
class EncoderConfig:
    attn: AttentionConfig
    classes: int = 2
    d_ff: Optional[int] = None
    dropout_p: float = 0.0
    depth: int = 1
    ln_eps: float = LN_EPS

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.attn.d
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.depth < 1 or self.classes < 2:
            raise ValueError("depth must be >= 1 and classes >= 2")

    def to_dict(self) -> dict:
        return {"attn": self.attn.to_dict(), "classes": self.classes, "d_ff": self.d_ff,
                "dropout_p": self.dropout_p, "depth": self.depth, "ln_eps": self.ln_eps}

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        rest = {k: data[k] for k in ("classes", "d_ff", "dropout_p", "depth", "ln_eps") if k in data}
        return cls(attn=AttentionConfig.from_dict(data["attn"]), **rest)


@dataclass
class LayerParams:
    heads: list[HeadParams]
    ln1_gain: Matrix
    ln1_bias: Matrix
    ln2_gain: Matrix
    ln2_bias: Matrix
    ffn_w1: Matrix
    ffn_w2: Matrix


@dataclass
class EncoderParams:
    layers: list[LayerParams]
    classifier: Matrix

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: SeededRng) -> "EncoderParams":
        d, dff = cfg.attn.d, cfg.d_ff
        layers = []
        for i in range(cfg.depth):
            r = rng.child(f"layer{i}")
            b1, b2 = 1.0 / math.sqrt(d), 1.0 / math.sqrt(dff)
            layers.append(LayerParams(
                heads=init_attention_params(cfg.attn, r),
                ln1_gain=np.ones((1, d)), ln1_bias=np.zeros((1, d)),
                ln2_gain=np.ones((1, d)), ln2_bias=np.zeros((1, d)),
                ffn_w1=r.child("ffn_w1").uniform(-b1, b1, (d, dff)),
                ffn_w2=r.child("ffn_w2").uniform(-b2, b2, (dff, d)),
            ))
        bound = 1.0 / math.sqrt(d)
        return cls(layers=layers,
                   classifier=rng.child("classifier").uniform(-bound, bound, (d, cfg.classes)))

    def named(self) -> dict[str, np.ndarray]:
        """Flat name -> array mapping; the arrays are the live parameters."""
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            for j, hp in enumerate(layer.heads):
                pre = f"layer{i}.head{j}"
                out[f"{pre}.w_k"] = hp.w_k
                out[f"{pre}.w_q"] = hp.w_q
                out[f"{pre}.w_v"] = hp.w_v
                out[f"{pre}.M"] = hp.basis.M
            for name in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias", "ffn_w1", "ffn_w2"):
                out[f"layer{i}.{name}"] = getattr(layer, name)
        out["classifier"] = self.classifier
        return out

    def copy(self, dtype=None) -> "EncoderParams":
        """Deep copy, optionally cast (e.g. to ``np.longdouble`` for oracles)."""
        def cp(a):
            return a.astype(dtype) if dtype is not None else a.copy()

        layers = []
        for layer in self.layers:
            heads = [HeadParams(cp(hp.w_k), cp(hp.w_q), cp(hp.w_v),
                                PositionalBasis(hp.basis.m, hp.basis.n_max, cp(hp.basis.M),
                                                cp(hp.basis.p_pos), hp.basis.clip_k))
                     for hp in layer.heads]
            layers.append(LayerParams(heads, *(cp(getattr(layer, n)) for n in
                                               ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias",
                                                "ffn_w1", "ffn_w2"))))
        return EncoderParams(layers, cp(self.classifier))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def ffn(x: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    return elu(x @ w1) @ w2


@dataclass
class HeadCache:
    X: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    fK: np.ndarray
    fQ: np.ndarray
    W_astro: np.ndarray
    H: np.ndarray
    g_raw: np.ndarray
    g: np.ndarray
    C: np.ndarray
    keep: np.ndarray
    p_mod: np.ndarray
    num: np.ndarray


@dataclass
class LayerCache:
    X: np.ndarray
    heads: list[HeadCache]
    L: np.ndarray
    drop_mask: Optional[np.ndarray]
    ln1_xhat: np.ndarray
    ln1_rstd: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    E: np.ndarray
    ln2_xhat: np.ndarray
    ln2_rstd: np.ndarray
    Z: np.ndarray


@dataclass
class ForwardCache:
    cfg: EncoderConfig
    params: EncoderParams
    layers: list[LayerCache] = field(default_factory=list)
    pooled: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    batched: bool = True


def head_forward(hp: HeadParams, X: np.ndarray, cfg: AttentionConfig) -> tuple[np.ndarray, HeadCache]:
    """Batched single head: X is (B, N, d_h); returns ``L - X`` and the cache."""
    n = X.shape[-2]
    m = cfg.m
    K = X @ hp.w_k
    Q = X @ hp.w_q
    V = X @ hp.w_v
    fK = phi(K, cfg.fmap)
    fQ = phi(Q, cfg.fmap)
    W_astro = positional_activity(hp, cfg, n)
    S = (np.swapaxes(fK, -1, -2) @ V + W_astro @ V) / m
    H = squash(S, cfg.squash)
    g_raw = fK.sum(axis=-2, keepdims=True)
    if np.any(g_raw < 0):
        raise NegativePresynapticError("negative key sum under the identity feature map")
    g = np.power(g_raw, cfg.alpha)
    C = fQ @ np.swapaxes(g, -1, -2)
    keep = C > cfg.eps
    p_mod = np.where(keep, 1.0 / np.where(keep, C, 1.0), 0.0)
    num = fQ @ H
    A = num * p_mod
    return A, HeadCache(X, K, Q, V, fK, fQ, W_astro, H, g_raw, g, C, keep, p_mod, num)


def _ln_forward(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + eps)
    xhat = (x - mu) * rstd
    return xhat * gain + bias, xhat, rstd


def layer_forward(lp: LayerParams, X: np.ndarray, cfg: EncoderConfig, train_mode: bool,
                  rng: Optional[SeededRng]) -> tuple[np.ndarray, LayerCache]:
    acfg = cfg.attn
    dh = acfg.d_head
    head_cfg = head_config(acfg)
    outs, hcaches = [], []
    for j, hp in enumerate(lp.heads):
        A, hc = head_forward(hp, X[..., j * dh:(j + 1) * dh], head_cfg)
        outs.append(A)
        hcaches.append(hc)
    L = np.concatenate(outs, axis=-1) + X
    mask = None
    Ld = L
    if train_mode and cfg.dropout_p > 0.0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = rng.random(L.shape) >= cfg.dropout_p
        mask = keep / (1.0 - cfg.dropout_p)
        Ld = L * mask
    Y, x1, r1 = _ln_forward(Ld, lp.ln1_gain, lp.ln1_bias, cfg.ln_eps)
    U = Y @ lp.ffn_w1
    E = elu(U)
    R = E @ lp.ffn_w2 + Y
    Z, x2, r2 = _ln_forward(R, lp.ln2_gain, lp.ln2_bias, cfg.ln_eps)
    return Z, LayerCache(X, hcaches, L, mask, x1, r1, Y, U, E, x2, r2, Z)


def encoder_forward(params: EncoderParams, cfg: EncoderConfig, X: np.ndarray,
                    train_mode: bool = False, rng: Optional[SeededRng] = None
                    ) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities for X of shape (N, d) -> (1, classes) or (B, N, d) -> (B, classes)."""
    X = as_float(X)
    batched = X.ndim == 3
    if not batched:
        X = X[None]
    if X.ndim != 3 or X.shape[-1] != cfg.attn.d:
        raise DimensionError(f"expected (B, N, {cfg.attn.d}) input, got {X.shape}")
    if X.shape[1] > cfg.attn.n_max:
        raise DimensionError(f"{X.shape[1]} tokens exceed n_max={cfg.attn.n_max}")
    cache = ForwardCache(cfg=cfg, params=params, batched=batched)
    h = X
    for i, lp in enumerate(params.layers):
        layer_rng = rng.child(f"dropout{i}") if rng is not None else None
        h, lc = layer_forward(lp, h, cfg, train_mode, layer_rng)
        cache.layers.append(lc)
    pooled = h.mean(axis=1)
    probs = softmax_rows(pooled @ params.classifier)
    if not np.all(np.isfinite(probs)):
        raise NonFiniteError("non-finite class probabilities")
    cache.pooled = pooled
    cache.probs = probs
    return probs, cache


def save_checkpoint(directory: PathLike, params: EncoderParams, cfg: EncoderConfig,
                    seed: Optional[int] = None) -> None:
    """Named CSV matrices plus ``manifest.json`` (config, shapes, seed)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    named = params.named()
    for name, arr in named.items():
        write_matrix_csv(d / f"{name}.csv", arr)
    manifest = {
        "schema": 1,
        "config": cfg.to_dict(),
        "seed": seed,
        "matrices": {name: list(arr.shape) for name, arr in named.items()},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory: PathLike) -> tuple[EncoderParams, EncoderConfig]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    cfg = EncoderConfig.from_dict(manifest["config"])
    params = EncoderParams.init(cfg, SeededRng(0))
    for name, arr in params.named().items():
        loaded = read_matrix_csv(d / f"{name}.csv")
        if loaded.shape != arr.shape:
            raise DimensionError(f"{name}: checkpoint shape {loaded.shape}, expected {arr.shape}")
        arr[...] = loaded
    return params, cfg
