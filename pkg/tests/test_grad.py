import numpy as np
import pytest

from astromorph.attention import AttentionConfig
from astromorph.encoder import EncoderConfig, EncoderParams, ForwardCache, encoder_forward
from astromorph.grad import (MissingCacheError, backward, central_difference, fd_check, gradcheck_rows,
                             loss_and_grads, masked_reciprocal_backward, pow_backward, relative_error, tiny_config,
                             zero_grads)
from astromorph.linalg import SeededRng


def test_zero_score_grad_gives_zero_grads(rng):
    cfg = tiny_config(0.0)
    params = EncoderParams.init(cfg, SeededRng(0))
    _, cache = encoder_forward(params, cfg, rng.normal((2, 5, 4)))
    grads = backward(cache, np.zeros((2, 3)))
    zeros = zero_grads(params)
    assert grads.keys() == zeros.keys()
    assert all(not np.any(g) for g in grads.values())


def test_one_dimensional_hand_chain():
    # with d = 1 both layer norms output their bias, so only the biases and the classifier see gradient
    cfg = EncoderConfig(attn=AttentionConfig(d=1, m=1, n_max=1), classes=2)
    params = EncoderParams.init(cfg, SeededRng(3))
    params.layers[0].ln2_bias[...] = 0.7
    X = np.array([[[0.4]]])
    probs, cache = encoder_forward(params, cfg, X)
    W = params.classifier
    s = 0.7 * W[0]
    p = np.exp(s) / np.exp(s).sum()
    assert np.allclose(probs[0], p, rtol=0, atol=1e-15)
    ds = p - np.array([0.0, 1.0])
    grads = backward(cache, ds[None])
    assert np.allclose(grads["classifier"], 0.7 * ds[None], atol=1e-15)
    assert np.allclose(grads["layer0.ln2_bias"], ds @ W.T, atol=1e-15)
    for name, g in grads.items():
        if name not in ("classifier", "layer0.ln2_bias"):
            assert not np.any(g), name


def test_central_difference_on_quadratic():
    a = np.array([1.5, -2.0])
    f = lambda: float(np.sum(a ** 2))
    assert abs(central_difference(f, a, (0,), 1e-4) - 3.0) < 1e-9
    assert abs(central_difference(f, a, (1,), 1e-4) + 4.0) < 1e-9
    assert np.array_equal(a, [1.5, -2.0])


def test_relative_error_floor():
    assert relative_error(0.0, 0.0) == 0.0
    assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert relative_error(2.0, 1.0) == 0.5


def test_masked_reciprocal_backward():
    p = np.array([[0.5], [0.0]])
    keep = np.array([[True], [False]])
    d = masked_reciprocal_backward(p, keep, np.array([[1.0], [5.0]]))
    assert np.array_equal(d, [[-0.25], [0.0]])


def test_pow_backward_guard():
    d = pow_backward(np.array([4.0, 0.0]), 0.5, np.ones(2))
    assert d[0] == 0.25
    assert np.isfinite(d[1]) and d[1] > 0


def test_gradcheck_tiny_model():
    rows = gradcheck_rows(tiny_config(), seed=0)
    assert {r[0] for r in rows} == set(EncoderParams.init(tiny_config(), SeededRng(0)).named())
    assert max(r[4] for r in rows) < 1e-5


@pytest.mark.parametrize("ablation", [dict(use_positional=False), dict(alpha=1.0), dict(squash="identity")])
def test_gradcheck_variants(ablation):
    cfg = EncoderConfig(attn=AttentionConfig(d=4, m=3, n_max=4, heads=2, **ablation), classes=2)
    rows = gradcheck_rows(cfg, seed=7, coords=4, train_mode=False)
    assert max(r[4] for r in rows) < 1e-5


def test_small_key_sum_stress():
    cfg = EncoderConfig(attn=AttentionConfig(d=2, m=3, n_max=5), classes=2)
    params = EncoderParams.init(cfg, SeededRng(1))
    hp = params.layers[0].heads[0]
    hp.w_k[...] = -5.0 * np.abs(hp.w_k) - 2.0
    X = np.abs(SeededRng(2).normal((1, 5, 2))) + 0.5
    _, cache = encoder_forward(params, cfg, X)
    assert cache.layers[0].heads[0].g_raw.max() < 1e-2
    idx = [(i, j) for i in range(2) for j in range(3)]
    res = fd_check(params, cfg, X, np.array([1]), "layer0.head0.w_k", idx)
    assert max(e for *_, e in res) < 1e-3


def test_missing_cache():
    cfg = tiny_config()
    params = EncoderParams.init(cfg, SeededRng(0))
    with pytest.raises(MissingCacheError):
        backward(ForwardCache(cfg=cfg, params=params), np.zeros((1, 3)))


def test_gradients_deterministic(rng):
    cfg = tiny_config()
    params = EncoderParams.init(cfg, SeededRng(0))
    X = rng.normal((3, 5, 4))
    y = np.array([0, 2, 1])
    l1, g1 = loss_and_grads(params, cfg, X, y, True, SeededRng(9))
    l2, g2 = loss_and_grads(params, cfg, X, y, True, SeededRng(9))
    assert l1 == l2
    assert all(np.array_equal(g1[k], g2[k]) for k in g1)
