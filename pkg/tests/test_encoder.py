import numpy as np
import pytest

from astromorph.attention import AttentionConfig, multi_head
from astromorph.encoder import (EncoderConfig, EncoderParams, encoder_forward, ffn, layer_norm, load_checkpoint,
                                save_checkpoint)
from astromorph.features import elu
from astromorph.linalg import DimensionError, SeededRng


def _model(seed=0, dropout_p=0.0, d=8, heads=2, n_max=6):
    cfg = EncoderConfig(attn=AttentionConfig(d=d, m=5, n_max=n_max, heads=heads), classes=3,
                        dropout_p=dropout_p)
    return EncoderParams.init(cfg, SeededRng(seed, ("enc",))), cfg


def test_config_validation_and_roundtrip():
    cfg = EncoderConfig(attn=AttentionConfig(d=4, m=2, n_max=3), classes=4, dropout_p=0.2)
    assert cfg.d_ff == 16
    assert EncoderConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        EncoderConfig(attn=cfg.attn, dropout_p=1.0)
    with pytest.raises(ValueError):
        EncoderConfig(attn=cfg.attn, classes=1)


def test_layer_norm_statistics(rng):
    x = rng.normal((4, 7, 10), 3.0) + 2.0
    y = layer_norm(x, np.ones((1, 10)), np.zeros((1, 10)))
    assert np.max(np.abs(y.mean(axis=-1))) < 1e-12
    assert np.max(np.abs(y.var(axis=-1) - x.var(axis=-1) / (x.var(axis=-1) + 1e-5))) < 1e-12
    g, b = rng.normal((1, 10)), rng.normal((1, 10))
    assert np.allclose(layer_norm(x, g, b), y * g + b)


def test_ffn(rng):
    x, w1, w2 = rng.normal((3, 4)), rng.normal((4, 6)), rng.normal((6, 4))
    assert np.allclose(ffn(x, w1, w2), elu(x @ w1) @ w2)
    assert np.array_equal(ffn(np.zeros((2, 4)), w1, w2), np.zeros((2, 4)))


def test_probabilities(rng):
    params, cfg = _model()
    X = rng.normal((5, 6, 8))
    probs, _ = encoder_forward(params, cfg, X)
    assert probs.shape == (5, 3)
    assert np.all(probs >= 0)
    assert np.max(np.abs(probs.sum(axis=1) - 1)) < 1e-12
    single, _ = encoder_forward(params, cfg, X[2])
    assert single.shape == (1, 3)
    assert np.allclose(single[0], probs[2], rtol=0, atol=1e-14)


def test_forward_matches_manual_composition(rng):
    params, cfg = _model(seed=3)
    X = rng.normal((6, 8))
    lp = params.layers[0]
    L = multi_head(lp.heads, X, cfg.attn)
    Y = layer_norm(L, lp.ln1_gain, lp.ln1_bias)
    Z = layer_norm(ffn(Y, lp.ffn_w1, lp.ffn_w2) + Y, lp.ln2_gain, lp.ln2_bias)
    s = Z.mean(axis=0) @ params.classifier
    ref = np.exp(s - s.max()) / np.exp(s - s.max()).sum()
    probs, _ = encoder_forward(params, cfg, X)
    assert np.max(np.abs(probs[0] - ref)) < 1e-12


def test_determinism_and_dropout(rng):
    params, cfg = _model(dropout_p=0.3)
    X = rng.normal((2, 6, 8))
    a, _ = encoder_forward(params, cfg, X, True, SeededRng(5))
    b, _ = encoder_forward(params, cfg, X, True, SeededRng(5))
    c, _ = encoder_forward(params, cfg, X, True, SeededRng(6))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    ev, _ = encoder_forward(params, cfg, X, False)
    _, cfg0 = _model(dropout_p=0.0)
    p0, _ = encoder_forward(params, cfg0, X, True, SeededRng(5))
    assert np.array_equal(ev, p0)
    with pytest.raises(ValueError):
        encoder_forward(params, cfg, X, True, None)


def test_permutation_invariance_without_positional(rng):
    cfg = EncoderConfig(attn=AttentionConfig(d=8, m=5, n_max=6, heads=2, use_positional=False), classes=3)
    params = EncoderParams.init(cfg, SeededRng(1))
    X = rng.normal((6, 8))
    perm = np.array([4, 2, 0, 5, 1, 3])
    a, _ = encoder_forward(params, cfg, X)
    b, _ = encoder_forward(params, cfg, X[perm])
    assert np.max(np.abs(a - b)) < 1e-13


def test_finite_on_bounded_inputs():
    params, cfg = _model(seed=2)
    for seed in range(20):
        X = SeededRng(seed).uniform(-100, 100, (3, 6, 8))
        probs, _ = encoder_forward(params, cfg, X)
        assert np.all(np.isfinite(probs))


def test_shape_errors(rng):
    params, cfg = _model()
    with pytest.raises(DimensionError):
        encoder_forward(params, cfg, rng.normal((6, 7)))
    with pytest.raises(DimensionError):
        encoder_forward(params, cfg, rng.normal((7, 8)))


def test_checkpoint_roundtrip(tmp_path, rng):
    params, cfg = _model(seed=4)
    save_checkpoint(tmp_path, params, cfg, seed=4)
    loaded, cfg2 = load_checkpoint(tmp_path)
    assert cfg2 == cfg
    for name, arr in params.named().items():
        assert np.array_equal(loaded.named()[name], arr), name
    X = rng.normal((2, 6, 8))
    assert np.array_equal(encoder_forward(loaded, cfg2, X)[0], encoder_forward(params, cfg, X)[0])


def test_named_covers_every_slot():
    params, _ = _model(heads=2)
    names = set(params.named())
    for j in range(2):
        assert {f"layer0.head{j}.{s}" for s in ("w_k", "w_q", "w_v", "M")} <= names
    assert "classifier" in names and "layer0.ffn_w2" in names
