import csv
import json

import numpy as np
import pytest

from astromorph import train
from astromorph.attention import AttentionConfig
from astromorph.encoder import EncoderConfig, EncoderParams
from astromorph.features import SquashKind
from astromorph.grad import tiny_config, zero_grads
from astromorph.linalg import SeededRng
from astromorph.train import Ablation, DivergenceError, SyntheticTask, Task, TrainConfig


def test_label_examples():
    assert train.majority_label([0, 2, 1, 4], 2) == 0
    assert train.majority_label([1, 3, 0], 2) == 1
    assert train.majority_label([0, 1], 2) == 0
    assert train.first_token_label([5, 0, 0, 0], 2) == 1
    assert train.first_token_label([5, 1, 1], 3) == 2
    assert train.copycount_label([3, 3, 1, 2, 5, 3]) == 1
    assert train.copycount_label([3, 1, 2, 3, 5, 4]) == 0


def test_task_spec_validation():
    with pytest.raises(ValueError):
        SyntheticTask(Task.MAJORITY, vocab=15, classes=2)
    with pytest.raises(ValueError):
        SyntheticTask(Task.COPYCOUNT, vocab=12, classes=3)
    with pytest.raises(ValueError):
        SyntheticTask(Task.FIRST_TOKEN, seq_len=31)


@pytest.mark.parametrize("task", list(Task))
def test_generated_labels_balanced_and_correct(task):
    spec = SyntheticTask(task)
    data = train.make_task(spec, seed=0, count=10_000)
    labels = np.array([y for _, y in data])
    assert abs(labels.mean() - 0.5) <= 0.02
    for toks, y in data[:500]:
        assert toks.shape == (spec.seq_len,)
        assert toks.min() >= 0 and toks.max() < spec.vocab
        assert train.label_of(spec, toks) == y


def test_first_token_bag_is_uninformative():
    spec = SyntheticTask(Task.FIRST_TOKEN)
    for toks, y in train.make_task(spec, seed=1, count=200):
        assert np.array_equal(np.bincount(toks % 2, minlength=2), [16, 16])
        perm = np.concatenate([[0], 1 + SeededRng(int(toks.sum())).permutation(31)])
        assert train.label_of(spec, toks[perm]) == y


def test_majority_label_is_strict():
    spec = SyntheticTask(Task.MAJORITY, classes=4, vocab=16)
    for toks, y in train.make_task(spec, seed=2, count=300):
        counts = np.bincount(toks % 4, minlength=4)
        assert counts[y] > np.delete(counts, y).max()


def test_make_task_deterministic():
    spec = SyntheticTask(Task.COPYCOUNT)
    a = train.make_task(spec, 5, 50)
    b = train.make_task(spec, 5, 50)
    c = train.make_task(spec, 6, 50)
    assert all(np.array_equal(x[0], y[0]) and x[1] == y[1] for x, y in zip(a, b))
    assert not all(np.array_equal(x[0], y[0]) for x, y in zip(a, c))


def test_train_config_roundtrip_and_validation():
    tc = TrainConfig(task="majority", ablation="no_both", epochs=3)
    assert tc.task is Task.MAJORITY
    assert TrainConfig.from_dict(json.loads(json.dumps(tc.to_dict()))) == tc
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)


def test_apply_ablation():
    base = EncoderConfig(attn=AttentionConfig(d=4, m=2, n_max=4))
    assert train.apply_ablation(base, Ablation.FULL) == base
    a = train.apply_ablation(base, Ablation.NO_POSITIONAL).attn
    assert not a.use_positional and a.alpha == 0.25
    a = train.apply_ablation(base, Ablation.NO_NONLINEARITY).attn
    assert a.use_positional and a.alpha == 1.0 and a.squash is SquashKind.IDENTITY
    a = train.apply_ablation(base, Ablation.NO_BOTH).attn
    assert not a.use_positional and a.alpha == 1.0 and a.squash is SquashKind.IDENTITY
    assert base.attn.use_positional


def _params():
    return EncoderParams.init(tiny_config(), SeededRng(0))


def test_adamw_zero_gradient_no_decay():
    p = _params()
    before = {k: v.copy() for k, v in p.named().items()}
    train.optimizer_step(p, zero_grads(p), train.AdamState(), TrainConfig(weight_decay=0.0))
    assert all(np.array_equal(p.named()[k], before[k]) for k in before)


def test_adamw_decay_only():
    p = _params()
    before = {k: v.copy() for k, v in p.named().items()}
    tc = TrainConfig(lr=0.1, weight_decay=0.01)
    train.optimizer_step(p, zero_grads(p), train.AdamState(), tc)
    for k, v in p.named().items():
        assert np.array_equal(v, before[k] * (1.0 - 0.1 * 0.01))


def test_adamw_first_step():
    p = _params()
    before = {k: v.copy() for k, v in p.named().items()}
    grads = {k: SeededRng(1).child(k).normal(v.shape) for k, v in p.named().items()}
    tc = TrainConfig(lr=1e-2, weight_decay=0.0)
    state = train.AdamState()
    train.optimizer_step(p, grads, state, tc)
    assert state.step == 1
    for k, v in p.named().items():
        g = grads[k]
        assert np.allclose(v, before[k] - 1e-2 * g / (np.abs(g) + 1e-8), rtol=0, atol=1e-15)


def test_adamw_minimizes_quadratic():
    p = _params()
    tc = TrainConfig(lr=1e-2, weight_decay=0.0)
    state = train.AdamState()
    start = train.param_norm(p)
    for _ in range(2000):
        train.optimizer_step(p, {k: 2 * v for k, v in p.named().items()}, state, tc)
    assert train.param_norm(p) < 0.05 * start


def _small(**kw):
    base = dict(epochs=2, n_train=64, n_eval=64, batch=16, seq_len=8, vocab=4, seed=3)
    base.update(kw)
    tc = TrainConfig(**base)
    enc = EncoderConfig(attn=AttentionConfig(d=8, m=4, n_max=8, heads=2), classes=2, dropout_p=0.1)
    return tc, enc


def test_short_run_deterministic(tmp_path):
    tc, enc = _small()
    p1, _, r1 = train.fit(tc, enc)
    p2, _, r2 = train.fit(tc, enc)
    assert r1.history == r2.history
    assert all(np.array_equal(a, p2.named()[k]) for k, a in p1.named().items())
    assert r1.epochs_run == 2 and len(r1.history) == 2
    train.write_run(r1, tmp_path)
    with (tmp_path / "epochs.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == train.EPOCH_HEADER and len(rows) == 3
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["epochs_run"] == 2 and "history" not in rep and rep["epoch_csv"] == "epochs.csv"


def test_stop_at_threshold():
    tc, enc = _small(task="majority", epochs=30, n_train=256, n_eval=256, stop_at_threshold=True)
    _, _, rep = train.fit(tc, enc)
    assert rep.epochs_to_threshold is not None
    assert rep.epochs_run == rep.epochs_to_threshold
    assert rep.history[-1]["eval_acc"] >= train.ACC_THRESHOLD


def test_divergence_detected():
    tc, enc = _small(lr=1e6, epochs=3)
    with pytest.raises(DivergenceError) as info:
        train.fit(tc, enc)
    assert info.value.epoch == 1
