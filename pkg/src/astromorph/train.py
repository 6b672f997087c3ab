"""Synthetic sequence tasks, AdamW and the ablation training loop."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .attention import AttentionConfig
from .encoder import EncoderConfig, EncoderParams, encoder_forward
from .features import SquashKind
from .grad import GradSet, loss_and_grads
from .linalg import NonFiniteError, PathLike, SeededRng

log = logging.getLogger(__name__)

ACC_THRESHOLD = 0.95
NORM_LIMIT = 1e6


class Task(str, Enum):
    MAJORITY = "majority"
    FIRST_TOKEN = "first_token"
    COPYCOUNT = "copycount"


class Ablation(str, Enum):
    FULL = "full"
    NO_POSITIONAL = "no_positional"
    NO_NONLINEARITY = "no_nonlinearity"
    NO_BOTH = "no_both"


class DivergenceError(NonFiniteError):
    def __init__(self, message: str, epoch: int, step: int):
        super().__init__(message)
        self.epoch = epoch
        self.step = step


@dataclass(frozen=True)
class SyntheticTask:
    task: Task
    vocab: int = 16
    seq_len: int = 32
    classes: int = 2

    def __post_init__(self):
        if self.vocab < self.classes or self.vocab % self.classes:
            raise ValueError("vocab must be a positive multiple of classes")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if Task(self.task) is Task.COPYCOUNT and self.classes != 2:
            raise ValueError("copycount is a binary task")
        if Task(self.task) is Task.FIRST_TOKEN and self.seq_len % self.classes:
            raise ValueError("first_token needs seq_len divisible by classes")


def token_class(tokens, classes: int) -> np.ndarray:
    return np.asarray(tokens) % classes


def majority_label(tokens, classes: int) -> int:
    """Most frequent token class; ties go to the smallest class."""
    counts = np.bincount(token_class(tokens, classes), minlength=classes)
    return int(np.argmax(counts))


def first_token_label(tokens, classes: int) -> int:
    return int(tokens[0] % classes)


def copycount_label(tokens) -> int:
    tokens = np.asarray(tokens)
    half = len(tokens) // 2
    return int(np.any(tokens[half + 1:] == tokens[0]))


def label_of(spec: SyntheticTask, tokens) -> int:
    task = Task(spec.task)
    if task is Task.MAJORITY:
        return majority_label(tokens, spec.classes)
    if task is Task.FIRST_TOKEN:
        return first_token_label(tokens, spec.classes)
    return copycount_label(tokens)


def _sample(spec: SyntheticTask, label: int, rng: SeededRng) -> np.ndarray:
    n, k = spec.seq_len, spec.classes
    task = Task(spec.task)
    if task is Task.FIRST_TOKEN:
        # every class appears equally often, so the bag of tokens says nothing about the label
        classes = np.repeat(np.arange(k), n // k)
        rest = np.delete(classes, np.flatnonzero(classes == label)[0])
        classes = np.concatenate([[label], rest[rng.permutation(n - 1)]])
        per = spec.vocab // k
        return classes + k * rng.integers(0, per, size=n)
    if task is Task.MAJORITY:
        lo = n // k + 1
        count = int(rng.integers(lo, max(lo, (3 * n) // 4) + 1))
        others = [c for c in range(k) if c != label]
        other_cls = np.array(others)[rng.integers(0, len(others), size=n - count)]
        # cap each rival class below the label's count
        for c in others:
            idx = np.flatnonzero(other_cls == c)
            if idx.size >= count:
                other_cls[idx[count - 1:]] = label
        cls = np.concatenate([np.full(count, label), other_cls])
        toks = cls + k * rng.integers(0, spec.vocab // k, size=n)
        return toks[rng.permutation(n)]
    # copycount
    half = n // 2
    toks = rng.integers(0, spec.vocab, size=n)
    first = toks[0]
    tail = np.arange(half + 1, n)
    for i in tail:
        while toks[i] == first:
            toks[i] = rng.integers(0, spec.vocab)
    if label == 1:
        hits = tail[rng.permutation(tail.size)[: int(rng.integers(1, 4))]]
        toks[hits] = first
    return toks


def make_task(spec: SyntheticTask, seed: int, count: int) -> list[tuple[np.ndarray, int]]:
    """``count`` samples with labels cycled over the classes, then shuffled."""
    rng = SeededRng(seed, ("task", Task(spec.task).value))
    labels = np.arange(count) % spec.classes
    labels = labels[rng.permutation(count)]
    out = []
    for lab in labels:
        toks = _sample(spec, int(lab), rng)
        assert label_of(spec, toks) == lab
        out.append((toks.astype(np.int64), int(lab)))
    return out


def _data_seed(seed: int, epoch: int) -> int:
    return seed * 1_000_003 + epoch


def embedding_table(vocab: int, d: int, seed: int) -> np.ndarray:
    """Fixed (not learned) token embeddings."""
    return SeededRng(seed, ("embedding",)).normal((vocab, d))


@dataclass
class TrainConfig:
    lr: float = 3e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    batch: int = 32
    epochs: int = 50
    seed: int = 0
    task: Task = Task.FIRST_TOKEN
    ablation: Ablation = Ablation.FULL
    n_train: int = 1024
    n_eval: int = 2048
    vocab: int = 16
    seq_len: int = 32
    classes: int = 2
    stop_at_threshold: bool = False

    def __post_init__(self):
        self.task = Task(self.task)
        self.ablation = Ablation(self.ablation)
        if self.lr <= 0 or self.batch < 1 or self.epochs < 1:
            raise ValueError("need lr > 0, batch >= 1, epochs >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        d["ablation"] = self.ablation.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return cls(**data)

    def task_spec(self) -> SyntheticTask:
        return SyntheticTask(self.task, self.vocab, self.seq_len, self.classes)


def default_encoder_config(tc: TrainConfig, d: int = 32, m: int = 64, heads: int = 2) -> EncoderConfig:
    attn = AttentionConfig(d=d, m=m, n_max=tc.seq_len, heads=heads)
    return EncoderConfig(attn=attn, classes=tc.classes)


def apply_ablation(cfg: EncoderConfig, ablation: Ablation) -> EncoderConfig:
    a = cfg.attn
    ab = Ablation(ablation)
    if ab in (Ablation.NO_POSITIONAL, Ablation.NO_BOTH):
        a = replace(a, use_positional=False)
    if ab in (Ablation.NO_NONLINEARITY, Ablation.NO_BOTH):
        a = replace(a, alpha=1.0, squash=SquashKind.IDENTITY)
    return replace(cfg, attn=a)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: EncoderParams, grads: GradSet, state: AdamState, cfg: TrainConfig) -> None:
    """AdamW in place: bias-corrected moments, decay applied to the weights directly."""
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, p in params.named().items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p *= 1.0 - cfg.lr * cfg.weight_decay
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps_opt)


def param_norm(params: EncoderParams) -> float:
    return math.sqrt(sum(float(np.sum(a * a)) for a in params.named().values()))


def _embed(samples, table):
    toks = np.stack([s[0] for s in samples])
    return table[toks], np.array([s[1] for s in samples], dtype=np.int64)


def evaluate(params: EncoderParams, cfg: EncoderConfig, X: np.ndarray, y: np.ndarray,
             chunk: int = 256) -> tuple[float, float]:
    """Mean loss and accuracy in eval mode."""
    loss, correct = 0.0, 0
    for i in range(0, len(y), chunk):
        probs, _ = encoder_forward(params, cfg, X[i:i + chunk])
        p = probs[np.arange(len(probs)), y[i:i + chunk]]
        loss += float(-np.log(np.maximum(p, 1e-300)).sum())
        correct += int(np.sum(np.argmax(probs, axis=1) == y[i:i + chunk]))
    return loss / len(y), correct / len(y)


EPOCH_HEADER = ("epoch", "train_loss", "eval_loss", "eval_acc", "param_norm")


@dataclass
class RunReport:
    config: dict
    encoder: dict
    epochs_run: int
    epochs_to_threshold: Optional[int]
    final_eval_acc: float
    final_eval_loss: float
    max_param_norm: float
    history: list[dict]
    epoch_csv: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def fit(tc: TrainConfig, enc_cfg: Optional[EncoderConfig] = None
        ) -> tuple[EncoderParams, EncoderConfig, RunReport]:
    """Train one ablation on one task; returns the trained parameters too."""
    spec = tc.task_spec()
    base = enc_cfg or default_encoder_config(tc)
    cfg = apply_ablation(base, tc.ablation)
    root = SeededRng(tc.seed)
    params = EncoderParams.init(cfg, root.child("params"))
    table = embedding_table(tc.vocab, cfg.attn.d, tc.seed)
    # eval set from a seed no training epoch uses; training data is fresh every epoch
    Xev, yev = _embed(make_task(spec, _data_seed(tc.seed, 0), tc.n_eval), table)
    adam = AdamState()
    history: list[dict] = []
    reached: Optional[int] = None
    max_norm = param_norm(params)
    for epoch in range(1, tc.epochs + 1):
        Xtr, ytr = _embed(make_task(spec, _data_seed(tc.seed, epoch), tc.n_train), table)
        total, seen = 0.0, 0
        for step, i in enumerate(range(0, tc.n_train, tc.batch)):
            idx = slice(i, i + tc.batch)
            drop_rng = root.child(f"drop{epoch}.{step}")
            try:
                loss, grads = loss_and_grads(params, cfg, Xtr[idx], ytr[idx], train_mode=True, rng=drop_rng)
            except NonFiniteError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, step {step}", epoch, step) from exc
            if not math.isfinite(loss):
                raise DivergenceError(f"loss became {loss} at epoch {epoch}, step {step}", epoch, step)
            optimizer_step(params, grads, adam, tc)
            total += loss * len(ytr[idx])
            seen += len(ytr[idx])
        norm = param_norm(params)
        max_norm = max(max_norm, norm)
        if not math.isfinite(norm) or norm >= NORM_LIMIT:
            raise DivergenceError(f"parameter norm {norm:g} at epoch {epoch}", epoch, -1)
        ev_loss, ev_acc = evaluate(params, cfg, Xev, yev)
        history.append({"epoch": epoch, "train_loss": total / seen, "eval_loss": ev_loss,
                        "eval_acc": ev_acc, "param_norm": norm})
        log.info("epoch %d loss %.4f acc %.3f", epoch, total / seen, ev_acc)
        if reached is None and ev_acc >= ACC_THRESHOLD:
            reached = epoch
            if tc.stop_at_threshold:
                break
    report = RunReport(config=tc.to_dict(), encoder=cfg.to_dict(), epochs_run=len(history),
                       epochs_to_threshold=reached, final_eval_acc=history[-1]["eval_acc"],
                       final_eval_loss=history[-1]["eval_loss"], max_param_norm=max_norm,
                       history=history)
    return params, cfg, report


def run_experiment(tc: TrainConfig, enc_cfg: Optional[EncoderConfig] = None,
                   out_dir: Optional[PathLike] = None) -> RunReport:
    """``fit`` and, given ``out_dir``, write ``epochs.csv`` and ``report.json``."""
    _, _, report = fit(tc, enc_cfg)
    if out_dir is not None:
        write_run(report, out_dir)
    return report


def write_run(report: RunReport, out_dir: PathLike) -> None:
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    path = d / "epochs.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_HEADER)
        for row in report.history:
            w.writerow([row[k] if k == "epoch" else repr(float(row[k])) for k in EPOCH_HEADER])
    report.epoch_csv = path.name
    body = report.to_dict()
    body.pop("history")
    (d / "report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
