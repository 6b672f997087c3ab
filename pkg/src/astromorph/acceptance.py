"""The acceptance suite, shared by ``astromorph selftest`` and the test suite.

Each check returns a :class:`CriterionResult`; ``quick=True`` shrinks sizes
for a smoke run and skips the runtime limits.
"""

from __future__ import annotations

import contextlib
import filecmp
import io
import json
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import bench as bench_mod
from . import oracles, synapse, train
from .attention import AttentionConfig, HeadParams, astromorphic_attention, positional_activity, read
from .encoder import head_forward
from .features import SquashKind, phi
from .grad import gradcheck_rows, tiny_config
from .linalg import SeededRng, write_matrix_csv
from .plasticity import write_init, write_token

SWEEP_RATES = (2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0)
ALPHA_RANGE = (0.15, 0.40)
LINEAR_EXP = (0.8, 1.3)
QUAD_EXP = (1.7, 2.3)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float
    limit_s: Optional[float] = None

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        limit = f" / {self.limit_s:.0f}s" if self.limit_s else ""
        return f"[{tag}] criterion {self.number}: {self.name}: {self.detail} ({self.seconds:.1f}s{limit})"


def reduction(quick: bool = False) -> tuple[bool, str]:
    seeds = 10 if quick else 50
    worst = 0.0
    for seed in range(seeds):
        cfg = AttentionConfig(d=8, m=1, n_max=16, alpha=1.0, squash=SquashKind.IDENTITY,
                              use_positional=False)
        rng = SeededRng(seed, ("reduction",))
        hp = HeadParams.init(cfg, rng.child("params"))
        X = rng.child("x").normal((16, 8))
        got = astromorphic_attention(hp, X, cfg) - X
        ref = oracles.linearized_attention_quadratic(hp.w_q, hp.w_k, hp.w_v, X)
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return worst < 1e-10, f"max |diff| {worst:.2e} over {seeds} seeds (tol 1e-10)"


def _random_head(seed: int) -> tuple[AttentionConfig, HeadParams, np.ndarray]:
    rng = SeededRng(seed, ("streaming",))
    n = int(rng.integers(1, 33))
    m = int(rng.integers(1, 65))
    dh = int(rng.integers(1, 9))
    cfg = AttentionConfig(d=dh, m=m, n_max=32, alpha=float(rng.uniform(0.1, 1.0, None)),
                          squash=SquashKind.SIGMOID if rng.random() < 0.5 else SquashKind.IDENTITY,
                          use_positional=bool(rng.random() < 0.7))
    hp = HeadParams.init(cfg, rng.child("params"))
    return cfg, hp, rng.child("x").normal((n, dh))


def streamed(hp: HeadParams, X: np.ndarray, cfg: AttentionConfig) -> np.ndarray:
    """Token-by-token write, then one read."""
    K, V = X @ hp.w_k, X @ hp.w_v
    W = positional_activity(hp, cfg, X.shape[0])
    state = write_init(cfg.m, X.shape[1], cfg.n_max)
    for t in range(X.shape[0]):
        state = write_token(state, K[t], V[t], W[:, t], cfg.fmap)
    return read(hp, state, X, cfg)


def streaming(quick: bool = False) -> tuple[bool, str]:
    configs = 20 if quick else 100
    worst = 0.0
    for seed in range(configs):
        cfg, hp, X = _random_head(seed)
        s = streamed(hp, X, cfg)
        batch = astromorphic_attention(hp, X, cfg)
        model, _ = head_forward(hp, X[None], cfg)
        worst = max(worst, float(np.max(np.abs(s - batch))), float(np.max(np.abs(s - (model[0] + X)))))
    return worst < 1e-12, f"max |diff| {worst:.2e} over {configs} configs (tol 1e-12)"


def gradients(quick: bool = False) -> tuple[bool, str]:
    seeds = 4 if quick else 20
    cfg = tiny_config()
    worst, worst_name, slots = 0.0, "", set()
    for seed in range(seeds):
        for name, _, _, _, err in gradcheck_rows(cfg, seed, coords=5):
            slots.add(name)
            if err > worst:
                worst, worst_name = err, name
    ok = worst < 1e-5 and any(s.endswith(".M") for s in slots)
    return ok, f"max rel_err {worst:.2e} ({worst_name}) over {len(slots)} slots x {seeds} seeds x 5 coords"


def weight_rows(quick: bool = False) -> tuple[bool, str]:
    seeds = 5 if quick else 20
    worst, neg = 0.0, False
    for seed in range(seeds):
        rng = SeededRng(seed, ("weights",))
        n, d = 12, 6
        X = rng.child("x").normal((n, d))
        wq, wk = rng.child("wq").normal((d, d)), rng.child("wk").normal((d, d))
        W = oracles.linear_attention_weights(phi(X @ wq), phi(X @ wk))
        worst = max(worst, float(np.max(np.abs(W.sum(axis=1) - 1.0))))
        neg |= bool(np.any(W < 0))
    return worst < 1e-12 and not neg, f"max |row sum - 1| {worst:.2e}, min weight >= 0: {not neg}"


def calcium_sweep(quick: bool = False) -> tuple[bool, str]:
    p = synapse.SynapseParams()
    duration = 10.0 if quick else 20.0
    settle = 2.5 if quick else 5.0
    table = synapse.run_rate_sweep(p, SWEEP_RATES, duration=duration, seed=0, settle=settle)
    ca = [r["mean_ca"] for r in table]
    increasing = all(b > a for a, b in zip(ca, ca[1:]))
    concave = synapse.is_concave(table)
    alpha_hat, resid = synapse.calibrate_alpha(table, resting=synapse.resting_calcium(p))
    ok = increasing and concave and ALPHA_RANGE[0] <= alpha_hat <= ALPHA_RANGE[1]
    return ok, (f"increasing {increasing}, concave {concave}, alpha_hat {alpha_hat:.3f} "
                f"(range {ALPHA_RANGE[0]}-{ALPHA_RANGE[1]}), residual {resid:.3f}")


def _tc(**kw) -> train.TrainConfig:
    return train.TrainConfig(**kw)


def ablation(quick: bool = False) -> tuple[bool, str]:
    seeds = 2 if quick else 5
    budget = 40
    full, noboth = [], []
    for seed in range(seeds):
        r = train.run_experiment(_tc(seed=seed, ablation="full", epochs=budget, stop_at_threshold=True))
        full.append(r.epochs_to_threshold)
        r = train.run_experiment(_tc(seed=seed, ablation="no_both", epochs=budget, stop_at_threshold=True))
        noboth.append(r.epochs_to_threshold)

    def ep(x):
        # never reaching the threshold counts as more than the budget
        return budget + 1 if x is None else x

    faster = all(f is not None and ep(f) < ep(b) for f, b in zip(full, noboth))
    npos = train.run_experiment(_tc(seed=0, ablation="no_positional", epochs=budget))
    npos_max = max(h["eval_acc"] for h in npos.history)
    maj = train.run_experiment(_tc(seed=0, task="majority", ablation="no_positional",
                                   epochs=budget, stop_at_threshold=True))
    ok = faster and npos_max <= 0.55 and maj.final_eval_acc >= 0.95
    return ok, (f"epochs to 95% full {full} vs no_both {noboth} (None = not within {budget}); "
                f"no_positional first_token best {npos_max:.3f}; majority {maj.final_eval_acc:.3f}")


def complexity(quick: bool = False) -> tuple[bool, str]:
    ns = [256, 512, 1024, 2048] if quick else [256, 512, 1024, 2048, 4096, 8192]
    spec = bench_mod.BenchSpec(n_values=ns, d_values=[32, 64], reps=5, warmup=1)
    rows = bench_mod.bench(spec)
    exps = bench_mod.scaling_exponents(rows)
    ok = True
    parts = []
    for (variant, d), e in sorted(exps.items()):
        lo, hi = QUAD_EXP if variant == "softmax" else LINEAR_EXP
        ok &= lo <= e <= hi
        parts.append(f"{variant}/D{d}={e:.2f}")
    n_cmp = 4096 if not quick else 2048
    lin = bench_mod.lookup(rows, "linearized", n_cmp, 64)["median_ns"]
    soft = bench_mod.lookup(rows, "softmax", n_cmp, 64)["median_ns"]
    ok &= lin < soft
    parts.append(f"N={n_cmp},D=64 linearized {lin / 1e6:.1f}ms vs softmax {soft / 1e6:.1f}ms")
    return ok, "exponents " + ", ".join(parts)


def stability(quick: bool = False) -> tuple[bool, str]:
    epochs = 5 if quick else 50
    parts, ok = [], True
    for task in train.Task:
        try:
            r = train.run_experiment(_tc(task=task, epochs=epochs))
        except train.DivergenceError as exc:
            ok = False
            parts.append(f"{task.value}: diverged ({exc})")
            continue
        ok &= r.epochs_run == epochs and r.max_param_norm < train.NORM_LIMIT
        parts.append(f"{task.value}: {r.epochs_run} epochs, max norm {r.max_param_norm:.1f}")
    return ok, "; ".join(parts)


def _cli_runs(root: Path) -> list[list[str]]:
    cfg = root / "attn.json"
    cfg.write_text(json.dumps({"schema": 1, "d": 8, "m": 12, "n_max": 10, "heads": 2}))
    x = root / "x.csv"
    write_matrix_csv(x, SeededRng(7).normal((10, 8)))
    tcfg = root / "train.json"
    tcfg.write_text(json.dumps({"schema": 1, "epochs": 2, "n_train": 64, "n_eval": 64, "seq_len": 8,
                                "model": {"d": 8, "m": 8, "heads": 2, "dropout_p": 0.1}}))
    bspec = root / "bench.json"
    bspec.write_text(json.dumps({"schema": 1, "n_values": [32, 64], "d_values": [8], "reps": 5}))
    return [
        ["attn", "--config", str(cfg), "--input", str(x), "--out", "{out}/y.csv", "--seed", "3"],
        ["train", "--config", str(tcfg), "--out", "{out}/train", "--seed", "3"],
        ["gradcheck", "--out", "{out}/grad.csv", "--seed", "3", "--coords", "2"],
        ["sim", "--out", "{out}/trace.csv", "--seed", "3", "--duration", "0.5", "--rate", "40"],
        ["sweep", "--out", "{out}/sweep.csv", "--seed", "3", "--duration", "2",
         "--rates", "4,8,16,32,64,128"],
        ["calibrate-alpha", "--input", "{out}/sweep.csv", "--out", "{out}/alpha.json"],
        ["bench", "--spec", str(bspec), "--out", "{out}/bench.csv", "--seed", "3"],
    ]


def _tree(d: Path) -> list[Path]:
    return sorted(p.relative_to(d) for p in d.rglob("*") if p.is_file())


def _bench_columns(path: Path) -> list[tuple]:
    return [(r["variant"], r["N"], r["D"]) for r in bench_mod.read_bench_csv(path)]


def determinism(quick: bool = False) -> tuple[bool, str]:
    from .cli import main

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        outs = [root / "run_a", root / "run_b"]
        runs = _cli_runs(root)
        codes = []
        for out in outs:
            out.mkdir()
            for argv in runs:
                with contextlib.redirect_stdout(io.StringIO()):
                    codes.append(main([a.replace("{out}", str(out)) for a in argv]))
        if any(codes):
            return False, f"exit codes {codes}"
        files_a, files_b = _tree(outs[0]), _tree(outs[1])
        if files_a != files_b:
            return False, "runs produced different file sets"
        # timings are the one documented nondeterministic output
        timed = {Path("bench.csv"), Path("bench.json"), Path("bench.png")}
        differ = [str(f) for f in files_a if f not in timed
                  and not filecmp.cmp(outs[0] / f, outs[1] / f, shallow=False)]
        same_grid = _bench_columns(outs[0] / "bench.csv") == _bench_columns(outs[1] / "bench.csv")
        checked = len(files_a) - len(timed)
        ok = not differ and same_grid
        detail = f"{checked} files bit-identical over {len(runs)} subcommands"
        if differ:
            detail = f"differing files: {differ}"
        return ok, detail


CRITERIA: list[tuple[int, str, Callable[[bool], tuple[bool, str]], float]] = [
    (1, "reduction to linearized attention", reduction, 5),
    (2, "streaming write equals matrix form", streaming, 10),
    (3, "gradient suite", gradients, 60),
    (4, "linearized weight rows sum to one", weight_rows, 5),
    (5, "calcium sweep shape and alpha", calcium_sweep, 300),
    (6, "ablation direction", ablation, 900),
    (7, "complexity shape", complexity, 600),
    (8, "training stability", stability, 600),
    (9, "CLI determinism", determinism, 300),
]


def run_criterion(number: int, quick: bool = False) -> CriterionResult:
    for num, name, fn, limit in CRITERIA:
        if num == number:
            t0 = time.perf_counter()
            passed, detail = fn(quick)
            dt = time.perf_counter() - t0
            if not quick and dt > limit:
                passed = False
                detail += f"; runtime {dt:.0f}s over the {limit:.0f}s limit"
            return CriterionResult(num, name, passed, detail, dt, None if quick else limit)
    raise KeyError(number)


def run_all(quick: bool = False, out: Callable[[str], None] = print,
            only: Optional[list[int]] = None) -> list[CriterionResult]:
    results = []
    for num, *_ in CRITERIA:
        if only and num not in only:
            continue
        res = run_criterion(num, quick)
        out(res.line())
        results.append(res)
    passed = sum(r.passed for r in results)
    out(f"{passed}/{len(results)} criteria passed")
    return results
