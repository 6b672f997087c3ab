"""Command-line entry point: ``astromorph <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from . import synapse, train
from .attention import AttentionConfig, init_attention_params, multi_head
from .encoder import EncoderConfig, save_checkpoint
from .grad import gradcheck_rows, tiny_config
from .linalg import SeededRng, read_matrix_csv, write_matrix_csv

log = logging.getLogger("astromorph")

CONFIG_SCHEMA = 1


class ConfigError(ValueError):
    pass


def load_config(path: Optional[str]) -> dict:
    """JSON object with an optional ``schema`` field, which must match."""
    if path is None:
        return {}
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    schema = data.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"{path}: unsupported schema {schema}, expected {CONFIG_SCHEMA}")
    return data


def _reject_unknown(data: dict, allowed: Sequence[str], what: str) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parse_rates(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"rates must be comma-separated numbers, got {text!r}")


def _synapse_params(args) -> synapse.SynapseParams:
    data = load_config(args.config)
    data.pop("version", None)
    if args.dt is not None:
        data["dt"] = args.dt
    return synapse.SynapseParams.from_dict(data)


def cmd_attn(args) -> int:
    data = load_config(args.config)
    _reject_unknown(data, AttentionConfig.__dataclass_fields__, "attention config")
    cfg = AttentionConfig.from_dict(data)
    X = read_matrix_csv(args.input)
    heads = init_attention_params(cfg, SeededRng(args.seed).child("attn"))
    write_matrix_csv(args.out, multi_head(heads, X, cfg))
    return 0


TRAIN_MODEL_KEYS = ("d", "m", "heads", "dropout_p", "alpha", "clip_k")


def cmd_train(args) -> int:
    data = load_config(args.config)
    model = data.pop("model", {})
    _reject_unknown(model, TRAIN_MODEL_KEYS, "model")
    _reject_unknown(data, train.TrainConfig.__dataclass_fields__, "train config")
    if args.seed is not None:
        data["seed"] = args.seed
    tc = train.TrainConfig.from_dict(data)
    attn = AttentionConfig(d=model.get("d", 32), m=model.get("m", 64), n_max=tc.seq_len,
                           heads=model.get("heads", 2), alpha=model.get("alpha", 0.25),
                           clip_k=model.get("clip_k", 8))
    enc = EncoderConfig(attn=attn, classes=tc.classes, dropout_p=model.get("dropout_p", 0.0))
    params, used_cfg, report = train.fit(tc, enc)
    out = Path(args.out)
    train.write_run(report, out)
    save_checkpoint(out / "checkpoint", params, used_cfg, tc.seed)
    if not args.no_figures:
        from .plots import training_figure
        training_figure(report.history, out / "training.png",
                        title=f"{tc.task.value}, {tc.ablation.value}")
    print(f"epochs_to_threshold={report.epochs_to_threshold} final_eval_acc={report.final_eval_acc:.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    data = load_config(args.config)
    cfg = EncoderConfig.from_dict(data) if data else tiny_config()
    rows = gradcheck_rows(cfg, args.seed, coords=args.coords)
    with Path(args.out).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("param", "index", "analytic", "numeric", "rel_err"))
        for name, idx, a, n, e in rows:
            w.writerow((name, ":".join(str(i) for i in idx), repr(a), repr(n), repr(e)))
    worst = max(r[4] for r in rows)
    print(f"checked {len(rows)} coordinates, max rel_err {worst:.3e}")
    return 0


def cmd_sim(args) -> int:
    p = _synapse_params(args)
    dt = p.dt
    rng = SeededRng(args.seed).child("sim")
    counts = synapse.poisson_spike_counts(args.rate, args.duration, dt, rng)
    every = max(1, int(round(args.record_every / dt)))
    times, trace = synapse.simulate(p, counts, dt=dt, record_every=every)
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(synapse.TRACE_HEADER)
        for row in synapse.trace_rows(times, trace):
            w.writerow([repr(x) for x in row])
    if not args.no_figures:
        from .plots import figure_path, trace_figure
        trace_figure(times, trace[:, synapse.CA], trace[:, synapse.N_VARS], figure_path(out))
    return 0


def _write_sweep(path: Path, table: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("rate", "mean_ca", "sd_ca"))
        for r in table:
            w.writerow((repr(r["rate"]), repr(r["mean_ca"]), repr(r["sd_ca"])))


def read_sweep(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def cmd_sweep(args) -> int:
    p = _synapse_params(args)
    table = synapse.run_rate_sweep(p, args.rates, duration=args.duration, seed=args.seed,
                                   settle=min(5.0, args.duration / 4))
    out = Path(args.out)
    _write_sweep(out, table)
    if not args.no_figures:
        from .plots import figure_path, sweep_figure
        rest = synapse.resting_calcium(p)
        try:
            alpha_hat, _ = synapse.calibrate_alpha(table, resting=rest)
        except synapse.CalibrationError:
            alpha_hat = None
        sweep_figure(table, figure_path(out), alpha_hat, rest)
    return 0


def cmd_calibrate(args) -> int:
    table = read_sweep(args.input)
    resting = args.resting
    if resting is None and not any(r["rate"] == 0 for r in table):
        # no rate-0 row: baseline is the fixed point of the simulated parameters
        resting = synapse.resting_calcium(_synapse_params(args))
    alpha_hat, resid = synapse.calibrate_alpha(table, resting=resting)
    result = {"alpha_hat": alpha_hat, "fit_residual": resid,
              "concave": synapse.is_concave(table), "resting": resting}
    _dump(Path(args.out), result)
    print(f"alpha_hat={alpha_hat:.4f} residual={resid:.4f}")
    return 0


def cmd_bench(args) -> int:
    spec = bench_mod.BenchSpec.from_dict(load_config(args.spec) if args.spec else {})
    if args.seed is not None:
        spec.seed = args.seed
    rows = bench_mod.bench(spec)
    out = Path(args.out)
    bench_mod.write_bench_csv(out, rows)
    bench_mod.write_bench_report(out.with_suffix(".json"), spec, rows)
    if not args.no_figures:
        from .plots import bench_figure, figure_path
        bench_figure(rows, figure_path(out))
    for (variant, d), e in sorted(bench_mod.scaling_exponents(rows).items()):
        print(f"{variant:13s} D={d:<4d} exponent {e:.3f}")
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import run_all
    results = run_all(quick=args.quick, out=print)
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="astromorph", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("attn", cmd_attn, "run multi-head astromorphic attention on a CSV matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = add("train", cmd_train, "train one ablation on a synthetic task")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-figures", action="store_true")

    p = add("gradcheck", cmd_gradcheck, "finite-difference check of every parameter slot")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=5)

    for name, fn, help_ in (("sim", cmd_sim, "simulate one synapse driven by Poisson input"),
                            ("sweep", cmd_sweep, "mean calcium over a sweep of presynaptic rates")):
        p = add(name, fn, help_)
        p.add_argument("--config")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dt", type=float)
        p.add_argument("--duration", type=float, default=20.0)
        p.add_argument("--no-figures", action="store_true")
        if name == "sim":
            p.add_argument("--rate", type=float, default=20.0)
            p.add_argument("--record-every", type=float, default=1e-3, help="seconds between trace rows")
        else:
            p.add_argument("--rates", type=_parse_rates, default=[2, 4, 8, 16, 32, 64, 128, 256])

    p = add("calibrate-alpha", cmd_calibrate, "fit the exponent to a sweep table")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="synapse parameters whose resting calcium is the baseline")
    p.add_argument("--resting", type=float)
    p.add_argument("--dt", type=float)

    p = add("bench", cmd_bench, "time the attention cores over N and D")
    p.add_argument("--spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-figures", action="store_true")

    p = add("selftest", cmd_selftest, "run the acceptance suite")
    p.add_argument("--quick", action="store_true", help="reduced sizes for a fast smoke run")
    return ap


def _threads() -> Optional[int]:
    raw = os.environ.get("ASTRO_THREADS")
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ConfigError("ASTRO_THREADS must be >= 1")
    return n


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()):
            return args.fn(args)
    except (ConfigError, ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"astromorph {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
