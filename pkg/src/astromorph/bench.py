"""Wall-time scaling of the attention cores in sequence length.

Each variant is timed on pre-projected ``Q, K, V`` (N x D) so the
projections, input generation and any per-length constants stay outside
the timed region. The astromorphic core uses ``m = D`` and a precomputed
``W_astro``; that matrix depends only on the parameters and N, so a model
computes it once per sequence length.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .attention import MASK_EPS, linearized_core, modulation_weight, softmax_core
from .features import phi, sigmoid
from .linalg import PathLike, SeededRng

SCHEMA = 1
CSV_HEADER = ("variant", "N", "D", "median_ns", "iqr_ns")
METHODOLOGY = (
    "monotonic perf_counter_ns around one core call on pre-projected Q, K, V; "
    "inputs allocated before timing; median and IQR over reps after warmup; "
    "BLAS pinned to one thread"
)


class Variant(str, Enum):
    SOFTMAX = "softmax"
    LINEARIZED = "linearized"
    ASTROMORPHIC = "astromorphic"


@dataclass
class BenchSpec:
    variants: list[Variant] = field(default_factory=lambda: list(Variant))
    n_values: list[int] = field(default_factory=lambda: [256, 512, 1024, 2048, 4096, 8192])
    d_values: list[int] = field(default_factory=lambda: [32, 64])
    reps: int = 5
    warmup: int = 1
    seed: int = 0
    alpha: float = 0.25

    def __post_init__(self):
        self.variants = [Variant(v) for v in self.variants]
        if self.reps < 5:
            raise ValueError(f"reps must be >= 5, got {self.reps}")
        if self.warmup < 0:
            raise ValueError("warmup must be >= 0")
        if min(self.n_values, default=1) < 1 or min(self.d_values, default=1) < 1:
            raise ValueError("N and D values must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = [v.value for v in self.variants]
        d["schema"] = SCHEMA
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "BenchSpec":
        data = dict(data)
        schema = data.pop("schema", SCHEMA)
        if schema != SCHEMA:
            raise ValueError(f"unsupported bench spec schema {schema}")
        return cls(**data)


def astromorphic_core(Q: np.ndarray, K: np.ndarray, V: np.ndarray, W_astro: np.ndarray,
                      alpha: float = 0.25, eps: float = MASK_EPS) -> np.ndarray:
    """Write then read on pre-projected inputs, without the residual."""
    m = W_astro.shape[0]
    fQ, fK = phi(Q), phi(K)
    H = sigmoid((fK.T @ V + W_astro @ V) / m)
    g = np.power(fK.sum(axis=0, keepdims=True), alpha)
    return (fQ @ H) * modulation_weight(fQ @ g.T, eps)


def _make_call(variant: Variant, n: int, d: int, spec: BenchSpec) -> Callable[[], np.ndarray]:
    rng = SeededRng(spec.seed, ("bench", variant.value, str(n), str(d)))
    Q, K, V = (rng.child(c).normal((n, d), 1.0 / math.sqrt(d)) for c in "qkv")
    if variant is Variant.SOFTMAX:
        return lambda: softmax_core(Q, K, V)
    if variant is Variant.LINEARIZED:
        return lambda: linearized_core(phi(Q), phi(K), V)
    W = phi(rng.child("w").normal((d, n), 0.1))
    return lambda: astromorphic_core(Q, K, V, W, spec.alpha)


def time_call(fn: Callable[[], object], reps: int, warmup: int) -> tuple[float, float]:
    """Median and interquartile range in ns."""
    for _ in range(warmup):
        fn()
    samples = np.empty(reps)
    for i in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples[i] = time.perf_counter_ns() - t0
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return float(med), float(q3 - q1)


def bench(spec: BenchSpec) -> list[dict]:
    rows = []
    with threadpool_limits(limits=1):
        for variant in spec.variants:
            for d in spec.d_values:
                for n in spec.n_values:
                    fn = _make_call(variant, n, d, spec)
                    med, iqr = time_call(fn, spec.reps, spec.warmup)
                    del fn
                    rows.append({"variant": variant.value, "N": n, "D": d,
                                 "median_ns": med, "iqr_ns": iqr})
    return rows


def scaling_exponents(rows: Sequence[dict]) -> dict[tuple[str, int], float]:
    """Least-squares slope of log(median) vs log(N) per (variant, D)."""
    groups: dict[tuple[str, int], list[tuple[int, float]]] = {}
    for r in rows:
        groups.setdefault((r["variant"], int(r["D"])), []).append((int(r["N"]), float(r["median_ns"])))
    out = {}
    for key, pts in groups.items():
        if len(pts) < 2:
            continue
        n, t = np.array(pts).T
        out[key] = float(np.polyfit(np.log(n), np.log(t), 1)[0])
    return out


def lookup(rows: Sequence[dict], variant: str, n: int, d: int) -> dict:
    for r in rows:
        if r["variant"] == variant and r["N"] == n and r["D"] == d:
            return r
    raise KeyError((variant, n, d))


def write_bench_csv(path: PathLike, rows: Sequence[dict]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r["variant"], r["N"], r["D"], repr(r["median_ns"]), repr(r["iqr_ns"])])


def read_bench_csv(path: PathLike) -> list[dict]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"bench CSV header {reader.fieldnames} != {list(CSV_HEADER)}")
        return [{"variant": r["variant"], "N": int(r["N"]), "D": int(r["D"]),
                 "median_ns": float(r["median_ns"]), "iqr_ns": float(r["iqr_ns"])} for r in reader]


def bench_report(spec: BenchSpec, rows: Sequence[dict]) -> dict:
    exps = scaling_exponents(rows)
    return {
        "schema": SCHEMA,
        "methodology": METHODOLOGY,
        "spec": spec.to_dict(),
        "exponents": [{"variant": v, "D": d, "exponent": e} for (v, d), e in sorted(exps.items())],
    }


def write_bench_report(path: PathLike, spec: BenchSpec, rows: Sequence[dict]) -> None:
    Path(path).write_text(json.dumps(bench_report(spec, rows), indent=2, sort_keys=True) + "\n")
