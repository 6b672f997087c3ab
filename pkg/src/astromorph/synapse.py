"""Tripartite synapse simulator: endocannabinoid feedback, astrocytic calcium,
glutamate release and a leaky integrate-and-fire postsynaptic neuron.

State variables (one column each in the packed state vector):

    ag    2-AG concentration, bumped by ``r_ag`` on every postsynaptic spike
    ip3   astrocytic IP3, driven by 2-AG
    ca    astrocytic cytosolic Ca2+ (uM), channel + leak - pump fluxes
    glu   astrocytic glutamate, released while ca >= theta_ca
    v     membrane potential (mV, relative to rest)
    syn   neurotransmitter in the cleft, bumped by PR on every presynaptic spike
    sic1  auxiliary variable of the slow-inward-current alpha kernel
    sic   slow inward current (pA)

Release probability is algebraic: ``PR = PR0 * (1 + (DSE + eSP) / 100)`` with
``DSE = -k_ag * ag`` and ``eSP = m_esp * glu``, clamped to [0, 1].

The right-hand side is written with numpy broadcasting so a stack of
independent synapses (one per presynaptic rate) is integrated in lock-step
with fixed-step RK4.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .linalg import NonFiniteError, PathLike, SeededRng

PARAMS_VERSION = "calibrated-1"

AG, IP3, CA, GLU, V, SYN, SIC1, SIC = range(8)
N_VARS = 8
STATE_NAMES = ("ag", "ip3", "ca", "glu", "v_mem", "syn", "sic1", "sic")


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 0.01      # s
    r_m: float = 100.0       # MOhm
    v_thresh: float = 15.0   # mV above rest
    v_reset: float = 0.0     # mV
    a_se: float = 4000.0     # pA per unit of cleft transmitter


@dataclass(frozen=True)
class SynapseParams:
    """Model constants. Defaults are calibrated, not taken from literature."""

    tau_ag: float = 0.2        # s
    r_ag: float = 1.0          # 2-AG per postsynaptic spike
    k_ag: float = 1.0          # % suppression per unit 2-AG
    m_esp: float = 5.0         # % potentiation per uM glutamate
    tau_glu: float = 0.1       # s
    r_glu: float = 5.0         # uM/s while ca >= theta_ca
    theta_ca: float = 0.15     # uM
    tau_ip3: float = 1.0       # s
    r_ip3: float = 0.05        # uM/s per unit 2-AG
    ip3_rest: float = 0.001    # uM
    d_ip3: float = 0.3         # uM, half-activation of the IP3 channel
    ca_er: float = 2.0         # uM
    v1: float = 6.0            # 1/s, channel flux rate
    v2: float = 0.01           # 1/s, ER leak rate
    v3: float = 4.6            # uM/s, max pump rate
    k3: float = 1.0            # uM, pump half-activation
    c1: float = 0.185          # ER/cytosol volume ratio
    tau_syn: float = 0.002     # s
    tau_sic: float = 0.2       # s
    sic_amp: float = 50.0      # pA, peak of one slow inward current
    pr0: float = 0.5
    dt: float = 1e-4           # s
    lif: LifParams = LifParams()

    def __post_init__(self):
        taus = [self.tau_ag, self.tau_glu, self.tau_ip3, self.tau_syn, self.tau_sic, self.lif.tau_m]
        if min(taus) <= 0 or self.theta_ca <= 0:
            raise ValueError("time constants and theta_ca must be positive")
        if not 0 < self.pr0 <= 1:
            raise ValueError(f"pr0 must lie in (0, 1], got {self.pr0}")
        if self.dt <= 0 or self.dt >= min(taus) / 10:
            raise ValueError(f"dt={self.dt} must be positive and below min(time constants)/10")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = PARAMS_VERSION
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SynapseParams":
        data = dict(data)
        data.pop("version", None)
        lif = LifParams(**data.pop("lif", {}))
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown synapse parameters: {sorted(unknown)}")
        return cls(lif=lif, **data)

    def save(self, path: PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: PathLike) -> "SynapseParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class SynapseState:
    ag: float = 0.0
    ip3: float = 0.0
    ca: float = 0.0
    glu: float = 0.0
    v_mem: float = 0.0
    syn: float = 0.0
    sic1: float = 0.0
    sic: float = 0.0
    pr: float = 0.5
    t: float = 0.0
    fired: bool = False

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in STATE_NAMES], dtype=np.float64)

    @classmethod
    def from_vector(cls, y: np.ndarray, params: SynapseParams, t: float, fired: bool = False) -> "SynapseState":
        vals = {n: float(y[i]) for i, n in enumerate(STATE_NAMES)}
        return cls(**vals, pr=float(release_probability(y, params)), t=t, fired=fired)


class SimulationError(NonFiniteError):
    def __init__(self, message: str, last_good: Optional[SynapseState] = None):
        super().__init__(message)
        self.last_good = last_good


def heaviside(x):
    return np.where(np.asarray(x) >= 0.0, 1.0, 0.0)


def release_probability(y: np.ndarray, p: SynapseParams) -> np.ndarray:
    dse = -y[..., AG] * p.k_ag
    esp = p.m_esp * y[..., GLU]
    return np.clip(p.pr0 + p.pr0 * (dse + esp) / 100.0, 0.0, 1.0)


def fluxes(ca, ip3, p: SynapseParams):
    """``(J_chan, J_leak, J_pump)`` in uM/s."""
    ip3 = np.maximum(ip3, 0.0)
    open_prob = ip3 / (ip3 + p.d_ip3)
    j_chan = p.c1 * p.v1 * open_prob * (p.ca_er - ca)
    j_leak = p.c1 * p.v2 * (p.ca_er - ca)
    ca_pos = np.maximum(ca, 0.0)
    j_pump = p.v3 * ca_pos ** 2 / (p.k3 ** 2 + ca_pos ** 2)
    return j_chan, j_leak, j_pump


def derivatives(y: np.ndarray, p: SynapseParams) -> np.ndarray:
    dy = np.empty_like(y)
    ag, ip3, ca, glu = y[..., AG], y[..., IP3], y[..., CA], y[..., GLU]
    j_chan, j_leak, j_pump = fluxes(ca, ip3, p)
    dy[..., AG] = -ag / p.tau_ag
    dy[..., IP3] = -(ip3 - p.ip3_rest) / p.tau_ip3 + p.r_ip3 * ag
    dy[..., CA] = j_chan + j_leak - j_pump
    dy[..., GLU] = -glu / p.tau_glu + p.r_glu * heaviside(ca - p.theta_ca)
    i_total = p.lif.a_se * y[..., SYN] + y[..., SIC]
    # MOhm * pA = uV
    dy[..., V] = (-y[..., V] + p.lif.r_m * i_total * 1e-3) / p.lif.tau_m
    dy[..., SYN] = -y[..., SYN] / p.tau_syn
    dy[..., SIC1] = -y[..., SIC1] / p.tau_sic
    dy[..., SIC] = (y[..., SIC1] - y[..., SIC]) / p.tau_sic
    return dy


def rk4(y: np.ndarray, p: SynapseParams, dt: float) -> np.ndarray:
    k1 = derivatives(y, p)
    k2 = derivatives(y + 0.5 * dt * k1, p)
    k3 = derivatives(y + 0.5 * dt * k2, p)
    k4 = derivatives(y + dt * k3, p)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(y: np.ndarray, p: SynapseParams, dt: float, presyn, postsyn) -> tuple[np.ndarray, np.ndarray]:
    """Impulses, one RK4 step, threshold handling. Works on (8,) or (R, 8)."""
    y = y.copy()
    pr = release_probability(y, p)
    y[..., SYN] += presyn * pr
    y[..., AG] += postsyn * p.r_ag
    above_before = y[..., CA] >= p.theta_ca
    y = rk4(y, p, dt)
    y[..., CA] = np.maximum(y[..., CA], 0.0)
    y[..., GLU] = np.maximum(y[..., GLU], 0.0)
    crossed = (y[..., CA] >= p.theta_ca) & ~above_before
    # alpha kernel: kicking sic1 by A*e gives a peak of A one tau later
    y[..., SIC1] += np.where(crossed, p.sic_amp * math.e, 0.0)
    fired = y[..., V] >= p.lif.v_thresh
    y[..., V] = np.where(fired, p.lif.v_reset, y[..., V])
    return y, fired


def resting_calcium(p: SynapseParams) -> float:
    """Fixed point of the calcium equation with IP3 at rest and no spikes."""
    def net(ca):
        j_chan, j_leak, j_pump = fluxes(ca, p.ip3_rest, p)
        return float(j_chan + j_leak - j_pump)
    return brentq(net, 0.0, p.ca_er, xtol=1e-15)


def resting_state(p: SynapseParams) -> SynapseState:
    y = np.zeros(N_VARS)
    y[IP3] = p.ip3_rest
    y[CA] = resting_calcium(p)
    return SynapseState.from_vector(y, p, 0.0)


def step(state: SynapseState, params: SynapseParams, presyn_spike: bool = False,
         postsyn_spike: bool = False, dt: Optional[float] = None) -> SynapseState:
    """Advance one ``dt``.

    A presynaptic spike releases ``PR`` units of transmitter; a postsynaptic
    spike bumps 2-AG. ``fired`` on the returned state reports whether the LIF
    neuron crossed threshold during this step; callers feed it back as the
    next ``postsyn_spike``.
    """
    dt = params.dt if dt is None else dt
    y0 = state.vector()
    y, fired = _advance(y0, params, dt, float(presyn_spike), float(postsyn_spike))
    if not np.all(np.isfinite(y)):
        raise SimulationError(f"non-finite synapse state at t={state.t + dt:.6g} s", last_good=state)
    return SynapseState.from_vector(y, params, state.t + dt, bool(fired))


def unit_poisson_times(horizon: float, rng: SeededRng) -> np.ndarray:
    """Event times of a rate-1 Poisson process on ``[0, horizon)``."""
    n_draw = int(horizon + 10 * math.sqrt(horizon) + 20)
    times = np.cumsum(rng.exponential(1.0, size=n_draw))
    while times.size and times[-1] < horizon:
        more = np.cumsum(rng.exponential(1.0, size=n_draw)) + times[-1]
        times = np.concatenate([times, more])
    return times[times < horizon]


def poisson_spike_counts(rate: float, duration: float, dt: float, rng: SeededRng,
                         unit_times: Optional[np.ndarray] = None) -> np.ndarray:
    """Spike counts per step for a Poisson train drawn in continuous time.

    Spike times do not depend on ``dt``, so halving the step keeps the train.
    Passing shared ``unit_times`` (a rate-1 train covering ``rate * duration``)
    time-rescales one realization to every rate.
    """
    n_steps = int(round(duration / dt))
    if rate <= 0:
        return np.zeros(n_steps, dtype=np.int64)
    if unit_times is None:
        unit_times = unit_poisson_times(rate * duration, rng)
    times = unit_times / rate
    times = times[times < duration]
    idx = np.minimum((times / dt).astype(np.int64), n_steps - 1)
    return np.bincount(idx, minlength=n_steps)


def simulate(params: SynapseParams, presyn_counts: np.ndarray, init: Optional[SynapseState] = None,
             dt: Optional[float] = None, record_every: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Run a batch of synapses driven by per-step presynaptic spike counts.

    ``presyn_counts`` has shape (steps,) or (R, steps). Returns ``(times,
    trace)`` where ``trace`` is (records, [R,] 9) holding the eight state
    variables followed by PR.
    """
    dt = params.dt if dt is None else dt
    counts = np.asarray(presyn_counts, dtype=np.float64)
    single = counts.ndim == 1
    if single:
        counts = counts[None]
    r, n_steps = counts.shape
    y0 = (init or resting_state(params)).vector()
    y = np.tile(y0, (r, 1))
    fired = np.zeros(r, dtype=bool)
    n_rec = n_steps // record_every + 1
    trace = np.empty((n_rec, r, N_VARS + 1))
    times = np.empty(n_rec)
    trace[0, :, :N_VARS] = y
    trace[0, :, N_VARS] = release_probability(y, params)
    times[0] = 0.0
    rec = 1
    for k in range(n_steps):
        y, fired = _advance(y, params, dt, counts[:, k], fired.astype(np.float64))
        if (k + 1) % record_every == 0:
            if not np.all(np.isfinite(y)):
                last = SynapseState.from_vector(trace[rec - 1, 0, :N_VARS], params, times[rec - 1])
                raise SimulationError(f"non-finite synapse state near t={(k + 1) * dt:.6g} s", last)
            trace[rec, :, :N_VARS] = y
            trace[rec, :, N_VARS] = release_probability(y, params)
            times[rec] = (k + 1) * dt
            rec += 1
    trace, times = trace[:rec], times[:rec]
    if single:
        trace = trace[:, 0]
    return times, trace


def run_rate_sweep(params: SynapseParams, rates: Sequence[float], duration: float = 20.0,
                   seed: int = 0, settle: float = 5.0, dt: Optional[float] = None) -> list[dict]:
    """Time-averaged calcium for each presynaptic Poisson rate (Hz).

    The first ``settle`` seconds are discarded before averaging. All rates
    are integrated together as independent synapses driven by time-rescaled
    copies of one Poisson realization, which keeps the curve smooth in rate.
    """
    dt = params.dt if dt is None else dt
    rates = [float(x) for x in rates]
    if any(x < 0 for x in rates):
        raise ValueError("rates must be non-negative")
    if settle >= duration:
        raise ValueError("settle must be shorter than duration")
    rng = SeededRng(seed)
    # common random numbers: one unit-rate train rescaled to each rate
    unit = unit_poisson_times(max(rates, default=0.0) * duration, rng.child("presyn"))
    counts = np.stack([poisson_spike_counts(rate, duration, dt, rng, unit_times=unit)
                       for rate in rates])
    every = max(1, int(round(1e-3 / dt)))
    times, trace = simulate(params, counts, dt=dt, record_every=every)
    if trace.ndim == 2:
        trace = trace[:, None]
    keep = times >= settle
    ca = trace[keep, :, CA]
    out = []
    for i, rate in enumerate(rates):
        out.append({"rate": rate, "mean_ca": float(ca[:, i].mean()), "sd_ca": float(ca[:, i].std())})
    return out


class CalibrationError(ValueError):
    pass


def calibrate_alpha(table: Iterable[dict], resting: Optional[float] = None) -> tuple[float, float]:
    """Slope of ``log(mean_ca - resting)`` against ``log(rate)``.

    ``resting`` defaults to the rate-0 row when the table has one, else 0.
    Returns ``(alpha_hat, rms_residual)``.
    """
    rows = sorted(table, key=lambda r: r["rate"])
    if resting is None:
        zero = [r["mean_ca"] for r in rows if r["rate"] == 0]
        resting = zero[0] if zero else 0.0
    pos = [r for r in rows if r["rate"] > 0]
    if len(pos) < 6:
        raise CalibrationError(f"need at least 6 positive rates, got {len(pos)}")
    rates = np.array([r["rate"] for r in pos])
    ca = np.array([r["mean_ca"] for r in pos])
    if rates[-1] / rates[0] < 10.0:
        raise CalibrationError("rates must span at least one decade")
    if np.any(np.diff(ca) <= 0):
        raise CalibrationError("mean calcium is not increasing in rate; check the simulation setup")
    excess = ca - resting
    if np.any(excess <= 0):
        raise CalibrationError("mean calcium not above the resting level")
    x, y = np.log(rates), np.log(excess)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid ** 2)))


def is_concave(table: Sequence[dict], start: int = 0) -> bool:
    """Secant slopes of mean_ca vs rate strictly decrease from index ``start``."""
    rows = sorted(table, key=lambda r: r["rate"])
    r = np.array([x["rate"] for x in rows])
    c = np.array([x["mean_ca"] for x in rows])
    slopes = np.diff(c) / np.diff(r)
    return bool(np.all(np.diff(slopes[start:]) < 0))


def trace_rows(times: np.ndarray, trace: np.ndarray) -> list[list[float]]:
    """Rows ``(t, ag, ip3, ca, glu, pr, v_mem)`` for the trace CSV."""
    cols = [AG, IP3, CA, GLU, N_VARS, V]
    return [[float(t)] + [float(trace[i, c]) for c in cols] for i, t in enumerate(times)]


TRACE_HEADER = ("t", "ag", "ip3", "ca", "glu", "pr", "v_mem")
