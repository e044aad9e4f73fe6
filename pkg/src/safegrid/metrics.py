"""Post-hoc analysis of run logs: safety, ultimate bounds, sharing, Lyapunov."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attacks import kappa as attack_kappa
from .cbf import SafetySpec
from .consensus import LeaderRefs
from .engine import SimLog
from .graph import GraphMatrices, build_matrices, lg_is_nonsingular

EPS_HOLD = 0.05
TAIL_FRACTION = 0.2


@dataclass(frozen=True)
class ChannelReport:
    count: np.ndarray  # violating samples per DG
    first_time: np.ndarray  # s, nan if none
    worst_excursion: np.ndarray  # distance outside the band (Hz or V), 0 if none
    time_outside: np.ndarray  # s

    @property
    def total(self) -> int:
        return int(self.count.sum())

    @property
    def first(self) -> float:
        t = self.first_time[np.isfinite(self.first_time)]
        return float(t.min()) if t.size else math.nan


@dataclass(frozen=True)
class SafetyReport:
    frequency: ChannelReport
    voltage: ChannelReport

    @property
    def total_violations(self) -> int:
        return self.frequency.total + self.voltage.total

    @property
    def first_violation_time(self) -> float:
        ts = [t for t in (self.frequency.first, self.voltage.first) if not math.isnan(t)]
        return min(ts) if ts else math.nan

    @property
    def safe(self) -> bool:
        return self.total_violations == 0


def _channel(time, values, ref, low, high) -> ChannelReport:
    dev = values - ref
    beyond = np.maximum(-low - dev, dev - high)  # > 0 outside
    # closed band; the slack absorbs rad/s <-> Hz rounding at the edges
    out = beyond > 1e-12 * max(abs(ref), 1.0)
    dt = np.diff(time).mean() if time.size > 1 else 0.0
    n = values.shape[1]
    first = np.full(n, np.nan)
    for i in range(n):
        hits = np.flatnonzero(out[:, i])
        if hits.size:
            first[i] = time[hits[0]]
    worst = np.where(out, beyond, 0.0).max(axis=0) if time.size else np.zeros(n)
    count = out.sum(axis=0)
    return ChannelReport(count, first, worst, count * dt)


def safety_report(log: SimLog, spec: SafetySpec, refs: LeaderRefs) -> SafetyReport:
    """Per-sample membership of every DG in the frequency and voltage bands."""
    tau = 2.0 * math.pi
    f = _channel(log.time, log["freq_hz"], refs.omega_k / tau, spec.omega_l / tau, spec.omega_h / tau)
    v = _channel(log.time, log["volt_v"], refs.v_k, spec.v_l, spec.v_h)
    return SafetyReport(f, v)


@dataclass(frozen=True)
class UubEstimate:
    settle_time: float  # s; nan when unsettled
    bound: float
    window: float  # s
    settled: bool


def uub_estimate(time, series, tail_window: float | None = None, eps_hold: float = EPS_HOLD) -> UubEstimate:
    """Ultimate bound ``b`` (tail max of the norm) and the time after which it holds.

    ``series`` is either a norm trace (samples,) or per-DG errors (samples, N),
    reduced with the Euclidean norm. The trace counts as unsettled if it is
    non-finite or still growing: the second half of the tail exceeds the
    first half by more than ``eps_hold``.
    """
    time = np.asarray(time, dtype=float)
    e = np.asarray(series, dtype=float)
    if e.ndim == 2:
        e = np.linalg.norm(e, axis=1)
    if tail_window is None:
        tail_window = TAIL_FRACTION * (time[-1] - time[0])
    tail = time >= time[-1] - tail_window
    if not np.all(np.isfinite(e)):
        return UubEstimate(math.nan, math.inf, tail_window, False)
    b = float(e[tail].max())
    tt = time[tail]
    mid = tt[0] + 0.5 * (tt[-1] - tt[0])
    first_half = e[tail][tt <= mid].max()
    second_half = e[tail][tt > mid].max() if np.any(tt > mid) else first_half
    if second_half > (1.0 + eps_hold) * first_half:
        return UubEstimate(math.nan, b, tail_window, False)
    above = np.flatnonzero(e > (1.0 + eps_hold) * b)
    t1 = float(time[0]) if above.size == 0 else float(time[min(above[-1] + 1, time.size - 1)])
    return UubEstimate(t1, b, tail_window, True)


def power_sharing_error(log: SimLog, m_p, t_start: float | None = None, t_end: float = math.inf) -> float:
    """max over samples and DG pairs of |m_i P_i - m_j P_j| / max_k m_k P_k.

    Defaults to the final 20% of the log.
    """
    if t_start is None:
        t_start = log.time[-1] - TAIL_FRACTION * (log.time[-1] - log.time[0])
    mask = log.window(t_start, t_end)
    if not mask.any():
        raise ValueError("power-sharing window contains no samples")
    w = np.asarray(m_p, dtype=float) * log["p_w"][mask]
    spread = w.max(axis=1) - w.min(axis=1)
    return float(np.max(spread / np.abs(w).max(axis=1)))


@dataclass(frozen=True)
class LyapunovTrace:
    E: np.ndarray
    inside: np.ndarray  # (samples, N): |xi_fi| <= kappa_i / nu_i
    radius: np.ndarray  # kappa_i / nu_i

    @property
    def all_outside(self) -> np.ndarray:
        return ~self.inside.any(axis=1)


def lyapunov_value(xi, lg: GraphMatrices) -> np.ndarray:
    """``xi^T L_G^{-1} xi`` for one vector or a (samples, N) stack."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    inv = lg.lg_inverse()
    return np.einsum("si,ij,sj->s", xi, inv, xi)


def lyapunov_trace(log: SimLog, lg: GraphMatrices, kappa=None, nu=None) -> LyapunovTrace:
    """Lyapunov monitor on the logged frequency consensus terms.

    ``kappa``/``nu`` define the residual set; without them the set is {0}.
    """
    if not lg_is_nonsingular(lg):
        raise ValueError("L_G is singular")
    xi = log["xi_f"]
    n = xi.shape[1]
    radius = np.zeros(n) if kappa is None else np.asarray(kappa, dtype=float) / np.asarray(nu, dtype=float)
    return LyapunovTrace(lyapunov_value(xi, lg), np.abs(xi) <= radius, radius)


def descent_violations(trace: LyapunovTrace, rel_tol: float = 1e-3) -> np.ndarray:
    """Sample indices k where E rises by more than ``rel_tol * max E`` from k to k+1
    while every agent stays outside its residual set."""
    dE = np.diff(trace.E)
    out = trace.all_outside
    gate = out[:-1] & out[1:]
    return np.flatnonzero(gate & (dE > rel_tol * trace.E.max()))


@dataclass(frozen=True)
class RunSummary:
    name: str
    safety: SafetyReport
    uub_f: UubEstimate
    uub_v: UubEstimate
    sharing: float
    tail_freq_dev: float  # Hz, max over DGs
    tail_volt_dev: float  # V

    def as_dict(self) -> dict:
        def chan(c: ChannelReport):
            return {
                "violations": c.count.tolist(),
                "first_violation_s": [None if math.isnan(t) else float(t) for t in c.first_time],
                "worst_excursion": c.worst_excursion.tolist(),
                "time_outside_s": c.time_outside.tolist(),
            }

        def uub(u: UubEstimate):
            return {
                "bound": u.bound,
                "settle_time_s": None if math.isnan(u.settle_time) else u.settle_time,
                "window_s": u.window,
                "settled": u.settled,
            }

        return {
            "name": self.name,
            "safety": {"frequency": chan(self.safety.frequency), "voltage": chan(self.safety.voltage)},
            "total_violations": self.safety.total_violations,
            "first_violation_s": None if math.isnan(self.safety.first_violation_time) else self.safety.first_violation_time,
            "uub_e_f": uub(self.uub_f),
            "uub_e_v": uub(self.uub_v),
            "power_sharing_error": self.sharing,
            "tail_max_freq_dev_hz": self.tail_freq_dev,
            "tail_max_volt_dev_v": self.tail_volt_dev,
        }


def summarize(log: SimLog, cfg) -> RunSummary:
    spec, refs = cfg.safety_spec(), cfg.refs()
    window = TAIL_FRACTION * (log.time[-1] - log.time[0])
    tail = log.time >= log.time[-1] - window
    return RunSummary(
        name=cfg.name,
        safety=safety_report(log, spec, refs),
        uub_f=uub_estimate(log.time, log.e_f_norm, window),
        uub_v=uub_estimate(log.time, log.e_v_norm, window),
        sharing=power_sharing_error(log, cfg.m_p),
        tail_freq_dev=float(np.abs(log["freq_hz"][tail] - cfg.f_ref_hz).max()),
        tail_volt_dev=float(np.abs(log["volt_v"][tail] - cfg.v_ref).max()),
    )


def format_summary(s: RunSummary) -> str:
    lines = [f"scenario: {s.name}"]
    sr = s.safety
    first = "none" if math.isnan(sr.first_violation_time) else f"{sr.first_violation_time:.3f} s"
    lines.append(f"safety violations: {sr.total_violations} (first: {first})")
    for label, c, unit in (("frequency", sr.frequency, "Hz"), ("voltage", sr.voltage, "V")):
        for i in range(c.count.size):
            ft = "-" if math.isnan(c.first_time[i]) else f"{c.first_time[i]:.3f}"
            lines.append(
                f"  {label:9s} DG{i + 1}: count={int(c.count[i])} first={ft} "
                f"worst={c.worst_excursion[i]:.4g} {unit} outside={c.time_outside[i]:.4g} s"
            )
    for label, u in (("e_f", s.uub_f), ("e_v", s.uub_v)):
        t1 = "unsettled" if not u.settled else f"t1={u.settle_time:.3f} s"
        lines.append(f"ultimate bound {label}: b={u.bound:.6g} ({t1}, window {u.window:.3g} s)")
    lines.append(f"power sharing error (tail): {s.sharing:.6g}")
    lines.append(f"tail max |f - f_ref|: {s.tail_freq_dev:.6g} Hz")
    lines.append(f"tail max |v - v_ref|: {s.tail_volt_dev:.6g} V")
    return "\n".join(lines) + "\n"


def kappa_f(cfg) -> np.ndarray:
    """Per-DG bound on the gamma-th derivative of the frequency injections."""
    return attack_kappa(cfg.attacks, "frequency", cfg.n, cfg.gamma)


def graph_matrices(cfg) -> GraphMatrices:
    return build_matrices(cfg.comm_graph())
