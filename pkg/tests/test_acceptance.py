"""Acceptance criteria 1-10. Each test records one PASS/FAIL line before asserting."""

import math
import time

import numpy as np
import pytest
from numba import njit

from conftest import ACCEPTANCE_LINES
from safegrid import _kernel as K
from safegrid import run
from safegrid.cbf import CbfBounds, interval, project, safe_filter
from safegrid.consensus import (
    ConsensusGains,
    LeaderRefs,
    containment_error_f,
    containment_error_v,
    xi_f_all,
    xi_v_all,
)
from safegrid.engine import build_model, initial_state
from safegrid.graph import CommGraph, build_matrices
from safegrid.io import write_timeseries
from safegrid.metrics import (
    descent_violations,
    graph_matrices,
    kappa_f,
    lyapunov_trace,
    power_sharing_error,
    safety_report,
    summarize,
)
from safegrid.plant import DroopParams

TAIL = 3.0  # s


def record(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def tail_devs(log, cfg):
    tail = log.time >= log.time[-1] - TAIL
    df = np.abs(log["freq_hz"][tail] - cfg.f_ref_hz).max(axis=0)
    dv = np.abs(log["volt_v"][tail] - cfg.v_ref).max(axis=0)
    return df, dv


def test_criterion_1_case2_safety(case2_cfg):
    run(case2_cfg.with_override("horizon", 0.01))  # compile outside the timed run
    t0 = time.perf_counter()
    log = run(case2_cfg)
    elapsed = time.perf_counter() - t0
    rep = safety_report(log, case2_cfg.safety_spec(), case2_cfg.refs())
    ok = rep.total_violations == 0 and elapsed < 30.0 and log.time[-1] == pytest.approx(15.0)
    record(1, ok, f"violations f={rep.frequency.count.tolist()} v={rep.voltage.count.tolist()} runtime={elapsed:.1f}s")
    assert rep.total_violations == 0
    assert elapsed < 30.0


def test_criterion_2_case2_convergence(case2_log, case2_cfg):
    df, dv = tail_devs(case2_log, case2_cfg)
    ok_f, ok_v = df.max() <= 0.05, dv.max() <= 1.0
    record(
        2,
        ok_f and ok_v,
        f"tail max|f-60|={df.max():.3g} Hz (<=0.05) max|v-340|={dv.max():.3g} V (<=1) per-DG v={np.round(dv, 3).tolist()}",
    )
    assert ok_f
    assert ok_v


def test_criterion_3_case1_transient_violation(case1_log, case1_cfg):
    rep = safety_report(case1_log, case1_cfg.safety_spec(), case1_cfg.refs())
    first = rep.first_violation_time
    df, dv = tail_devs(case1_log, case1_cfg)
    first_txt = "none" if math.isnan(first) else f"{first:.3f}s"
    violated = rep.total_violations >= 1 and 5.0 < first < 10.0
    converged = df.max() <= 4 * 0.05 and dv.max() <= 4 * 1.0
    record(
        3,
        violated and converged,
        f"violations={rep.total_violations} first={first_txt} tail max|f-60|={df.max():.3g} Hz (<=0.2) "
        f"max|v-340|={dv.max():.3g} V (<=4)",
    )
    assert violated
    assert converged


NU_SWEEP = (87.5, 175.0, 350.0, 700.0)
SWEEP_STEP = 5e-6  # resolves the nu_f = 700 adaptation chain; see notes


@pytest.mark.slow
def test_criterion_4_gain_monotonicity(case2_cfg):
    bounds = []
    for nu in NU_SWEEP:
        cfg = case2_cfg.with_override("nu_f", nu).with_override("step", SWEEP_STEP)
        bounds.append(summarize(run(cfg), cfg).uub_f.bound)
    steps_ok = [b1 <= 1.05 * b0 for b0, b1 in zip(bounds, bounds[1:])]
    ok = all(steps_ok)
    record(4, ok, "b(e_f) for nu_f " + ", ".join(f"{nu:g}: {b:.4g}" for nu, b in zip(NU_SWEEP, bounds)))
    assert ok


def golden_min(f, lo, hi, iters=160):
    """Golden-section minimizer of a unimodal f on [lo, hi]."""
    r = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - r * (b - a), a + r * (b - a)
    for _ in range(iters):
        if f(c) < f(d):
            b, d = d, c
            c = b - r * (b - a)
        else:
            a, c = c, d
            d = a + r * (b - a)
    return 0.5 * (a + b)


def test_criterion_5_qp_oracle():
    rng = np.random.default_rng(2024)
    worst, fails = 0.0, 0
    for _ in range(10_000):
        lo, hi = np.sort(rng.uniform(-100, 100, 2))
        u_c = rng.uniform(-300, 300)
        u, _ = safe_filter(u_c, CbfBounds(lo, hi))
        err = abs(u - golden_min(lambda x: (x - u_c) ** 2, lo, hi))
        worst = max(worst, err)
        fails += err > 1e-9
    record(5, fails == 0, f"10000 calls, max |u - oracle|={worst:.2e} (<=1e-9), failures={fails}")
    assert fails == 0


@njit
def _scalar_min_barrier(w0, x_ref, low, high, eta, m_p, d_s, amp, freq, phase, gain, noise, h, steps):
    w = w0
    worst = min(w - x_ref + low, high - (w - x_ref))
    margin = m_p * d_s
    for k in range(steps):
        t = k * h
        u_c = gain * math.sin(3.0 * t) + noise[k]
        lo, hi = interval(w, x_ref, low, high, eta, eta, margin)
        u, _ = project(u_c, lo, hi)
        # odd steps: full-size disturbance pushing away from the reference
        if k % 2 == 0:
            d = amp * math.copysign(1.0, math.sin(freq * t + phase))
        else:
            d = -d_s * math.copysign(1.0, w - x_ref)
        w += h * (u - m_p * d)
        worst = min(worst, w - x_ref + low, high - (w - x_ref))
    return worst


def test_criterion_6_forward_invariance():
    rng = np.random.default_rng(6)
    x_ref, band = 2 * math.pi * 60, 4 * math.pi
    h, steps = 1e-3, 3000
    tol = -1e-3 * 2 * band
    worst, fails = math.inf, 0
    for _ in range(500):
        m_p = rng.choice([9.4e-5, 18.8e-5])
        d_s = rng.uniform(0.0, 1e4)
        w0 = x_ref + rng.uniform(-band, band)
        b = _scalar_min_barrier(
            w0, x_ref, band, band, 10.0, m_p, d_s,
            rng.uniform(0, 1) * d_s, rng.uniform(0.1, 20), rng.uniform(0, 2 * math.pi),
            rng.uniform(-500, 500), rng.normal(0, 50, steps), h, steps,
        )  # fmt: skip
        worst = min(worst, b)
        fails += b < tol
    record(6, fails == 0, f"500 trajectories, min barrier={worst:.3g} (>= {tol:.3g}), failures={fails}")
    assert fails == 0


def test_criterion_7_vector_identity(ring):
    g = CommGraph(*ring)
    gm = build_matrices(g)
    droop = [DroopParams(9.4e-5, 1.3e-3)] * 2 + [DroopParams(18.8e-5, 2.6e-3)] * 2
    m_p = np.array([d.m_p for d in droop])
    n_q = np.array([d.n_q for d in droop])
    gains, refs = ConsensusGains(20.0, 10.0), LeaderRefs(2 * math.pi * 60, 340.0)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        p, q = rng.uniform(-2e4, 2e4, 4), rng.uniform(-2e4, 2e4, 4)
        wn, vn = refs.omega_k + rng.uniform(-10, 10, 4), 340 + rng.uniform(-40, 40, 4)
        xf = xi_f_all(wn - m_p * p, p, droop, g, gains, refs)
        xv = xi_v_all(vn - n_q * q, q, droop, g, gains, refs)
        rf = -gains.c_f * gm.lg @ containment_error_f(wn, refs, droop, p, gm)
        rv = -gains.c_v * gm.lg @ containment_error_v(vn, refs, droop, q, gm)
        worst = max(worst, np.linalg.norm(xf - rf) / np.linalg.norm(xf), np.linalg.norm(xv - rv) / np.linalg.norm(xv))
    ok = worst <= 1e-10
    record(7, ok, f"100 states, max relative residual={worst:.2e} (<=1e-10)")
    assert ok


def test_criterion_8_lyapunov_descent(case2_log, case2_cfg):
    kappa = kappa_f(case2_cfg)
    trace = lyapunov_trace(case2_log, graph_matrices(case2_cfg), kappa, np.array(case2_cfg.nu_f))
    bad = descent_violations(trace, rel_tol=1e-3)
    gated = int((trace.all_outside[:-1] & trace.all_outside[1:]).sum())
    record(8, bad.size == 0, f"descent violations={bad.size} over {gated} gated intervals, kappa_f={kappa.tolist()}")
    assert bad.size == 0


def test_criterion_9_power_sharing(case2_log, case2_cfg):
    err = power_sharing_error(case2_log, case2_cfg.m_p, 4.0, 5.0)
    mask = case2_log.window(4.0, 5.0)
    p = case2_log["p_w"][mask]
    ratio = p[:, 0] / p[:, 2]
    rdev = np.abs(ratio / 2.0 - 1.0).max()
    ok = err <= 0.02 and rdev <= 0.05
    record(9, ok, f"sharing error={err:.3g} (<=0.02), P1/P3 in [{ratio.min():.4f}, {ratio.max():.4f}] (2 +/- 5%)")
    assert ok


def _final_state(model, x0, h, horizon):
    n = int(round(horizon / h))
    _, states, _, _, err, _, _ = K.integrate(x0, 0.0, h, n, n, 0, model)
    assert err == K.ERR_NONE
    return states[-1]


def test_criterion_10_numerics(case2_cfg, tmp_path):
    smooth = (
        case2_cfg.with_override("attacks", [])
        .with_override("safety_enabled", False)
        .with_override("compensator_enabled", False)
        .with_override("horizon", 1.0)
    )
    model = build_model(smooth)
    x0 = initial_state(smooth, model).x
    # start away from equilibrium so every block moves
    x0 = x0.copy()
    x0[3 * smooth.n : 4 * smooth.n] += np.array([1.0, -0.5, 0.3, 0.0])
    hs = (8e-3, 4e-3, 2e-3)
    errs = []
    for h in hs:
        coarse = _final_state(model, x0, h, 1.0)
        ref = _final_state(model, x0, h / 10, 1.0)
        errs.append(np.max(np.abs(coarse - ref) / np.maximum(np.abs(ref), 1.0)))
    orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]

    cfg = case2_cfg.with_override("horizon", 5.5)
    write_timeseries(run(cfg), tmp_path / "a.csv")
    write_timeseries(run(cfg), tmp_path / "b.csv")
    identical = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    ok = min(orders) >= 3.5 and identical
    record(10, ok, f"RK4 orders={[round(o, 2) for o in orders]} (>=3.5), bit-identical CSVs={identical}")
    assert min(orders) >= 3.5
    assert identical
