import math

import numpy as np
import pytest

from safegrid import ConfigError, SimulationError
from safegrid.cbf import cbf_bounds_f, cbf_bounds_v, safe_filter
from safegrid.compensator import eta, gamma_signal
from safegrid.config import ScenarioConfig
from safegrid.consensus import xi_f_all, xi_v_all
from safegrid.engine import (
    GlobalState,
    build_model,
    component_name,
    derivatives,
    initial_state,
    rk4_step,
    run,
    step_rk4,
)
from safegrid.plant import solve_network


def quiet(cfg, **over):
    for k, v in over.items():
        cfg = cfg.with_override(k, v)
    return cfg


@pytest.fixture(scope="module")
def base():
    return ScenarioConfig.from_dict({"name": "engine-test"})


def pipeline_oracle(cfg, state, t):
    """Closed-loop derivative assembled from the public per-module functions."""
    n, g = cfg.n, cfg.gamma
    droop, graph, gains, refs, spec = cfg.droop(), cfg.comm_graph(), cfg.gains(), cfg.refs(), cfg.safety_spec()
    m_p, n_q = np.array(cfg.m_p), np.array(cfg.n_q)
    omega = state.omega_n - m_p * state.p_meas
    vod = state.v_n - n_q * state.q_meas
    p, q = solve_network(cfg.network(), vod, state.delta)
    xf = xi_f_all(omega, state.p_meas, droop, graph, gains, refs)
    xv = xi_v_all(vod, state.q_meas, droop, graph, gains, refs)
    uf, uv = np.empty(n), np.empty(n)
    for i in range(n):
        sf = safe_filter(xf[i], cbf_bounds_f(omega[i], spec, m_p[i], refs.omega_k))[0] if cfg.safety_enabled else xf[i]
        sv = safe_filter(xv[i], cbf_bounds_v(vod[i], spec, n_q[i], refs.v_k))[0] if cfg.safety_enabled else xv[i]
        if cfg.compensator_enabled:
            sf += gamma_signal(xf[i], state.chain_f[i, 0], eta(t, cfg.alpha_f[i]))
            sv += gamma_signal(xv[i], state.chain_v[i, 0], eta(t, cfg.alpha_v[i]))
        uf[i], uv[i] = sf, sv
    att_f, att_v = np.zeros(n), np.zeros(n)
    for a in cfg.attacks:
        (att_f if a.channel == "frequency" else att_v)[a.dg] += a(t)
    cf = np.zeros((n, g))
    cv = np.zeros((n, g))
    if cfg.compensator_enabled:
        cf[:, :-1], cv[:, :-1] = state.chain_f[:, 1:], state.chain_v[:, 1:]
        cf[:, -1] = np.array(cfg.nu_f) * np.abs(xf)
        cv[:, -1] = np.array(cfg.nu_v) * np.abs(xv)
    return np.concatenate(
        [
            omega - refs.omega_k,
            cfg.omega_c * (p - state.p_meas),
            cfg.omega_c * (q - state.q_meas),
            uf + att_f,
            uv + att_v,
            cf.ravel(),
            cv.ravel(),
        ]
    )


@pytest.mark.parametrize("safety", [True, False])
@pytest.mark.parametrize("comp", [True, False])
def test_kernel_matches_module_pipeline(case2_cfg, safety, comp):
    cfg = quiet(case2_cfg, safety_enabled=safety, compensator_enabled=comp)
    rng = np.random.default_rng(5)
    model = build_model(cfg)
    x0 = initial_state(cfg, model)
    for _ in range(10):
        x = x0.x.copy()
        x[: 5 * cfg.n] += rng.normal(0, 1, 5 * cfg.n) * np.repeat([0.05, 500, 500, 2.0, 10.0], cfg.n)
        x[5 * cfg.n :] = rng.uniform(0, 50, x.size - 5 * cfg.n)
        t = rng.uniform(0, 15)
        st = GlobalState(t, x, cfg.n, cfg.gamma)
        got = derivatives(st, cfg, model)
        want = pipeline_oracle(cfg, st, t)
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


def test_equilibrium_has_zero_derivatives(base):
    cfg = quiet(base, safety_enabled=False, compensator_enabled=False, **{"simulation.initial_state": "equilibrium"})
    st = initial_state(cfg)
    d = derivatives(st, cfg)
    n = cfg.n
    np.testing.assert_allclose(d[:n], 0.0, atol=1e-9)  # angles, rotating frame
    np.testing.assert_allclose(d[3 * n : 5 * n], 0.0, atol=1e-9)  # setpoints
    np.testing.assert_allclose(d[n : 3 * n], 0.0, atol=1e-6)  # filters (W/s)


def test_attack_only_perturbation(base):
    c = 3.25
    cfg = quiet(
        base,
        safety_enabled=False,
        compensator_enabled=False,
        attacks=[{"channel": "frequency", "dg": 1, "coefficients": [c], "onset": 0.0}],
        **{"simulation.initial_state": "equilibrium"},
    )
    d = derivatives(initial_state(cfg), cfg)
    assert d[3 * cfg.n] == pytest.approx(c, abs=1e-9)
    np.testing.assert_allclose(d[3 * cfg.n + 1 : 4 * cfg.n], 0.0, atol=1e-9)


def test_case2_clamps_match_filter_on_logged_state(case2_log, case2_cfg):
    spec, refs = case2_cfg.safety_spec(), case2_cfg.refs()
    k = int(np.searchsorted(case2_log.time, 5.0)) + 1
    omega = 2 * math.pi * case2_log["freq_hz"][k]
    for i in range(case2_cfg.n):
        b = cbf_bounds_f(omega[i], spec, case2_cfg.m_p[i], refs.omega_k)
        assert b.lower == pytest.approx(case2_log["cbf_lower_f"][k, i], abs=1e-9)
        assert b.upper == pytest.approx(case2_log["cbf_upper_f"][k, i], abs=1e-9)
        u, clamped = safe_filter(case2_log["u_c_f"][k, i], b)
        assert u == pytest.approx(case2_log["u_safe_f"][k, i], abs=1e-9)
        if clamped:
            assert case2_log["status_f"][k, i] >= 1


def test_rk4_scalar_hook():
    assert rk4_step(lambda t, y: -y, 0.0, np.array([1.0]), 0.1)[0] == pytest.approx(0.9048375, abs=1e-6)
    y = np.array([1.0, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda t, y: np.zeros_like(y), 0.0, y, 0.5), y)


def test_rk4_uses_stage_times():
    # dy/dt = 3 t^2 is integrated exactly by RK4 (Simpson on the stages)
    y = rk4_step(lambda t, y: np.array([3 * t * t]), 1.0, np.array([0.0]), 0.5)
    assert y[0] == pytest.approx(1.5**3 - 1.0, abs=1e-14)


def test_step_rk4_matches_compiled_run(base):
    cfg = quiet(base, horizon=2e-3, step=1e-4, log_step=1e-4)
    st = initial_state(cfg)
    log = run(cfg)
    for k in range(1, 4):
        st = step_rk4(st, cfg)
        assert st.t == pytest.approx(k * 1e-4)
        np.testing.assert_allclose(st.v_n, log["v_n"][k], rtol=1e-13)
        np.testing.assert_allclose(st.chain_f[:, 0], log["upsilon_f"][k], rtol=1e-13)


def test_short_equilibrium_run_is_flat(base):
    cfg = quiet(base, horizon=0.1, **{"simulation.initial_state": "equilibrium"})
    log = run(cfg)
    assert np.all(np.diff(log.time) > 0)
    assert log.time[-1] == pytest.approx(0.1)
    np.testing.assert_allclose(log["freq_hz"], 60.0, atol=1e-9)
    np.testing.assert_allclose(log["volt_v"], np.broadcast_to(log["volt_v"][0], log["volt_v"].shape), atol=1e-7)
    assert log.events == []


def test_run_rejects_invalid_config(base):
    with pytest.raises(ConfigError, match="Assumption 2"):
        run(base.with_override("graph.pinning", [0, 0, 0, 0]))


def test_nonfinite_state_reported_with_component(base):
    cfg = quiet(
        base,
        horizon=8.0,
        step=1e-3,
        attacks=[{"channel": "frequency", "dg": 2, "coefficients": [0, 0, 1e307], "onset": 1.0}],
    )
    with pytest.raises(SimulationError) as info:
        run(cfg)
    assert info.value.component is not None
    assert info.value.component in str(info.value)
    assert 1.0 < info.value.time <= 8.0


def test_runs_are_deterministic(case2_cfg):
    cfg = quiet(case2_cfg, horizon=5.5)
    a, b = run(cfg), run(cfg)
    for name in a.channels:
        np.testing.assert_array_equal(a[name], b[name])
    np.testing.assert_array_equal(a.lyap_E, b.lyap_E)
    assert a.events == b.events


def test_zoh_at_step_period_close_to_continuous(case2_cfg):
    cfg = quiet(case2_cfg, horizon=0.5)
    cont = run(cfg)
    held = run(cfg.with_override("simulation.zoh_period", cfg.step))
    np.testing.assert_allclose(held["freq_hz"], cont["freq_hz"], atol=1e-6)
    coarse = run(cfg.with_override("simulation.zoh_period", 1e-3))
    assert np.abs(coarse["freq_hz"] - cont["freq_hz"]).max() > 0


def test_initial_states(base):
    flat = initial_state(quiet(base, **{"simulation.initial_state": "flat"}))
    np.testing.assert_array_equal(flat.p_meas, 0.0)
    prim = initial_state(base)
    np.testing.assert_allclose(prim.omega_n, 2 * math.pi * 60)
    m_p = np.array(base.m_p)
    wp = m_p * prim.p_meas
    np.testing.assert_allclose(wp, wp[0], rtol=1e-9)  # droop shares power
    np.testing.assert_allclose(prim.chain_f[:, 0], base.upsilon0)


def test_global_state_layout():
    st = GlobalState(0.0, np.arange(4 * 9, dtype=float), 4, 2)
    np.testing.assert_array_equal(st.omega_n, [12, 13, 14, 15])
    np.testing.assert_array_equal(st.chain_v[1], [30, 31])
    assert component_name(21, 4, 2) == "upsilon_f^(1)[DG1]"
    assert component_name(30, 4, 2) == "upsilon_v^(0)[DG2]"
    assert component_name(5, 4, 2) == "p_meas[DG2]"
    with pytest.raises(ValueError):
        GlobalState(0.0, np.zeros(10), 4, 2)


@pytest.mark.slow
@pytest.mark.parametrize("case", ["case1", "case2"])
def test_halving_step_changes_final_error_by_under_one_percent(case, request):
    cfg = request.getfixturevalue(f"{case}_cfg")
    log = request.getfixturevalue(f"{case}_log")
    fine = run(cfg.with_override("step", cfg.step / 2))
    assert abs(fine.e_f_norm[-1] - log.e_f_norm[-1]) < 0.01 * log.e_f_norm[-1]
