"""Closed-loop simulation: model assembly, initial states, RK4 runs and logs."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import least_squares

from . import _kernel as K
from .attacks import coefficient_tensor
from .cbf import CLAMPED, INFEASIBLE
from .config import ConfigError, ScenarioConfig, errors, validate
from .consensus import xi_vector
from .graph import GraphMatrices, build_matrices

log = logging.getLogger(__name__)

# Per-DG CSV block, in column order.
DG_FIELDS = (
    "freq_hz",
    "volt_v",
    "p_w",
    "q_var",
    "omega_n",
    "v_n",
    "xi_f",
    "xi_v",
    "u_c_f",
    "u_safe_f",
    "gamma_f",
    "attack_f",
    "upsilon_f",
    "u_c_v",
    "u_safe_v",
    "gamma_v",
    "attack_v",
    "upsilon_v",
)
GLOBAL_FIELDS = ("e_f_norm", "e_v_norm", "lyap_E")


class SimulationError(RuntimeError):
    """Numerical failure during a run (non-finite state, unsolvable start)."""

    def __init__(self, message: str, time: float | None = None, component: str | None = None):
        super().__init__(message)
        self.time = time
        self.component = component


@dataclass(frozen=True)
class Event:
    time: float
    dg: int  # 1-based
    channel: str
    kind: str  # clamp | infeasible | attack_onset


@dataclass
class SimLog:
    """Uniformly sampled run output.

    ``channels[name]`` has shape (samples, N) for every name in
    :data:`DG_FIELDS`; ``e_f_norm``, ``e_v_norm`` and ``lyap_E`` are 1-D.
    ``extras`` holds diagnostics that are not written to CSV.
    """

    time: np.ndarray
    channels: dict[str, np.ndarray]
    e_f_norm: np.ndarray
    e_v_norm: np.ndarray
    lyap_E: np.ndarray
    events: list[Event] = field(default_factory=list)
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_dg(self) -> int:
        return self.channels["freq_hz"].shape[1]

    def __getitem__(self, name: str) -> np.ndarray:
        if name in self.channels:
            return self.channels[name]
        if name in GLOBAL_FIELDS:
            return getattr(self, name)
        return self.extras[name]

    def window(self, t_start: float, t_end: float = np.inf) -> np.ndarray:
        """Boolean mask of samples with ``t_start <= t < t_end``."""
        return (self.time >= t_start) & (self.time < t_end)


@dataclass
class GlobalState:
    """Flat closed-loop state plus its time stamp (layout in ``_kernel``)."""

    t: float
    x: np.ndarray
    n: int
    gamma: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.shape != (self.n * (5 + 2 * self.gamma),):
            raise ValueError(f"state size {self.x.shape} does not match N={self.n}, gamma={self.gamma}")

    def _block(self, k):
        return self.x[k * self.n : (k + 1) * self.n]

    @property
    def delta(self):
        return self._block(0)

    @property
    def p_meas(self):
        return self._block(1)

    @property
    def q_meas(self):
        return self._block(2)

    @property
    def omega_n(self):
        return self._block(3)

    @property
    def v_n(self):
        return self._block(4)

    @property
    def chain_f(self) -> np.ndarray:
        s = 5 * self.n
        return self.x[s : s + self.n * self.gamma].reshape(self.n, self.gamma)

    @property
    def chain_v(self) -> np.ndarray:
        s = 5 * self.n + self.n * self.gamma
        return self.x[s : s + self.n * self.gamma].reshape(self.n, self.gamma)

    def copy(self) -> "GlobalState":
        return GlobalState(self.t, self.x.copy(), self.n, self.gamma)


def component_name(index: int, n: int, gamma: int) -> str:
    """Human-readable name of a flat state index, for error reports."""
    names = ("delta", "p_meas", "q_meas", "omega_n", "v_n")
    if index < 5 * n:
        return f"{names[index // n]}[DG{index % n + 1}]"
    rest = index - 5 * n
    chan = "f" if rest < n * gamma else "v"
    rest %= n * gamma
    return f"upsilon_{chan}^({rest % gamma})[DG{rest // gamma + 1}]"


def build_model(cfg: ScenarioConfig) -> K.Model:
    net = cfg.network()
    g = cfg.comm_graph()
    spec = cfg.safety_spec()
    refs = cfg.refs()
    coef, onset, active = coefficient_tensor(cfg.attacks, cfg.n)
    m_p = np.array(cfg.m_p)
    n_q = np.array(cfg.n_q)
    return K.Model(
        n=cfg.n,
        gamma=cfg.gamma,
        y_src=np.ascontiguousarray(net.source_admittance()),
        m_p=m_p,
        n_q=n_q,
        omega_c=cfg.omega_c,
        adjacency=np.ascontiguousarray(g.adjacency, dtype=float),
        pinning=np.ascontiguousarray(g.pinning, dtype=float),
        c_f=cfg.c_f,
        c_v=cfg.c_v,
        omega_k=refs.omega_k,
        v_k=refs.v_k,
        nu_f=np.array(cfg.nu_f),
        nu_v=np.array(cfg.nu_v),
        alpha_f=np.array(cfg.alpha_f),
        alpha_v=np.array(cfg.alpha_v),
        omega_l=spec.omega_l,
        omega_h=spec.omega_h,
        v_l=spec.v_l,
        v_h=spec.v_h,
        eta1=spec.eta1,
        eta2=spec.eta2,
        margin_f=m_p * spec.d_s,
        margin_v=n_q * spec.d_s_v,
        attack_coef=coef,
        attack_onset=onset,
        attack_active=active,
        safety=bool(cfg.safety_enabled),
        compensator=bool(cfg.compensator_enabled),
    )


# ---------------------------------------------------------------- initial states


def _power(y_src, v, delta):
    ph = v * np.exp(1j * delta)
    s = ph * np.conj(y_src @ ph)
    return s.real, s.imag


def _solve(fun, x0, what):
    sol = least_squares(fun, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    res = np.max(np.abs(sol.fun))
    if not np.isfinite(res) or res > 1e-8:
        raise SimulationError(f"could not find the {what} operating point (residual {res:.3g})")
    return sol.x


def _primary_point(cfg: ScenarioConfig, y_src):
    """Droop steady state with setpoints at the references (delta_1 = 0)."""
    n = cfg.n
    m_p, n_q = np.array(cfg.m_p), np.array(cfg.n_q)
    wk, vk = cfg.refs().omega_k, cfg.v_ref

    def split(z):
        return np.r_[0.0, z[: n - 1]], z[n - 1], z[n:]

    def fun(z):
        delta, dw, v = split(z)
        p, q = _power(y_src, v, delta)
        return np.r_[m_p * p - dw, v + n_q * q - vk]

    z = _solve(fun, np.r_[np.zeros(n - 1), 0.0, np.full(n, vk)], "primary droop")
    delta, _, v = split(z)
    p, q = _power(y_src, v, delta)
    return delta, p, q, np.full(n, wk), np.full(n, vk)


def _equilibrium_point(cfg: ScenarioConfig, y_src):
    """Secondary-control steady state without attacks: xi_f = xi_v = 0 and omega = omega_k."""
    n = cfg.n
    m_p, n_q = np.array(cfg.m_p), np.array(cfg.n_q)
    wk, vk = cfg.refs().omega_k, cfg.v_ref
    adj = np.array(cfg.adjacency)
    pin = np.array(cfg.pinning)

    def split(z):
        return np.r_[0.0, z[: n - 1]], z[n - 1 :]

    def fun(z):
        delta, v = split(z)
        p, q = _power(y_src, v, delta)
        wp = m_p * p
        xiv = xi_vector(v, n_q * q, adj, pin, vk, 1.0)
        return np.r_[(wp[1:] - wp[0]) / m_p[0], xiv]

    z = _solve(fun, np.r_[np.zeros(n - 1), np.full(n, vk)], "secondary equilibrium")
    delta, v = split(z)
    p, q = _power(y_src, v, delta)
    return delta, p, q, wk + m_p * p, v + n_q * q


def initial_state(cfg: ScenarioConfig, model: K.Model | None = None) -> GlobalState:
    model = build_model(cfg) if model is None else model
    n, g = cfg.n, cfg.gamma
    if cfg.initial_state == "flat":
        blocks = (np.zeros(n), np.zeros(n), np.zeros(n), np.full(n, model.omega_k), np.full(n, model.v_k))
    elif cfg.initial_state == "primary":
        blocks = _primary_point(cfg, model.y_src)
    else:
        blocks = _equilibrium_point(cfg, model.y_src)
    chain = np.zeros((n, g))
    chain[:, 0] = cfg.upsilon0
    x = np.concatenate([*blocks, chain.ravel(), chain.ravel()])
    return GlobalState(0.0, x, n, g)


# ---------------------------------------------------------------- single steps


def derivatives(state: GlobalState, cfg: ScenarioConfig, model: K.Model | None = None) -> np.ndarray:
    """Closed-loop time derivative of ``state``; raises on non-finite output."""
    model = build_model(cfg) if model is None else model
    dx, _ = K.rhs(float(state.t), np.ascontiguousarray(state.x, dtype=float), model)
    bad = np.flatnonzero(~np.isfinite(dx))
    if bad.size:
        name = component_name(int(bad[0]), state.n, state.gamma)
        raise SimulationError(f"non-finite derivative in {name} at t={state.t:g} s", state.t, name)
    return dx


def rk4_step(fun: Callable[[float, np.ndarray], np.ndarray], t: float, y, h: float) -> np.ndarray:
    """One classical Runge-Kutta step for ``dy/dt = fun(t, y)``."""
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(fun(t, y))
    k2 = np.asarray(fun(t + 0.5 * h, y + 0.5 * h * k1))
    k3 = np.asarray(fun(t + 0.5 * h, y + 0.5 * h * k2))
    k4 = np.asarray(fun(t + h, y + h * k3))
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(state: GlobalState, cfg: ScenarioConfig, h: float | None = None, model: K.Model | None = None) -> GlobalState:
    h = cfg.step if h is None else h
    model = build_model(cfg) if model is None else model

    def fun(t, y):
        return derivatives(GlobalState(t, y, state.n, state.gamma), cfg, model)

    return GlobalState(state.t + h, rk4_step(fun, state.t, state.x, h), state.n, state.gamma)


# ---------------------------------------------------------------- full runs


def _events(time, status, cfg: ScenarioConfig) -> list[Event]:
    out = [Event(a.onset, a.dg + 1, a.channel, "attack_onset") for a in cfg.attacks if a.onset <= time[-1]]
    for c, chan in enumerate(("frequency", "voltage")):
        for i in range(cfg.n):
            s = status[:, c, i]
            prev = np.r_[0, s[:-1]]
            for kind, code in (("clamp", CLAMPED), ("infeasible", INFEASIBLE)):
                starts = np.flatnonzero((s == code) & (prev != code))
                out.extend(Event(float(time[k]), i + 1, chan, kind) for k in starts)
    out.sort(key=lambda e: (e.time, e.dg, e.channel, e.kind))
    return out


def assemble_log(cfg: ScenarioConfig, gm: GraphMatrices, times, states, diags, status) -> SimLog:
    n, g = cfg.n, cfg.gamma
    m_p, n_q = np.array(cfg.m_p), np.array(cfg.n_q)
    refs = cfg.refs()
    blk = lambda k: states[:, k * n : (k + 1) * n]  # noqa: E731
    pm, qm, wn, vn = blk(1), blk(2), blk(3), blk(4)
    chain_f = states[:, 5 * n : 5 * n + n * g].reshape(-1, n, g)
    chain_v = states[:, 5 * n + n * g :].reshape(-1, n, g)
    d = lambda row: diags[:, row, :].copy()  # noqa: E731
    ch = {
        "freq_hz": d(K.D_OMEGA) / (2.0 * np.pi),
        "volt_v": d(K.D_VOD),
        "p_w": pm.copy(),
        "q_var": qm.copy(),
        "omega_n": wn.copy(),
        "v_n": vn.copy(),
        "xi_f": d(K.D_XIF),
        "xi_v": d(K.D_XIV),
        "u_c_f": d(K.D_XIF),
        "u_safe_f": d(K.D_USAFE_F),
        "gamma_f": d(K.D_GAMMA_F),
        "attack_f": d(K.D_ATT_F),
        "upsilon_f": chain_f[:, :, 0].copy(),
        "u_c_v": d(K.D_XIV),
        "u_safe_v": d(K.D_USAFE_V),
        "gamma_v": d(K.D_GAMMA_V),
        "attack_v": d(K.D_ATT_V),
        "upsilon_v": chain_v[:, :, 0].copy(),
    }
    # Containment errors, one solve for all samples.
    tf = np.linalg.solve(gm.lg, gm.pinning_matrix @ (refs.omega_k + m_p * pm).T).T
    tv = np.linalg.solve(gm.lg, gm.pinning_matrix @ (refs.v_k + n_q * qm).T).T
    e_f = wn - tf
    e_v = vn - tv
    xi = ch["xi_f"]
    lyap = np.einsum("si,ij,sj->s", xi, gm.lg_inverse(), xi)
    extras = {
        "cbf_lower_f": d(K.D_LO_F),
        "cbf_upper_f": d(K.D_HI_F),
        "cbf_lower_v": d(K.D_LO_V),
        "cbf_upper_v": d(K.D_HI_V),
        "status_f": status[:, 0, :].astype(np.int8),
        "status_v": status[:, 1, :].astype(np.int8),
        "u_f": d(K.D_U_F),
        "u_v": d(K.D_U_V),
        "p_inst": d(K.D_PINST),
        "q_inst": d(K.D_QINST),
        "delta": blk(0).copy(),
        "e_f": e_f,
        "e_v": e_v,
    }
    return SimLog(
        time=times.copy(),
        channels=ch,
        e_f_norm=np.linalg.norm(e_f, axis=1),
        e_v_norm=np.linalg.norm(e_v, axis=1),
        lyap_E=lyap,
        events=_events(times, status, cfg),
        extras=extras,
    )


def run(cfg: ScenarioConfig, *, check: bool = True, x0: GlobalState | None = None) -> SimLog:
    """Simulate ``cfg`` over its horizon and return the sampled log.

    Raises :class:`ConfigError` when validation reports errors and
    :class:`SimulationError` on numerical failure.
    """
    if check:
        bad = errors(validate(cfg))
        if bad:
            raise ConfigError("; ".join(f.message for f in bad))
    model = build_model(cfg)
    state = initial_state(cfg, model) if x0 is None else x0
    n_steps = int(round(cfg.horizon / cfg.step))
    log_every = max(1, int(round(cfg.log_step / cfg.step)))
    zoh_every = 0 if cfg.zoh_period is None else max(1, int(round(cfg.zoh_period / cfg.step)))
    log.debug("running %s: %d steps, logging every %d", cfg.name, n_steps, log_every)
    times, states, diags, status, err, err_step, err_idx = K.integrate(
        np.ascontiguousarray(state.x), float(state.t), float(cfg.step), n_steps, log_every, zoh_every, model
    )
    if err != K.ERR_NONE:
        t_fail = state.t + err_step * cfg.step
        name = component_name(int(err_idx), cfg.n, cfg.gamma)
        raise SimulationError(f"non-finite state in {name} at t={t_fail:.6g} s", t_fail, name)
    return assemble_log(cfg, build_matrices(cfg.comm_graph()), times, states, diags, status)
