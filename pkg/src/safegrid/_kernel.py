"""Compiled closed-loop right-hand side and fixed-step RK4 loop.

State layout (N DGs, chain order G)::

    [delta(N), P(N), Q(N), omega_n(N), V_n(N), chain_f(N*G), chain_v(N*G)]

with ``chain_x[i*G + k]`` the k-th derivative of Ups for DG i.
"""

from __future__ import annotations

from collections import namedtuple

import numpy as np
from numba import njit

from .cbf import INACTIVE, interval, project
from .compensator import gamma_signal

Model = namedtuple(
    "Model",
    [
        "n",
        "gamma",
        "y_src",  # complex (N, N)
        "m_p",
        "n_q",
        "omega_c",
        "adjacency",
        "pinning",
        "c_f",
        "c_v",
        "omega_k",
        "v_k",
        "nu_f",
        "nu_v",
        "alpha_f",
        "alpha_v",
        "omega_l",
        "omega_h",
        "v_l",
        "v_h",
        "eta1",
        "eta2",
        "margin_f",  # m_p * d_s per DG
        "margin_v",  # n_q * d_s_v per DG
        "attack_coef",  # (2, N, K)
        "attack_onset",  # (2, N)
        "attack_active",  # (2, N) bool
        "safety",
        "compensator",
    ],
)

# Diagnostic rows, each of length N.
D_OMEGA = 0
D_VOD = 1
D_PINST = 2
D_QINST = 3
D_XIF = 4
D_XIV = 5
D_USAFE_F = 6
D_USAFE_V = 7
D_GAMMA_F = 8
D_GAMMA_V = 9
D_ATT_F = 10
D_ATT_V = 11
D_LO_F = 12
D_HI_F = 13
D_LO_V = 14
D_HI_V = 15
D_STAT_F = 16
D_STAT_V = 17
D_U_F = 18
D_U_V = 19
NDIAG = 20

ERR_NONE = 0
ERR_NONFINITE = 1


@njit(cache=True)
def _attack(coef, onset, active, c, i, t):
    if not active[c, i] or t < onset[c, i]:
        return 0.0
    tau = t - onset[c, i]
    acc = 0.0
    for k in range(coef.shape[2] - 1, -1, -1):
        acc = acc * tau + coef[c, i, k]
    return acc


@njit(cache=True)
def _xi(value, weighted, adjacency, pinning, ref, c, i):
    acc = pinning[i] * (ref - value[i])
    for j in range(value.shape[0]):
        a = adjacency[i, j]
        if a != 0.0:
            acc += a * ((value[j] - value[i]) + (weighted[j] - weighted[i]))
    return c * acc


@njit(cache=True)
def evaluate(t, x, m, held, use_held, dx, diag, work, vph):
    """Fill ``dx`` and ``diag`` at (t, x). ``work`` (4, N) and ``vph`` (N,) are scratch.

    With ``use_held`` the applied controls ``u`` and the adaptation drive
    ``|xi|`` come from ``held`` (rows: u_f, u_v, |xi_f|, |xi_v|).
    """
    n = m.n
    g = m.gamma
    nf = 5 * n
    nv = 5 * n + n * g
    omega = work[0]
    vod = work[1]
    wp = work[2]
    wq = work[3]
    for i in range(n):
        wp[i] = m.m_p[i] * x[n + i]
        wq[i] = m.n_q[i] * x[2 * n + i]
        omega[i] = x[3 * n + i] - wp[i]
        vod[i] = x[4 * n + i] - wq[i]
        vph[i] = vod[i] * np.exp(1j * x[i])
    for i in range(n):
        cur = 0j
        for j in range(n):
            cur += m.y_src[i, j] * vph[j]
        s = vph[i] * np.conj(cur)
        xif = _xi(omega, wp, m.adjacency, m.pinning, m.omega_k, m.c_f, i)
        xiv = _xi(vod, wq, m.adjacency, m.pinning, m.v_k, m.c_v, i)
        diag[D_OMEGA, i] = omega[i]
        diag[D_VOD, i] = vod[i]
        diag[D_PINST, i] = s.real
        diag[D_QINST, i] = s.imag
        diag[D_XIF, i] = xif
        diag[D_XIV, i] = xiv

        lof, hif = interval(omega[i], m.omega_k, m.omega_l, m.omega_h, m.eta1, m.eta2, m.margin_f[i])
        lov, hiv = interval(vod[i], m.v_k, m.v_l, m.v_h, m.eta1, m.eta2, m.margin_v[i])
        diag[D_LO_F, i] = lof
        diag[D_HI_F, i] = hif
        diag[D_LO_V, i] = lov
        diag[D_HI_V, i] = hiv
        if m.safety:
            usf, stf = project(xif, lof, hif)
            usv, stv = project(xiv, lov, hiv)
        else:
            usf, stf = xif, INACTIVE
            usv, stv = xiv, INACTIVE
        diag[D_USAFE_F, i] = usf
        diag[D_USAFE_V, i] = usv
        diag[D_STAT_F, i] = stf
        diag[D_STAT_V, i] = stv

        if m.compensator:
            gf = gamma_signal(xif, x[nf + i * g], np.exp(-m.alpha_f[i] * t))
            gv = gamma_signal(xiv, x[nv + i * g], np.exp(-m.alpha_v[i] * t))
        else:
            gf = 0.0
            gv = 0.0
        diag[D_GAMMA_F, i] = gf
        diag[D_GAMMA_V, i] = gv

        if use_held:
            uf = held[0, i]
            uv = held[1, i]
            drive_f = held[2, i]
            drive_v = held[3, i]
        else:
            uf = usf + gf
            uv = usv + gv
            drive_f = abs(xif)
            drive_v = abs(xiv)
        diag[D_U_F, i] = uf
        diag[D_U_V, i] = uv

        af = _attack(m.attack_coef, m.attack_onset, m.attack_active, 0, i, t)
        av = _attack(m.attack_coef, m.attack_onset, m.attack_active, 1, i, t)
        diag[D_ATT_F, i] = af
        diag[D_ATT_V, i] = av

        dx[i] = omega[i] - m.omega_k
        dx[n + i] = m.omega_c * (s.real - x[n + i])
        dx[2 * n + i] = m.omega_c * (s.imag - x[2 * n + i])
        dx[3 * n + i] = uf + af
        dx[4 * n + i] = uv + av
        for k in range(g - 1):
            if m.compensator:
                dx[nf + i * g + k] = x[nf + i * g + k + 1]
                dx[nv + i * g + k] = x[nv + i * g + k + 1]
            else:
                dx[nf + i * g + k] = 0.0
                dx[nv + i * g + k] = 0.0
        if m.compensator:
            dx[nf + i * g + g - 1] = m.nu_f[i] * drive_f
            dx[nv + i * g + g - 1] = m.nu_v[i] * drive_v
        else:
            dx[nf + i * g + g - 1] = 0.0
            dx[nv + i * g + g - 1] = 0.0


@njit(cache=True)
def _hold(diag, held, n):
    for i in range(n):
        held[0, i] = diag[D_U_F, i]
        held[1, i] = diag[D_U_V, i]
        held[2, i] = abs(diag[D_XIF, i])
        held[3, i] = abs(diag[D_XIV, i])


@njit(cache=True)
def integrate(x0, t0, h, n_steps, log_every, zoh_every, m):
    """Classical RK4 from ``t0`` for ``n_steps`` steps of size ``h``.

    Logs state and diagnostics every ``log_every`` steps (including both
    ends). ``status[r]`` is the worst filter status seen over the steps
    since the previous sample. ``zoh_every > 0`` holds the control for that
    many steps. Returns (times, states, diags, status, err, err_step, err_idx).
    """
    n = m.n
    size = x0.size
    n_samples = n_steps // log_every + 1
    times = np.empty(n_samples)
    states = np.empty((n_samples, size))
    diags = np.empty((n_samples, NDIAG, n))
    status = np.zeros((n_samples, 2, n), dtype=np.int8)
    held = np.zeros((4, n))
    worst = np.zeros((2, n), dtype=np.int8)
    x = x0.copy()
    k1 = np.empty(size)
    k2 = np.empty(size)
    k3 = np.empty(size)
    k4 = np.empty(size)
    diag = np.empty((NDIAG, n))
    scratch = np.empty((NDIAG, n))
    work = np.empty((4, n))
    vph = np.empty(n, dtype=np.complex128)
    xs = np.empty(size)
    use_held = zoh_every > 0
    r = 0
    for s in range(n_steps + 1):
        t = t0 + s * h
        if use_held and s % zoh_every == 0:
            evaluate(t, x, m, held, False, k1, diag, work, vph)
            _hold(diag, held, n)
        evaluate(t, x, m, held, use_held, k1, diag, work, vph)
        for i in range(n):
            if diag[D_STAT_F, i] > worst[0, i]:
                worst[0, i] = np.int8(diag[D_STAT_F, i])
            if diag[D_STAT_V, i] > worst[1, i]:
                worst[1, i] = np.int8(diag[D_STAT_V, i])
        if s % log_every == 0:
            times[r] = t
            states[r] = x
            diags[r] = diag
            status[r] = worst
            worst[:, :] = 0
            r += 1
        if s == n_steps:
            break
        for j in range(size):
            xs[j] = x[j] + 0.5 * h * k1[j]
        evaluate(t + 0.5 * h, xs, m, held, use_held, k2, scratch, work, vph)
        for j in range(size):
            xs[j] = x[j] + 0.5 * h * k2[j]
        evaluate(t + 0.5 * h, xs, m, held, use_held, k3, scratch, work, vph)
        for j in range(size):
            xs[j] = x[j] + h * k3[j]
        evaluate(t + h, xs, m, held, use_held, k4, scratch, work, vph)
        for j in range(size):
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        for j in range(size):
            if not np.isfinite(x[j]):
                return times[:r], states[:r], diags[:r], status[:r], ERR_NONFINITE, s + 1, j
    return times, states, diags, status, ERR_NONE, 0, -1


@njit(cache=True)
def rhs(t, x, m):
    dx = np.empty(x.size)
    diag = np.empty((NDIAG, m.n))
    held = np.zeros((4, m.n))
    evaluate(t, x, m, held, False, dx, diag, np.empty((4, m.n)), np.empty(m.n, dtype=np.complex128))
    return dx, diag
