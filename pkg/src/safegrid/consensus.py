"""Neighbourhood consensus terms and containment errors of the secondary layer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .graph import CommGraph, GraphMatrices, build_matrices
from .plant import DroopParams


@dataclass(frozen=True)
class ConsensusGains:
    c_f: float
    c_v: float

    def __post_init__(self):
        if not (self.c_f > 0 and self.c_v > 0):
            raise ValueError("coupling gains must be positive")


@dataclass(frozen=True)
class LeaderRefs:
    omega_k: float  # rad/s
    v_k: float  # V

    def __post_init__(self):
        if not (np.isfinite(self.omega_k) and np.isfinite(self.v_k) and self.omega_k > 0 and self.v_k > 0):
            raise ValueError("leader references must be positive and finite")


@njit(cache=True)
def xi_vector(value, weighted, adjacency, pinning, ref, c):
    """c * [sum_j a_ij (x_j - x_i) + g_i (ref - x_i) + sum_j a_ij (w_j - w_i)] for every i."""
    n = value.shape[0]
    out = np.empty(n)
    for i in range(n):
        acc = pinning[i] * (ref - value[i])
        for j in range(n):
            a = adjacency[i, j]
            if a != 0.0:
                acc += a * ((value[j] - value[i]) + (weighted[j] - weighted[i]))
        out[i] = c * acc
    return out


def _droop_arrays(droop: Sequence[DroopParams]):
    return np.array([d.m_p for d in droop]), np.array([d.n_q for d in droop])


def xi_f_all(omega, p_meas, droop, g: CommGraph, gains: ConsensusGains, refs: LeaderRefs) -> np.ndarray:
    m_p, _ = _droop_arrays(droop)
    omega = np.asarray(omega, dtype=float)
    return xi_vector(omega, m_p * np.asarray(p_meas, dtype=float), g.adjacency, g.pinning, refs.omega_k, gains.c_f)


def xi_v_all(v_od, q_meas, droop, g: CommGraph, gains: ConsensusGains, refs: LeaderRefs) -> np.ndarray:
    _, n_q = _droop_arrays(droop)
    v_od = np.asarray(v_od, dtype=float)
    return xi_vector(v_od, n_q * np.asarray(q_meas, dtype=float), g.adjacency, g.pinning, refs.v_k, gains.c_v)


def xi_f(i, omega, p_meas, droop, g, gains, refs) -> float:
    """Frequency consensus term of follower ``i`` (rad/s^2)."""
    return float(xi_f_all(omega, p_meas, droop, g, gains, refs)[i])


def xi_v(i, v_od, q_meas, droop, g, gains, refs) -> float:
    """Voltage consensus term of follower ``i`` (V/s)."""
    return float(xi_v_all(v_od, q_meas, droop, g, gains, refs)[i])


def _containment(setpoint, local_target, gm: GraphMatrices):
    # Pinned-containment target L_G^{-1} G t; equals t itself whenever t is uniform.
    target = np.linalg.solve(gm.lg, gm.pinning_matrix @ local_target)
    return np.asarray(setpoint, dtype=float) - target


def containment_error_f(omega_n, refs: LeaderRefs, droop, p_meas, g: CommGraph | GraphMatrices) -> np.ndarray:
    """Frequency containment error ``e_f`` (rad/s), one entry per DG.

    The local target of DG i is ``omega_k + m_Pi P_i``; it is propagated
    through the pinning so that ``xi_f = -c_f L_G e_f`` holds exactly.
    """
    gm = g if isinstance(g, GraphMatrices) else build_matrices(g)
    m_p, _ = _droop_arrays(droop)
    return _containment(omega_n, refs.omega_k + m_p * np.asarray(p_meas, dtype=float), gm)


def containment_error_v(v_n, refs: LeaderRefs, droop, q_meas, g: CommGraph | GraphMatrices) -> np.ndarray:
    gm = g if isinstance(g, GraphMatrices) else build_matrices(g)
    _, n_q = _droop_arrays(droop)
    return _containment(v_n, refs.v_k + n_q * np.asarray(q_meas, dtype=float), gm)
