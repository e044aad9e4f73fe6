"""Control-barrier-function safety filter for the frequency and voltage bands.

Each channel of each DG has two linear barriers (lower and upper band edge).
With linear class-K functions and a worst-case bound on the power-rate
disturbance, the admissible controls form an interval, so the QP
``min |u - u_c|`` reduces to a clamp.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

from numba import njit

log = logging.getLogger(__name__)

INACTIVE, CLAMPED, INFEASIBLE = 0, 1, 2


@dataclass(frozen=True)
class SafetySpec:
    omega_l: float  # rad/s below the reference
    omega_h: float  # rad/s above the reference
    v_l: float  # V
    v_h: float  # V
    eta1: float = 10.0  # 1/s
    eta2: float = 10.0  # 1/s
    d_s: float = 1.0e4  # W/s, bound on |dP/dt|
    d_s_v: float = 1.0e4  # var/s, bound on |dQ/dt|

    def __post_init__(self):
        for name in ("omega_l", "omega_h", "v_l", "v_h", "eta1", "eta2", "d_s", "d_s_v"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SafetySpec.{name} must be positive")


@dataclass(frozen=True)
class CbfBounds:
    lower: float
    upper: float

    @property
    def feasible(self) -> bool:
        return self.lower <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


@njit(cache=True)
def barrier_pair(x, x_ref, low, high):
    dev = x - x_ref
    return dev + low, high - dev


@njit(cache=True)
def interval(x, x_ref, low, high, eta1, eta2, margin):
    """Admissible control interval; ``margin`` = droop gain * disturbance bound."""
    h1, h2 = barrier_pair(x, x_ref, low, high)
    return margin - eta1 * h1, -margin + eta2 * h2


@njit(cache=True)
def project(u_c, lower, upper):
    """Closed-form solution of the 1-D QP. Returns (u_safe, status)."""
    if lower > upper:
        return 0.5 * (lower + upper), INFEASIBLE
    if u_c < lower:
        return lower, CLAMPED
    if u_c > upper:
        return upper, CLAMPED
    return u_c, INACTIVE


def barrier_values_f(omega_i: float, spec: SafetySpec, omega_ref: float) -> tuple[float, float]:
    return barrier_pair(omega_i, omega_ref, spec.omega_l, spec.omega_h)


def barrier_values_v(v_i: float, spec: SafetySpec, v_ref: float) -> tuple[float, float]:
    return barrier_pair(v_i, v_ref, spec.v_l, spec.v_h)


def cbf_bounds_f(omega_i: float, spec: SafetySpec, m_p: float, omega_ref: float) -> CbfBounds:
    """Robust CBF interval for the frequency setpoint rate (rad/s^2).

    ``u >= m_p d_s - eta1 h1`` keeps the lower edge, ``u <= -m_p d_s + eta2 h2``
    the upper one, for any power drift with ``|dP/dt| <= d_s``.
    """
    lo, hi = interval(omega_i, omega_ref, spec.omega_l, spec.omega_h, spec.eta1, spec.eta2, m_p * spec.d_s)
    return CbfBounds(lo, hi)


def cbf_bounds_v(v_i: float, spec: SafetySpec, n_q: float, v_ref: float) -> CbfBounds:
    lo, hi = interval(v_i, v_ref, spec.v_l, spec.v_h, spec.eta1, spec.eta2, n_q * spec.d_s_v)
    return CbfBounds(lo, hi)


def safe_filter(u_c: float, b: CbfBounds) -> tuple[float, bool]:
    """Minimally invasive safe control: projection of ``u_c`` onto ``b``.

    On an empty interval the midpoint is returned and the event is logged.
    """
    if math.isnan(u_c) or math.isnan(b.lower) or math.isnan(b.upper):
        raise ValueError("safe_filter received NaN")
    u, status = project(float(u_c), float(b.lower), float(b.upper))
    if status == INFEASIBLE:
        log.warning("CBF interval empty (lower=%g > upper=%g); using midpoint", b.lower, b.upper)
    return u, u != u_c


def delta_u(u_safe: float, u_c: float) -> float:
    return u_safe - u_c
