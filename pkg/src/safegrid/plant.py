"""Quasi-static phasor model of the islanded microgrid.

The network is algebraic (bus admittance at nominal frequency); the dynamic
states are the DG phase angles in the leader's rotating frame, the low-pass
filtered power measurements, and the secondary setpoints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class LineSpec:
    from_bus: int
    to_bus: int
    resistance: float  # ohm
    inductance: float  # henry

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise NetworkError(f"line {self.from_bus}-{self.to_bus} connects a bus to itself")
        if self.resistance < 0 or self.inductance < 0:
            raise NetworkError("line resistance and inductance must be non-negative")

    def impedance(self, omega0: float) -> complex:
        return complex(self.resistance, omega0 * self.inductance)


@dataclass(frozen=True)
class LoadSpec:
    bus: int
    resistance: float  # ohm
    inductance: float  # henry

    def __post_init__(self):
        if self.resistance < 0 or self.inductance < 0:
            raise NetworkError("load resistance and inductance must be non-negative")
        if not (self.resistance > 0 or self.inductance > 0):
            raise NetworkError(f"load at bus {self.bus} has zero impedance")

    def impedance(self, omega0: float) -> complex:
        return complex(self.resistance, omega0 * self.inductance)


@dataclass(frozen=True)
class DroopParams:
    m_p: float  # rad/s per W
    n_q: float  # V per var
    omega_c: float = 31.4  # rad/s

    def __post_init__(self):
        if not (self.m_p > 0 and self.n_q > 0 and self.omega_c > 0):
            raise ValueError("droop coefficients and filter cutoff must be positive")


@dataclass
class PlantState:
    delta: np.ndarray
    p_meas: np.ndarray
    q_meas: np.ndarray
    omega_n: np.ndarray
    v_n: np.ndarray


@dataclass(frozen=True)
class ElectricalNetwork:
    """Bus admittance matrix plus the attachment of the DG sources.

    ``dg_buses[i]`` is the bus DG i feeds. If ``coupling`` is given, each
    DG sits behind its own series output impedance (siemens, one entry per
    DG) and the bus it feeds becomes an internal network node.
    """

    y_bus: np.ndarray
    dg_buses: tuple[int, ...] | None = None
    coupling: np.ndarray | None = None
    _y_src: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y_bus, dtype=complex)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise NetworkError("y_bus must be square")
        object.__setattr__(self, "y_bus", y)
        buses = tuple(range(y.shape[0])) if self.dg_buses is None else tuple(self.dg_buses)
        if len(set(buses)) != len(buses) or any(not 0 <= b < y.shape[0] for b in buses):
            raise NetworkError(f"invalid DG bus list {buses}")
        object.__setattr__(self, "dg_buses", buses)
        if self.coupling is not None:
            c = np.asarray(self.coupling, dtype=complex).ravel()
            if c.shape[0] != len(buses):
                raise NetworkError("one coupling admittance per DG is required")
            object.__setattr__(self, "coupling", c)
        object.__setattr__(self, "_y_src", self._reduce())

    @property
    def n_dg(self) -> int:
        return len(self.dg_buses)

    def _full_matrix(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (Y, source node indices, eliminated node indices)."""
        nb = self.y_bus.shape[0]
        if self.coupling is None:
            keep = np.array(self.dg_buses)
            drop = np.array([b for b in range(nb) if b not in self.dg_buses], dtype=int)
            return self.y_bus, keep, drop
        n = self.n_dg
        y = np.zeros((n + nb, n + nb), dtype=complex)
        y[n:, n:] = self.y_bus
        for i, (b, yc) in enumerate(zip(self.dg_buses, self.coupling)):
            y[i, i] += yc
            y[n + b, n + b] += yc
            y[i, n + b] -= yc
            y[n + b, i] -= yc
        return y, np.arange(n), np.arange(n, n + nb)

    def _reduce(self) -> np.ndarray:
        y, keep, drop = self._full_matrix()
        if drop.size == 0:
            return y[np.ix_(keep, keep)].copy()
        yll = y[np.ix_(drop, drop)]
        if np.linalg.cond(yll) > 1e12:
            raise NetworkError("internal network admittance is singular (floating buses without loads?)")
        ygl = y[np.ix_(keep, drop)]
        ylg = y[np.ix_(drop, keep)]
        return y[np.ix_(keep, keep)] - ygl @ np.linalg.solve(yll, ylg)

    def source_admittance(self) -> np.ndarray:
        """Admittance seen by the DG voltage sources (Kron-reduced)."""
        return self._y_src

    def bus_voltages(self, v_src: np.ndarray) -> np.ndarray:
        """Phasor voltage at every bus given the DG source phasors."""
        y, keep, drop = self._full_matrix()
        full = np.zeros(y.shape[0], dtype=complex)
        full[keep] = v_src
        if drop.size:
            full[drop] = -np.linalg.solve(y[np.ix_(drop, drop)], y[np.ix_(drop, keep)] @ v_src)
        if self.coupling is None:
            return full
        return full[self.n_dg:]


def _stamp(y: np.ndarray, a: int, b: int, adm: complex) -> None:
    y[a, a] += adm
    y[b, b] += adm
    y[a, b] -= adm
    y[b, a] -= adm


def build_admittance(
    lines: Sequence[LineSpec],
    loads: Sequence[LoadSpec],
    omega0: float,
    *,
    n_bus: int | None = None,
    dg_buses: Sequence[int] | None = None,
    coupling: np.ndarray | None = None,
) -> ElectricalNetwork:
    """Assemble the bus admittance matrix (siemens) at angular frequency ``omega0``.

    Bus indices are zero-based. Loads are shunt admittances on their bus.
    ``dg_buses``/``coupling`` are forwarded to :class:`ElectricalNetwork`.
    """
    if omega0 <= 0:
        raise NetworkError("nominal angular frequency must be positive")
    used = [b for ln in lines for b in (ln.from_bus, ln.to_bus)] + [ld.bus for ld in loads]
    if n_bus is None:
        n_bus = max(used) + 1 if used else 0
    y = np.zeros((n_bus, n_bus), dtype=complex)
    for ln in lines:
        z = ln.impedance(omega0)
        if z == 0:
            raise NetworkError(f"line {ln.from_bus}-{ln.to_bus} has zero impedance")
        _stamp(y, ln.from_bus, ln.to_bus, 1.0 / z)
    for ld in loads:
        y[ld.bus, ld.bus] += 1.0 / ld.impedance(omega0)
    _check_connected(n_bus, lines)
    return ElectricalNetwork(y, dg_buses=None if dg_buses is None else tuple(dg_buses), coupling=coupling)


def _check_connected(n_bus: int, lines: Sequence[LineSpec]) -> None:
    if n_bus <= 1:
        return
    parent = list(range(n_bus))

    def find(k):
        while parent[k] != k:
            parent[k] = parent[parent[k]]
            k = parent[k]
        return k

    for ln in lines:
        parent[find(ln.from_bus)] = find(ln.to_bus)
    if len({find(k) for k in range(n_bus)}) > 1:
        raise NetworkError("bus graph is not connected")


def coupling_admittance(resistance: float, inductance: float, omega0: float, n: int) -> np.ndarray | None:
    z = complex(resistance, omega0 * inductance)
    if z == 0:
        return None
    return np.full(n, 1.0 / z, dtype=complex)


def solve_network(net: ElectricalNetwork, v_mag, delta) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous active/reactive power injected by each DG source.

    ``S_i = V_i conj(I_i)`` with ``I = Y_src V`` and ``V_i = v_mag_i * exp(j delta_i)``.
    """
    v = np.asarray(v_mag, dtype=float) * np.exp(1j * np.asarray(delta, dtype=float))
    s = v * np.conj(net.source_admittance() @ v)
    return s.real, s.imag


def droop_outputs(s: PlantState, droop: Sequence[DroopParams]) -> tuple[np.ndarray, np.ndarray]:
    m_p = np.array([d.m_p for d in droop])
    n_q = np.array([d.n_q for d in droop])
    omega = np.asarray(s.omega_n) - m_p * np.asarray(s.p_meas)
    v_od = np.asarray(s.v_n) - n_q * np.asarray(s.q_meas)
    return omega, v_od


def measurement_filter_derivative(s: PlantState, p_inst, q_inst, omega_c):
    """First-order low-pass power measurement: ``dP/dt = omega_c (P_inst - P_meas)``."""
    dp = omega_c * (np.asarray(p_inst) - np.asarray(s.p_meas))
    dq = omega_c * (np.asarray(q_inst) - np.asarray(s.q_meas))
    return dp, dq


def angle_derivative(omega, omega_common: float):
    return np.asarray(omega, dtype=float) - omega_common
