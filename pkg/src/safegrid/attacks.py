"""Polynomial false-data injections on the secondary control input channels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

Channel = Literal["frequency", "voltage"]
CHANNELS: tuple[Channel, ...] = ("frequency", "voltage")


@dataclass(frozen=True)
class AttackProfile:
    """``Delta(t) = sum_k a_k (t - onset)^k`` for ``t >= onset``, zero before.

    ``dg`` is zero-based. Coefficients are in channel units per s^k.
    """

    channel: Channel
    dg: int
    coefficients: tuple[float, ...]
    onset: float = 0.0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown attack channel {self.channel!r}")
        coeffs = tuple(float(c) for c in self.coefficients)
        if not coeffs or not all(math.isfinite(c) for c in coeffs):
            raise ValueError("attack coefficients must be a non-empty list of finite numbers")
        if self.dg < 0:
            raise ValueError("dg index must be non-negative")
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def degree(self) -> int:
        nz = [k for k, c in enumerate(self.coefficients) if c != 0.0]
        return nz[-1] if nz else 0

    @property
    def onset_jump(self) -> float:
        """Discontinuity at onset (zero iff the signal starts continuously)."""
        return self.coefficients[0]

    def __call__(self, t: float) -> float:
        return evaluate(self, t)


def evaluate(p: AttackProfile, t: float) -> float:
    if t < p.onset:
        return 0.0
    tau = t - p.onset
    acc = 0.0
    for c in reversed(p.coefficients):
        acc = acc * tau + c
    return acc


def derivative_sup(p: AttackProfile, order: int) -> float:
    """sup over t >= onset of the ``order``-th derivative; ``math.inf`` if unbounded."""
    if order < 0:
        raise ValueError("derivative order must be non-negative")
    d = p.degree
    if order < d:
        return math.inf
    if order > d:
        return 0.0
    return math.factorial(d) * abs(p.coefficients[d])


def kappa(attacks: Sequence[AttackProfile], channel: Channel, n: int, order: int) -> np.ndarray:
    """Per-DG bound on the ``order``-th derivative of the summed injection."""
    out = np.zeros(n)
    for i in range(n):
        mine = [a for a in attacks if a.channel == channel and a.dg == i]
        if not mine:
            continue
        degs = [a.degree for a in mine]
        if order < max(degs):
            out[i] = math.inf
            continue
        out[i] = sum(derivative_sup(a, order) for a in mine)
    return out


def coefficient_tensor(attacks: Sequence[AttackProfile], n: int):
    """Pack profiles into (coef[2, n, K], onset[2, n], active[2, n]) for the kernel.

    Several profiles on one channel of one DG must share the onset.
    """
    width = max((len(a.coefficients) for a in attacks), default=1)
    coef = np.zeros((2, n, width))
    onset = np.zeros((2, n))
    active = np.zeros((2, n), dtype=np.bool_)
    for a in attacks:
        c = CHANNELS.index(a.channel)
        if a.dg >= n:
            raise ValueError(f"attack targets DG {a.dg + 1} but only {n} DGs exist")
        if active[c, a.dg] and onset[c, a.dg] != a.onset:
            raise ValueError("profiles on one channel of one DG must share the onset time")
        coef[c, a.dg, : len(a.coefficients)] += a.coefficients
        onset[c, a.dg] = a.onset
        active[c, a.dg] = True
    return coef, onset, active
