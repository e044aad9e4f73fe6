"""Adaptive compensation against polynomially growing input injections.

Per DG and channel: ``Gamma = xi * Ups / (|xi| + eta(t))`` with the adaptive
gain ``Ups`` driven through a gamma-order integrator chain,
``d^gamma Ups / dt^gamma = nu |xi|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass
class CompensatorState:
    """Integrator chains for one channel, shape (N, gamma).

    ``chain[i, k]`` is the k-th time derivative of Ups for DG i.
    """

    chain: np.ndarray
    nu: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.chain = np.atleast_2d(np.asarray(self.chain, dtype=float))
        n = self.chain.shape[0]
        self.nu = np.broadcast_to(np.asarray(self.nu, dtype=float), (n,)).copy()
        self.alpha = np.broadcast_to(np.asarray(self.alpha, dtype=float), (n,)).copy()
        if self.chain.shape[1] < 1:
            raise ValueError("gamma must be >= 1")
        if np.any(self.nu <= 0):
            raise ValueError("adaptation gain nu must be positive")
        if not np.all(np.isfinite(self.chain)):
            raise ValueError("chain values must be finite")

    @classmethod
    def initial(cls, n: int, gamma: int, nu, alpha, upsilon0: float = 0.01) -> "CompensatorState":
        if upsilon0 <= 0:
            raise ValueError("initial Ups must be positive")
        chain = np.zeros((n, gamma))
        chain[:, 0] = upsilon0
        return cls(chain, nu, alpha)

    @property
    def gamma(self) -> int:
        return self.chain.shape[1]

    @property
    def upsilon(self) -> np.ndarray:
        return self.chain[:, 0]


def eta(t: float, alpha: float) -> float:
    """Exponentially decaying smoothing term ``exp(-alpha t)``."""
    return math.exp(-alpha * t)


@njit(cache=True)
def gamma_signal(xi, upsilon, eta_t):
    # ratio first: |ratio| <= 1 survives rounding, so |Gamma| <= Upsilon exactly
    return upsilon * (xi / (abs(xi) + eta_t))


def chain_derivatives(state: CompensatorState, xi) -> np.ndarray:
    xi = np.broadcast_to(np.asarray(xi, dtype=float), (state.chain.shape[0],))
    d = np.empty_like(state.chain)
    d[:, :-1] = state.chain[:, 1:]
    d[:, -1] = state.nu * np.abs(xi)
    return d


def compose_control(u_safe, gamma_sig):
    return u_safe + gamma_sig
