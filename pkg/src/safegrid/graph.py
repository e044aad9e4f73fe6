"""Communication topology among the inverters and the pinned reference node."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    """Raised for adjacency / pinning data that cannot describe a valid digraph."""


@dataclass(frozen=True)
class CommGraph:
    """Directed weighted graph over N followers plus one leader.

    ``adjacency[i, j] > 0`` means follower i receives information from j.
    ``pinning[i] > 0`` means follower i hears the leader directly.
    """

    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        g = np.array(self.pinning, dtype=float).ravel()
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise GraphError(f"adjacency must be square, got shape {a.shape}")
        if g.shape[0] != a.shape[0]:
            raise GraphError(f"pinning has {g.shape[0]} entries for {a.shape[0]} followers")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(g))):
            raise GraphError("graph weights must be finite")
        if np.any(a < 0) or np.any(g < 0):
            raise GraphError("edge weights and pinning gains must be non-negative")
        if np.any(np.diag(a) != 0):
            raise GraphError("self-loops are not allowed (a_ii must be 0)")
        if not np.any(g > 0):
            raise GraphError("at least one follower must be pinned to the leader")
        a.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "pinning", g)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class GraphMatrices:
    in_degree: np.ndarray
    laplacian: np.ndarray
    lg: np.ndarray
    pinning_matrix: np.ndarray = field(repr=False)

    def lg_inverse(self) -> np.ndarray:
        return np.linalg.inv(self.lg)


def build_matrices(g: CommGraph) -> GraphMatrices:
    """In-degree, Laplacian ``L = D - A`` and ``L_G = L + diag(g)``."""
    a = g.adjacency
    d = np.diag(a.sum(axis=1))
    lap = d - a
    gm = np.diag(g.pinning)
    return GraphMatrices(in_degree=d, laplacian=lap, lg=lap + gm, pinning_matrix=gm)


def has_path_from_leader(g: CommGraph) -> bool:
    """True iff every follower is reachable from the leader.

    The leader feeds the pinned followers; information then travels
    j -> i along every edge with ``a_ij != 0``.
    """
    n = g.n
    seen = [bool(g.pinning[i] != 0) for i in range(n)]
    queue = deque(i for i in range(n) if seen[i])
    while queue:
        j = queue.popleft()
        for i in range(n):
            if not seen[i] and g.adjacency[i, j] != 0:
                seen[i] = True
                queue.append(i)
    return all(seen)


def lg_is_nonsingular(m: GraphMatrices) -> bool:
    n = m.lg.shape[0]
    scale = np.linalg.norm(m.lg, "fro") ** n
    return abs(np.linalg.det(m.lg)) > 1e-12 * scale
