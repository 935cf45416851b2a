"""Communication topology and the leader-following consensus protocol.

A fixed undirected-or-directed weighted graph couples the followers; a
nonnegative pinning weight per agent couples it to the leader.  The
protocol drives each agent with a blended gain applied to the neighborhood
disagreement vector

    m_i = sum_j a_ij (xhat_i - xhat_j) + lam_i (xhat_i - leader),

which is also exactly the vector the per-step prediction program sees, so
both consumers share one implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TopologyError(ValueError):
    pass


class MissingNeighborEstimate(ValueError):
    """An estimate needed by the protocol is absent or malformed."""


@dataclass(frozen=True)
class Topology:
    """Follower adjacency weights plus per-agent leader pinning weights."""

    adjacency: np.ndarray
    pinning: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.adjacency, dtype=float))
        lam = np.asarray(self.pinning, dtype=float).reshape(-1)
        if A.shape[0] != A.shape[1]:
            raise TopologyError(f"adjacency must be square, got {A.shape}")
        if lam.shape[0] != A.shape[0]:
            raise TopologyError(
                f"pinning length {lam.shape[0]} does not match {A.shape[0]} agents"
            )
        if not (np.isfinite(A).all() and np.isfinite(lam).all()):
            raise TopologyError("non-finite topology weights")
        if np.any(A < 0) or np.any(lam < 0):
            raise TopologyError("adjacency and pinning weights must be nonnegative")
        if np.any(np.diag(A) != 0):
            raise TopologyError("adjacency diagonal must be zero")
        if not np.any(lam > 0):
            raise TopologyError("at least one agent must be pinned to the leader")
        object.__setattr__(self, "adjacency", A.copy())
        object.__setattr__(self, "pinning", lam.copy())
        self.adjacency.setflags(write=False)
        self.pinning.setflags(write=False)

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]


def pinned_laplacian(topology: Topology) -> np.ndarray:
    """Graph Laplacian of the follower graph plus the pinning diagonal."""
    A = topology.adjacency
    return np.diag(A.sum(axis=1)) - A + np.diag(topology.pinning)


def coupling_vector(
    agent: int,
    estimates,
    leader: np.ndarray,
    topology: Topology,
) -> np.ndarray:
    """Neighborhood disagreement m_i for one agent.

    estimates holds x̂_j(k|k) for every agent as seen BY the calling agent;
    a compromised channel is modelled by handing in tampered entries.
    """
    N = topology.n_agents
    if not 0 <= agent < N:
        raise MissingNeighborEstimate(f"agent index {agent} outside 0..{N - 1}")
    if len(estimates) != N:
        raise MissingNeighborEstimate(
            f"need {N} estimates, got {len(estimates)}"
        )
    leader = np.asarray(leader, dtype=float).reshape(-1)
    own = _vec(estimates[agent], leader.size, agent)
    m = topology.pinning[agent] * (own - leader)
    for j in range(N):
        a = topology.adjacency[agent, j]
        if a == 0.0:
            continue
        m = m + a * (own - _vec(estimates[j], leader.size, j))
    return m


def control_input(
    gains,
    weights,
    estimates,
    leader: np.ndarray,
    agent: int,
    topology: Topology,
) -> np.ndarray:
    """Blended-gain consensus protocol input for one agent.

    u_i = (sum_l g_l K_l) @ m_i; blending the gains first is identical to
    summing rule-wise terms because m_i does not depend on the rule.
    """
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if len(gains) != weights.shape[0]:
        raise ValueError(f"{len(gains)} gains vs {weights.shape[0]} weights")
    m = coupling_vector(agent, estimates, leader, topology)
    K = sum(w * np.atleast_2d(np.asarray(Kl, dtype=float)) for w, Kl in zip(weights, gains))
    return K @ m


def _vec(value, n: int, who: int) -> np.ndarray:
    if value is None:
        raise MissingNeighborEstimate(f"estimate for agent {who} is missing")
    v = np.asarray(value, dtype=float).reshape(-1)
    if v.shape[0] != n or not np.isfinite(v).all():
        raise MissingNeighborEstimate(
            f"estimate for agent {who} has wrong shape or non-finite entries"
        )
    return v
