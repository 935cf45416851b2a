"""Built-in two-agent nonlinear benchmark.

Two followers with quadratic state coupling track a stable linear leader over
a 50-step horizon.  Both followers share the same scalar process/measurement
noise signals (deterministic sinusoids inside the bounded-noise budgets), a
fully-connected two-node topology with both agents pinned to the leader, and
two-rule fuzzy models whose premise is the first state coordinate.

Everything numeric about the benchmark lives here; the bundled scenario
configs are generated from these constants so that file contents and library
defaults cannot drift apart.
"""

from __future__ import annotations

import numpy as np

from .fuzzy import ErrorBounds, FuzzyRule, TSModel, triangular_unit_family

HORIZON = 50
N_AGENTS = 2

# Floor keeps the noise-budget matrices positive definite through the end of
# the horizon; the raw ramp 1 - k/50 would hit zero at k = 50 while the
# sinusoid noise amplitude stays at 0.5 = sqrt(0.25).
QR_FLOOR = 0.25

# Leader dynamics per rule (shared by both agents' models).
A_LEADER = (
    np.array([[0.5, 0.2], [-0.6, 0.7]]),
    np.array([[0.5, 0.2], [-0.4, 0.7]]),
)

# True input-weight matrices.  Inputs enter the plants linearly, so the fuzzy
# rules carry the exact same B in both rules and the model has no
# input-approximation error.
B_AGENT1 = np.array([[1.0, 0.0], [0.3, 0.9]])
B_AGENT2 = np.array([[0.9, 0.2], [0.0, 1.0]])

M_COLUMN = np.array([[1.0], [1.0]])


def _agent1_model() -> TSModel:
    rules = (
        FuzzyRule(
            A=[[0.5, -0.3], [0.1, 0.2]],
            B=B_AGENT1,
            M=M_COLUMN,
            C=[[1.1, 1.1]],
            D=[[1.0]],
            A_leader=A_LEADER[0],
        ),
        FuzzyRule(
            A=[[0.2, -0.3], [0.3, 0.2]],
            B=B_AGENT1,
            M=M_COLUMN,
            C=[[1.0, 1.0]],
            D=[[1.0]],
            A_leader=A_LEADER[1],
        ),
    )
    bounds = ErrorBounds(
        H1=[[0.1], [0.1]], E1=[[0.0, 0.5]],
        H2=[[0.0], [0.0]], E2=[[0.0]],
        H3=[[0.1]], E3=[[0.0, 0.5]],
        H4=[[0.0]], E4=[[0.0]],
    )
    return TSModel(rules, triangular_unit_family(premise_index=0), bounds)


def _agent2_model() -> TSModel:
    rules = (
        FuzzyRule(
            A=[[0.6, -0.1], [0.4, 0.5]],
            B=B_AGENT2,
            M=M_COLUMN,
            C=[[1.1, 1.1]],
            D=[[1.0]],
            A_leader=A_LEADER[0],
        ),
        FuzzyRule(
            A=[[0.5, -0.1], [0.9, 0.5]],
            B=B_AGENT2,
            M=M_COLUMN,
            C=[[1.0, 1.0]],
            D=[[1.0]],
            A_leader=A_LEADER[1],
        ),
    )
    bounds = ErrorBounds(
        H1=[[0.3], [0.3]], E1=[[0.0, 0.6]],
        H2=[[0.0], [0.0]], E2=[[0.0]],
        H3=[[0.1]], E3=[[0.0, 0.5]],
        H4=[[0.0]], E4=[[0.0]],
    )
    return TSModel(rules, triangular_unit_family(premise_index=0), bounds)


def benchmark_models() -> tuple[TSModel, TSModel]:
    """Fuzzy models for follower agents 1 and 2 (0-indexed internally)."""
    return (_agent1_model(), _agent2_model())


# ---------------------------------------------------------------------------
# True nonlinear plant
# ---------------------------------------------------------------------------

def simulate_plant(agent: int, x, u, w: float) -> np.ndarray:
    """One step of the true nonlinear recursion for the given follower.

    `agent` is 1-based to match the scenario files.  Both plants couple the
    states through the quadratic term (x2 - x1^2) and weight the two input
    channels asymmetrically.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    x1, x2 = x
    u1, u2 = u
    if agent == 1:
        nl = x2 - x1 * x1
        return np.array([
            0.2 * x1 - 0.3 * nl + u1 + w,
            0.3 * x1 + 0.2 * nl + 0.3 * u1 + 0.9 * u2 + w,
        ])
    if agent == 2:
        nl = x2 - x1 * x1
        return np.array([
            0.5 * x1 - 0.1 * nl + 0.9 * u1 + 0.2 * u2 + w,
            0.9 * x1 + 0.5 * nl + u2 + w,
        ])
    raise ValueError(f"built-in benchmark has agents 1 and 2, got {agent}")


def measure(agent: int, x, v: float) -> float:
    """True nonlinear scalar measurement: y = x1 + 0.1*x1^2 + x2 + v."""
    if agent not in (1, 2):
        raise ValueError(f"built-in benchmark has agents 1 and 2, got {agent}")
    x = np.asarray(x, dtype=float).reshape(-1)
    return float(x[0] + 0.1 * x[0] * x[0] + x[1] + v)


def noise(k: int) -> tuple[float, float]:
    """Deterministic bounded noise pair (w, v) at step k."""
    return 0.5 * np.sin(2.0 * k), 0.5 * np.sin(20.0 * k)


def schedule_Q(k: int) -> np.ndarray:
    """Process-noise shape (1x1), ramping down with a positive-definite floor."""
    return np.array([[max(1.0 - k / 50.0, QR_FLOOR)]])


def schedule_R(k: int) -> np.ndarray:
    """Measurement-noise shape (1x1), same ramp and floor as schedule_Q."""
    return np.array([[max(1.0 - k / 50.0, QR_FLOOR)]])


# ---------------------------------------------------------------------------
# Topology and initial sets
# ---------------------------------------------------------------------------

ADJACENCY = np.array([[0.0, 1.0], [1.0, 0.0]])
PINNING = np.array([1.0, 1.0])  # both followers receive the leader

X0_TRUE = np.array([0.0, 0.0])
X0_ESTIMATE = np.array([1.0, 1.0])
X0_LEADER = np.array([1.0, 1.0])
P0 = np.diag([100.0, 100.0])
U0 = np.diag([100.0, 100.0])
