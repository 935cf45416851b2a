"""Takagi-Sugeno fuzzy model representation.

A model is a list of linear rule systems (A, B, M, C, D plus the matching
leader matrix), a membership family mapping the scalar premise variable to
normalized rule weights, and the approximation-error bound matrices (H, E)
that budget the gap between the blended linear model and the true plant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np


class DegenerateMembership(ValueError):
    """All rule activations vanish at the given premise value."""


class WeightDimensionMismatch(ValueError):
    """Weight vector length does not match the rule count."""


@dataclass(frozen=True)
class FuzzyRule:
    """One linear local model: x+ = Ax + Bu + Mw, y = Cx + Dv, leader x+ = A_leader x."""

    A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    A_leader: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "M", "C", "D", "A_leader"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n_x = self.A.shape[0]
        if self.A.shape != (n_x, n_x) or self.A_leader.shape != (n_x, n_x):
            raise WeightDimensionMismatch("A and A_leader must be square and equal-sized")
        if self.B.shape[0] != n_x or self.M.shape[0] != n_x:
            raise WeightDimensionMismatch("B/M row count must match the state dimension")
        if self.C.shape[1] != n_x:
            raise WeightDimensionMismatch("C column count must match the state dimension")
        if self.D.shape[0] != self.C.shape[0]:
            raise WeightDimensionMismatch("C and D row counts must agree")


@dataclass(frozen=True)
class MembershipFamily:
    """Rule activation functions over the premise variable.

    `activations[l](theta)` is the un-normalized weight of rule l; weights are
    normalized at evaluation time.  `premise_index` selects the state
    coordinate used as the premise.
    """

    activations: tuple[Callable[[float], float], ...]
    premise_index: int = 0
    name: str = "custom"


def triangular_unit_family(premise_index: int = 0) -> MembershipFamily:
    """Two-rule triangular pair with vertices at theta = 1 and theta = 0.

    Rule 1 is fully active at 1, rule 2 at 0, linear interpolation between,
    saturated outside [0, 1].
    """

    def about_one(theta: float) -> float:
        return min(max(theta, 0.0), 1.0)

    def about_zero(theta: float) -> float:
        return 1.0 - min(max(theta, 0.0), 1.0)

    return MembershipFamily((about_one, about_zero), premise_index, name="triangular_unit")


@dataclass(frozen=True)
class ErrorBounds:
    """Model-error budgets: residual = H * Delta * (E * carrier), ||Delta|| <= 1.

    Channel 1 bounds the state-equation residual against the state, channel 2
    against the process noise, channel 3 the output residual against the
    state, channel 4 against the measurement noise.
    """

    H1: np.ndarray
    E1: np.ndarray
    H2: np.ndarray
    E2: np.ndarray
    H3: np.ndarray
    E3: np.ndarray
    H4: np.ndarray
    E4: np.ndarray

    def __post_init__(self):
        for name in ("H1", "E1", "H2", "E2", "H3", "E3", "H4", "E4"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))


@dataclass(frozen=True)
class TSModel:
    rules: tuple[FuzzyRule, ...]
    memberships: MembershipFamily
    bounds: ErrorBounds

    def __post_init__(self):
        if len(self.rules) < 1:
            raise WeightDimensionMismatch("need at least one rule")
        if len(self.rules) != len(self.memberships.activations):
            raise WeightDimensionMismatch(
                f"{len(self.rules)} rules but {len(self.memberships.activations)} membership functions"
            )
        shapes = {(r.A.shape, r.B.shape, r.M.shape, r.C.shape, r.D.shape) for r in self.rules}
        if len(shapes) != 1:
            raise WeightDimensionMismatch("rule matrices must share dimensions across rules")

    @property
    def r(self) -> int:
        return len(self.rules)

    @property
    def n_x(self) -> int:
        return self.rules[0].A.shape[0]

    @property
    def n_u(self) -> int:
        return self.rules[0].B.shape[1]

    @property
    def n_y(self) -> int:
        return self.rules[0].C.shape[0]


class BlendedMatrices(NamedTuple):
    A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    C: np.ndarray
    D: np.ndarray
    A_leader: np.ndarray


def memberships(model: TSModel, theta: float) -> np.ndarray:
    """Normalized rule weights g(theta): nonnegative, summing to one."""
    if not np.isfinite(theta):
        raise DegenerateMembership(f"premise variable is not finite: {theta}")
    psi = np.array([f(float(theta)) for f in model.memberships.activations], dtype=float)
    if np.any(psi < 0):
        raise DegenerateMembership("negative rule activation")
    total = psi.sum()
    if total <= 0.0:
        raise DegenerateMembership(f"all rule activations vanish at theta={theta}")
    return psi / total


def premise_of(model: TSModel, x: Sequence[float]) -> float:
    """Extract the premise variable from a state(-like) vector."""
    return float(np.asarray(x).reshape(-1)[model.memberships.premise_index])


def blend(model: TSModel, g: Sequence[float]) -> BlendedMatrices:
    """Weighted combination sum_l g_l * (rule-l matrices)."""
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.shape[0] != model.r:
        raise WeightDimensionMismatch(f"got {g.shape[0]} weights for {model.r} rules")
    out = []
    for name in ("A", "B", "M", "C", "D", "A_leader"):
        out.append(sum(w * getattr(rule, name) for w, rule in zip(g, model.rules)))
    return BlendedMatrices(*out)
