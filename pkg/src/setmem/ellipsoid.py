"""Ellipsoidal sets: construction, factorization, membership, and overlap testing.

An ellipsoid is stored as (center c, shape P) with P symmetric positive
definite; a point x belongs to the set iff (x-c)^T P^{-1} (x-c) <= 1.  The
lower-triangular Cholesky factor Xi (P = Xi Xi^T) doubles as the map from the
unit ball onto the set: x = c + Xi z, ||z|| <= 1.

The overlap test `intersects` is the primitive behind both attack-detection
checks, so it has to be deterministic and cheap: we minimize the classical
scalar overlap function K(lambda) over (0,1) by golden-section search.  The
sets are disjoint iff min K < 0; tangency counts as overlap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Validation tolerances (surfaced here so scenario configs can override them
# in one place if a plant ever needs looser geometry).
SYMMETRY_TOL = 1e-9
PD_FLOOR = 1e-12
FACTOR_TOL = 1e-8
CONTAIN_TOL = 1e-9
CONDITION_LIMIT = 1e12

_GOLDEN_LO = 1e-6
_GOLDEN_WIDTH = 1e-9


class DimensionMismatch(ValueError):
    """Operands have incompatible dimensions."""


class NotPositiveDefinite(ValueError):
    """Shape matrix is not symmetric positive definite."""


class NumericalFailure(ArithmeticError):
    """A linear solve inside the overlap test is too ill-conditioned to trust."""


class UnsupportedDimension(ValueError):
    """Operation only implemented for the planar case."""


@dataclass(frozen=True)
class Ellipsoid:
    """Immutable ellipsoidal set {x : (x-c)^T P^{-1} (x-c) <= 1}."""

    center: np.ndarray
    shape: np.ndarray
    # Cached Cholesky factor; computed once at validation time.
    _factor: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def dim(self) -> int:
        return self.center.shape[0]


def make_ellipsoid(center, shape) -> Ellipsoid:
    """Validate and build an ellipsoid from a center vector and SPD shape matrix.

    Raises
    ------
    DimensionMismatch
        if `shape` is not square with side len(center).
    NotPositiveDefinite
        if `shape` is asymmetric beyond 1e-9 or has an eigenvalue <= 1e-12.
    """
    c = np.asarray(center, dtype=float).reshape(-1)
    P = np.asarray(shape, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != c.shape[0]:
        raise DimensionMismatch(
            f"center has dimension {c.shape[0]}, shape is {P.shape}"
        )
    if not np.all(np.isfinite(c)) or not np.all(np.isfinite(P)):
        raise NotPositiveDefinite("non-finite entries in center or shape")
    if np.max(np.abs(P - P.T)) > SYMMETRY_TOL:
        raise NotPositiveDefinite(
            f"shape asymmetric beyond {SYMMETRY_TOL}: "
            f"max |P - P^T| = {np.max(np.abs(P - P.T)):.3e}"
        )
    P = 0.5 * (P + P.T)
    eigmin = float(np.linalg.eigvalsh(P)[0])
    if eigmin <= PD_FLOOR:
        raise NotPositiveDefinite(f"min eigenvalue {eigmin:.3e} <= {PD_FLOOR}")
    factor = np.linalg.cholesky(P)
    c.setflags(write=False)
    P.setflags(write=False)
    factor.setflags(write=False)
    return Ellipsoid(center=c, shape=P, _factor=factor)


def shape_factor(E: Ellipsoid) -> np.ndarray:
    """Lower-triangular Xi with positive diagonal and Xi Xi^T = P (Cholesky)."""
    if E._factor is not None:
        return E._factor
    try:
        return np.linalg.cholesky(E.shape)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - guarded upstream
        raise NotPositiveDefinite(str(exc)) from exc


def contains(E: Ellipsoid, x) -> bool:
    """Membership test; the boundary counts as inside (quadform <= 1 + 1e-9)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != E.dim:
        raise DimensionMismatch(f"point has dimension {x.shape[0]}, set has {E.dim}")
    return membership_quadform(E, x) <= 1.0 + CONTAIN_TOL


def membership_quadform(E: Ellipsoid, x) -> float:
    """(x-c)^T P^{-1} (x-c), computed through the Cholesky factor."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != E.dim:
        raise DimensionMismatch(f"point has dimension {x.shape[0]}, set has {E.dim}")
    d = x - E.center
    if not np.all(np.isfinite(d)):
        return float("inf")
    # Solve Xi t = d by forward substitution; quadform = ||t||^2.
    from scipy.linalg import solve_triangular

    t = solve_triangular(shape_factor(E), d, lower=True)
    return float(t @ t)


def trace_size(E: Ellipsoid) -> float:
    """Tr(P): the sum of squared semiaxes, the size measure minimized downstream."""
    return float(np.trace(E.shape))


# ---------------------------------------------------------------------------
# Overlap test
# ---------------------------------------------------------------------------

def overlap_function(E1: Ellipsoid, E2: Ellipsoid, lam: float) -> float:
    """K(lambda) for lambda in (0,1).

    Written via P2^{-1} X(lambda)^{-1} P1^{-1} = [(1-lam) P1 + lam P2]^{-1}
    with X(lambda) = lam P1^{-1} + (1-lam) P2^{-1}, which avoids forming any
    explicit inverse.  K >= 0 for all lambda iff the sets share a point.
    """
    v = E2.center - E1.center
    A = (1.0 - lam) * E1.shape + lam * E2.shape
    if np.linalg.cond(A) > CONDITION_LIMIT:
        raise NumericalFailure(
            f"overlap solve ill-conditioned at lambda={lam:.6g} "
            f"(cond > {CONDITION_LIMIT:.0e})"
        )
    return 1.0 - lam * (1.0 - lam) * float(v @ np.linalg.solve(A, v))


def min_overlap(E1: Ellipsoid, E2: Ellipsoid) -> float:
    """min_lambda K(lambda) by golden-section search on [1e-6, 1-1e-6]."""
    if E1.dim != E2.dim:
        raise DimensionMismatch(f"dimensions {E1.dim} and {E2.dim}")
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = _GOLDEN_LO, 1.0 - _GOLDEN_LO
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = overlap_function(E1, E2, c)
    fd = overlap_function(E1, E2, d)
    while b - a > _GOLDEN_WIDTH:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = overlap_function(E1, E2, c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = overlap_function(E1, E2, d)
    return min(fc, fd)


def intersects(E1: Ellipsoid, E2: Ellipsoid, k_min_threshold: float = 0.0) -> bool:
    """True iff the two closed ellipsoids share at least one point.

    Tangency (K_min = 0) counts as intersecting; `k_min_threshold` shifts the
    decision boundary for callers that want a safety margin around tangency.
    """
    return min_overlap(E1, E2) >= k_min_threshold


# ---------------------------------------------------------------------------
# Brute-force oracle (tests only)
# ---------------------------------------------------------------------------

def grid_overlap_oracle(E1: Ellipsoid, E2: Ellipsoid, resolution: int = 400) -> bool:
    """Planar overlap check by exhaustive grid scan; used only as a test oracle.

    Scans an axis-aligned bounding box of E1 inflated by 5% and reports whether
    any grid point lies in both sets.  Deliberately naive: shares no code path
    with `intersects`.
    """
    if E1.dim != 2 or E2.dim != 2:
        raise UnsupportedDimension("grid oracle is 2-D only")
    if resolution < 100:
        raise ValueError("resolution must be >= 100")
    # Half-widths of the bounding box of {x : (x-c)^T P^{-1} (x-c) <= 1} are
    # sqrt(diag(P)).
    half = 1.05 * np.sqrt(np.diag(E1.shape))
    xs = np.linspace(E1.center[0] - half[0], E1.center[0] + half[0], resolution)
    ys = np.linspace(E1.center[1] - half[1], E1.center[1] + half[1], resolution)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def quad(E, p):
        d = p - E.center
        Pinv = np.linalg.inv(E.shape)
        return np.einsum("ij,jk,ik->i", d, Pinv, d)

    inside = (quad(E1, pts) <= 1.0) & (quad(E2, pts) <= 1.0)
    return bool(np.any(inside))
