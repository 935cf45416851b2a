"""Affine matrix-inequality construction and small dense semidefinite solving.

Everything is kept in one canonical "pencil" form: decision variables are
flattened into a scalar vector x, and every constraint is an affine matrix
pencil  F(x) = C0 + sum_i x_i * F_i  required negative semidefinite, with a
linear objective c.x.  Three consumers share that form:

* the default backend (CVXPY + CLARABEL), which gets one matmul-shaped
  constraint per block -- cheap to canonicalize even when called thousands
  of times;
* a self-contained dense log-barrier interior-point backend used as an
  independent cross-check on small problems;
* a sparse text dump in the SDPA ".dat-s" interchange format for external
  validation.

Solutions carry a certificate (the max eigenvalue of every constraint
residual, recomputed here with a dense eigensolver, never trusted from the
solver) and callers are expected to check it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_TOL = 1e-7
ITERATION_CAP = 200

SYMMETRIC = "symmetric-matrix"
RECTANGULAR = "rectangular-matrix"
NONNEG_SCALAR = "nonnegative-scalar"


class DimensionMismatch(ValueError):
    pass


class BadProblem(ValueError):
    """Problem references unregistered variables or non-symmetric constraints."""


class SolveFailure(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Decision variables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionVar:
    """A named optimization variable.

    kind is one of 'symmetric-matrix' (n x n, stored as its upper triangle),
    'rectangular-matrix' (m x n, stored row-major) or 'nonnegative-scalar'
    (a single component, constrained >= 0 at solve time).
    """

    name: str
    kind: str
    dims: tuple[int, int]

    def __post_init__(self):
        if self.kind not in (SYMMETRIC, RECTANGULAR, NONNEG_SCALAR):
            raise BadProblem(f"unknown variable kind {self.kind!r}")
        if self.kind == SYMMETRIC and self.dims[0] != self.dims[1]:
            raise DimensionMismatch(f"symmetric variable {self.name} must be square")
        if self.kind == NONNEG_SCALAR and self.dims != (1, 1):
            raise DimensionMismatch(f"scalar variable {self.name} must have dims (1,1)")

    @property
    def n_components(self) -> int:
        m, n = self.dims
        if self.kind == SYMMETRIC:
            return n * (n + 1) // 2
        if self.kind == RECTANGULAR:
            return m * n
        return 1

    def basis(self, comp: int) -> np.ndarray:
        """Matrix direction d(matrix)/d(component comp)."""
        m, n = self.dims
        out = np.zeros((m, n))
        if self.kind == SYMMETRIC:
            i, j = _triu_index(n, comp)
            out[i, j] = 1.0
            out[j, i] = 1.0
            return out
        if self.kind == RECTANGULAR:
            out[comp // n, comp % n] = 1.0
            return out
        out[0, 0] = 1.0
        return out

    def components_of(self, value: np.ndarray) -> np.ndarray:
        """Flatten a matrix value into this variable's component vector."""
        value = np.asarray(value, dtype=float).reshape(self.dims)
        if self.kind == SYMMETRIC:
            n = self.dims[0]
            return np.array([value[i, j] for i, j in _triu_pairs(n)])
        return value.reshape(-1)

    def reconstruct(self, comps: np.ndarray) -> np.ndarray:
        """Inverse of components_of."""
        m, n = self.dims
        comps = np.asarray(comps, dtype=float).reshape(-1)
        if self.kind == SYMMETRIC:
            out = np.zeros((n, n))
            for c, (i, j) in enumerate(_triu_pairs(n)):
                out[i, j] = comps[c]
                out[j, i] = comps[c]
            return out
        if self.kind == RECTANGULAR:
            return comps.reshape(m, n)
        return comps.reshape(1, 1)

    def expr(self) -> "AffineMatrixExpr":
        """This variable as an affine matrix expression."""
        coeffs = {(self, c): self.basis(c) for c in range(self.n_components)}
        return AffineMatrixExpr(self.dims, np.zeros(self.dims), coeffs)


def _triu_pairs(n: int):
    return [(i, j) for i in range(n) for j in range(i, n)]


def _triu_index(n: int, comp: int) -> tuple[int, int]:
    return _triu_pairs(n)[comp]


# ---------------------------------------------------------------------------
# Affine matrix expressions
# ---------------------------------------------------------------------------

class AffineMatrixExpr:
    """constant + sum_i component_i * coefficient_i, all fixed matrices.

    Closed under addition, negation, transpose, scalar scaling, and matrix
    products with constants -- exactly the algebra needed to assemble LMI
    blocks that stay linear in the decision variables.
    """

    __slots__ = ("shape", "const", "coeffs")

    # make numpy defer to our reflected operators for ndarray @ expr etc.
    __array_ufunc__ = None

    def __init__(self, shape, const, coeffs=None):
        self.shape = tuple(shape)
        self.const = np.asarray(const, dtype=float).reshape(self.shape)
        self.coeffs: dict[tuple[DecisionVar, int], np.ndarray] = dict(coeffs or {})

    # -- constructors ------------------------------------------------------
    @staticmethod
    def constant(value) -> "AffineMatrixExpr":
        value = np.atleast_2d(np.asarray(value, dtype=float))
        return AffineMatrixExpr(value.shape, value)

    @staticmethod
    def zeros(rows: int, cols: int) -> "AffineMatrixExpr":
        return AffineMatrixExpr((rows, cols), np.zeros((rows, cols)))

    # -- algebra -----------------------------------------------------------
    def __add__(self, other):
        other = _as_expr(other, self.shape)
        if other.shape != self.shape:
            raise DimensionMismatch(f"add {self.shape} + {other.shape}")
        coeffs = dict(self.coeffs)
        for key, mat in other.coeffs.items():
            coeffs[key] = coeffs[key] + mat if key in coeffs else mat
        return AffineMatrixExpr(self.shape, self.const + other.const, coeffs)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-_as_expr(other, self.shape))

    def __rsub__(self, other):
        return _as_expr(other, self.shape) + (-self)

    def __neg__(self):
        return AffineMatrixExpr(
            self.shape, -self.const, {k: -m for k, m in self.coeffs.items()}
        )

    def __mul__(self, scalar):
        s = float(scalar)
        return AffineMatrixExpr(
            self.shape, s * self.const, {k: s * m for k, m in self.coeffs.items()}
        )

    __rmul__ = __mul__

    def __matmul__(self, right):
        right = np.atleast_2d(np.asarray(right, dtype=float))
        if self.shape[1] != right.shape[0]:
            raise DimensionMismatch(f"matmul {self.shape} @ {right.shape}")
        shape = (self.shape[0], right.shape[1])
        return AffineMatrixExpr(
            shape, self.const @ right, {k: m @ right for k, m in self.coeffs.items()}
        )

    def __rmatmul__(self, left):
        left = np.atleast_2d(np.asarray(left, dtype=float))
        if left.shape[1] != self.shape[0]:
            raise DimensionMismatch(f"matmul {left.shape} @ {self.shape}")
        shape = (left.shape[0], self.shape[1])
        return AffineMatrixExpr(
            shape, left @ self.const, {k: left @ m for k, m in self.coeffs.items()}
        )

    @property
    def T(self) -> "AffineMatrixExpr":
        shape = (self.shape[1], self.shape[0])
        return AffineMatrixExpr(
            shape, self.const.T, {k: m.T for k, m in self.coeffs.items()}
        )

    def scale_const(self, matrix) -> "AffineMatrixExpr":
        """Multiply a 1x1 expression onto a constant matrix: expr[0,0] * M."""
        if self.shape != (1, 1):
            raise DimensionMismatch("scale_const needs a 1x1 expression")
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        return AffineMatrixExpr(
            M.shape,
            self.const[0, 0] * M,
            {k: m[0, 0] * M for k, m in self.coeffs.items()},
        )

    # -- queries -----------------------------------------------------------
    def variables(self) -> set[DecisionVar]:
        return {var for var, _ in self.coeffs}

    def evaluate(self, assignment: Mapping[str, np.ndarray]) -> np.ndarray:
        """Numeric value at a per-variable-name assignment of matrix values."""
        out = self.const.copy()
        comp_cache: dict[DecisionVar, np.ndarray] = {}
        for (var, comp), mat in self.coeffs.items():
            if var not in comp_cache:
                comp_cache[var] = var.components_of(np.asarray(assignment[var.name]))
            out += comp_cache[var][comp] * mat
        return out

    def is_symmetric_by_construction(self, tol: float = 1e-9) -> bool:
        if self.shape[0] != self.shape[1]:
            return False
        if np.max(np.abs(self.const - self.const.T), initial=0.0) > tol:
            return False
        return all(
            np.max(np.abs(m - m.T), initial=0.0) <= tol for m in self.coeffs.values()
        )


def _as_expr(value, shape) -> AffineMatrixExpr:
    if isinstance(value, AffineMatrixExpr):
        return value
    if np.isscalar(value):
        return AffineMatrixExpr.constant(np.full(shape, float(value)))
    return AffineMatrixExpr.constant(value)


def hstack_exprs(parts: Sequence[AffineMatrixExpr]) -> AffineMatrixExpr:
    parts = [p if isinstance(p, AffineMatrixExpr) else AffineMatrixExpr.constant(p) for p in parts]
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise DimensionMismatch("hstack parts disagree on row count")
    cols = [p.shape[1] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(cols)])
    shape = (rows, int(offsets[-1]))
    const = np.zeros(shape)
    coeffs: dict[tuple[DecisionVar, int], np.ndarray] = {}
    for p, off, w in zip(parts, offsets, cols):
        const[:, off:off + w] = p.const
        for key, m in p.coeffs.items():
            tgt = coeffs.setdefault(key, np.zeros(shape))
            tgt[:, off:off + w] += m
    return AffineMatrixExpr(shape, const, coeffs)


def block_diag_exprs(parts: Sequence[AffineMatrixExpr]) -> AffineMatrixExpr:
    parts = [p if isinstance(p, AffineMatrixExpr) else AffineMatrixExpr.constant(p) for p in parts]
    sizes = [p.shape for p in parts]
    if any(r != c for r, c in sizes):
        raise DimensionMismatch("block_diag parts must be square")
    total = sum(r for r, _ in sizes)
    const = np.zeros((total, total))
    coeffs: dict[tuple[DecisionVar, int], np.ndarray] = {}
    off = 0
    for p, (r, _) in zip(parts, sizes):
        const[off:off + r, off:off + r] = p.const
        for key, m in p.coeffs.items():
            tgt = coeffs.setdefault(key, np.zeros((total, total)))
            tgt[off:off + r, off:off + r] += m
        off += r
    return AffineMatrixExpr((total, total), const, coeffs)


def schur_embed(
    P_expr: AffineMatrixExpr,
    Gamma_expr: AffineMatrixExpr,
    Theta_expr: AffineMatrixExpr,
) -> AffineMatrixExpr:
    """[[-P, Gamma], [Gamma^T, -Theta]] as one affine expression.

    The standard Schur-complement lift: the block is negative semidefinite
    iff Gamma^T P^{-1} Gamma <= Theta (for P > 0), which is how quadratic
    containment conditions become LMIs.
    """
    if not isinstance(P_expr, AffineMatrixExpr):
        P_expr = AffineMatrixExpr.constant(P_expr)
    if not isinstance(Gamma_expr, AffineMatrixExpr):
        Gamma_expr = AffineMatrixExpr.constant(Gamma_expr)
    if not isinstance(Theta_expr, AffineMatrixExpr):
        Theta_expr = AffineMatrixExpr.constant(Theta_expr)
    n = P_expr.shape[0]
    q = Theta_expr.shape[0]
    if P_expr.shape != (n, n) or Theta_expr.shape != (q, q) or Gamma_expr.shape != (n, q):
        raise DimensionMismatch(
            f"schur blocks P{P_expr.shape}, Gamma{Gamma_expr.shape}, Theta{Theta_expr.shape}"
        )
    shape = (n + q, n + q)
    const = np.zeros(shape)
    coeffs: dict[tuple[DecisionVar, int], np.ndarray] = {}

    def _place(expr: AffineMatrixExpr, rs, cs, transpose=False):
        block = expr.const.T if transpose else expr.const
        const[rs, cs] += block
        for key, m in expr.coeffs.items():
            tgt = coeffs.setdefault(key, np.zeros(shape))
            tgt[rs, cs] += m.T if transpose else m

    _place(-P_expr, slice(0, n), slice(0, n))
    _place(Gamma_expr, slice(0, n), slice(n, n + q))
    _place(Gamma_expr, slice(n, n + q), slice(0, n), transpose=True)
    _place(-Theta_expr, slice(n, n + q), slice(n, n + q))
    return AffineMatrixExpr(shape, const, coeffs)


# ---------------------------------------------------------------------------
# Problems and solutions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SdpProblem:
    """Linear objective over registered variables, LMI blocks required <= 0."""

    variables: tuple[DecisionVar, ...]
    constraints: tuple[AffineMatrixExpr, ...]
    objective: tuple[tuple[DecisionVar, int, float], ...]  # sum of coeff * component

    def __post_init__(self):
        registered = set(self.variables)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise BadProblem("duplicate variable names")
        for con in self.constraints:
            if not con.is_symmetric_by_construction():
                raise BadProblem("constraint expression is not symmetric by construction")
            missing = con.variables() - registered
            if missing:
                raise BadProblem(f"constraint uses unregistered variables {sorted(v.name for v in missing)}")
        for var, _, _ in self.objective:
            if var not in registered:
                raise BadProblem(f"objective uses unregistered variable {var.name}")


def trace_objective(variables: Iterable[DecisionVar]) -> tuple[tuple[DecisionVar, int, float], ...]:
    """Objective terms for sum of traces of the given matrix variables."""
    terms = []
    for var in variables:
        n = var.dims[0]
        if var.kind == SYMMETRIC:
            for comp, (i, j) in enumerate(_triu_pairs(n)):
                if i == j:
                    terms.append((var, comp, 1.0))
        elif var.kind == NONNEG_SCALAR:
            terms.append((var, 0, 1.0))
        else:
            for i in range(min(var.dims)):
                terms.append((var, i * var.dims[1] + i, 1.0))
    return tuple(terms)


@dataclass(frozen=True)
class SdpSolution:
    assignment: dict[str, np.ndarray]
    status: str  # "Optimal" | "Infeasible" | "NumericalTrouble"
    certificate: tuple[float, ...]  # max eigenvalue of each constraint residual
    objective_value: float
    backend: str = "cvxpy"

    @property
    def max_residual(self) -> float:
        return max(self.certificate, default=float("-inf"))


# ---------------------------------------------------------------------------
# Pencil compilation (shared by all backends)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Pencil:
    n_comps: int
    offsets: dict[DecisionVar, int]
    c: np.ndarray
    blocks: tuple[tuple[np.ndarray, np.ndarray], ...]  # (C0, Fstack[m, n*n])
    block_dims: tuple[int, ...]
    nonneg: tuple[int, ...]


def compile_pencil(problem: SdpProblem) -> _Pencil:
    offsets: dict[DecisionVar, int] = {}
    pos = 0
    for var in problem.variables:
        offsets[var] = pos
        pos += var.n_components
    c = np.zeros(pos)
    for var, comp, w in problem.objective:
        c[offsets[var] + comp] += w
    blocks = []
    dims = []
    for con in problem.constraints:
        n = con.shape[0]
        Fstack = np.zeros((pos, n * n))
        for (var, comp), mat in con.coeffs.items():
            Fstack[offsets[var] + comp] += mat.reshape(-1)
        blocks.append((con.const, Fstack))
        dims.append(n)
    nonneg = tuple(
        offsets[v] for v in problem.variables if v.kind == NONNEG_SCALAR
    )
    return _Pencil(pos, offsets, c, tuple(blocks), tuple(dims), nonneg)


def _unflatten(problem: SdpProblem, pencil: _Pencil, x: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    for var in problem.variables:
        off = pencil.offsets[var]
        out[var.name] = var.reconstruct(x[off:off + var.n_components])
    return out


def residual_certificate(
    problem: SdpProblem, assignment: Mapping[str, np.ndarray]
) -> tuple[float, ...]:
    """Max eigenvalue of each constraint at the assignment (dense, independent)."""
    cert = []
    for con in problem.constraints:
        val = con.evaluate(assignment)
        if not np.isfinite(val).all():
            cert.append(float("inf"))
            continue
        val = 0.5 * (val + val.T)
        cert.append(float(np.linalg.eigvalsh(val)[-1]))
    return tuple(cert)


def objective_value(problem: SdpProblem, assignment: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for var, comp, w in problem.objective:
        total += w * float(var.components_of(np.asarray(assignment[var.name]))[comp])
    return total


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

def solve(problem: SdpProblem, tol: float = DEFAULT_TOL, backend: str = "cvxpy") -> SdpSolution:
    """Solve the SDP; statuses are Optimal / Infeasible / NumericalTrouble.

    The feasibility certificate is recomputed densely on return; a solver
    claiming optimality with residuals above tol is downgraded to
    NumericalTrouble so callers can retry with a looser tolerance.
    """
    if not 1e-10 <= tol <= 1e-4:
        raise ValueError(f"tol {tol} outside [1e-10, 1e-4]")
    pencil = compile_pencil(problem)
    if backend == "cvxpy":
        stages = (_solve_cvxpy, _solve_cvxopt)
    elif backend == "reference":
        stages = (_solve_reference,)
    else:
        raise ValueError(f"unknown backend {backend!r}")

    status, x = "NumericalTrouble", None
    for stage in stages:
        stage_status, stage_x = stage(pencil, tol)
        if stage_status == "Infeasible":
            status, x = stage_status, stage_x
            break
        if stage_x is not None and x is None:
            status, x = stage_status, stage_x
        if stage_status == "Optimal" and stage_x is not None and _certified(
            problem, pencil, stage_x, tol
        ):
            status, x = stage_status, stage_x
            break

    if status == "Infeasible" or x is None:
        return SdpSolution({}, status if status != "Optimal" else "NumericalTrouble",
                           (), float("nan"), backend)
    assignment = _unflatten(problem, pencil, x)
    cert = residual_certificate(problem, assignment)
    obj = objective_value(problem, assignment)
    if status == "Optimal" and (max(cert, default=0.0) > tol or any(
        x[i] < -tol for i in pencil.nonneg
    )):
        status = "NumericalTrouble"
    return SdpSolution(assignment, status, cert, obj, backend)


def _certified(problem: SdpProblem, pencil: _Pencil, x: np.ndarray, tol: float) -> bool:
    if any(x[i] < -tol for i in pencil.nonneg):
        return False
    assignment = _unflatten(problem, pencil, x)
    return max(residual_certificate(problem, assignment), default=0.0) <= tol


def _cone_program(pencil: _Pencil):
    import cvxpy as cp

    xs = cp.Variable(pencil.n_comps)
    cons = []
    for (C0, Fstack), n in zip(pencil.blocks, pencil.block_dims):
        Z = cp.reshape(Fstack.T @ xs, (n, n), order="C") + C0
        cons.append((Z + Z.T) * 0.5 << 0)
    for idx in pencil.nonneg:
        cons.append(xs[idx] >= 0)
    return cp.Problem(cp.Minimize(pencil.c @ xs), cons), xs


def _map_cvxpy_status(status, xs):
    if status in ("optimal", "optimal_inaccurate") and xs.value is not None:
        return "Optimal", np.asarray(xs.value, dtype=float)
    if status in ("infeasible", "infeasible_inaccurate"):
        return "Infeasible", None
    return "NumericalTrouble", None


def _solve_cvxpy(pencil: _Pencil, tol: float):
    import warnings

    import cvxpy as cp

    prob, xs = _cone_program(pencil)
    try:
        with warnings.catch_warnings():
            # accuracy warnings are redundant with our own certificate check
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(
                solver="CLARABEL",
                tol_feas=tol * 1e-2,
                tol_gap_abs=tol * 1e-2,
                tol_gap_rel=tol * 1e-2,
                max_iter=ITERATION_CAP,
            )
    except cp.SolverError:
        return "NumericalTrouble", None
    return _map_cvxpy_status(prob.status, xs)


def _solve_cvxopt(pencil: _Pencil, tol: float):
    """Second attempt for instances where the first-choice solver stalls.

    CVXOPT's interior point is slower but reaches tight feasibility on the
    measurement-update programs that make CLARABEL give up early; it cannot
    factor some prediction programs at all, which the cascade in solve()
    absorbs (the first stage's answer is kept).
    """
    import warnings

    prob, xs = _cone_program(pencil)
    accuracy = max(tol * 0.1, 1e-8)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(
                solver="CVXOPT",
                abstol=accuracy,
                reltol=accuracy,
                feastol=accuracy,
                refinement=2,
            )
    except Exception:
        return "NumericalTrouble", None
    return _map_cvxpy_status(prob.status, xs)


def _solve_reference(pencil: _Pencil, tol: float):
    """Dense primal log-barrier path following; cross-check backend.

    Phase I minimizes the infeasibility bound s with F_j(x) <= s*I (and
    x_i + s >= 0 for sign-constrained components); phase II follows the
    central path of  t*c.x - sum_j logdet(-F_j(x)) - sum_i log(x_i).
    """
    m = pencil.n_comps
    # ---- phase I ---------------------------------------------------------
    ext_blocks = []
    for (C0, Fstack), n in zip(pencil.blocks, pencil.block_dims):
        Fs = np.vstack([Fstack, -np.eye(n).reshape(1, -1)])
        ext_blocks.append((C0, Fs, n))
    for idx in pencil.nonneg:
        C0 = np.zeros((1, 1))
        Fs = np.zeros((m + 1, 1))
        Fs[idx, 0] = -1.0
        Fs[m, 0] = -1.0
        ext_blocks.append((C0, Fs, 1))
    x0 = np.zeros(m + 1)
    worst = max(
        float(np.linalg.eigvalsh(0.5 * (C0 + C0.T))[-1]) for (C0, _, _) in ext_blocks
    )
    x0[m] = max(worst, 0.0) + 1.0
    c_ext = np.zeros(m + 1)
    c_ext[m] = 1.0
    x_ext = _barrier_path(c_ext, ext_blocks, x0, tol=1e-6,
                          stop_when=lambda x: x[m] < -1e-7)
    if x_ext is None:
        return "NumericalTrouble", None
    if x_ext[m] >= 0:
        return "Infeasible", None
    # phase-I margin: every slack eigenvalue exceeds -x_ext[m] > 0, and each
    # sign-constrained component exceeds -x_ext[m] as well -- strictly interior.
    x = x_ext[:m]

    # ---- phase II --------------------------------------------------------
    blocks2 = [(C0, Fstack, n) for (C0, Fstack), n in zip(pencil.blocks, pencil.block_dims)]
    for idx in pencil.nonneg:
        C0 = np.zeros((1, 1))
        Fs = np.zeros((m, 1))
        Fs[idx, 0] = -1.0
        blocks2.append((C0, Fs, 1))
    x = _barrier_path(pencil.c, blocks2, x, tol=tol)
    if x is None:
        return "NumericalTrouble", None
    return "Optimal", x


def _barrier_path(c, blocks, x, tol, stop_when=None, mu=10.0, t0=1.0):
    """Interior-point path following on min c.x s.t. C0_j + sum x_i F_ij <= 0."""
    n_bar = sum(n for (_, _, n) in blocks)
    t = t0
    for _ in range(60):  # outer loop; gap bound n_bar/t shrinks by mu each round
        x = _newton_center(t * c, blocks, x)
        if x is None:
            return None
        if stop_when is not None and stop_when(x):
            return x
        if n_bar / t < tol:
            return x
        t *= mu
    return None


def _chol_of_slack(blocks, x):
    """Cholesky factors of S_j = -(C0_j + sum_i x_i F_ij); None if infeasible."""
    chols = []
    for C0, Fstack, n in blocks:
        S = -(C0 + (Fstack.T @ x).reshape(n, n))
        S = 0.5 * (S + S.T)
        try:
            chols.append(np.linalg.cholesky(S))
        except np.linalg.LinAlgError:
            return None
    return chols


def _newton_center(tc, blocks, x, max_steps=80):
    m = x.shape[0]
    for _ in range(max_steps):
        chols = _chol_of_slack(blocks, x)
        if chols is None:
            return None
        grad = tc.copy()
        H = np.zeros((m, m))
        for (C0, Fstack, n), L in zip(blocks, chols):
            Linv = np.linalg.inv(L)
            Sinv = Linv.T @ Linv
            # grad_i += tr(Sinv F_i); H_ij += tr(Sinv F_i Sinv F_j)
            grad += Fstack @ Sinv.reshape(-1)
            W = np.einsum("ik,akj->aij", Sinv, Fstack.reshape(-1, n, n))
            H += np.einsum("aij,bji->ab", W, W)
        H = 0.5 * (H + H.T) + 1e-12 * np.eye(m)
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, -grad, rcond=None)[0]
        decrement = float(-grad @ step)
        if decrement < 0:
            step = -grad
            decrement = float(grad @ grad)
        # backtracking line search staying strictly feasible
        alpha = 1.0
        for _ in range(60):
            if _chol_of_slack(blocks, x + alpha * step) is not None:
                break
            alpha *= 0.5
        else:
            return x
        x = x + alpha * step
        if decrement * alpha < 1e-9:
            return x
    return x


# ---------------------------------------------------------------------------
# SDPA sparse dump
# ---------------------------------------------------------------------------

def dump_sdpa(problem: SdpProblem, path) -> None:
    """Write the problem in the sparse SDPA interchange format (.dat-s).

    Mapping: our constraints C0_b + sum_i x_i F_ib <= 0 become the standard
    form sum_i x_i (-F_ib) - C0_b >= 0; nonnegative scalars get their own
    1x1 diagonal block.  Objective sense: minimize c.x.
    """
    pencil = compile_pencil(problem)
    m = pencil.n_comps
    sizes = list(pencil.block_dims) + [1] * len(pencil.nonneg)
    lines = [
        f"{m} = mDIM",
        f"{len(sizes)} = nBLOCK",
        "(" + ", ".join(
            str(n) if b < len(pencil.block_dims) else "-1"
            for b, n in enumerate(sizes)
        ) + ") = bLOCKsTRUCT",
        " ".join(repr(float(v)) for v in pencil.c),
    ]

    def emit(mat_no: int, blk_no: int, M: np.ndarray):
        n = M.shape[0]
        for i in range(n):
            for j in range(i, n):
                if M[i, j] != 0.0:
                    lines.append(f"{mat_no} {blk_no} {i + 1} {j + 1} {float(M[i, j])!r}")

    for b, (C0, _) in enumerate(pencil.blocks):
        emit(0, b + 1, np.asarray(C0))
    for b, (_, Fstack) in enumerate(pencil.blocks):
        n = pencil.block_dims[b]
        for i in range(m):
            Fi = Fstack[i].reshape(n, n)
            if np.any(Fi):
                emit(i + 1, b + 1, -Fi)
    for extra, idx in enumerate(pencil.nonneg):
        blk = len(pencil.blocks) + extra + 1
        lines.append(f"{idx + 1} {blk} 1 1 1.0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
