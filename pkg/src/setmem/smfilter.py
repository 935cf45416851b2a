"""Two-step set-membership filter for fuzzy-blended agents.

Each step solves two small SDPs per agent:

* the prediction program bounds where the true state can be one step ahead
  (and where it can be relative to the leader), given the current estimation
  ellipsoid, the consensus input, process-noise and model-error budgets; it
  also returns the rule-wise filter matrices and consensus gains;
* the update program shrinks the predicted ellipsoid using the received
  measurement, with the measurement equation folded in through a rank-one
  multiplier row (Finsler relaxation).

Both programs are assembled as affine matrix pencils and handed to
lmi_sdp.solve; centers are then blended from the returned rule-wise gains.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import lmi_sdp as sdp
from .consensus_graph import Topology, coupling_vector
from .ellipsoid import Ellipsoid, make_ellipsoid, shape_factor
from .fuzzy import TSModel, memberships, premise_of
from .lmi_sdp import (
    NONNEG_SCALAR,
    RECTANGULAR,
    SYMMETRIC,
    AffineMatrixExpr,
    DecisionVar,
    DimensionMismatch,
    SdpProblem,
    SdpSolution,
    block_diag_exprs,
    hstack_exprs,
    schur_embed,
    trace_objective,
)


class DegenerateNoiseBound(ValueError):
    """Noise-bound matrix must be symmetric positive definite."""


class SolverInfeasible(RuntimeError):
    """A filter program could not be solved to an accepted certificate.

    status is 'Infeasible' for a certified empty program and
    'NumericalTrouble' when the solver gave up or the certificate failed
    after the tolerance retry.
    """

    def __init__(self, stage: str, status: str, solution: Optional[SdpSolution] = None):
        super().__init__(f"{stage} program ended with status {status}")
        self.stage = stage
        self.status = status
        self.solution = solution


@dataclass
class AgentRuntime:
    """Mutable per-agent filter state carried across steps."""

    estimate: Ellipsoid               # state estimation set at (k|k)
    leader_set: Ellipsoid             # leader-following set at k (center = leader state)
    prediction: Optional[Ellipsoid] = None   # state prediction set at (k+1|k)
    filter_matrices: tuple = ()       # rule-wise one-step filter matrices
    state_gains: tuple = ()           # rule-wise consensus gains K_l
    output_gains: tuple = ()          # rule-wise update gains L_l
    multipliers: dict = field(default_factory=dict)
    finsler: Optional[np.ndarray] = None


def initial_runtime(model: TSModel, estimate: Ellipsoid, leader_set: Ellipsoid) -> AgentRuntime:
    """Fresh runtime: zero gains (pure leader drift until the first solve)."""
    zeros_K = tuple(np.zeros((model.n_u, model.n_x)) for _ in range(model.r))
    zeros_A = tuple(np.zeros((model.n_x, model.n_x)) for _ in range(model.r))
    zeros_L = tuple(np.zeros((model.n_x, model.n_y)) for _ in range(model.r))
    return AgentRuntime(
        estimate=estimate,
        leader_set=leader_set,
        filter_matrices=zeros_A,
        state_gains=zeros_K,
        output_gains=zeros_L,
    )


@dataclass(frozen=True)
class PredictionOutcome:
    prediction: Ellipsoid
    leader_set: Ellipsoid             # leader-following set at k+1
    filter_matrices: tuple
    state_gains: tuple
    solution: SdpSolution


@dataclass(frozen=True)
class UpdateOutcome:
    estimate: Ellipsoid               # state estimation set at (k+1|k+1)
    output_gains: tuple
    finsler: np.ndarray
    solution: SdpSolution


# ---------------------------------------------------------------------------
# Program builders
# ---------------------------------------------------------------------------

def _check_noise_bound(W, size: int, name: str) -> np.ndarray:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape != (size, size):
        raise DimensionMismatch(f"{name} must be {size}x{size}, got {W.shape}")
    if np.max(np.abs(W - W.T), initial=0.0) > 1e-9:
        raise DegenerateNoiseBound(f"{name} is not symmetric")
    if np.linalg.eigvalsh(0.5 * (W + W.T))[0] <= 0:
        raise DegenerateNoiseBound(f"{name} is not positive definite")
    return 0.5 * (W + W.T)


def _col(v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(-1, 1)


def _tau_block(tau: DecisionVar, base, minus=None) -> AffineMatrixExpr:
    """tau * base  (optionally minus a constant matrix)."""
    expr = tau.expr().scale_const(base)
    if minus is not None:
        expr = expr - AffineMatrixExpr.constant(minus)
    return expr


def build_prediction_program(
    runtime: AgentRuntime,
    model: TSModel,
    neighbor_estimates: Sequence,
    leader_state: np.ndarray,
    Q,
    topology: Topology,
    agent: int,
) -> SdpProblem:
    """One-step prediction program: r^2 estimation blocks + r leader blocks.

    Estimation block (plant rule l, filter rule j) certifies that the true
    state stays inside the predicted ellipsoid; its first column is the
    center mismatch (A_l - Ahat_j) xhat + B_l K_l m with m the neighborhood
    disagreement.  The leader block certifies x stays inside the
    leader-anchored set; its first column is (A_l - Alead_l) xlead + B_l K_l m.
    """
    n, r = model.n_x, model.r
    est = runtime.estimate
    xhat = est.center
    Xi = shape_factor(est)
    xl = np.asarray(leader_state, dtype=float).reshape(-1)
    if xl.shape[0] != n:
        raise DimensionMismatch(f"leader state has dim {xl.shape[0]}, model has {n}")
    xi_fac = shape_factor(runtime.leader_set)
    b = model.bounds
    n_w = b.E2.shape[1]
    Q = _check_noise_bound(Q, n_w, "process noise bound")
    Qinv = np.linalg.inv(Q)
    m_vec = _col(coupling_vector(agent, neighbor_estimates, xl, topology))

    P_pred = DecisionVar("P_pred", SYMMETRIC, (n, n))
    U_next = DecisionVar("U_next", SYMMETRIC, (n, n))
    Ahat = [DecisionVar(f"Ahat_{l + 1}", RECTANGULAR, (n, n)) for l in range(r)]
    Kg = [DecisionVar(f"K_{l + 1}", RECTANGULAR, (model.n_u, n)) for l in range(r)]
    tau = {m: DecisionVar(f"tau_{m}", NONNEG_SCALAR, (1, 1)) for m in range(1, 11)}

    E1, H1, H2, E2 = b.E1, b.H1, b.H2, b.E2
    one = AffineMatrixExpr.constant([[1.0]])
    E1TE1 = E1.T @ E1
    anchors = {
        "est": (float(xhat @ E1TE1 @ xhat), Xi.T @ E1TE1 @ Xi),
        "lead": (float(xl @ E1TE1 @ xl), xi_fac.T @ E1TE1 @ xi_fac),
    }

    def theta(tau_ids, which):
        t_head, t_noise, t_anchor, t_shape, t_chan = (tau[m] for m in tau_ids)
        s_anchor, S_shape = anchors[which]
        return block_diag_exprs([
            one - t_head.expr() - t_noise.expr() - _tau_block(t_anchor, [[s_anchor]]),
            _tau_block(t_head, np.eye(n)) - _tau_block(t_shape, S_shape),
            _tau_block(t_noise, Qinv) - _tau_block(t_chan, E2.T @ E2),
            _tau_block(t_anchor, np.eye(H1.shape[1])),
            _tau_block(t_shape, np.eye(H1.shape[1])),
            _tau_block(t_chan, np.eye(H2.shape[1])),
        ])

    cons = []
    for l, rule in enumerate(model.rules):
        BKm = rule.B @ (Kg[l].expr() @ m_vec)
        theta_est = theta((1, 2, 3, 4, 5), "est")
        for j in range(r):
            center = AffineMatrixExpr.constant(_col(rule.A @ xhat)) \
                - Ahat[j].expr() @ _col(xhat) + BKm
            Gamma = hstack_exprs([
                center, AffineMatrixExpr.constant(rule.A @ Xi),
                AffineMatrixExpr.constant(rule.M),
                AffineMatrixExpr.constant(H1), AffineMatrixExpr.constant(H1),
                AffineMatrixExpr.constant(H2),
            ])
            cons.append(schur_embed(P_pred.expr(), Gamma, theta_est))
        center_l = AffineMatrixExpr.constant(_col((rule.A - rule.A_leader) @ xl)) + BKm
        Gamma_l = hstack_exprs([
            center_l, AffineMatrixExpr.constant(rule.A @ xi_fac),
            AffineMatrixExpr.constant(rule.M),
            AffineMatrixExpr.constant(H1), AffineMatrixExpr.constant(H1),
            AffineMatrixExpr.constant(H2),
        ])
        cons.append(schur_embed(U_next.expr(), Gamma_l, theta((6, 7, 8, 9, 10), "lead")))

    variables = (P_pred, U_next, *Ahat, *Kg, *tau.values())
    return SdpProblem(variables, tuple(cons), trace_objective([U_next, P_pred]))


def build_update_program(
    runtime: AgentRuntime,
    model: TSModel,
    y_observed,
    R,
) -> SdpProblem:
    """Measurement-update program: r^2 blocks sharing one multiplier row.

    Block (plant rule l, gain rule j) certifies the corrected error stays in
    the updated ellipsoid; the received output is folded in by subtracting
    the rank-one terms Z^T G_y + G_y^T Z built from the output row
    G_y = [C_l xhat - y, C_l Xi, D_l, H3, H3, H4].
    """
    if runtime.prediction is None:
        raise ValueError("update requires a prediction ellipsoid")
    n, r, n_y = model.n_x, model.r, model.n_y
    pred = runtime.prediction
    xhat = pred.center
    Xi = shape_factor(pred)
    b = model.bounds
    n_v = b.E4.shape[1]
    R = _check_noise_bound(R, n_v, "measurement noise bound")
    Rinv = np.linalg.inv(R)
    y = np.asarray(y_observed, dtype=float).reshape(-1)
    if y.shape[0] != n_y:
        raise DimensionMismatch(f"observed output has dim {y.shape[0]}, model emits {n_y}")

    E3, H3, H4, E4 = b.E3, b.H3, b.H4, b.E4
    width = 1 + n + n_v + H3.shape[1] + H3.shape[1] + H4.shape[1]
    P_upd = DecisionVar("P_upd", SYMMETRIC, (n, n))
    Lg = [DecisionVar(f"L_{j + 1}", RECTANGULAR, (n, n_y)) for j in range(r)]
    Z = DecisionVar("Z", RECTANGULAR, (n_y, width))
    tau = {m: DecisionVar(f"tau_{m}", NONNEG_SCALAR, (1, 1)) for m in range(11, 16)}

    one = AffineMatrixExpr.constant([[1.0]])
    E3TE3 = E3.T @ E3
    s_anchor = float(xhat @ E3TE3 @ xhat)
    S_shape = Xi.T @ E3TE3 @ Xi
    theta_base = block_diag_exprs([
        one - tau[11].expr() - tau[12].expr() - _tau_block(tau[13], [[s_anchor]]),
        _tau_block(tau[11], np.eye(n)) - _tau_block(tau[14], S_shape),
        _tau_block(tau[12], Rinv) - _tau_block(tau[15], E4.T @ E4),
        _tau_block(tau[13], np.eye(H3.shape[1])),
        _tau_block(tau[14], np.eye(H3.shape[1])),
        _tau_block(tau[15], np.eye(H4.shape[1])),
    ])

    cons = []
    for l, rule in enumerate(model.rules):
        G_y = np.hstack([
            (rule.C @ xhat - y).reshape(n_y, 1),
            rule.C @ Xi, rule.D, H3, H3, H4,
        ])
        ZG = Z.expr().T @ G_y
        theta_l = theta_base - ZG - ZG.T
        for j in range(r):
            LC = Lg[j].expr() @ rule.C            # n x n
            Gamma = hstack_exprs([
                AffineMatrixExpr.zeros(n, 1),
                AffineMatrixExpr.constant(Xi) - LC @ Xi,
                -(Lg[j].expr() @ rule.D),
                -(Lg[j].expr() @ H3), -(Lg[j].expr() @ H3),
                -(Lg[j].expr() @ H4),
            ])
            cons.append(schur_embed(P_upd.expr(), Gamma, theta_l))

    variables = (P_upd, *Lg, Z, *tau.values())
    return SdpProblem(variables, tuple(cons), trace_objective([P_upd]))


# ---------------------------------------------------------------------------
# Solving wrappers
# ---------------------------------------------------------------------------

def _solve_with_retry(problem: SdpProblem, tol: float, backend: str, dump_to=None):
    if dump_to is not None:
        sdp.dump_sdpa(problem, dump_to)
    sol = sdp.solve(problem, tol=tol, backend=backend)
    if sol.status == "NumericalTrouble":
        sol = sdp.solve(problem, tol=min(tol * 10.0, 1e-4), backend=backend)
    return sol


def _accepted(stage: str, sol: SdpSolution) -> SdpSolution:
    if sol.status != "Optimal":
        raise SolverInfeasible(stage, sol.status, sol)
    return sol


def predict(
    runtime: AgentRuntime,
    model: TSModel,
    neighbor_estimates: Sequence,
    leader_state: np.ndarray,
    Q,
    topology: Topology,
    agent: int,
    tol: float = sdp.DEFAULT_TOL,
    backend: str = "cvxpy",
    dump_to=None,
) -> PredictionOutcome:
    problem = build_prediction_program(
        runtime, model, neighbor_estimates, leader_state, Q, topology, agent
    )
    sol = _accepted("prediction", _solve_with_retry(problem, tol, backend, dump_to))
    g = memberships(model, premise_of(model, runtime.estimate.center))
    A_filt = tuple(sol.assignment[f"Ahat_{l + 1}"] for l in range(model.r))
    K = tuple(sol.assignment[f"K_{l + 1}"] for l in range(model.r))
    center = sum(gl * (Al @ runtime.estimate.center) for gl, Al in zip(g, A_filt))
    xl = np.asarray(leader_state, dtype=float).reshape(-1)
    g_lead = memberships(model, premise_of(model, xl))
    xl_next = sum(
        gl * (rule.A_leader @ xl) for gl, rule in zip(g_lead, model.rules)
    )
    try:
        pred_ell = make_ellipsoid(center, sol.assignment["P_pred"])
        lead_ell = make_ellipsoid(xl_next, sol.assignment["U_next"])
    except ValueError as exc:
        raise SolverInfeasible("prediction", "NumericalTrouble", sol) from exc
    return PredictionOutcome(pred_ell, lead_ell, A_filt, K, sol)


def predicted_output(runtime: AgentRuntime, model: TSModel) -> np.ndarray:
    """Expected output at the prediction center (noise- and error-free map)."""
    if runtime.prediction is None:
        raise ValueError("predicted_output requires a prediction ellipsoid")
    x = runtime.prediction.center
    g = memberships(model, premise_of(model, x))
    return sum(gl * (rule.C @ x) for gl, rule in zip(g, model.rules))


def update(
    runtime: AgentRuntime,
    model: TSModel,
    y_observed,
    R,
    tol: float = sdp.DEFAULT_TOL,
    backend: str = "cvxpy",
    dump_to=None,
) -> UpdateOutcome:
    problem = build_update_program(runtime, model, y_observed, R)
    sol = _accepted("update", _solve_with_retry(problem, tol, backend, dump_to))
    pred = runtime.prediction
    g = memberships(model, premise_of(model, pred.center))
    L = tuple(sol.assignment[f"L_{j + 1}"] for j in range(model.r))
    innovation = np.asarray(y_observed, dtype=float).reshape(-1) - predicted_output(
        runtime, model
    )
    center = pred.center + sum(gj * (Lj @ innovation) for gj, Lj in zip(g, L))
    try:
        est_ell = make_ellipsoid(center, sol.assignment["P_upd"])
    except ValueError as exc:
        raise SolverInfeasible("update", "NumericalTrouble", sol) from exc
    return UpdateOutcome(est_ell, L, sol.assignment["Z"], sol)
