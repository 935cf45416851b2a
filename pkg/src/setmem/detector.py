"""Attack detection and recovery wrapped around the two-stage filter.

Per iteration k, every agent runs the same pipeline:

  1. solve the one-step prediction program (gains + prediction/leader sets);
  2. consistency check #1: does the current estimation set still meet the
     candidate prediction set?  A miss flags a forged input or a tampered
     neighbour channel;
  3. on an alarm (recovery enabled): keep the estimation set as prediction,
     hold the leader set and freeze the previous input;
  4. advance the true plant, record the raw output, pass it through the
     sensor-side attack channel;
  5. solve the measurement update;
  6. consistency check #2: does the updated set still meet the prediction
     set?  A miss flags a replayed/forged measurement;
  7. on an alarm (recovery enabled): discard the update, keep the
     prediction, and hold the last trusted measurement.

Failed solves never stop the loop: the step falls back to held gains with a
10% inflated set, counted against a budget so a run that degrades into
permanent fallback aborts instead of looping on garbage.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attacks import (
    apply_channel_attack,
    apply_control_attack,
    apply_sensor_attack,
)
from .consensus_graph import control_input
from .ellipsoid import (
    Ellipsoid,
    NumericalFailure,
    intersects,
    make_ellipsoid,
    membership_quadform,
    trace_size,
)
from .fuzzy import memberships, premise_of
from .lmi_sdp import BadProblem
from .smfilter import (
    SolverInfeasible,
    initial_runtime,
    predict,
    predicted_output,
    update,
)

# Shape inflation applied when a solve fails and the previous set is reused.
FALLBACK_GROWTH = 1.1
NOISE_TOL = 1e-9
# Largest magnitude fed into a program build; beyond this the products inside
# the matrix pencils overflow, so the step short-circuits to the fallback.
SAFE_MAGNITUDE = 1e50

RECOVERY_NONE = "none"
RECOVERY_PREDICTION = "prediction_rollback"
RECOVERY_UPDATE = "update_rollback"
RECOVERY_BOTH = "both"

FLAG_FALLBACK_PREDICTION = "solver_fallback_prediction"
FLAG_FALLBACK_UPDATE = "solver_fallback_update"
FLAG_UPDATE_INFEASIBLE = "update_infeasible"
FLAG_NUMERIC_STEP3 = "intersect_numerical_step3"
FLAG_NUMERIC_STEP6 = "intersect_numerical_step6"


class NoiseBoundViolation(ValueError):
    """A generated disturbance left its admissible ellipsoid."""


# ---------------------------------------------------------------------------
# Records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepRecord:
    """Everything logged for one (iteration, agent) pair.

    Vectors are stored as tuples so records stay hashable and serialise
    cleanly; `q_*` fields are membership quadforms of the true state in the
    committed sets (<= 1 means contained).
    """

    k: int
    agent: int
    x_true: tuple           # x(k)
    x_est: tuple            # estimate center at (k|k)
    x_pred: tuple           # committed prediction center at (k+1|k)
    x_leader: tuple         # leader state x^l(k)
    tr_est: float           # Tr P(k|k)
    tr_pred: float          # Tr P(k+1|k) of the committed prediction
    tr_leader: float        # Tr U(k)
    u_command: tuple        # input the agent commanded (frozen value on rollback)
    u_applied: tuple        # input the plant actually received (post attack)
    y_raw: tuple            # true output y(k+1)
    y_used: tuple           # output fed to the update (post sensor attack)
    y_held: tuple           # last trusted output after step 7
    step3_alarm: bool
    step6_alarm: bool
    recovery_applied: str
    flags: tuple
    consensus_error: float  # ||x(k) - x^l(k)||
    q_pred: float           # x(k+1) in the committed prediction set
    q_upd: float            # x(k+1) in the committed estimation set
    q_leader_next: float    # x(k+1) in the committed leader set
    q_leader: float         # x(k) in the leader set at k


@dataclass(frozen=True)
class DetectionRecord:
    """One detector verdict per (iteration, agent)."""

    k: int
    agent: int
    step3_alarm: bool
    step6_alarm: bool
    recovery_applied: str
    solver_fallbacks: int


@dataclass
class RunResult:
    steps: list
    detections: list
    final_states: list          # x_i(T) per agent
    final_estimates: list       # estimation sets at (T|T)
    final_leader_sets: list     # leader sets at T
    leader_final: np.ndarray    # x^l(T)
    residuals: list             # (k, agent, stage, accepted certificate residual)
    solver_fallbacks: int
    aborted: bool = False
    abort_reason: str | None = None


# ---------------------------------------------------------------------------
# Detection and recovery primitives
# ---------------------------------------------------------------------------

def detect_control_or_comm(estimate: Ellipsoid, prediction: Ellipsoid) -> bool:
    """Alarm iff the estimation and prediction sets share no point."""
    return not intersects(estimate, prediction)


def detect_sensor(update_set: Ellipsoid, prediction: Ellipsoid) -> bool:
    """Alarm iff the updated set and the prediction set share no point."""
    return not intersects(update_set, prediction)


def recover_prediction(runtime, last_input):
    """Roll the prediction back to the estimation set; reuse the old input."""
    runtime.prediction = runtime.estimate
    return last_input


def recover_update(runtime, last_measurement):
    """Roll the estimate back to the prediction; reuse the old measurement."""
    runtime.estimate = runtime.prediction
    return last_measurement


def _safe_disjoint(a: Ellipsoid, b: Ellipsoid):
    """(alarm, numerical_failure); an unresolvable check never raises an alarm."""
    try:
        return (not intersects(a, b)), False
    except (NumericalFailure, np.linalg.LinAlgError):
        return False, True


def _grown(center, reference: Ellipsoid) -> Ellipsoid:
    """Reference set inflated by FALLBACK_GROWTH and recentred; the reference
    itself if the proposed center is unusable."""
    try:
        return make_ellipsoid(center, FALLBACK_GROWTH * reference.shape)
    except ValueError:
        return reference


def _vec(v) -> np.ndarray:
    return np.atleast_1d(np.asarray(v, dtype=float)).reshape(-1)


def _bounded(*arrays) -> bool:
    """True iff every array is finite and small enough to build programs from."""
    return all(
        np.isfinite(a).all() and np.max(np.abs(a), initial=0.0) <= SAFE_MAGNITUDE
        for a in arrays
    )


def _dump_path(dump_dir, k: int, agent: int, stage: str):
    if dump_dir is None:
        return None
    return str(dump_dir / f"k{k:03d}_agent{agent}_{stage}.dat-s")


def _check_noise(sample, bound, label: str, k: int) -> None:
    w = _vec(sample)
    W = np.atleast_2d(np.asarray(bound, dtype=float))
    quad = float(w @ np.linalg.solve(W, w))
    if quad > 1.0 + NOISE_TOL:
        raise NoiseBoundViolation(
            f"{label}(k={k}) has energy {quad:.6f} > 1 for its bound"
        )


def _leader_next(model, xl: np.ndarray) -> np.ndarray:
    """One leader step: membership-blended leader dynamics at the leader's
    own premise."""
    g = memberships(model, premise_of(model, xl))
    return sum(gl * (rule.A_leader @ xl) for gl, rule in zip(g, model.rules))


def _blend_center(runtime, model) -> np.ndarray:
    """Prediction center from the held one-step filter matrices."""
    x = runtime.estimate.center
    g = memberships(model, premise_of(model, x))
    return sum(gl * (Al @ x) for gl, Al in zip(g, runtime.filter_matrices))


def _held_update_center(runtime, model, y) -> np.ndarray:
    """Update center from the held output gains; the bare prediction center
    when the innovation is unusable."""
    pred = runtime.prediction
    if not np.isfinite(y).all():
        return pred.center
    g = memberships(model, premise_of(model, pred.center))
    innovation = y - predicted_output(runtime, model)
    center = pred.center + sum(
        gj * (Lj @ innovation) for gj, Lj in zip(g, runtime.output_gains)
    )
    if not np.isfinite(center).all():
        return pred.center
    return center


# ---------------------------------------------------------------------------
# The full loop
# ---------------------------------------------------------------------------

def run_algorithm1(config, recovery: bool = True, on_step=None) -> RunResult:
    """Run the filter + detector over the configured horizon.

    `config` provides the scenario: models, topology, plant/measurement
    maps, noise and weight schedules, initial sets and the attack. With
    `recovery` disabled, alarms are still raised and logged but the filter
    keeps its computed sets and inputs. `on_step(payload)` is called after
    each iteration with the full internal state of that step (used by tests
    and the reporting path).
    """

    models = list(config.models)
    topology = config.topology
    attack = config.attack
    horizon = int(config.horizon)
    n_agents = topology.n_agents
    if len(models) != n_agents:
        raise ValueError(f"{len(models)} models for {n_agents} agents")
    tol = getattr(config, "tol", 1e-7)
    backend = getattr(config, "backend", "cvxpy")
    budget = getattr(config, "max_solver_fallbacks", None)
    if budget is None:
        budget = 2 * horizon * n_agents
    dump_dir = getattr(config, "dump_sdp", None)
    if dump_dir is not None:
        dump_dir = Path(dump_dir)
        dump_dir.mkdir(parents=True, exist_ok=True)

    # --- initial state ---------------------------------------------------
    runtimes = []
    for i in range(n_agents):
        est = make_ellipsoid(config.x0_estimate[i], config.P0[i])
        lead = make_ellipsoid(config.x0_leader, config.U0[i])
        runtimes.append(initial_runtime(models[i], est, lead))
    x_true = [_vec(config.x0_true[i]) for i in range(n_agents)]
    xl = _vec(config.x0_leader)
    u_prev = [np.zeros(models[i].n_u) for i in range(n_agents)]

    _, v0 = config.noise(0)
    _check_noise(v0, config.schedule_R(0), "v", 0)
    history = []
    y_filter = []
    for i in range(n_agents):
        y0 = _vec(config.measure(i, x_true[i], v0))
        history.append({0: y0})
        y_filter.append(_vec(apply_sensor_attack(attack, 0, y0, history[i], agent=i)))

    steps: list[StepRecord] = []
    detections: list[DetectionRecord] = []
    residuals: list = []
    fallback_total = 0
    aborted = False
    abort_reason = None

    # Diverged true states overflow in plant/measurement/quadform
    # arithmetic by design; every consumer of those values is guarded, so
    # the warnings carry no information.
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(horizon):
            Q_k = config.schedule_Q(k)
            R_next = config.schedule_R(k + 1)
            w_k, _ = config.noise(k)
            _, v_next = config.noise(k + 1)
            _check_noise(w_k, Q_k, "w", k)
            _check_noise(v_next, R_next, "v", k + 1)
            xl_next = _leader_next(models[0], xl)

            # Estimate snapshots: every agent plans against start-of-step data.
            est_centers = [rt.estimate.center for rt in runtimes]
            views = []
            for i in range(n_agents):
                row = []
                for j in range(n_agents):
                    xj = est_centers[j]
                    if j != i:
                        xj = apply_channel_attack(attack, k, (j, i), xj)
                    row.append(np.asarray(xj, dtype=float))
                views.append(row)

            hook_payload = {"k": k, "leader": xl.copy(), "views": views, "agents": []}

            for i in range(n_agents):
                rt = runtimes[i]
                model = models[i]
                flags = []
                step_fallbacks = 0
                est_k = rt.estimate
                lead_k = rt.leader_set
                x_k = x_true[i]

                # (1) candidate prediction -----------------------------------
                try:
                    if not _bounded(est_k.center, xl, *views[i]):
                        raise SolverInfeasible("prediction", "NumericalTrouble")
                    out = predict(
                        rt, model, views[i], xl, Q_k, topology, i,
                        tol=tol, backend=backend,
                        dump_to=_dump_path(dump_dir, k, i, "prediction"),
                    )
                    rt.filter_matrices = out.filter_matrices
                    rt.state_gains = out.state_gains
                    pred_cand = out.prediction
                    lead_cand = out.leader_set
                    residuals.append((k, i, "prediction", out.solution.max_residual))
                except (SolverInfeasible, BadProblem):
                    flags.append(FLAG_FALLBACK_PREDICTION)
                    step_fallbacks += 1
                    center = _blend_center(rt, model)
                    if not _bounded(center):
                        center = est_k.center
                    pred_cand = _grown(center, est_k)
                    lead_cand = _grown(xl_next, lead_k)

                # (2) consistency check #1 -----------------------------------
                alarm3, numfail3 = _safe_disjoint(est_k, pred_cand)
                if numfail3:
                    flags.append(FLAG_NUMERIC_STEP3)

                # (3) rollback + input freeze --------------------------------
                if alarm3 and recovery:
                    u_cmd = recover_prediction(rt, u_prev[i])
                    lead_committed = lead_k
                else:
                    rt.prediction = pred_cand
                    lead_committed = lead_cand
                    g_i = memberships(model, premise_of(model, est_k.center))
                    u_cmd = control_input(
                        rt.state_gains, g_i, views[i], xl, i, topology
                    )

                # (4) plant + measurement ------------------------------------
                u_applied = apply_control_attack(attack, k, u_cmd, agent=i)
                x_next = np.asarray(
                    config.plant(i, x_k, u_applied, w_k), dtype=float
                ).reshape(-1)
                y_raw = _vec(config.measure(i, x_next, v_next))
                history[i][k + 1] = y_raw
                y_tilde = _vec(
                    apply_sensor_attack(attack, k + 1, y_raw, history[i], agent=i)
                )

                # (5) measurement update -------------------------------------
                upd_infeasible = False
                try:
                    if not _bounded(y_tilde, rt.prediction.center):
                        raise SolverInfeasible("update", "NumericalTrouble")
                    upd = update(
                        rt, model, y_tilde, R_next, tol=tol, backend=backend,
                        dump_to=_dump_path(dump_dir, k, i, "update"),
                    )
                    rt.output_gains = upd.output_gains
                    rt.finsler = upd.finsler
                    est_new = upd.estimate
                    residuals.append((k, i, "update", upd.solution.max_residual))
                except (SolverInfeasible, BadProblem) as exc:
                    if isinstance(exc, SolverInfeasible) and exc.status == "Infeasible":
                        # A certifiably empty update: nothing the sensor sent is
                        # compatible with the prediction. Treat as an alarm.
                        upd_infeasible = True
                        flags.append(FLAG_UPDATE_INFEASIBLE)
                        est_new = rt.prediction
                    else:
                        flags.append(FLAG_FALLBACK_UPDATE)
                        step_fallbacks += 1
                        center = _held_update_center(rt, model, y_tilde)
                        if not _bounded(center):
                            center = rt.prediction.center
                        est_new = _grown(center, rt.prediction)

                # (6) consistency check #2 -----------------------------------
                if upd_infeasible:
                    alarm6 = True
                else:
                    alarm6, numfail6 = _safe_disjoint(est_new, rt.prediction)
                    if numfail6:
                        flags.append(FLAG_NUMERIC_STEP6)

                # (7) rollback + measurement hold ----------------------------
                if alarm6 and (recovery or upd_infeasible):
                    y_filter[i] = recover_update(rt, y_filter[i])
                else:
                    rt.estimate = est_new
                    y_filter[i] = y_tilde

                if alarm3 and alarm6 and recovery:
                    applied = RECOVERY_BOTH
                elif alarm3 and recovery:
                    applied = RECOVERY_PREDICTION
                elif alarm6 and (recovery or upd_infeasible):
                    applied = RECOVERY_UPDATE
                else:
                    applied = RECOVERY_NONE

                # (8) commit + records ---------------------------------------
                rt.leader_set = lead_committed
                fallback_total += step_fallbacks

                steps.append(StepRecord(
                    k=k,
                    agent=i,
                    x_true=tuple(x_k),
                    x_est=tuple(est_k.center),
                    x_pred=tuple(rt.prediction.center),
                    x_leader=tuple(xl),
                    tr_est=trace_size(est_k),
                    tr_pred=trace_size(rt.prediction),
                    tr_leader=trace_size(lead_k),
                    u_command=tuple(_vec(u_cmd)),
                    u_applied=tuple(_vec(u_applied)),
                    y_raw=tuple(y_raw),
                    y_used=tuple(y_tilde),
                    y_held=tuple(y_filter[i]),
                    step3_alarm=alarm3,
                    step6_alarm=alarm6,
                    recovery_applied=applied,
                    flags=tuple(flags),
                    consensus_error=float(np.linalg.norm(x_k - xl)),
                    q_pred=membership_quadform(rt.prediction, x_next),
                    q_upd=membership_quadform(rt.estimate, x_next),
                    q_leader_next=membership_quadform(lead_committed, x_next),
                    q_leader=membership_quadform(lead_k, x_k),
                ))
                detections.append(DetectionRecord(
                    k=k,
                    agent=i,
                    step3_alarm=alarm3,
                    step6_alarm=alarm6,
                    recovery_applied=applied,
                    solver_fallbacks=step_fallbacks,
                ))
                hook_payload["agents"].append({
                    "agent": i,
                    "estimate_before": est_k,
                    "prediction": rt.prediction,
                    "estimate": rt.estimate,
                    "leader_set": rt.leader_set,
                    "state_gains": rt.state_gains,
                    "u_command": np.asarray(u_cmd, dtype=float),
                    "u_applied": np.asarray(u_applied, dtype=float),
                    "x_next": x_next,
                    "y_raw": y_raw,
                    "y_used": y_tilde,
                    "alarms": (alarm3, alarm6),
                })

                x_true[i] = x_next
                u_prev[i] = _vec(u_cmd)

                if fallback_total > budget:
                    aborted = True
                    abort_reason = (
                        f"solver fallback budget exhausted: {fallback_total} > "
                        f"{budget} at k={k}, agent={i}"
                    )
                    break

            if on_step is not None:
                on_step(hook_payload)
            if aborted:
                break
            xl = xl_next

    return RunResult(
        steps=steps,
        detections=detections,
        final_states=[x.copy() for x in x_true],
        final_estimates=[rt.estimate for rt in runtimes],
        final_leader_sets=[rt.leader_set for rt in runtimes],
        leader_final=xl.copy(),
        residuals=residuals,
        solver_fallbacks=fallback_total,
        aborted=aborted,
        abort_reason=abort_reason,
    )
