"""Detector loop: detection primitives, recovery semantics, fallbacks."""

from types import SimpleNamespace

import numpy as np
import pytest

import setmem.benchmark as bm
import setmem.detector as det
from setmem.attacks import no_attack
from setmem.consensus_graph import Topology, control_input
from setmem.ellipsoid import make_ellipsoid
from setmem.fuzzy import memberships, premise_of
from setmem.smfilter import SolverInfeasible, initial_runtime


def bench_config(horizon, attack=None, **overrides):
    models = bm.benchmark_models()
    cfg = SimpleNamespace(
        horizon=horizon,
        models=models,
        topology=Topology(bm.ADJACENCY, bm.PINNING),
        attack=attack if attack is not None else no_attack(),
        x0_true=(bm.X0_TRUE, bm.X0_TRUE),
        x0_estimate=(bm.X0_ESTIMATE, bm.X0_ESTIMATE),
        P0=(bm.P0, bm.P0),
        x0_leader=bm.X0_LEADER,
        U0=(bm.U0, bm.U0),
        plant=lambda i, x, u, w: bm.simulate_plant(i + 1, x, u, w),
        measure=lambda i, x, v: bm.measure(i + 1, x, v),
        noise=bm.noise,
        schedule_Q=bm.schedule_Q,
        schedule_R=bm.schedule_R,
        tol=1e-7,
        backend="cvxpy",
        max_solver_fallbacks=None,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


def fresh_runtime():
    model = bm.benchmark_models()[0]
    est = make_ellipsoid([1.0, 1.0], np.eye(2))
    lead = make_ellipsoid([0.0, 0.0], 4.0 * np.eye(2))
    rt = initial_runtime(model, est, lead)
    rt.prediction = make_ellipsoid([1.5, 1.0], 2.0 * np.eye(2))
    return rt


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

class TestPrimitives:
    def test_disjoint_sets_raise_alarms(self):
        a = make_ellipsoid([0.0, 0.0], np.eye(2))
        b = make_ellipsoid([3.0, 0.0], np.eye(2))
        assert det.detect_control_or_comm(a, b)
        assert det.detect_sensor(a, b)

    def test_meeting_sets_stay_silent(self):
        a = make_ellipsoid([0.0, 0.0], np.eye(2))
        b = make_ellipsoid([1.0, 0.0], np.eye(2))
        assert not det.detect_control_or_comm(a, b)
        assert not det.detect_sensor(a, b)

    def test_recover_prediction_rolls_back_and_freezes_input(self):
        rt = fresh_runtime()
        u_old = np.array([0.25, -0.5])
        u = det.recover_prediction(rt, u_old)
        assert rt.prediction is rt.estimate
        assert u is u_old
        # applying the rollback again changes nothing
        det.recover_prediction(rt, u_old)
        assert rt.prediction is rt.estimate

    def test_recover_update_rolls_back_and_holds_measurement(self):
        rt = fresh_runtime()
        pred = rt.prediction
        y_old = np.array([0.75])
        y = det.recover_update(rt, y_old)
        assert rt.estimate is pred
        assert y is y_old
        det.recover_update(rt, y_old)
        assert rt.estimate is pred


# ---------------------------------------------------------------------------
# Attack-free loop on the two-agent benchmark
# ---------------------------------------------------------------------------

HORIZON_SHORT = 6


@pytest.fixture(scope="module")
def clean_run():
    payloads = []
    cfg = bench_config(HORIZON_SHORT)
    result = det.run_algorithm1(cfg, recovery=True, on_step=payloads.append)
    return cfg, result, payloads


class TestAttackFreeLoop:
    def test_no_alarms_no_flags(self, clean_run):
        _, result, _ = clean_run
        for rec in result.steps:
            assert not rec.step3_alarm
            assert not rec.step6_alarm
            assert rec.recovery_applied == det.RECOVERY_NONE
            assert rec.flags == ()
        assert result.solver_fallbacks == 0
        assert not result.aborted

    def test_record_completeness(self, clean_run):
        _, result, _ = clean_run
        keys = {(r.k, r.agent) for r in result.steps}
        assert keys == {(k, i) for k in range(HORIZON_SHORT) for i in range(2)}
        assert len(result.steps) == HORIZON_SHORT * 2
        assert len(result.detections) == HORIZON_SHORT * 2
        det_keys = {(r.k, r.agent) for r in result.detections}
        assert det_keys == keys

    def test_true_state_contained_every_step(self, clean_run):
        _, result, _ = clean_run
        for rec in result.steps:
            assert rec.q_pred <= 1.0 + 1e-6, (rec.k, rec.agent, rec.q_pred)
            assert rec.q_upd <= 1.0 + 1e-6, (rec.k, rec.agent, rec.q_upd)
            assert rec.q_leader_next <= 1.0 + 1e-6, (rec.k, rec.agent)
            assert rec.q_leader <= 1.0 + 1e-6, (rec.k, rec.agent)

    def test_all_solves_certified(self, clean_run):
        _, result, _ = clean_run
        # prediction + update per agent per iteration
        assert len(result.residuals) == 2 * 2 * HORIZON_SHORT
        worst = max(r[-1] for r in result.residuals)
        assert worst <= 1e-6

    def test_inputs_match_consensus_protocol(self, clean_run):
        cfg, result, payloads = clean_run
        by_key = {(r.k, r.agent): r for r in result.steps}
        for payload in payloads:
            for entry in payload["agents"]:
                i = entry["agent"]
                model = cfg.models[i]
                g = memberships(
                    model, premise_of(model, entry["estimate_before"].center)
                )
                expected = control_input(
                    entry["state_gains"], g, payload["views"][i],
                    payload["leader"], i, cfg.topology,
                )
                rec = by_key[(payload["k"], i)]
                np.testing.assert_allclose(rec.u_command, expected, atol=1e-12)

    def test_estimator_tracks_leader(self, clean_run):
        _, result, _ = clean_run
        # after a few steps the estimation sets have shrunk well below the
        # initial trace of 200 and the state has entered the leader set
        final = [r for r in result.steps if r.k == HORIZON_SHORT - 1]
        for rec in final:
            assert rec.tr_est < 50.0
            assert rec.q_leader_next <= 1.0 + 1e-6

    def test_deterministic_rerun(self):
        cfg = bench_config(3)
        first = det.run_algorithm1(cfg, recovery=True)
        second = det.run_algorithm1(bench_config(3), recovery=True)
        assert first.steps == second.steps
        assert first.detections == second.detections
        np.testing.assert_array_equal(first.leader_final, second.leader_final)


# ---------------------------------------------------------------------------
# Forced alarms: rollback chains and ordering
# ---------------------------------------------------------------------------

class TestForcedAlarms:
    def _run_with_forced_disjoint(self, monkeypatch, recovery):
        calls = []

        def spy(a, b):
            calls.append((a, b))
            return False  # "no intersection" everywhere -> every check alarms

        monkeypatch.setattr(det, "intersects", spy)
        cfg = bench_config(2)
        result = det.run_algorithm1(cfg, recovery=recovery)
        return result, calls

    def test_recovery_freezes_input_and_estimate(self, monkeypatch):
        result, calls = self._run_with_forced_disjoint(monkeypatch, recovery=True)
        for rec in result.steps:
            assert rec.step3_alarm and rec.step6_alarm
            assert rec.recovery_applied == det.RECOVERY_BOTH
            # input frozen all the way back to u(-1) = 0
            assert rec.u_command == (0.0, 0.0)
            # prediction rolled back onto the estimate
            assert rec.x_pred == rec.x_est
        # both rollbacks: the estimate never moves off its initial center
        for rec in result.steps:
            assert rec.x_est == (1.0, 1.0)
        # step 6 compared the updated set against the rolled-back prediction,
        # which is the start-of-step estimation set (same object, same center)
        step6_targets = calls[1::2]
        for _, target in step6_targets:
            assert tuple(target.center) == (1.0, 1.0)

    def test_alarms_without_recovery_keep_solved_sets(self, monkeypatch):
        result, _ = self._run_with_forced_disjoint(monkeypatch, recovery=False)
        for rec in result.steps:
            assert rec.step3_alarm and rec.step6_alarm
            assert rec.recovery_applied == det.RECOVERY_NONE
            # the solved prediction is kept: its center moved off the estimate
            assert rec.x_pred != rec.x_est
        moved = [r for r in result.steps if r.k == 1]
        # the update was committed, so the estimate center moved
        assert all(r.x_est != (1.0, 1.0) for r in moved)

    def test_held_measurement_chain(self, monkeypatch):
        result, _ = self._run_with_forced_disjoint(monkeypatch, recovery=True)
        y0 = {r.agent: r.y_held for r in result.steps if r.k == 0}
        for rec in result.steps:
            # every step holds the same trusted measurement: y(0)
            assert rec.y_held == y0[rec.agent]
            assert rec.y_held != rec.y_used


# ---------------------------------------------------------------------------
# Degraded-solver routes
# ---------------------------------------------------------------------------

class TestSolverDegradation:
    def test_infeasible_update_forces_alarm_and_rollback(self, monkeypatch):
        def raise_infeasible(*args, **kwargs):
            raise SolverInfeasible("update", "Infeasible")

        monkeypatch.setattr(det, "update", raise_infeasible)
        cfg = bench_config(1)
        result = det.run_algorithm1(cfg, recovery=False)
        for rec in result.steps:
            assert rec.step6_alarm
            assert det.FLAG_UPDATE_INFEASIBLE in rec.flags
            # even with recovery disabled there is no update set to keep
            assert rec.recovery_applied == det.RECOVERY_UPDATE
            assert rec.x_est != rec.x_pred  # estimate logged at (k|k)
            # the committed estimate equals the committed prediction
            assert rec.q_upd == rec.q_pred

    def test_prediction_fallback_inflates_previous_set(self, monkeypatch):
        def raise_trouble(*args, **kwargs):
            raise SolverInfeasible("prediction", "NumericalTrouble")

        monkeypatch.setattr(det, "predict", raise_trouble)
        cfg = bench_config(1)
        result = det.run_algorithm1(cfg, recovery=True)
        for rec in result.steps:
            assert det.FLAG_FALLBACK_PREDICTION in rec.flags
            assert rec.tr_pred == pytest.approx(det.FALLBACK_GROWTH * rec.tr_est)
        assert result.solver_fallbacks == 2

    def test_update_fallback_inflates_prediction(self, monkeypatch):
        def raise_trouble(*args, **kwargs):
            raise SolverInfeasible("update", "NumericalTrouble")

        monkeypatch.setattr(det, "update", raise_trouble)
        cfg = bench_config(1)
        result = det.run_algorithm1(cfg, recovery=True)
        for rec in result.steps:
            assert det.FLAG_FALLBACK_UPDATE in rec.flags
        assert result.solver_fallbacks == 2

    def test_fallback_budget_aborts_run(self, monkeypatch):
        def raise_trouble(*args, **kwargs):
            raise SolverInfeasible("prediction", "NumericalTrouble")

        monkeypatch.setattr(det, "predict", raise_trouble)
        cfg = bench_config(3, max_solver_fallbacks=1)
        result = det.run_algorithm1(cfg, recovery=True)
        assert result.aborted
        assert "budget" in result.abort_reason
        # partial records are preserved up to the aborting agent
        assert len(result.steps) == 2
        assert result.steps[-1].k == 0


class TestNoiseGuard:
    def test_disturbance_outside_bound_is_rejected(self):
        cfg = bench_config(2, noise=lambda k: (10.0, 0.0))
        with pytest.raises(det.NoiseBoundViolation):
            det.run_algorithm1(cfg)

    def test_measurement_noise_outside_bound_is_rejected(self):
        cfg = bench_config(2, noise=lambda k: (0.0, 10.0))
        with pytest.raises(det.NoiseBoundViolation):
            det.run_algorithm1(cfg)
