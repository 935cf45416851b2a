"""Tests for the fuzzy model layer.

The blended linear model interpolates the true quadratic plants exactly while
the premise stays on [0, 1]; outside that strip a residual x1*(x1 - clamp(x1))
remains.  The final test documents that the error-bound matrices shipped with
the benchmark do NOT cover that residual over the nominal operating box -- a
known defect of the benchmark data, kept visible as an expected failure
rather than silently narrowed.
"""

import numpy as np
import numpy.testing as npt
import pytest

from setmem import benchmark
from setmem.fuzzy import (
    DegenerateMembership,
    MembershipFamily,
    WeightDimensionMismatch,
    blend,
    memberships,
    premise_of,
    triangular_unit_family,
)

AGENT1, AGENT2 = benchmark.benchmark_models()


class TestMemberships:
    def test_vertex_one(self):
        npt.assert_allclose(memberships(AGENT1, 1.0), [1.0, 0.0])

    def test_vertex_zero(self):
        npt.assert_allclose(memberships(AGENT1, 0.0), [0.0, 1.0])

    def test_interior_point(self):
        npt.assert_allclose(memberships(AGENT1, 0.25), [0.25, 0.75])

    def test_saturation(self):
        npt.assert_allclose(memberships(AGENT1, 7.3), [1.0, 0.0])
        npt.assert_allclose(memberships(AGENT1, -2.0), [0.0, 1.0])

    def test_partition_of_unity(self):
        rng = np.random.default_rng(123)
        for theta in rng.uniform(-2.0, 3.0, size=10_000):
            g = memberships(AGENT1, theta)
            assert np.all(g >= 0)
            assert abs(g.sum() - 1.0) < 1e-12

    def test_nonfinite_premise_rejected(self):
        with pytest.raises(DegenerateMembership):
            memberships(AGENT1, float("nan"))

    def test_vanishing_activations_rejected(self):
        dead = MembershipFamily((lambda t: 0.0, lambda t: 0.0))
        model = AGENT1.__class__(AGENT1.rules, dead, AGENT1.bounds)
        with pytest.raises(DegenerateMembership):
            memberships(model, 0.5)

    def test_premise_selector(self):
        assert premise_of(AGENT1, [0.3, -5.0]) == 0.3


class TestBlend:
    def test_vertex_returns_rule_matrices(self):
        b = blend(AGENT1, [1.0, 0.0])
        npt.assert_allclose(b.A, AGENT1.rules[0].A)
        npt.assert_allclose(b.C, AGENT1.rules[0].C)
        b2 = blend(AGENT1, [0.0, 1.0])
        npt.assert_allclose(b2.A, AGENT1.rules[1].A)

    def test_midpoint_agent1(self):
        b = blend(AGENT1, [0.5, 0.5])
        npt.assert_allclose(b.A, [[0.35, -0.3], [0.2, 0.2]])

    def test_affine_in_weights(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            alpha = rng.uniform()
            g1 = memberships(AGENT1, rng.uniform(-1, 2))
            g2 = memberships(AGENT1, rng.uniform(-1, 2))
            mix = alpha * g1 + (1 - alpha) * g2
            ba, b1, b2 = blend(AGENT1, mix), blend(AGENT1, g1), blend(AGENT1, g2)
            for lhs, r1, r2 in zip(ba, b1, b2):
                npt.assert_allclose(lhs, alpha * r1 + (1 - alpha) * r2, atol=1e-12)

    def test_weight_count_checked(self):
        with pytest.raises(WeightDimensionMismatch):
            blend(AGENT1, [0.2, 0.3, 0.5])


def _state_residual(model, agent: int, x):
    """f(x) - sum_l g_l A_l x with zero input and zero noise."""
    g = memberships(model, premise_of(model, x))
    truth = benchmark.simulate_plant(agent, x, [0.0, 0.0], 0.0)
    return truth - blend(model, g).A @ np.asarray(x, dtype=float)


class TestModelConsistency:
    def test_interpolation_exact_on_premise_strip(self):
        # Wherever the premise lies in [0, 1] the blend reproduces the
        # quadratic plant exactly, for both agents.
        rng = np.random.default_rng(21)
        for model, agent in ((AGENT1, 1), (AGENT2, 2)):
            for _ in range(500):
                x = np.array([rng.uniform(0.0, 1.0), rng.uniform(-1.5, 1.5)])
                assert np.linalg.norm(_state_residual(model, agent, x)) < 1e-12

    def test_output_residual_closed_form_on_premise_strip(self):
        # On the strip the output residual is exactly -0.1*x1*x2 for both
        # agents (the C blend picks up a 0.1*x1*x2 cross term the plant h
        # doesn't have); it fits the H3/E3 budget 0.05*|x2| iff |x1| <= 0.5.
        rng = np.random.default_rng(22)
        for model, agent in ((AGENT1, 1), (AGENT2, 2)):
            for _ in range(500):
                x = np.array([rng.uniform(0.0, 1.0), rng.uniform(-1.5, 1.5)])
                g = memberships(model, premise_of(model, x))
                residual = benchmark.measure(agent, x, 0.0) - float((blend(model, g).C @ x)[0])
                npt.assert_allclose(residual, -0.1 * x[0] * x[1], atol=1e-12)

    def test_output_error_bound_on_half_strip(self):
        rng = np.random.default_rng(24)
        for model, agent in ((AGENT1, 1), (AGENT2, 2)):
            gain = np.linalg.norm(model.bounds.H3, 2)
            for _ in range(500):
                x = np.array([rng.uniform(0.0, 0.5), rng.uniform(-1.5, 1.5)])
                g = memberships(model, premise_of(model, x))
                residual = benchmark.measure(agent, x, 0.0) - float((blend(model, g).C @ x)[0])
                budget = gain * np.linalg.norm(model.bounds.E3 @ x)
                assert abs(residual) <= budget + 1e-12

    @pytest.mark.xfail(
        strict=True,
        reason="benchmark bound matrices do not cover the off-strip residual: "
        "at x=(1.5, 0.1) the agent-1 residual is ~0.27 against a budget of ~0.007",
    )
    def test_state_error_bound_over_operating_box(self):
        rng = np.random.default_rng(23)
        for model, agent in ((AGENT1, 1), (AGENT2, 2)):
            bound_gain = np.linalg.norm(model.bounds.H1, 2)
            for _ in range(2000):
                x = rng.uniform(-1.5, 1.5, size=2)
                budget = bound_gain * np.linalg.norm(model.bounds.E1 @ x)
                assert np.linalg.norm(_state_residual(model, agent, x)) <= budget + 1e-12
