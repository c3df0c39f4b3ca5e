import numpy as np
import pytest
import scipy.linalg

from ratelqr.controller import LqrWeights, control, dare_residual, solve_dare, step_cost
from ratelqr.errors import NumericsError
from ratelqr.plant import make_double_integrator

GOLDEN = (1 + np.sqrt(5)) / 2


def paper_weights():
    return LqrWeights(q_goal=0.1 * np.eye(4), r_goal=np.eye(2), x_desired=np.zeros(4))


class TestSolveDare:
    def test_zero_dynamics_fixed_point(self):
        sol = solve_dare(np.zeros((2, 2)), np.eye(2), 3.0 * np.eye(2), np.eye(2))
        assert np.allclose(sol.p, 3.0 * np.eye(2))
        assert np.allclose(sol.k, np.zeros((2, 2)))

    def test_scalar_golden_ratio(self):
        sol = solve_dare(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
        assert abs(sol.p[0, 0] - GOLDEN) < 1e-10
        assert abs(sol.k[0, 0] - GOLDEN / (1 + GOLDEN)) < 1e-10

    def test_paper_plant_residual(self):
        plant = make_double_integrator(0.1)
        sol = solve_dare(plant.A, plant.B, 0.1 * np.eye(4), np.eye(2))
        assert sol.residual < 1e-8
        assert dare_residual(plant.A, plant.B, 0.1 * np.eye(4), np.eye(2), sol.p) < 1e-8

    def test_matches_scipy(self):
        plant = make_double_integrator(0.1)
        sol = solve_dare(plant.A, plant.B, 0.1 * np.eye(4), np.eye(2))
        p_ref = scipy.linalg.solve_discrete_are(plant.A, plant.B, 0.1 * np.eye(4), np.eye(2))
        assert np.max(np.abs(sol.p - p_ref)) < 1e-8

    def test_closed_loop_stability_by_power_iteration(self):
        plant = make_double_integrator(0.1)
        sol = solve_dare(plant.A, plant.B, 0.1 * np.eye(4), np.eye(2))
        m = plant.A - plant.B @ sol.k
        v = np.array([0.3, -0.4, 0.5, 0.7])
        for _ in range(500):
            v = m @ v
        assert np.linalg.norm(v) < 1e-6

    def test_gain_invariant_under_joint_scaling(self):
        plant = make_double_integrator(0.1)
        sol1 = solve_dare(plant.A, plant.B, 0.1 * np.eye(4), np.eye(2))
        sol2 = solve_dare(plant.A, plant.B, 0.7 * 0.1 * np.eye(4), 0.7 * np.eye(2))
        assert np.max(np.abs(sol1.k - sol2.k)) < 1e-10

    def test_unstabilizable_diagnosed(self):
        # Unstable mode with no control authority.
        with pytest.raises(NumericsError, match="unstabilizable"):
            solve_dare(2.0 * np.eye(1), np.zeros((1, 1)), np.eye(1), np.eye(1), max_iter=2000)


class TestControl:
    def test_at_target_zero(self):
        sol = solve_dare(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
        w = LqrWeights(q_goal=np.eye(1), r_goal=np.eye(1), x_desired=np.array([2.0]))
        assert control(sol, w, np.array([2.0])) == pytest.approx(0.0)

    def test_scalar_gain_applied(self):
        sol = solve_dare(np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)), np.ones((1, 1)))
        w = LqrWeights(q_goal=np.eye(1), r_goal=np.eye(1), x_desired=np.zeros(1))
        assert control(sol, w, np.array([1.0]))[0] == pytest.approx(-0.6180339887, abs=1e-9)


class TestStepCost:
    def test_zero_at_target(self):
        w = paper_weights()
        assert step_cost(w, np.zeros(4), np.zeros(2)) == 0.0

    def test_state_term(self):
        w = paper_weights()
        assert step_cost(w, np.array([1.0, 0, 0, 0]), np.zeros(2)) == pytest.approx(0.1)

    def test_control_term(self):
        w = paper_weights()
        assert step_cost(w, np.zeros(4), np.array([1.0, 1.0])) == pytest.approx(2.0)

    def test_nonnegative(self):
        w = paper_weights()
        rng = np.random.default_rng(0)
        for _ in range(100):
            assert step_cost(w, rng.normal(size=4), rng.normal(size=2)) >= 0.0
