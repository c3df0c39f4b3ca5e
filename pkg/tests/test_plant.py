import numpy as np
import pytest

from ratelqr.errors import ConfigError
from ratelqr.mathkernel import RngStream
from ratelqr.plant import (
    PlantModel,
    make_double_integrator,
    make_random_sensor,
    observe,
    step,
)


class TestDoubleIntegrator:
    def test_paper_entries_at_dt_01(self):
        plant = make_double_integrator(0.1)
        assert plant.A[0][2] == 0.1
        assert plant.B[0][0] == pytest.approx(0.005)
        assert plant.B[2][0] == 0.1
        assert np.array_equal(plant.Q, np.eye(4))

    def test_degenerate_dt_zero(self):
        plant = make_double_integrator(0.0)
        assert np.array_equal(plant.A, np.eye(4))
        assert np.array_equal(plant.B[:2], np.zeros((2, 2)))

    def test_dt_one(self):
        plant = make_double_integrator(1.0)
        assert np.array_equal(plant.B, np.array([[0.5, 0], [0, 0.5], [1, 0], [0, 1]]))

    def test_negative_dt_rejected(self):
        with pytest.raises(ConfigError):
            make_double_integrator(-0.1)

    def test_indefinite_q_rejected(self):
        with pytest.raises(Exception):
            PlantModel(A=np.eye(2), B=np.eye(2), Q=np.array([[1.0, 2.0], [2.0, 1.0]]), dt=0.1)


class TestRandomSensor:
    def test_zero_variance(self):
        s = make_random_sensor(3, 4, 0.0, RngStream(0))
        assert np.array_equal(s.C, np.zeros((3, 4)))

    def test_entry_moments(self):
        s = make_random_sensor(20, 4, 1.0 / 50.0, RngStream(12))
        entries = s.C.ravel()
        assert abs(entries.mean()) < 0.05
        assert abs(entries.var() - 0.02) < 0.3 * 0.02

    def test_same_seed_same_matrix(self):
        a = make_random_sensor(5, 4, 0.02, RngStream(99))
        b = make_random_sensor(5, 4, 0.02, RngStream(99))
        assert np.array_equal(a.C, b.C)

    def test_r_scale(self):
        s = make_random_sensor(3, 4, 0.02, RngStream(0), r_scale=10.0)
        assert np.array_equal(s.R, 10.0 * np.eye(3))


class TestStep:
    def test_position_gains_velocity(self):
        plant = make_double_integrator(0.1)
        out = step(plant, np.array([1.0, 2.0, 0.5, -0.5]), np.zeros(2))
        assert np.allclose(out, [1.05, 1.95, 0.5, -0.5])

    def test_control_column(self):
        plant = make_double_integrator(0.1)
        out = step(plant, np.zeros(4), np.array([1.0, 0.0]))
        assert np.allclose(out, [0.005, 0.0, 0.1, 0.0])

    def test_noisy_with_zero_q_equals_noiseless(self):
        plant = PlantModel(A=np.eye(4), B=np.zeros((4, 2)), Q=np.zeros((4, 4)), dt=0.1)
        x = np.array([1.0, 2.0, 3.0, 4.0])
        noiseless = step(plant, x, np.zeros(2))
        noisy = step(plant, x, np.zeros(2), rng=RngStream(0), noisy=True)
        assert np.array_equal(noiseless, noisy)

    def test_superposition(self):
        plant = make_double_integrator(0.1)
        rng = RngStream(4)
        x1, x2 = rng.standard_normal(4), rng.standard_normal(4)
        u1, u2 = rng.standard_normal(2), rng.standard_normal(2)
        combined = step(plant, x1 + x2, u1 + u2)
        split = step(plant, x1, u1) + step(plant, x2, u2)
        assert np.max(np.abs(combined - split)) < 1e-12

    def test_dimension_mismatch(self):
        plant = make_double_integrator(0.1)
        with pytest.raises(ConfigError):
            step(plant, np.zeros(3), np.zeros(2))


class TestObserve:
    def test_identity_c(self):
        sensor = make_random_sensor(4, 4, 0.02, RngStream(0))
        ident = type(sensor)(index=0, C=np.eye(4), R=np.eye(4))
        x = np.array([1.0, -1.0, 2.0, 0.0])
        assert np.array_equal(observe(ident, x), x)

    def test_zero_state(self):
        sensor = make_random_sensor(6, 4, 0.02, RngStream(1))
        assert np.array_equal(observe(sensor, np.zeros(4)), np.zeros(6))

    def test_noiseless_leaves_rng_untouched(self):
        sensor = make_random_sensor(6, 4, 0.02, RngStream(1))
        rng = RngStream(5)
        before = rng.state
        observe(sensor, np.ones(4), rng=rng, noisy=False)
        assert rng.state == before

    def test_empirical_noise_covariance(self):
        sensor = make_random_sensor(5, 4, 0.02, RngStream(2), r_scale=2.0)
        rng = RngStream(6)
        x = np.ones(4)
        clean = observe(sensor, x)
        resid = np.array([observe(sensor, x, rng=rng, noisy=True) - clean for _ in range(10**5)])
        emp = resid.T @ resid / resid.shape[0]
        rel = np.linalg.norm(emp - sensor.R) / np.linalg.norm(sensor.R)
        assert rel < 0.05
