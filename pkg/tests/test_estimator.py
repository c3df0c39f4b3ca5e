import numpy as np
import pytest

from ratelqr.errors import ConfigError
from ratelqr.estimator import (
    FusedObservation,
    fuse_observations,
    kf_init,
    kf_predict,
    kf_update,
    stack_sensors,
    steady_state_covariance,
)
from ratelqr.mathkernel import RngStream
from ratelqr.plant import PlantModel, SensorModel, make_double_integrator, make_random_sensor


def scalar_plant(a=1.0, q=1.0):
    return PlantModel(A=np.array([[a]]), B=np.zeros((1, 1)), Q=np.array([[q]]), dt=1.0)


class TestKfInit:
    def test_paper_default(self):
        s = kf_init(np.zeros(4), 1e-4 * np.eye(4))
        assert np.allclose(np.diag(s.sigma), 1e-4)

    def test_exact_prior(self):
        s = kf_init(np.ones(2), np.zeros((2, 2)))
        assert np.array_equal(s.sigma, np.zeros((2, 2)))

    def test_negative_definite_rejected(self):
        with pytest.raises(ConfigError):
            kf_init(np.zeros(2), -np.eye(2))


class TestKfPredict:
    def test_zero_covariance_propagation(self):
        plant = make_double_integrator(0.1)
        s = kf_init(np.array([0.0, 0.0, 1.0, 1.0]), np.zeros((4, 4)))
        out = kf_predict(plant, s, np.zeros(2))
        assert np.allclose(out.x_hat, [0.1, 0.1, 1.0, 1.0])
        assert np.allclose(out.sigma, np.eye(4))

    def test_static_plant_unchanged(self):
        plant = PlantModel(A=np.eye(3), B=np.zeros((3, 1)), Q=np.zeros((3, 3)), dt=1.0)
        s = kf_init(np.array([1.0, 2.0, 3.0]), 0.5 * np.eye(3))
        out = kf_predict(plant, s, np.zeros(1))
        assert np.allclose(out.x_hat, s.x_hat)
        assert np.allclose(out.sigma, s.sigma)

    def test_trace_grows_with_process_noise(self):
        plant = make_double_integrator(0.1)
        s = kf_init(np.zeros(4), np.eye(4))
        out = kf_predict(plant, s, np.zeros(2))
        assert np.trace(out.sigma) > np.trace(s.sigma)


class TestKfUpdate:
    def test_closed_form_scalar(self):
        s = kf_init(np.zeros(1), np.eye(1))
        obs = FusedObservation(c_stack=np.eye(1), r_stack=np.eye(1), y_stack=np.array([2.0]))
        out = kf_update(s, obs)
        assert out.x_hat[0] == pytest.approx(1.0)
        assert out.sigma[0, 0] == pytest.approx(0.5)

    def test_perfect_measurement_limit(self):
        s = kf_init(np.zeros(3), np.eye(3))
        y = np.array([1.0, -2.0, 0.5])
        obs = FusedObservation(c_stack=np.eye(3), r_stack=1e-12 * np.eye(3), y_stack=y)
        out = kf_update(s, obs)
        assert np.max(np.abs(out.x_hat - y)) < 1e-6

    def test_uninformative_measurement(self):
        s = kf_init(np.array([1.0, 2.0]), np.eye(2))
        obs = FusedObservation(c_stack=np.zeros((1, 2)), r_stack=np.eye(1), y_stack=np.array([5.0]))
        out = kf_update(s, obs)
        assert np.allclose(out.x_hat, s.x_hat)
        assert np.allclose(out.sigma, s.sigma)

    def test_fusion_order_consistency(self):
        # One stacked update with a duplicated block equals two sequential updates.
        rng = RngStream(0)
        c = rng.standard_normal((2, 3))
        y = rng.standard_normal(2)
        s = kf_init(np.zeros(3), np.eye(3))
        stacked = FusedObservation(
            c_stack=np.vstack([c, c]),
            r_stack=np.eye(4),
            y_stack=np.concatenate([y, y]),
        )
        once = kf_update(s, stacked)
        single = FusedObservation(c_stack=c, r_stack=np.eye(2), y_stack=y)
        twice = kf_update(kf_update(s, single), single)
        assert np.max(np.abs(once.x_hat - twice.x_hat)) < 1e-9
        assert np.max(np.abs(once.sigma - twice.sigma)) < 1e-9

    def test_posterior_stays_psd_along_trajectory(self):
        plant = make_double_integrator(0.1)
        sensor = make_random_sensor(6, 4, 0.02, RngStream(1))
        rng = RngStream(2)
        s = kf_init(np.zeros(4), 1e-4 * np.eye(4))
        for _ in range(50):
            s = kf_predict(plant, s, np.zeros(2))
            y = rng.standard_normal(6)
            s = kf_update(s, fuse_observations([sensor], [y]))
            assert np.max(np.abs(s.sigma - s.sigma.T)) < 1e-10
            assert np.min(np.linalg.eigvalsh(s.sigma)) > -1e-10


class TestSteadyStateCovariance:
    def test_scalar_fixed_point(self):
        # posterior sigma solves s = (s + 1) / (s + 2)  =>  s = (sqrt(5)-1)/2
        plant = scalar_plant()
        sig = steady_state_covariance(plant, np.eye(1), np.eye(1))
        assert sig[0, 0] == pytest.approx((np.sqrt(5) - 1) / 2, abs=1e-10)

    def test_near_perfect_measurement(self):
        plant = PlantModel(A=np.eye(2), B=np.zeros((2, 1)), Q=np.zeros((2, 2)), dt=1.0)
        sig = steady_state_covariance(plant, np.eye(2), 1e-12 * np.eye(2))
        assert np.max(np.abs(sig)) < 1e-10

    def test_matches_filter_recursion(self):
        plant = make_double_integrator(0.1)
        sensor = make_random_sensor(8, 4, 0.02, RngStream(3))
        c_stack, r_stack = stack_sensors([sensor])
        sig_star = steady_state_covariance(plant, c_stack, r_stack)
        s = kf_init(np.zeros(4), 1e-4 * np.eye(4))
        for _ in range(2000):
            s = kf_predict(plant, s, np.zeros(2))
            s = kf_update(s, FusedObservation(c_stack, r_stack, np.zeros(8)))
        assert np.max(np.abs(s.sigma - sig_star)) < 1e-9

    def test_second_sensor_never_hurts(self):
        plant = make_double_integrator(0.1)
        s1 = make_random_sensor(10, 4, 0.02, RngStream(4))
        s2 = make_random_sensor(5, 4, 0.02, RngStream(5), r_scale=10.0)
        c1, r1 = stack_sensors([s1])
        c12, r12 = stack_sensors([s1, s2])
        solo = np.trace(steady_state_covariance(plant, c1, r1))
        both = np.trace(steady_state_covariance(plant, c12, r12))
        assert both <= solo + 1e-12
