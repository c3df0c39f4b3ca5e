"""Kalman filtering over stacked multi-sensor observations at the fusion center.

The filter runs the textbook predict/update recursion on the concatenation of
all (reconstructed) sensor measurements; the assumed measurement model is the
true (C, R) of each sensor, so any codec distortion in the inputs is what
makes the filter suboptimal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericsError
from .mathkernel import check_finite, solve_spd
from .plant import PlantModel, SensorModel


@dataclass
class KalmanState:
    """Posterior mean and covariance (x_hat_{t|t}, sigma_{t|t})."""

    x_hat: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class FusedObservation:
    """Vertically stacked sensors: C rows, block-diagonal R, concatenated y."""

    c_stack: np.ndarray
    r_stack: np.ndarray
    y_stack: np.ndarray


def stack_sensors(sensors: list[SensorModel]):
    """(c_stack, r_stack) for a fixed sensor order."""
    c_stack = np.vstack([s.C for s in sensors])
    r_stack = scipy.linalg.block_diag(*[s.R for s in sensors])
    return c_stack, r_stack


def fuse_observations(sensors: list[SensorModel], y_list: list[np.ndarray]) -> FusedObservation:
    """Bundle per-sensor measurement vectors into one stacked observation."""
    if len(sensors) != len(y_list):
        raise ConfigError(f"{len(sensors)} sensors but {len(y_list)} observation vectors")
    for s, y in zip(sensors, y_list):
        if np.asarray(y).shape != (s.n_y,):
            raise ConfigError(f"sensor {s.index} observation has shape {np.asarray(y).shape}, expected ({s.n_y},)")
    c_stack, r_stack = stack_sensors(sensors)
    return FusedObservation(c_stack=c_stack, r_stack=r_stack, y_stack=np.concatenate(y_list))


def kf_init(x0: np.ndarray, sigma0: np.ndarray) -> KalmanState:
    x0 = check_finite("x0", x0)
    sigma0 = check_finite("sigma0", sigma0)
    n = x0.shape[0]
    if sigma0.shape != (n, n):
        raise ConfigError(f"sigma0 must be {n}x{n}, got {sigma0.shape}")
    if not np.allclose(sigma0, sigma0.T, rtol=1e-8, atol=1e-10):
        raise ConfigError("sigma0 must be symmetric")
    if np.min(np.linalg.eigvalsh(0.5 * (sigma0 + sigma0.T))) < -1e-10:
        raise ConfigError("sigma0 must be positive semidefinite")
    return KalmanState(x_hat=x0.copy(), sigma=0.5 * (sigma0 + sigma0.T))


def kf_predict(plant: PlantModel, s: KalmanState, u: np.ndarray) -> KalmanState:
    """Time update: propagate the posterior through the dynamics prior."""
    u = np.asarray(u, dtype=float)
    if u.shape != (plant.n_u,):
        raise ConfigError(f"control must have shape ({plant.n_u},), got {u.shape}")
    x_hat = plant.A @ s.x_hat + plant.B @ u
    sigma = plant.A @ s.sigma @ plant.A.T + plant.Q
    return KalmanState(x_hat=x_hat, sigma=0.5 * (sigma + sigma.T))


def _gain_and_posterior_cov(sigma: np.ndarray, c_stack: np.ndarray, r_stack: np.ndarray):
    """Kalman gain G = sigma C' (C sigma C' + R)^-1 and (I - G C) sigma.

    Shared by the per-step update and the steady-state iteration so the two
    paths cannot drift apart.
    """
    innov_cov = c_stack @ sigma @ c_stack.T + r_stack
    try:
        gain = solve_spd(innov_cov, c_stack @ sigma).T
    except NumericsError as exc:
        raise NumericsError(f"innovation covariance not positive definite: {exc}") from exc
    post = sigma - gain @ c_stack @ sigma
    return gain, 0.5 * (post + post.T)


def kf_update(s: KalmanState, obs: FusedObservation) -> KalmanState:
    """Measurement update with the stacked observation."""
    if obs.c_stack.shape[1] != s.x_hat.shape[0]:
        raise ConfigError(
            f"c_stack has {obs.c_stack.shape[1]} columns but state dim is {s.x_hat.shape[0]}"
        )
    if obs.y_stack.shape != (obs.c_stack.shape[0],):
        raise ConfigError(f"y_stack shape {obs.y_stack.shape} does not match c_stack rows")
    gain, sigma = _gain_and_posterior_cov(s.sigma, obs.c_stack, obs.r_stack)
    x_hat = s.x_hat + gain @ (obs.y_stack - obs.c_stack @ s.x_hat)
    return KalmanState(x_hat=x_hat, sigma=sigma)


def steady_state_covariance(
    plant: PlantModel,
    c_stack: np.ndarray,
    r_stack: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 10**6,
) -> np.ndarray:
    """Fixed point of the posterior covariance recursion.

    Iterates predict/update on the covariance alone until successive
    posteriors differ by less than `tol` in max-norm; this is the analytic
    value of sigma_{t|t} under uncompressed observations.
    """
    sigma = plant.Q.copy()
    for _ in range(max_iter):
        prior = plant.A @ sigma @ plant.A.T + plant.Q
        _, post = _gain_and_posterior_cov(0.5 * (prior + prior.T), c_stack, r_stack)
        if np.max(np.abs(post - sigma)) < tol:
            return post
        sigma = post
    raise NumericsError(
        f"steady-state covariance iteration did not converge in {max_iter} iterations"
    )
