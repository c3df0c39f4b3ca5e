"""Linear-Gaussian plant dynamics and per-sensor observation models.

The plant follows x_{t+1} = A x_t + B u_t + v_t with v_t ~ N(0, Q); each
sensor s reports y_t = C_s x_t + w_t with w_t ~ N(0, R_s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mathkernel import RngStream, check_finite, gaussian, psd_sqrt


@dataclass(frozen=True)
class PlantModel:
    """Discrete-time dynamics (A, B) with process-noise covariance Q."""

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    dt: float

    def __post_init__(self):
        A = check_finite("A", self.A)
        B = check_finite("B", self.B)
        Q = check_finite("Q", self.Q)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ConfigError(f"A must be square, got {A.shape}")
        if B.ndim != 2 or B.shape[0] != n:
            raise ConfigError(f"B must have {n} rows, got {B.shape}")
        if Q.shape != (n, n):
            raise ConfigError(f"Q must be {n}x{n}, got {Q.shape}")
        # PSD check: Cholesky of Q + eps*I must succeed.
        psd_sqrt(Q + 1e-12 * np.eye(n))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "Q", Q)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class SensorModel:
    """One sensor: observation matrix C and noise covariance R."""

    index: int
    C: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        C = check_finite("C", self.C)
        R = check_finite("R", self.R)
        if C.ndim != 2:
            raise ConfigError(f"C must be 2-d, got shape {C.shape}")
        n_y = C.shape[0]
        if R.shape != (n_y, n_y):
            raise ConfigError(f"R must be {n_y}x{n_y}, got {R.shape}")
        if not np.allclose(R, R.T, rtol=1e-8, atol=1e-10):
            raise ConfigError("R must be symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (R + R.T))) <= 0:
            raise ConfigError("R must be positive definite")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", R)

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


def make_double_integrator(dt: float) -> PlantModel:
    """2-d position/velocity plant with acceleration inputs and Q = I.

    State is (px, py, vx, vy); controls are the two accelerations.
    """
    if dt < 0:
        raise ConfigError(f"dt must be nonnegative, got {dt}")
    A = np.array(
        [
            [1.0, 0.0, dt, 0.0],
            [0.0, 1.0, 0.0, dt],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    B = np.array(
        [
            [0.5 * dt**2, 0.0],
            [0.0, 0.5 * dt**2],
            [dt, 0.0],
            [0.0, dt],
        ]
    )
    return PlantModel(A=A, B=B, Q=np.eye(4), dt=float(dt))


def make_random_sensor(
    n_y: int,
    n_x: int,
    elem_variance: float,
    rng: RngStream,
    index: int = 0,
    r_scale: float = 1.0,
) -> SensorModel:
    """Sensor with C entries drawn i.i.d. N(0, elem_variance) and R = r_scale*I.

    The draw is taken from `rng` once; callers that need a reproducible C
    should pass a dedicated stream (the matrix is then fixed for the run).
    """
    if n_y < 1 or n_x < 1:
        raise ConfigError("sensor dimensions must be >= 1")
    if elem_variance < 0:
        raise ConfigError("elem_variance must be nonnegative")
    C = np.sqrt(elem_variance) * rng.standard_normal((n_y, n_x))
    return SensorModel(index=index, C=C, R=r_scale * np.eye(n_y))


def step(
    plant: PlantModel,
    x: np.ndarray,
    u: np.ndarray,
    rng: RngStream | None = None,
    noisy: bool = False,
) -> np.ndarray:
    """One dynamics step A x + B u (+ process noise when noisy)."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (plant.n_x,):
        raise ConfigError(f"state must have shape ({plant.n_x},), got {x.shape}")
    if u.shape != (plant.n_u,):
        raise ConfigError(f"control must have shape ({plant.n_u},), got {u.shape}")
    out = plant.A @ x + plant.B @ u
    if noisy:
        if rng is None:
            raise ConfigError("noisy step requires an RngStream")
        out = out + gaussian(rng, np.zeros(plant.n_x), psd_sqrt(plant.Q))
    return out


def observe(
    sensor: SensorModel,
    x: np.ndarray,
    rng: RngStream | None = None,
    noisy: bool = False,
) -> np.ndarray:
    """One measurement C x (+ observation noise when noisy)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (sensor.C.shape[1],):
        raise ConfigError(f"state must have shape ({sensor.C.shape[1]},), got {x.shape}")
    y = sensor.C @ x
    if noisy:
        if rng is None:
            raise ConfigError("noisy observation requires an RngStream")
        y = y + gaussian(rng, np.zeros(sensor.n_y), psd_sqrt(sensor.R))
    return y
