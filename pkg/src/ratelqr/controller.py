"""Infinite-horizon discrete-time LQR: Riccati fixed point, gain, and cost.

The regulator minimizes sum_t (x - x_desired)' Q_goal (x - x_desired)
+ u' R_goal u and applies u = -K (x_hat - x_desired).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError
from .mathkernel import check_finite, solve_spd


@dataclass(frozen=True)
class LqrWeights:
    q_goal: np.ndarray
    r_goal: np.ndarray
    x_desired: np.ndarray

    def __post_init__(self):
        q = check_finite("q_goal", self.q_goal)
        r = check_finite("r_goal", self.r_goal)
        xd = check_finite("x_desired", self.x_desired)
        if q.shape != (xd.shape[0], xd.shape[0]):
            raise ConfigError(f"q_goal shape {q.shape} does not match x_desired {xd.shape}")
        if np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-10:
            raise ConfigError("q_goal must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(0.5 * (r + r.T))) <= 0:
            raise ConfigError("r_goal must be positive definite")
        object.__setattr__(self, "q_goal", q)
        object.__setattr__(self, "r_goal", r)
        object.__setattr__(self, "x_desired", xd)


@dataclass(frozen=True)
class LqrSolution:
    """Riccati fixed point P and the feedback gain K."""

    p: np.ndarray
    k: np.ndarray
    iterations: int
    residual: float


def dare_residual(a, b, q_goal, r_goal, p) -> float:
    """Max-norm of RHS(P) - P for the discrete algebraic Riccati equation."""
    btp = b.T @ p
    rhs = q_goal + a.T @ p @ a - (btp @ a).T @ solve_spd(r_goal + btp @ b, btp @ a)
    return float(np.max(np.abs(rhs - p)))


def solve_dare(
    a: np.ndarray,
    b: np.ndarray,
    q_goal: np.ndarray,
    r_goal: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 10**6,
) -> LqrSolution:
    """Fixed-point value iteration for the DARE, started from P = Q_goal.

    Iterates P <- Q + A'PA - A'PB (R + B'PB)^-1 B'PA until the max-norm
    change drops below `tol`. Small systems converge in tens of iterations;
    failure to converge indicates an unstabilizable or ill-conditioned pair.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    q_goal = np.asarray(q_goal, dtype=float)
    r_goal = np.asarray(r_goal, dtype=float)
    n = a.shape[0]
    if b.shape[0] != n or q_goal.shape != (n, n) or r_goal.shape != (b.shape[1],) * 2:
        raise ConfigError(
            f"solve_dare dimension mismatch: A {a.shape}, B {b.shape}, "
            f"Q_goal {q_goal.shape}, R_goal {r_goal.shape}"
        )
    p = q_goal.copy()
    last_deltas = []
    for it in range(1, max_iter + 1):
        btp = b.T @ p
        gain = solve_spd(r_goal + btp @ b, btp @ a)
        p_next = q_goal + a.T @ p @ a - (btp @ a).T @ gain
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            raise NumericsError(
                "unstabilizable or ill-conditioned system: DARE iterates "
                f"diverged to non-finite values at iteration {it}"
            )
        delta = float(np.max(np.abs(p_next - p)))
        p = p_next
        last_deltas.append(delta)
        if delta < tol:
            k = solve_spd(r_goal + b.T @ p @ b, b.T @ p @ a)
            return LqrSolution(p=p, k=k, iterations=it, residual=dare_residual(a, b, q_goal, r_goal, p))
    raise NumericsError(
        "unstabilizable or ill-conditioned system: DARE iteration did not "
        f"converge in {max_iter} iterations; last changes {last_deltas[-5:]}"
    )


def control(sol: LqrSolution, weights: LqrWeights, x_hat: np.ndarray) -> np.ndarray:
    """LQR policy u = -K (x_hat - x_desired)."""
    x_hat = np.asarray(x_hat, dtype=float)
    if x_hat.shape != (sol.k.shape[1],):
        raise ConfigError(f"x_hat must have shape ({sol.k.shape[1]},), got {x_hat.shape}")
    return -sol.k @ (x_hat - weights.x_desired)


def step_cost(weights: LqrWeights, x: np.ndarray, u: np.ndarray) -> float:
    """Quadratic stage cost on the true state deviation plus control effort."""
    dx = np.asarray(x, dtype=float) - weights.x_desired
    u = np.asarray(u, dtype=float)
    return float(dx @ weights.q_goal @ dx + u @ weights.r_goal @ u)
