"""Dense linear algebra and seeded Gaussian randomness used by every module.

All arrays are float64. Matrices are 2-d ``np.ndarray`` (row-major), vectors
are 1-d. Decompositions are delegated to LAPACK via numpy/scipy; the random
stream is pinned to an explicit algorithm (Philox counter generator plus a
Box-Muller transform) so that equal seeds replay bit-identical noise across
runs.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import ConfigError, NumericsError

_INV_2_53 = 2.0 ** -53


class RngStream:
    """Deterministic random stream addressed by (seed, stream ids).

    The underlying generator is Philox4x64; uniform doubles are the top 53
    bits of each raw draw and normals come from a vectorized Box-Muller
    transform, so the sample sequence is a fixed function of the seed.
    ``substream`` derives independent, non-overlapping child streams, which
    lets every noise source (per round, per sensor) own its own replayable
    stream.
    """

    def __init__(self, seed: int, ids: tuple = ()):
        self.seed = int(seed)
        self.ids = tuple(int(i) for i in ids)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.ids)
        self._bitgen = np.random.Philox(seq)

    def substream(self, *ids: int) -> "RngStream":
        """Independent child stream identified by the extra ids."""
        return RngStream(self.seed, self.ids + tuple(ids))

    @property
    def state(self):
        """Comparable generator state snapshot (counter and key words)."""
        st = self._bitgen.state["state"]
        return tuple(st["counter"].tolist()), tuple(st["key"].tolist())

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1), one per raw 64-bit output."""
        n = int(n)
        if n == 0:
            return np.empty(0)
        raw = self._bitgen.random_raw(n)
        return (raw >> np.uint64(11)) * _INV_2_53

    def standard_normal(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller; consumes whole pairs per call."""
        shape = (int(shape),) if np.isscalar(shape) else tuple(int(s) for s in shape)
        n = int(np.prod(shape)) if shape else 1
        if n == 0:
            return np.empty(shape)
        npairs = (n + 1) // 2
        u = self.uniform(2 * npairs)
        u1 = 1.0 - u[:npairs]  # (0, 1]: keeps the log finite
        u2 = u[npairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n) by sorting uniform keys."""
        return np.argsort(self.uniform(n), kind="stable")


def check_finite(name: str, arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} contains non-finite entries")
    return arr


def mat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit dimension checking."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2:
        raise ConfigError(f"mat_mul expects 2-d arrays, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ConfigError(f"mat_mul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def _require_symmetric(s: np.ndarray, what: str) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ConfigError(f"{what} expects a square matrix, got shape {s.shape}")
    if not np.allclose(s, s.T, rtol=1e-8, atol=1e-10):
        raise ConfigError(f"{what} expects a symmetric matrix")
    return s


def cholesky(spd: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == spd."""
    spd = _require_symmetric(spd, "cholesky")
    try:
        return np.linalg.cholesky(spd)
    except np.linalg.LinAlgError as exc:
        raise NumericsError("matrix not positive definite") from exc


def sym_eig(s: np.ndarray):
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues sorted descending, eigenvectors as matching columns).
    """
    s = _require_symmetric(s, "sym_eig")
    try:
        w, v = np.linalg.eigh(0.5 * (s + s.T))
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"symmetric eigensolver failed to converge: {exc}") from exc
    return w[::-1].copy(), v[:, ::-1].copy()


def solve_spd(spd: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve spd @ x = rhs for symmetric positive definite spd."""
    spd = _require_symmetric(spd, "solve_spd")
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != spd.shape[0]:
        raise ConfigError(f"solve_spd dimension mismatch: {spd.shape} vs rhs {rhs.shape}")
    try:
        c, low = scipy.linalg.cho_factor(spd, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NumericsError("matrix not positive definite") from exc
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def psd_sqrt(s: np.ndarray) -> np.ndarray:
    """A square root L with L @ L.T == s, valid for singular PSD matrices.

    Cholesky when s is positive definite, otherwise an eigenvalue square root
    with negative eigenvalues (round-off) clipped to zero.
    """
    s = _require_symmetric(s, "psd_sqrt")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (s + s.T))
        if np.min(w) < -1e-8 * max(1.0, np.max(np.abs(w))):
            raise NumericsError("matrix not positive semidefinite")
        return v * np.sqrt(np.clip(w, 0.0, None))


def gaussian(rng: RngStream, mean: np.ndarray, cov_cholesky: np.ndarray) -> np.ndarray:
    """One draw of N(mean, L L^T) given the covariance factor L."""
    mean = np.asarray(mean, dtype=float)
    cov_cholesky = np.asarray(cov_cholesky, dtype=float)
    if cov_cholesky.shape != (mean.shape[0], mean.shape[0]):
        raise ConfigError(
            f"gaussian dimension mismatch: mean {mean.shape}, factor {cov_cholesky.shape}"
        )
    return mean + cov_cholesky @ rng.standard_normal(mean.shape[0])
