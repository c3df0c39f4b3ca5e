import numpy as np
import pytest

from ratelqr.errors import ConfigError, NumericsError
from ratelqr.mathkernel import (
    RngStream,
    cholesky,
    gaussian,
    mat_mul,
    psd_sqrt,
    solve_spd,
    sym_eig,
)


def random_spd(rng, n):
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


class TestMatMul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        assert np.array_equal(mat_mul(np.eye(3), m), m)

    def test_hand_product(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[0.0], [1.0]])
        assert np.array_equal(mat_mul(a, b), np.array([[2.0], [4.0]]))

    def test_transpose_identity(self):
        rng = RngStream(3)
        a = rng.standard_normal((5, 5))
        b = rng.standard_normal((5, 5))
        assert np.max(np.abs(mat_mul(a, b).T - mat_mul(b.T, a.T))) < 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            mat_mul(np.eye(3), np.eye(4))


class TestCholesky:
    def test_identity(self):
        assert np.array_equal(cholesky(np.eye(4)), np.eye(4))

    def test_hand_factor(self):
        l = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
        expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
        assert np.max(np.abs(l - expected)) < 1e-12

    def test_indefinite_rejected(self):
        # eigenvalues 3 and -1
        with pytest.raises(NumericsError, match="not positive definite"):
            cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_reconstruction_property(self):
        rng = RngStream(11)
        for n in (2, 3, 5, 8, 13):
            s = random_spd(rng, n)
            l = cholesky(s)
            assert np.all(np.triu(l, 1) == 0)
            rel = np.linalg.norm(l @ l.T - s) / np.linalg.norm(s)
            assert rel < 1e-10


class TestSymEig:
    def test_identity(self):
        w, _ = sym_eig(np.eye(2))
        assert np.allclose(w, [1.0, 1.0])

    def test_hand_eigenpairs(self):
        w, v = sym_eig(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert np.allclose(w, [3.0, 1.0], atol=1e-12)
        e = np.ones(2) / np.sqrt(2)
        assert min(np.linalg.norm(v[:, 0] - e), np.linalg.norm(v[:, 0] + e)) < 1e-10

    def test_reconstruction_and_orthonormality(self):
        rng = RngStream(5)
        for _ in range(5):
            m = rng.standard_normal((10, 10))
            s = m + m.T
            w, v = sym_eig(s)
            assert np.all(np.diff(w) <= 1e-12)
            rel = np.linalg.norm(v @ np.diag(w) @ v.T - s) / np.linalg.norm(s)
            assert rel < 1e-9
            assert np.max(np.abs(v.T @ v - np.eye(10))) < 1e-10

    def test_asymmetric_rejected(self):
        with pytest.raises(ConfigError):
            sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestSolveSpd:
    def test_identity(self):
        b = np.array([[1.0], [2.0]])
        assert np.allclose(solve_spd(np.eye(2), b), b)

    def test_diagonal(self):
        x = solve_spd(np.diag([2.0, 4.0]), np.array([[2.0], [8.0]]))
        assert np.allclose(x, [[1.0], [2.0]])

    def test_residual(self):
        rng = RngStream(17)
        s = random_spd(rng, 6)
        b = rng.standard_normal((6, 3))
        x = solve_spd(s, b)
        assert np.linalg.norm(s @ x - b) / np.linalg.norm(b) < 1e-9

    def test_indefinite_rejected(self):
        with pytest.raises(NumericsError):
            solve_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))


class TestRngStream:
    def test_same_seed_bit_identical(self):
        a = RngStream(42).standard_normal(100)
        b = RngStream(42).standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_substreams_differ(self):
        root = RngStream(42)
        a = root.substream(0).standard_normal(64)
        b = root.substream(1).standard_normal(64)
        assert not np.array_equal(a, b)

    def test_substream_independent_of_consumption(self):
        # Deriving a child after drawing from the parent must not change it.
        fresh = RngStream(9).substream(3).standard_normal(8)
        parent = RngStream(9)
        parent.standard_normal(1000)
        assert np.array_equal(parent.substream(3).standard_normal(8), fresh)

    def test_moments(self):
        z = RngStream(1).standard_normal(10**6)
        assert abs(z.mean()) < 4 / np.sqrt(10**6)
        assert abs(z.var() - 1.0) < 0.01

    def test_permutation_is_permutation(self):
        p = RngStream(2).permutation(1000)
        assert np.array_equal(np.sort(p), np.arange(1000))


class TestGaussian:
    def test_zero_covariance_returns_mean(self):
        mean = np.array([1.0, -2.0, 3.0])
        out = gaussian(RngStream(0), mean, np.zeros((3, 3)))
        assert np.array_equal(out, mean)

    def test_determinism(self):
        mean = np.zeros(4)
        l = np.eye(4)
        assert np.array_equal(
            gaussian(RngStream(42), mean, l), gaussian(RngStream(42), mean, l)
        )

    def test_sample_moments(self):
        rng = RngStream(3)
        samples = np.array([gaussian(rng, np.zeros(1), np.eye(1))[0] for _ in range(4000)])
        # Box-Muller pairs: each call consumes 2 uniforms; moments still hold.
        assert abs(samples.mean()) < 0.07
        assert abs(samples.var() - 1.0) < 0.08

    def test_covariance_shaping(self):
        cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        l = cholesky(cov)
        rng = RngStream(8)
        draws = np.array([gaussian(rng, np.zeros(2), l) for _ in range(20000)])
        emp = draws.T @ draws / draws.shape[0]
        assert np.linalg.norm(emp - cov) / np.linalg.norm(cov) < 0.05


class TestPsdSqrt:
    def test_zero(self):
        assert np.array_equal(psd_sqrt(np.zeros((3, 3))), np.zeros((3, 3)))

    def test_singular_psd(self):
        s = np.array([[1.0, 1.0], [1.0, 1.0]])
        l = psd_sqrt(s)
        assert np.max(np.abs(l @ l.T - s)) < 1e-12
