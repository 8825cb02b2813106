import numpy as np
import pytest
import scipy.linalg

from kktsolve.direct_lu import (
    PatternMismatchError,
    SingularMatrixError,
    factorize,
    lu_solve,
    refactorize,
)
from kktsolve.refine import nsr
from kktsolve.sparsecore import Triplets, from_dense, from_triplets, identity, to_general

from conftest import random_sparse


def _perm_matrices(f):
    n = f.n
    Pr = np.zeros((n, n))
    Pr[np.arange(n), f.row_perm.perm] = 1.0
    Pc = np.zeros((n, n))
    Pc[f.col_perm.perm, np.arange(n)] = 1.0
    return Pr, Pc


class TestFactorize:
    def test_identity(self):
        f, d = factorize(identity(3))
        assert np.array_equal(f.L.to_dense(), np.eye(3))
        assert np.array_equal(f.U.to_dense(), np.eye(3))
        assert np.array_equal(f.row_perm.perm, f.col_perm.perm)
        assert d.zero_pivots_patched == 0

    def test_forced_pivot_swap(self):
        A = from_dense(np.array([[0.0, 1.0], [1.0, 0.0]]))
        f, _ = factorize(A)
        assert not np.array_equal(f.row_perm.perm, f.col_perm.perm)
        assert np.array_equal(f.L.to_dense(), np.eye(2))
        assert np.array_equal(f.U.to_dense(), np.eye(2))

    def test_random_vs_dense_oracle(self):
        # The full 100-instance sweep lives in the acceptance suite.
        rng = np.random.default_rng(42)
        for s in range(30):
            n = int(rng.integers(10, 120))
            A = random_sparse(n, 0.08, 2000 + s)
            M = A.to_dense()
            f, _ = factorize(A)
            Pr, Pc = _perm_matrices(f)
            res = np.abs(Pr @ M @ Pc - f.L.to_dense() @ f.U.to_dense()).max()
            assert res <= 1e-12 * np.abs(M).max() * n

    def test_structural_singularity(self):
        A = from_triplets(Triplets.from_entries(2, 2, [(0, 0, 1.0)]))
        with pytest.raises(SingularMatrixError):
            factorize(A)

    def test_numerical_singularity(self):
        M = np.array([[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(SingularMatrixError):
            factorize(from_dense(M))

    def test_reconstruction_bound(self):
        for s in range(10):
            n = 80
            A = random_sparse(n, 0.06, 3000 + s)
            M = A.to_dense()
            f, d = factorize(A)
            Pr, Pc = _perm_matrices(f)
            res = np.abs(Pr @ M @ Pc - f.L.to_dense() @ f.U.to_dense()).max()
            assert res <= 1e-10 * np.abs(M).max() * n
            assert d.min_abs_pivot > 0


class TestLuSolve:
    def test_identity_factors(self):
        f, _ = factorize(identity(4))
        b = np.array([1.0, -2.0, 3.0, 0.5])
        assert np.array_equal(lu_solve(f, b), b)

    def test_diagonal(self):
        f, _ = factorize(from_dense(np.diag([2.0, 4.0])))
        assert np.allclose(lu_solve(f, np.array([2.0, 4.0])), [1.0, 1.0])

    def test_random_vs_dense_oracle(self):
        rng = np.random.default_rng(77)
        for s in range(20):
            n = int(rng.integers(20, 200))
            A = random_sparse(n, 0.05, 4000 + s)
            M = A.to_dense()
            b = rng.standard_normal(n)
            lu, piv = scipy.linalg.lu_factor(M)
            xd = scipy.linalg.lu_solve((lu, piv), b)
            f, _ = factorize(A)
            x = lu_solve(f, b)
            assert np.linalg.norm(x - xd) / np.linalg.norm(xd) <= 1e-9

    def test_counter_is_exact(self):
        f, _ = factorize(random_sparse(30, 0.2, 1))
        assert f.triangular_solve_count == 0
        for k in range(5):
            lu_solve(f, np.ones(30))
        assert f.triangular_solve_count == 5


class TestRefactorize:
    def test_unchanged_values_bitwise(self):
        A = random_sparse(60, 0.08, 10)
        f, _ = factorize(A)
        L0, U0 = f.L.values.copy(), f.U.values.copy()
        refactorize(f, A)
        assert np.array_equal(f.L.values, L0)
        assert np.array_equal(f.U.values, U0)
        assert f.from_refactorization

    def test_scaling_pushes_to_u(self):
        A = random_sparse(50, 0.1, 11)
        f, _ = factorize(A)
        L0, U0 = f.L.values.copy(), f.U.values.copy()
        refactorize(f, A.with_values(2.0 * A.values))
        assert np.array_equal(f.L.values, L0)
        assert np.array_equal(f.U.values, 2.0 * U0)
        # cross-check against a fresh factorization of 2A
        g, _ = factorize(A.with_values(2.0 * A.values))
        assert np.allclose(g.U.values, f.U.values, rtol=1e-12)

    def test_perturbed_solve_accuracy(self):
        rng = np.random.default_rng(12)
        A = random_sparse(100, 0.05, 12)
        f, _ = factorize(A)
        norm_a = np.abs(A.values).max()
        for s in range(5):
            delta = 1e-3 * norm_a * rng.standard_normal(A.nnz)
            Ap = A.with_values(A.values + delta)
            refactorize(f, Ap)
            b = rng.standard_normal(100)
            x = lu_solve(f, b)
            xd = np.linalg.solve(Ap.to_dense(), b)
            assert np.linalg.norm(x - xd) / np.linalg.norm(xd) <= 1e-8

    def test_pattern_mismatch_is_hard_error(self):
        A = random_sparse(20, 0.2, 13)
        f, _ = factorize(A)
        B = random_sparse(20, 0.25, 14)
        with pytest.raises(PatternMismatchError):
            refactorize(f, B)

    def test_zero_pivot_patched_not_fatal(self):
        A = from_dense(np.array([[2.0, 1.0], [1.0, 2.0]]))
        f, _ = factorize(A)
        # Same pattern, but values make the second pivot exactly zero.
        B = from_dense(np.array([[2.0, 1.0], [1.0, 0.5]]))
        d = refactorize(f, B)
        assert d.zero_pivots_patched == 1
        assert d.min_abs_pivot > 0


def test_static_pivot_degradation_on_trace(trace):
    """Refactorized solves lose quality relative to fresh ones late in the
    barrier sequence; at least half the systems show it."""
    systems = trace.systems
    K0 = to_general(systems[0][0].K)
    f_re, _ = factorize(K0)
    worse = 0
    for ksys, rhs, _mu, _cond in systems:
        Kg = to_general(ksys.K)
        r = np.concatenate([rhs.r_x, rhs.r_lambda])
        refactorize(f_re, Kg)
        x_re = lu_solve(f_re, r)
        f_fresh, _ = factorize(Kg)
        x_fresh = lu_solve(f_fresh, r)
        if nsr(ksys.K, x_re, r) >= nsr(ksys.K, x_fresh, r):
            worse += 1
    assert worse >= len(systems) / 2
