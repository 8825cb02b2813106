import numpy as np
import pytest

from kktsolve.direct_lu import factorize, lu_solve
from kktsolve.krylov import (
    MGS,
    KrylovConfig,
    LinearOperator,
    NotSpdOperatorError,
    OperatorOutputError,
    cg,
    cgs2_step,
    fgmres,
)
from kktsolve.sparsecore import from_dense

from conftest import random_sparse, random_vector


def _basis(vectors):
    return [np.asarray(v, dtype=float) for v in vectors]


class TestCgs2:
    def test_orthogonal_input(self):
        e1, e2 = np.eye(5)[:, 0], np.eye(5)[:, 1]
        h, w = cgs2_step(_basis([e1]), e2)
        assert np.allclose(h, [0.0])
        assert np.allclose(w, e2)

    def test_nearly_parallel_not_breakdown(self):
        e1, e2 = np.eye(5)[:, 0], np.eye(5)[:, 1]
        h, w = cgs2_step(_basis([e1]), e1 + 1e-8 * e2)
        nw = np.linalg.norm(w)
        assert nw > 0
        assert abs(np.dot(w / nw, e2)) > 1 - 1e-12  # parallel to e2

    def test_orthogonality_bound(self):
        rng = np.random.default_rng(3)
        V = []
        for _ in range(20):
            w = rng.standard_normal(50)
            if V:
                _, w = cgs2_step(V, w)
            V.append(w / np.linalg.norm(w))
        w = rng.standard_normal(50)
        _, w_new = cgs2_step(V, w)
        worst = max(abs(np.dot(w_new, v)) for v in V)
        assert worst <= 1e-12 * np.linalg.norm(w_new)


class TestFgmres:
    def test_exact_x0_zero_iterations(self):
        n = 6
        I_op = LinearOperator.identity(n)
        b = random_vector(n, 1)
        res = fgmres(I_op, I_op, b, b, KrylovConfig(tol=1e-10))
        assert res.converged and res.iterations == 0
        assert res.est_residual_history[0] <= 1e-10

    def test_perfect_preconditioner_one_iteration(self):
        K = from_dense(np.diag([1.0, 2.0, 3.0, 4.0, 5.0]))
        f, _ = factorize(K)
        op = LinearOperator.from_matrix(K)
        pre = LinearOperator(5, lambda v: lu_solve(f, v))
        b = random_vector(5, 2)
        res = fgmres(op, pre, b, np.zeros(5), KrylovConfig(tol=1e-12))
        assert res.converged and res.iterations == 1
        assert res.precond_applications == res.iterations

    def test_inexact_factor_preconditioner(self):
        rng = np.random.default_rng(60)
        n = 60
        M = rng.standard_normal((n, n)) + np.diag(np.full(n, 6.0))
        K = from_dense(M)
        K3 = from_dense(np.round(M, 3))
        f, _ = factorize(K3)
        op = LinearOperator.from_matrix(K)
        pre = LinearOperator(n, lambda v: lu_solve(f, v))
        b = rng.standard_normal(n)
        x0 = lu_solve(f, b)
        tol = 1e-12
        res = fgmres(op, pre, b, x0, KrylovConfig(m=10, max_outer=10, tol=tol))
        assert res.converged
        assert res.iterations <= 10
        rho0 = np.linalg.norm(b - M @ x0)
        assert np.linalg.norm(b - M @ res.x) <= 10 * tol * rho0

    def test_estimate_nonincreasing_within_cycle(self):
        K = random_sparse(40, 0.2, 5)
        op = LinearOperator.from_matrix(K)
        pre = LinearOperator.identity(40)
        b = random_vector(40, 6)
        cfg = KrylovConfig(m=5, max_outer=4, tol=1e-10)
        res = fgmres(op, pre, b, np.zeros(40), cfg)
        hist = res.est_residual_history[1:]  # drop the initial true norm
        for c in range(0, len(hist), cfg.m):
            cycle = hist[c:c + cfg.m]
            assert all(b2 <= a * (1 + 1e-12) for a, b2 in zip(cycle, cycle[1:]))

    def test_estimate_matches_true_at_restart(self):
        rng = np.random.default_rng(8)
        n = 50
        M = rng.standard_normal((n, n)) + np.diag(np.full(n, 8.0))  # mild cond
        op = LinearOperator.from_matrix(from_dense(M))
        pre = LinearOperator.identity(n)
        b = rng.standard_normal(n)
        res = fgmres(op, pre, b, np.zeros(n),
                     KrylovConfig(m=4, max_outer=20, tol=1e-10))
        assert len(res.restart_residuals) >= 2
        for est, true in res.restart_residuals:
            if true > 0:
                assert abs(est - true) / true <= 1e-6

    def test_flexible_alternating_preconditioner(self):
        # A property plain GMRES lacks: M changes every application.
        rng = np.random.default_rng(9)
        n = 40
        B = rng.standard_normal((n, n))
        S = B @ B.T + n * np.eye(n)
        op = LinearOperator(n, lambda v: S @ v)
        state = {"k": 0}

        def alternating(v):
            state["k"] += 1
            if state["k"] % 2:
                return v / np.diagonal(S)
            return v.copy()

        pre = LinearOperator(n, alternating)
        b = rng.standard_normal(n)
        res = fgmres(op, pre, b, np.zeros(n),
                     KrylovConfig(m=10, max_outer=10, tol=1e-10))
        assert res.converged
        assert np.linalg.norm(b - S @ res.x) <= 10 * 1e-10 * np.linalg.norm(b)

    def test_right_preconditioning_preserves_true_residual(self):
        rng = np.random.default_rng(10)
        for s in range(5):
            n = 30
            K = random_sparse(n, 0.2, 100 + s)
            M = K.to_dense()
            f, _ = factorize(K)
            op = LinearOperator.from_matrix(K)
            pre = LinearOperator(n, lambda v: lu_solve(f, v))
            b = rng.standard_normal(n)
            tol = 1e-10
            res = fgmres(op, pre, b, np.zeros(n),
                         KrylovConfig(m=10, max_outer=10, tol=tol))
            assert res.converged
            assert np.linalg.norm(b - M @ res.x) <= 10 * tol * np.linalg.norm(b)

    def test_nan_operator_aborts(self):
        n = 4
        bad = LinearOperator(n, lambda v: v * np.nan)
        with pytest.raises(OperatorOutputError):
            fgmres(bad, LinearOperator.identity(n), np.ones(n), np.zeros(n),
                   KrylovConfig())

    def test_mgs_option(self):
        K = random_sparse(30, 0.2, 11)
        op = LinearOperator.from_matrix(K)
        b = random_vector(30, 12)
        res = fgmres(op, LinearOperator.identity(30), b, np.zeros(30),
                     KrylovConfig(m=30, max_outer=3, tol=1e-10, ortho=MGS))
        assert res.converged


class TestCg:
    def test_identity_one_iteration(self):
        op = LinearOperator.identity(5)
        b = random_vector(5, 0)
        res = cg(op, b, np.zeros(5))
        assert res.converged and res.iterations == 1
        assert np.allclose(res.x, b)

    def test_diag_exact_in_three(self):
        S = np.diag([1.0, 2.0, 3.0])
        op = LinearOperator(3, lambda v: S @ v)
        res = cg(op, np.array([1.0, 2.0, 3.0]), np.zeros(3), tol=1e-12)
        assert res.converged and res.iterations <= 3
        assert np.allclose(res.x, np.ones(3))

    def test_random_spd_vs_dense(self):
        rng = np.random.default_rng(14)
        n = 80
        vals = np.logspace(0, 4, n)  # cond ~ 1e4
        Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
        S = Qm @ np.diag(vals) @ Qm.T
        op = LinearOperator(n, lambda v: S @ v)
        b = rng.standard_normal(n)
        tol = 1e-12
        res = cg(op, b, np.zeros(n), tol=tol, maxit=2000)
        xd = np.linalg.solve(S, b)
        assert res.converged
        # accuracy consistent with tol * cond
        assert (np.linalg.norm(res.x - xd) / np.linalg.norm(xd)
                <= 10 * tol * vals[-1] / vals[0])

    def test_exact_termination_distinct_eigenvalues(self):
        rng = np.random.default_rng(15)
        n = 60
        for k in (2, 4, 7):
            eigs = np.repeat(np.linspace(1.0, 3.0, k), n // k + 1)[:n]
            Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
            S = Qm @ np.diag(eigs) @ Qm.T
            op = LinearOperator(n, lambda v: S @ v)
            res = cg(op, rng.standard_normal(n), np.zeros(n), tol=1e-10,
                     maxit=200)
            assert res.converged
            assert res.iterations <= k + 2

    def test_not_spd_detected(self):
        S = np.diag([1.0, -1.0])
        op = LinearOperator(2, lambda v: S @ v)
        with pytest.raises(NotSpdOperatorError):
            cg(op, np.array([1.0, 1.0]), np.zeros(2), tol=1e-12, maxit=10)


class TestEdgeCases:
    def test_happy_breakdown_is_convergence(self):
        # K = M = I: the first Krylov vector already spans the solution.
        n = 5
        op = LinearOperator.identity(n)
        b = random_vector(n, 20)
        res = fgmres(op, op, b, np.zeros(n), KrylovConfig(tol=1e-12))
        assert res.converged
        assert res.iterations == 1
        assert np.allclose(res.x, b, rtol=0, atol=1e-14)

    def test_cg_budget_exhaustion_returns_best(self):
        rng = np.random.default_rng(21)
        n = 50
        B = rng.standard_normal((n, n))
        S = B @ B.T + 0.01 * np.eye(n)
        op = LinearOperator(n, lambda v: S @ v)
        b = rng.standard_normal(n)
        res = cg(op, b, np.zeros(n), tol=1e-14, maxit=3)
        assert not res.converged
        assert res.iterations == 3
        assert np.all(np.isfinite(res.x))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            KrylovConfig(m=0)
        with pytest.raises(ValueError):
            KrylovConfig(tol=0.0)
        with pytest.raises(ValueError):
            KrylovConfig(ortho="qr")
