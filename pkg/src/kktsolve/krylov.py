"""Flexible restarted GMRES and preconditioned conjugate gradients.

FGMRES stores the preconditioned basis vectors, so the preconditioner may
change between iterations (the point of using it with drifting refactorized
factors).  The residual norm is *estimated* from the Givens recurrence at
every iteration; the solution, and with it the true residual, is assembled
only at a restart or at convergence, which keeps the per-iteration cost to
one preconditioner application and one operator application.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .sparsecore import CsMatrix, spmv

CGS2 = "cgs2"
MGS = "mgs"

# A new basis vector this small relative to the first residual means the
# Krylov space is exhausted: happy breakdown, treated as convergence.
HAPPY_BREAKDOWN_RTOL = 1e-14


class OperatorOutputError(RuntimeError):
    """An operator produced a NaN or Inf entry."""


class NotSpdOperatorError(RuntimeError):
    """CG observed ``p.S.p <= 0``: the operator is not positive definite."""


@dataclass
class LinearOperator:
    """A square operator given by its dimension and an apply callback."""

    dimension: int
    apply: Callable[[np.ndarray], np.ndarray]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.apply(v)

    @classmethod
    def from_matrix(cls, A: CsMatrix) -> "LinearOperator":
        if A.n_rows != A.n_cols:
            raise ValueError("operator matrices must be square")
        return cls(A.n_rows, lambda v: spmv(A, v))

    @classmethod
    def identity(cls, n: int) -> "LinearOperator":
        return cls(n, lambda v: v.copy())


@dataclass
class KrylovConfig:
    """Restart length, budget (``max_outer`` restart cycles), tolerance."""

    m: int = 10
    max_outer: int = 10
    tol: float = 1e-12
    ortho: str = CGS2

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("restart length m must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.ortho not in (CGS2, MGS):
            raise ValueError(f"unknown orthogonalization {self.ortho!r}")


@dataclass
class KrylovResult:
    x: np.ndarray
    iterations: int
    converged: bool
    est_residual_history: list[float]
    true_final_residual: float
    precond_applications: int
    # (estimated, true) residual norm pairs at each restart boundary.
    restart_residuals: list[tuple[float, float]] = field(default_factory=list)


def _check_finite(v: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(v)):
        raise OperatorOutputError(f"{what} produced a non-finite entry")
    return v


def cgs2_step(V: list[np.ndarray], w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Classical Gram-Schmidt with one full reorthogonalization pass.

    Returns the combined projection coefficients and the orthogonalized
    vector.  The caller detects breakdown from the returned vector's norm;
    a vector numerically inside span(V) comes back with norm ~ 0.
    """
    Vm = np.column_stack(V)
    h1 = Vm.T @ w
    w1 = w - Vm @ h1
    h2 = Vm.T @ w1
    w2 = w1 - Vm @ h2
    return h1 + h2, w2


def _mgs_step(V: list[np.ndarray], w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h = np.zeros(len(V))
    w = w.copy()
    for i, v in enumerate(V):
        h[i] = np.dot(v, w)
        w -= h[i] * v
    return h, w


def fgmres(K: LinearOperator, M: LinearOperator, b: np.ndarray,
           x0: np.ndarray, cfg: KrylovConfig) -> KrylovResult:
    """Right-preconditioned flexible GMRES(m).

    Converges when the estimated residual norm drops below
    ``cfg.tol * ||b - K x0||``; at most ``cfg.max_outer`` restart cycles of
    ``cfg.m`` iterations run.  The true residual is computed once per restart
    and once at exit.
    """
    n = K.dimension
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy()
    if b.shape != (n,) or x.shape != (n,):
        raise ValueError("fgmres: dimension mismatch")
    ortho = cgs2_step if cfg.ortho == CGS2 else _mgs_step

    r = b - _check_finite(K(x), "operator")
    beta0 = float(np.linalg.norm(r))
    history = [beta0]
    precond_apps = 0
    total_iters = 0
    restart_residuals: list[tuple[float, float]] = []

    if beta0 == 0.0:
        return KrylovResult(x, 0, True, history, 0.0, 0, restart_residuals)
    target = cfg.tol * beta0
    breakdown_floor = HAPPY_BREAKDOWN_RTOL * beta0

    beta = beta0
    converged = False
    for _ in range(cfg.max_outer):
        if beta <= target:
            converged = True
            break
        V = [r / beta]
        Z: list[np.ndarray] = []
        m = cfg.m
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        j_used = 0
        for j in range(m):
            z = _check_finite(M(V[j]), "preconditioner")
            precond_apps += 1
            w = _check_finite(K(z), "operator")
            Z.append(z)
            h, w = ortho(V, w)
            H[:j + 1, j] = h
            hj1 = float(np.linalg.norm(w))
            H[j + 1, j] = hj1
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            cs[j] = H[j, j] / denom
            sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            est = abs(g[j + 1])
            history.append(est)
            total_iters += 1
            j_used = j + 1
            if est <= target or hj1 <= breakdown_floor:
                converged = True
                break
            V.append(w / hj1)
        # Assemble the solution from the flexible basis.
        y = _solve_upper(H[:j_used, :j_used], g[:j_used])
        x = x + np.column_stack(Z[:j_used]) @ y
        r = b - _check_finite(K(x), "operator")
        beta = float(np.linalg.norm(r))
        restart_residuals.append((history[-1], beta))
        if converged:
            break
        if beta <= target:
            converged = True
            break

    return KrylovResult(
        x=x,
        iterations=total_iters,
        converged=converged,
        est_residual_history=history,
        true_final_residual=beta,
        precond_applications=precond_apps,
        restart_residuals=restart_residuals,
    )


def _solve_upper(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - np.dot(R[i, i + 1:k], y[i + 1:k])) / R[i, i]
    return y


def cg(S: LinearOperator, b: np.ndarray, x0: np.ndarray,
       tol: float = 1e-12, maxit: int = 200) -> KrylovResult:
    """Conjugate gradients on a symmetric positive definite operator.

    Convergence uses the recurrence residual relative to the initial one; the
    true residual is checked explicitly once at exit.  Raises
    :class:`NotSpdOperatorError` when ``p.S.p <= 0`` turns up.
    """
    n = S.dimension
    b = np.asarray(b, dtype=np.float64)
    x = np.asarray(x0, dtype=np.float64).copy()
    if b.shape != (n,) or x.shape != (n,):
        raise ValueError("cg: dimension mismatch")
    r = b - _check_finite(S(x), "operator")
    rho0 = float(np.linalg.norm(r))
    history = [rho0]
    if rho0 == 0.0:
        return KrylovResult(x, 0, True, history, 0.0, 0)
    target = tol * rho0
    p = r.copy()
    rs = float(np.dot(r, r))
    converged = False
    iters = 0
    for _ in range(maxit):
        Sp = _check_finite(S(p), "operator")
        pSp = float(np.dot(p, Sp))
        if pSp <= 0.0:
            raise NotSpdOperatorError(
                f"cg: p.S.p = {pSp:g} <= 0 after {iters} iterations")
        alpha = rs / pSp
        x += alpha * p
        r -= alpha * Sp
        iters += 1
        rs_new = float(np.dot(r, r))
        history.append(np.sqrt(rs_new))
        if history[-1] <= target:
            converged = True
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    true_final = float(np.linalg.norm(b - S(x)))
    return KrylovResult(x, iters, converged, history, true_final, 0)
