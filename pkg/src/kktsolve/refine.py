"""Iterative-refinement controllers and residual-quality metrics.

Two correctors share one trigger: refinement runs only when the direct
solve's relative residual exceeds ``delta_tol``.  The Krylov corrector runs
FGMRES on the original system with the (possibly stale) LU factors as a
right preconditioner and the direct solution as the initial guess; the
baseline corrector is the classical Richardson loop that re-solves the error
system with the same factors.  Residuals are computed in uniform double
precision throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .direct_lu import LuFactors, lu_solve
from .krylov import KrylovConfig, LinearOperator, fgmres
from .sparsecore import CsMatrix, inf_norm, spmv

NSR_RATIO = "nsr_ratio"
TOLERANCE = "tolerance"


@dataclass
class RefinementConfig:
    """Trigger tolerance plus per-method knobs.

    ``delta_tol`` is both the refinement trigger and the FGMRES relative
    tolerance.  Richardson stops on residual tolerance or on NSR stagnation
    (ratio above ``nsr_ratio_floor``), whichever mode is selected.
    """

    delta_tol: float = 1e-9
    krylov: KrylovConfig = field(default_factory=KrylovConfig)
    richardson_max_steps: int = 10
    richardson_stop: str = TOLERANCE
    nsr_ratio_floor: float = 0.5

    def __post_init__(self):
        if self.delta_tol <= 0:
            raise ValueError("delta_tol must be positive")
        if self.richardson_stop not in (TOLERANCE, NSR_RATIO):
            raise ValueError(f"unknown richardson_stop {self.richardson_stop!r}")


@dataclass
class RefinementReport:
    triggered: bool
    method: str  # "none", "fgmres", or "richardson"
    ir_iterations: int
    triangular_solves_used: int
    nsr_before: float
    nsr_after: float
    rr_final: float
    nrbe_final: float
    converged: bool
    diverged: bool = False


def nsr(K: CsMatrix, x, r) -> float:
    """Norm of scaled residuals: ``||r - Kx||_inf / (||K||_inf ||x||_inf)``.

    A zero denominator (zero matrix or zero solution) reports +inf.
    """
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    num = float(np.max(np.abs(r - spmv(K, x)))) if r.size else 0.0
    den = inf_norm(K) * float(np.max(np.abs(x))) if x.size else 0.0
    if den == 0.0:
        return np.inf
    return num / den


def nrbe(K: CsMatrix, x, r) -> float:
    """Norm-wise relative backward error:
    ``||r - Kx||_2 / (||K||_inf ||x||_2 + ||r||_2)``."""
    x = np.asarray(x, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    num = float(np.linalg.norm(r - spmv(K, x)))
    den = inf_norm(K) * float(np.linalg.norm(x)) + float(np.linalg.norm(r))
    if den == 0.0:
        return np.inf
    return num / den


def needs_refinement(K: CsMatrix, x0, r, delta_tol: float) -> bool:
    """True when ``||r - K x0||_2 > delta_tol * ||r||_2``."""
    x0 = np.asarray(x0, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return float(np.linalg.norm(r - spmv(K, x0))) > delta_tol * float(np.linalg.norm(r))


def _untriggered_report(K: CsMatrix, x0, r) -> RefinementReport:
    q = nsr(K, x0, r)
    return RefinementReport(
        triggered=False, method="none", ir_iterations=0,
        triangular_solves_used=0, nsr_before=q, nsr_after=q,
        rr_final=1.0, nrbe_final=nrbe(K, x0, r), converged=True)


def refine_fgmres(K: CsMatrix, factors: LuFactors, x0, r,
                  cfg: RefinementConfig) -> tuple[np.ndarray, RefinementReport]:
    """FGMRES refinement of a direct solve, LU factors as right preconditioner.

    Does nothing when the trigger is off.  On non-convergence within the
    budget the best iterate is returned with ``converged=False`` in the
    report; policy is the caller's.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if not needs_refinement(K, x0, r, cfg.delta_tol):
        return x0.copy(), _untriggered_report(K, x0, r)

    count0 = factors.triangular_solve_count
    nsr_before = nsr(K, x0, r)
    op = LinearOperator.from_matrix(K)
    precond = LinearOperator(factors.n, lambda v: lu_solve(factors, v))
    kcfg = replace(cfg.krylov, tol=cfg.delta_tol)
    res = fgmres(op, precond, r, x0, kcfg)
    x = res.x
    rho0 = res.est_residual_history[0]
    rr_final = (res.est_residual_history[-1] / rho0) if rho0 > 0 else 0.0
    report = RefinementReport(
        triggered=True, method="fgmres",
        ir_iterations=res.iterations,
        triangular_solves_used=factors.triangular_solve_count - count0,
        nsr_before=nsr_before, nsr_after=nsr(K, x, r),
        rr_final=rr_final, nrbe_final=nrbe(K, x, r),
        converged=res.converged)
    return x, report


def refine_richardson(K: CsMatrix, factors: LuFactors, x0, r,
                      cfg: RefinementConfig) -> tuple[np.ndarray, RefinementReport]:
    """Richardson iterative refinement: repeatedly solve ``K d = rho``.

    One triangular-solve unit per step.  Stops on the configured criterion
    (residual tolerance, or NSR stagnation in ``nsr_ratio`` mode), on the
    step budget, or on divergence (residual growth twice in a row), in which
    case the best iterate seen is returned.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if not needs_refinement(K, x0, r, cfg.delta_tol):
        return x0.copy(), _untriggered_report(K, x0, r)

    count0 = factors.triangular_solve_count
    nsr_before = nsr(K, x0, r)
    r_norm = float(np.linalg.norm(r))

    x = x0.copy()
    rho = r - spmv(K, x)
    rho0_norm = float(np.linalg.norm(rho))
    rho_norm = rho0_norm
    nsr_old = nsr_before
    best_x, best_rho = x.copy(), rho_norm
    steps = 0
    converged = False
    diverged = False
    growth_streak = 0

    while steps < cfg.richardson_max_steps:
        if cfg.richardson_stop == TOLERANCE and rho_norm <= cfg.delta_tol * r_norm:
            converged = True
            break
        d = lu_solve(factors, rho)
        x += d
        steps += 1
        rho = r - spmv(K, x)
        new_norm = float(np.linalg.norm(rho))
        if new_norm < best_rho:
            best_x, best_rho = x.copy(), new_norm
        if new_norm > rho_norm:
            growth_streak += 1
            if growth_streak >= 2:
                diverged = True
                break
        else:
            growth_streak = 0
        rho_norm = new_norm
        if cfg.richardson_stop == NSR_RATIO:
            nsr_new = nsr(K, x, r)
            if nsr_old > 0 and nsr_new / nsr_old > cfg.nsr_ratio_floor:
                converged = True  # stagnation: the MA57-style normal stop
                break
            nsr_old = nsr_new
    else:
        converged = (cfg.richardson_stop == TOLERANCE
                     and rho_norm <= cfg.delta_tol * r_norm)

    if diverged:
        x = best_x
        rho_norm = best_rho

    report = RefinementReport(
        triggered=True, method="richardson",
        ir_iterations=steps,
        triangular_solves_used=factors.triangular_solve_count - count0,
        nsr_before=nsr_before, nsr_after=nsr(K, x, r),
        rr_final=(rho_norm / rho0_norm) if rho0_norm > 0 else 0.0,
        nrbe_final=nrbe(K, x, r),
        converged=converged, diverged=diverged)
    return x, report
