"""Reproducible sequences of increasingly ill-conditioned saddle-point systems.

A short-step damped Newton barrier method on a synthetic convex QP
(``min 0.5 x'Qx + c'x  s.t.  Ax = b, x >= 0``) emits one assembled system per
barrier value.  As the barrier parameter shrinks, the diagonal ``X^{-1}Z``
term blows up on the active set and the systems become ill-conditioned by
design, which is exactly what the solvers upstream are built to survive.
All emitted systems share one sparsity pattern.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .direct_lu import factorize, lu_solve
from .kkt import KktBlocks, KktRhs, KktSystem, assemble_kkt, assemble_rhs, recover_dz
from .sparsecore import (
    GENERAL,
    SYMMETRIC_LOWER,
    CsMatrix,
    Triplets,
    from_triplets,
    lower_triangle,
    spgemm,
    spmv,
    to_general,
    transpose,
)

FRACTION_TO_BOUNDARY = 0.995
_COND_LIMIT = 600  # dense condition estimates only below this system size

# The fixed desk-scale model used across tests and reports.
STANDARD_QP = dict(n=200, m=50, density=0.02, seed=42)
STANDARD_MU = dict(mu_start=1.0, mu_factor=0.1, steps=9)


@dataclass
class QpModel:
    """Convex QP data with a strictly feasible interior start at ``x = e``."""

    Q: CsMatrix
    c: np.ndarray
    A: CsMatrix
    b: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.Q.n_rows

    @property
    def m(self) -> int:
        return self.A.n_rows


@dataclass
class BarrierTrace:
    """Ordered systems of one barrier run, sharing a single pattern."""

    systems: list[tuple[KktSystem, KktRhs, float, float | None]]
    mu_schedule: list[float]
    final_x: np.ndarray
    final_lambda: np.ndarray
    final_z: np.ndarray
    diverged: bool = False
    qp: QpModel | None = field(default=None, repr=False)


def make_qp(n: int, m: int, density: float, seed: int) -> QpModel:
    """Random sparse convex QP: ``Q = B'B + 1e-4 I``, full-row-rank ``A``.

    ``A`` gets a unit diagonal strip plus random fill, and ``b = A e`` so the
    all-ones point is strictly feasible.  Fully determined by the seed.
    """
    if m >= n:
        raise ValueError("need m < n for a meaningful equality-constrained QP")
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)

    k = max(n, int(round(density * n * n)))
    rows = rng.integers(0, n, size=k)
    cols = rng.integers(0, n, size=k)
    vals = rng.standard_normal(k)
    B = from_triplets(Triplets(n, n, rows, cols, vals), GENERAL)
    Q_full = spgemm(transpose(B), B)
    d_idx = np.arange(n, dtype=np.int64)
    Q_full = from_triplets(Triplets(n, n,
                                    np.concatenate([Q_full.row_of_entry(), d_idx]),
                                    np.concatenate([Q_full.col_idx, d_idx]),
                                    np.concatenate([Q_full.values,
                                                    np.full(n, 1e-4)])), GENERAL)
    Q = lower_triangle(Q_full, SYMMETRIC_LOWER)

    ka = max(m, int(round(density * m * n)))
    arows = np.concatenate([np.arange(m, dtype=np.int64),
                            rng.integers(0, m, size=ka)])
    acols = np.concatenate([np.arange(m, dtype=np.int64),
                            rng.integers(0, n, size=ka)])
    avals = np.concatenate([np.ones(m), 0.5 * rng.standard_normal(ka)])
    A = from_triplets(Triplets(m, n, arows, acols, avals), GENERAL)

    c = rng.standard_normal(n)
    b = spmv(A, np.ones(n))
    return QpModel(Q=Q, c=c, A=A, b=b, seed=seed)


def qp_residuals(qp: QpModel, x, lam, z, mu: float):
    """First-order residuals: gradient, constraint, and complementarity."""
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    r_tilde_x = spmv(qp.Q, x) + qp.c + spmv(qp.A, lam, transpose=True) - z
    r_lambda = spmv(qp.A, x) - qp.b
    r_z = x * z - mu
    return r_tilde_x, r_lambda, r_z


def _residual_norm(qp, x, lam, z, mu):
    rt, rl, rz = qp_residuals(qp, x, lam, z, mu)
    return float(np.linalg.norm(np.concatenate([rt, rl, rz])))


def _step_to_boundary(v: np.ndarray, dv: np.ndarray) -> float:
    # Update is v - alpha*dv; positivity constrains components with dv > 0.
    pos = dv > 0.0
    if not np.any(pos):
        return 1.0
    return min(1.0, FRACTION_TO_BOUNDARY * float(np.min(v[pos] / dv[pos])))


def barrier_sequence(qp: QpModel, mu_start: float, mu_factor: float,
                     steps: int) -> BarrierTrace:
    """Run the damped Newton barrier loop, emitting one system per mu.

    Each barrier value assembles and emits the system at the current iterate
    (before stepping), then takes inner Newton steps until the residuals at
    that mu are reduced.  Fraction-to-boundary damping keeps ``x, z > 0``.
    A condition estimate accompanies each system when the size permits a
    dense computation.  Twenty consecutive step rejections truncate the
    trace with the ``diverged`` flag set.
    """
    if mu_start <= 0 or not 0.0 < mu_factor < 1.0:
        raise ValueError("need mu_start > 0 and 0 < mu_factor < 1")
    n, m = qp.n, qp.m
    x = np.ones(n)
    lam = np.zeros(m)
    z = np.full(n, mu_start)

    systems: list[tuple[KktSystem, KktRhs, float, float | None]] = []
    mu_schedule: list[float] = []
    pattern_donor: KktSystem | None = None
    diverged = False

    mu = mu_start
    for _ in range(steps):
        mu_schedule.append(mu)
        blocks = KktBlocks(H=qp.Q, J=qp.A, x=x.copy(), z=z.copy(), mu=mu)
        ksys = assemble_kkt(blocks, pattern_from=pattern_donor)
        pattern_donor = ksys
        rt, rl, rz = qp_residuals(qp, x, lam, z, mu)
        rhs = assemble_rhs(blocks, rt, rl, rz)
        cond = None
        if n + m <= _COND_LIMIT:
            cond = float(np.linalg.cond(ksys.K.to_dense()))
        systems.append((ksys, rhs, mu, cond))

        # Inner damped Newton loop at this mu.
        inner_tol = max(0.1 * mu, 1e-12)
        rejects = 0
        for _inner in range(30):
            res_now = _residual_norm(qp, x, lam, z, mu)
            if res_now <= inner_tol:
                break
            blocks = KktBlocks(H=qp.Q, J=qp.A, x=x.copy(), z=z.copy(), mu=mu)
            ksys_in = assemble_kkt(blocks, pattern_from=pattern_donor)
            rt, rl, rz = qp_residuals(qp, x, lam, z, mu)
            rhs_in = assemble_rhs(blocks, rt, rl, rz)
            factors, _ = factorize(to_general(ksys_in.K))
            sol = lu_solve(factors, np.concatenate([rhs_in.r_x, rhs_in.r_lambda]))
            dx, dlam = sol[:n], sol[n:]
            dz = recover_dz(blocks, rz, dx)
            alpha = min(_step_to_boundary(x, dx), _step_to_boundary(z, dz))
            accepted = False
            while rejects < 20:
                xn = x - alpha * dx
                ln = lam - alpha * dlam
                zn = z - alpha * dz
                if _residual_norm(qp, xn, ln, zn, mu) <= (1 - 1e-4 * alpha) * res_now:
                    x, lam, z = xn, ln, zn
                    rejects = 0
                    accepted = True
                    break
                rejects += 1
                alpha *= 0.5
            if not accepted:
                diverged = True
                break
        if diverged:
            break
        mu *= mu_factor

    return BarrierTrace(systems=systems, mu_schedule=mu_schedule,
                        final_x=x, final_lambda=lam, final_z=z,
                        diverged=diverged, qp=qp)


def standard_trace() -> BarrierTrace:
    """The fixed desk-scale sequence used by the reports and the test suite."""
    qp = make_qp(**STANDARD_QP)
    return barrier_sequence(qp, **STANDARD_MU)
