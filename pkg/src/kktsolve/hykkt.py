"""Schur-complement solver for saddle-point systems via gamma augmentation.

The indefinite 2x2 system is transformed by adding ``gamma J^T`` times its
second block row to the first, which makes the (1,1) block
``H_gamma = H + D_x + gamma J^T J`` positive definite for large enough gamma
when ``J`` has full row rank.  ``H_gamma`` is factorized by Cholesky with a
one-time symbolic analysis; the multipliers solve
``(J H_gamma^{-1} J^T) dlambda = J H_gamma^{-1} rhat - r_lambda`` by CG with
the Schur operator applied implicitly (one Cholesky solve per application),
and the primal step is recovered by one more Cholesky solve.  Every pattern
(the transpose, the product, the union, the factor) is frozen at setup; the
per-system work is value updates only.

The whole 2x2 system is Ruiz-equilibrated before augmentation; the scaling
is computed from the first system and reused unless configured otherwise.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .direct_cholesky import (
    CholFactors,
    NotSpd,
    chol_analyze,
    chol_solve,
    factorize_permuted,
)
from .krylov import KrylovResult, LinearOperator, NotSpdOperatorError, cg
from .ordering import min_degree_order
from .sparsecore import (
    SYMMETRIC_LOWER,
    CsMatrix,
    RuizScaling,
    SparseError,
    SpgemmPlan,
    Triplets,
    entry_positions,
    from_triplets,
    inf_norm,
    ruiz_scale,
    spmv,
    transpose_map,
)

GAMMA_MIN = 1.0
GAMMA_MAX = 1e12

SETUP_STAGES = (
    "setup_parameters", "setup_spgemm_htil", "setup_solution_check",
    "setup_ruiz_scaling", "setup_spgemm_hgamma", "setup_permutation",
    "setup_hgamma_factorization", "setup_conjugate_gradient",
)
COMPUTE_STAGES = (
    "compute_spgemm_htil", "compute_ruiz_scaling", "compute_spgemm_hgamma",
    "apply_permutation", "compute_hgamma_factorization",
    "compute_conjugate_gradient", "recover_solution",
)


class HykktGammaError(RuntimeError):
    """Augmented block stayed indefinite after all gamma escalations."""


@dataclass
class HykktConfig:
    gamma: float | None = None       # None: pick from the scaled block norms
    gamma_escalation: float = 10.0
    gamma_max_attempts: int = 3
    cg_tol: float = 1e-12
    cg_maxit: int = 200
    ruiz_iters: int = 2
    ruiz_tol: float = 1e-2
    rescale_each_system: bool = False


@dataclass
class HykktFactorizeInfo:
    gamma_used: float
    attempts: list[tuple[float, int | None]]  # (gamma, failing column or None)
    timings: dict[str, float] = field(default_factory=dict)


@dataclass
class HykktSolveStats:
    cg_iterations: int
    cg_converged: bool
    chol_solves: int
    timings: dict[str, float] = field(default_factory=dict)


@contextmanager
def _stage(sink: dict, name: str):
    t0 = time.perf_counter()
    yield
    sink[name] = sink.get(name, 0.0) + (time.perf_counter() - t0)


class HykktSolver:
    """Frozen-pattern state for one sequence of same-pattern systems."""

    def __init__(self, n: int, m: int, cfg: HykktConfig):
        self.n = n
        self.m = m
        self.cfg = cfg
        self.setup_timings: dict[str, float] = {}
        self.ruiz: RuizScaling | None = None
        self.gamma_used: float | None = None
        self.total_chol_solves = 0
        self.factors: CholFactors | None = None
        # Frozen patterns and maps, filled by hykkt_setup.
        self.H_pattern: CsMatrix | None = None
        self.J_pattern: CsMatrix | None = None
        self.dx_mask: np.ndarray | None = None
        self.JT: CsMatrix | None = None
        self.Js: CsMatrix | None = None
        self.JTs: CsMatrix | None = None
        self.Htil: CsMatrix | None = None
        self.Hgamma: CsMatrix | None = None
        self.jtj_plan: SpgemmPlan | None = None
        self.chol_symbolic = None
        self._jt_vmap = None
        self._h_to_htil = None
        self._dx_to_htil = None
        self._htil_to_hg = None
        self._jtj_lower_src = None
        self._jtj_to_hg = None
        self._jtj_vals = None
        self._K_ruiz: CsMatrix | None = None
        self._h_to_k = None
        self._dx_to_k = None
        self._j_to_k = None
        self._resid_buf: np.ndarray | None = None
        self._cg_x0: np.ndarray | None = None

    def _chol(self, b: np.ndarray) -> np.ndarray:
        self.total_chol_solves += 1
        return chol_solve(self.factors, b)


def hykkt_setup(H: CsMatrix, J: CsMatrix, dx_pattern=None,
                cfg: HykktConfig | None = None) -> HykktSolver:
    """Build every reusable pattern for a sequence of same-pattern systems.

    ``dx_pattern`` marks which diagonal entries of the barrier term are
    structurally present (default: all of them).  ``J`` must have no empty
    row; full row rank is assumed and only diagnosed downstream when gamma
    escalation fails.
    """
    cfg = cfg or HykktConfig()
    if H.symmetry != SYMMETRIC_LOWER:
        raise SparseError("hykkt_setup: H must use symmetric-lower storage")
    n, m = H.n_rows, J.n_rows
    if J.n_cols != n:
        raise SparseError("hykkt_setup: J column count must match H")
    empty = np.flatnonzero(np.diff(J.row_ptr) == 0)
    if empty.size:
        raise SparseError(f"hykkt_setup: J row {int(empty[0])} has no entries")

    s = HykktSolver(n, m, cfg)
    t = s.setup_timings

    with _stage(t, "setup_parameters"):
        s.H_pattern = H
        s.J_pattern = J
        if dx_pattern is None:
            s.dx_mask = np.ones(n, dtype=bool)
        else:
            s.dx_mask = np.asarray(dx_pattern, dtype=bool)
        JT, vmap = transpose_map(J)
        s.JT = JT
        s._jt_vmap = vmap
        s.Js = J.with_values(np.zeros(J.nnz))
        s.JTs = JT.with_values(np.zeros(JT.nnz))

    with _stage(t, "setup_spgemm_htil"):
        d_idx = np.flatnonzero(s.dx_mask).astype(np.int64)
        hrows = H.row_of_entry()
        til = from_triplets(Triplets(
            n, n,
            np.concatenate([hrows, d_idx]),
            np.concatenate([H.col_idx, d_idx]),
            np.zeros(hrows.size + d_idx.size)), SYMMETRIC_LOWER)
        s.Htil = til
        s._h_to_htil = entry_positions(til, hrows, H.col_idx)
        s._dx_to_htil = entry_positions(til, d_idx, d_idx)

    with _stage(t, "setup_solution_check"):
        s._resid_buf = np.zeros(n + m)

    with _stage(t, "setup_ruiz_scaling"):
        # Pattern of the assembled 2x2 matrix; values arrive per system.
        jrows = J.row_of_entry() + n
        k_pat = from_triplets(Triplets(
            n + m, n + m,
            np.concatenate([hrows, d_idx, jrows]),
            np.concatenate([H.col_idx, d_idx, J.col_idx]),
            np.zeros(hrows.size + d_idx.size + J.nnz)), SYMMETRIC_LOWER)
        s._K_ruiz = k_pat
        s._h_to_k = entry_positions(k_pat, hrows, H.col_idx)
        s._dx_to_k = entry_positions(k_pat, d_idx, d_idx)
        s._j_to_k = entry_positions(k_pat, jrows, J.col_idx)

    with _stage(t, "setup_spgemm_hgamma"):
        plan = SpgemmPlan(JT, J)
        s.jtj_plan = plan
        jtj = plan.pattern
        jtj_rows = jtj.row_of_entry()
        lower = jtj_rows >= jtj.col_idx
        s._jtj_lower_src = np.flatnonzero(lower).astype(np.int64)
        hg = from_triplets(Triplets(
            n, n,
            np.concatenate([til.row_of_entry(), jtj_rows[lower]]),
            np.concatenate([til.col_idx, jtj.col_idx[lower]]),
            np.zeros(til.nnz + int(lower.sum()))), SYMMETRIC_LOWER)
        s.Hgamma = hg
        s._htil_to_hg = entry_positions(hg, til.row_of_entry(), til.col_idx)
        s._jtj_to_hg = entry_positions(hg, jtj_rows[lower], jtj.col_idx[lower])
        s._jtj_vals = np.zeros(jtj.nnz)

    with _stage(t, "setup_permutation"):
        perm = min_degree_order(s.Hgamma)

    with _stage(t, "setup_hgamma_factorization"):
        s.chol_symbolic = chol_analyze(s.Hgamma, perm=perm)

    with _stage(t, "setup_conjugate_gradient"):
        s._cg_x0 = np.zeros(m)

    return s


def _default_gamma(htil_norm: float, j_norm: float) -> float:
    g = htil_norm / max(j_norm * j_norm, np.finfo(float).tiny)
    return float(min(max(g, GAMMA_MIN), GAMMA_MAX))


def hykkt_factorize(s: HykktSolver, H: CsMatrix, J: CsMatrix, dx_vals,
                    cfg: HykktConfig | None = None) -> HykktFactorizeInfo:
    """Numeric pass for one system: scale, augment, Cholesky, escalate gamma.

    ``H`` and ``J`` must carry the setup patterns; ``dx_vals`` holds the
    barrier diagonal on the setup mask.  On an indefinite ``H_gamma`` the
    weight is multiplied by the escalation factor and the (cheap) value
    assembly plus factorization retried; exhausting the attempts raises
    :class:`HykktGammaError`, which for full-rank ``J`` cannot happen once
    gamma is large enough.
    """
    cfg = cfg or s.cfg
    if not H.same_pattern(s.H_pattern):
        raise SparseError("hykkt_factorize: H pattern differs from setup")
    if not J.same_pattern(s.J_pattern):
        raise SparseError("hykkt_factorize: J pattern differs from setup")
    dx_vals = np.asarray(dx_vals, dtype=np.float64)
    d_idx = np.flatnonzero(s.dx_mask)
    if dx_vals.shape == (s.n,):
        dx_on_mask = dx_vals[d_idx]
    elif dx_vals.shape == (d_idx.size,):
        dx_on_mask = dx_vals
    else:
        raise SparseError("hykkt_factorize: dx_vals length mismatch")

    timings: dict[str, float] = {}

    with _stage(timings, "compute_spgemm_htil"):
        htil_vals = np.zeros(s.Htil.nnz)
        np.add.at(htil_vals, s._h_to_htil, H.values)
        np.add.at(htil_vals, s._dx_to_htil, dx_on_mask)

    need_ruiz = s.ruiz is None or cfg.rescale_each_system
    if need_ruiz:
        stage_name = ("setup_ruiz_scaling" if s.ruiz is None
                      else "compute_ruiz_scaling")
        sink = s.setup_timings if s.ruiz is None else timings
        with _stage(sink, stage_name):
            kv = np.zeros(s._K_ruiz.nnz)
            np.add.at(kv, s._h_to_k, H.values)
            np.add.at(kv, s._dx_to_k, dx_on_mask)
            np.add.at(kv, s._j_to_k, J.values)
            s._K_ruiz.values[:] = kv
            s.ruiz = ruiz_scale(s._K_ruiz, max_iters=cfg.ruiz_iters,
                                tol=cfg.ruiz_tol)

    with _stage(timings, "compute_ruiz_scaling"):
        d = s.ruiz.d
        d1, d2 = d[:s.n], d[s.n:]
        hrows = s.Htil.row_of_entry()
        htil_vals *= d1[hrows] * d1[s.Htil.col_idx]
        s.Js.values[:] = J.values * d2[J.row_of_entry()] * d1[J.col_idx]
        s.JTs.values[:] = s.Js.values[s._jt_vmap]

    with _stage(timings, "compute_spgemm_hgamma"):
        s.jtj_plan.numeric(s.JTs, s.Js, out=s._jtj_vals)
        htil_scaled = s.Htil.with_values(htil_vals)
        gamma = cfg.gamma
        if gamma is None:
            gamma = _default_gamma(inf_norm(htil_scaled), inf_norm(s.Js))

    attempts: list[tuple[float, int | None]] = []
    factors = None
    for _attempt in range(cfg.gamma_max_attempts + 1):
        with _stage(timings, "compute_spgemm_hgamma"):
            s.Hgamma.values[:] = 0.0
            np.add.at(s.Hgamma.values, s._htil_to_hg, htil_vals)
            np.add.at(s.Hgamma.values, s._jtj_to_hg,
                      gamma * s._jtj_vals[s._jtj_lower_src])
        with _stage(timings, "apply_permutation"):
            pv = s.chol_symbolic.gather_permuted_values(s.Hgamma)
        with _stage(timings, "compute_hgamma_factorization"):
            result = factorize_permuted(s.chol_symbolic, pv)
        if isinstance(result, NotSpd):
            attempts.append((gamma, result.column))
            gamma *= cfg.gamma_escalation
            continue
        attempts.append((gamma, None))
        factors = result
        break
    if factors is None:
        raise HykktGammaError(
            "H_gamma is not positive definite for any attempted gamma "
            f"(tried {[a[0] for a in attempts]}); J is likely rank deficient")

    s.factors = factors
    s.gamma_used = gamma
    return HykktFactorizeInfo(gamma_used=gamma, attempts=attempts, timings=timings)


def schur_apply(s: HykktSolver, v: np.ndarray) -> np.ndarray:
    """Implicit Schur operator ``v -> J H_gamma^{-1} J^T v`` (one Cholesky solve)."""
    return spmv(s.Js, s._chol(spmv(s.Js, v, transpose=True)))


def hykkt_solve(s: HykktSolver, r_x, r_lambda,
                cfg: HykktConfig | None = None) -> tuple[np.ndarray, np.ndarray, HykktSolveStats]:
    """Solve one factorized system and recover the unscaled solution."""
    cfg = cfg or s.cfg
    if s.factors is None:
        raise RuntimeError("hykkt_solve: call hykkt_factorize first")
    r_x = np.asarray(r_x, dtype=np.float64)
    r_lambda = np.asarray(r_lambda, dtype=np.float64)
    timings: dict[str, float] = {}
    chol0 = s.total_chol_solves
    d = s.ruiz.d
    d1, d2 = d[:s.n], d[s.n:]

    with _stage(timings, "compute_conjugate_gradient"):
        rxs = d1 * r_x
        rls = d2 * r_lambda
        rhat = rxs + s.gamma_used * spmv(s.Js, rls, transpose=True)
        b_cg = spmv(s.Js, s._chol(rhat)) - rls
        op = LinearOperator(s.m, lambda v: schur_apply(s, v))
        try:
            res: KrylovResult = cg(op, b_cg, s._cg_x0, tol=cfg.cg_tol,
                                   maxit=cfg.cg_maxit)
        except NotSpdOperatorError as exc:
            raise HykktGammaError(
                f"Schur operator not positive definite ({exc}); "
                "gamma too small or J rank deficient") from exc
        dlam_s = res.x

    with _stage(timings, "recover_solution"):
        dx_s = s._chol(rhat - spmv(s.Js, dlam_s, transpose=True))
        dx = d1 * dx_s
        dlam = d2 * dlam_s

    stats = HykktSolveStats(
        cg_iterations=res.iterations,
        cg_converged=res.converged,
        chol_solves=s.total_chol_solves - chol0,
        timings=timings,
    )
    return dx, dlam, stats
