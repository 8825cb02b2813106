"""Sparse solvers for sequences of ill-conditioned saddle-point systems.

Submodules:

- ``sparsecore``: CSR storage, products, norms, permutation, equilibration
- ``ordering``: fill-reducing minimum-degree ordering
- ``direct_lu``: LU with static-pivot refactorization on a frozen pattern
- ``direct_cholesky``: Cholesky with one-time symbolic analysis
- ``krylov``: FGMRES(m) with CGS2 and flexible right preconditioning; CG
- ``refine``: refinement triggers, controllers, and residual metrics
- ``kkt``: reduced saddle-point assembly and multiplier recovery
- ``hykkt``: gamma-augmented Schur-complement strategy
- ``seqgen``: barrier-method generator of ill-conditioned sequences
- ``harness``: sequence I/O, strategy runner, CSV reports
"""

from .sparsecore import (
    GENERAL,
    SYMMETRIC_LOWER,
    CsMatrix,
    Permutation,
    RuizScaling,
    Triplets,
    from_triplets,
    inf_norm,
    permute_symmetric,
    ruiz_scale,
    spgemm,
    spmv,
    transpose,
)
from .direct_lu import LuDiagnostics, LuFactors, factorize, lu_solve, refactorize
from .direct_cholesky import (
    CholFactors,
    NotSpd,
    SymbolicChol,
    chol_analyze,
    chol_factorize,
    chol_solve,
)
from .krylov import KrylovConfig, KrylovResult, LinearOperator, cg, cgs2_step, fgmres
from .refine import (
    RefinementConfig,
    RefinementReport,
    needs_refinement,
    nrbe,
    nsr,
    refine_fgmres,
    refine_richardson,
)
from .kkt import (
    KktBlocks,
    KktRhs,
    KktSystem,
    assemble_kkt,
    assemble_rhs,
    gamma_rhs,
    recover_dz,
)
from .hykkt import (
    HykktConfig,
    HykktSolver,
    hykkt_factorize,
    hykkt_setup,
    hykkt_solve,
    schur_apply,
)
from .seqgen import BarrierTrace, QpModel, barrier_sequence, make_qp, qp_residuals

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
