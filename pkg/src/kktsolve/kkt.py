"""Assembly of the reduced symmetric saddle-point system and its bookkeeping.

The interior method's 3x3 step equations reduce to a 2x2 symmetric system
with blocks ``[[H + D_x, J^T], [J, 0]]`` where ``D_x = X^{-1} Z``; the bound
multiplier step is recovered afterwards.  Assembly freezes the combined
pattern once and reuses it for every system of a barrier sequence: repeated
calls share the same ``row_ptr``/``col_idx`` objects and only write values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sparsecore import (
    SYMMETRIC_LOWER,
    CsMatrix,
    SparseError,
    Triplets,
    entry_positions,
    from_triplets,
    spmv,
)


@dataclass
class KktBlocks:
    """Blocks of one saddle-point system at a strictly interior point."""

    H: CsMatrix          # n x n symmetric Hessian block (lower storage)
    J: CsMatrix          # m x n constraint Jacobian
    x: np.ndarray        # primal iterate, > 0
    z: np.ndarray        # bound multipliers, > 0
    mu: float            # barrier parameter, > 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.z = np.asarray(self.z, dtype=np.float64)
        n = self.H.n_rows
        if self.H.symmetry != SYMMETRIC_LOWER:
            raise SparseError("H must use symmetric-lower storage")
        if self.J.n_cols != n or self.x.shape != (n,) or self.z.shape != (n,):
            raise SparseError("KKT block dimensions do not conform")
        if np.any(self.x <= 0.0) or np.any(self.z <= 0.0):
            raise ValueError("interior point violated: x and z must be positive")

    @property
    def n(self) -> int:
        return self.H.n_rows

    @property
    def m(self) -> int:
        return self.J.n_rows


class KktSystem:
    """The assembled ``(n+m) x (n+m)`` symmetric matrix plus its provenance."""

    def __init__(self, K: CsMatrix, blocks: KktBlocks, dx_diag: np.ndarray,
                 h_pos: np.ndarray, d_pos: np.ndarray, j_pos: np.ndarray):
        self.K = K
        self.blocks = blocks
        self.dx_diag = dx_diag
        self._h_pos = h_pos
        self._d_pos = d_pos
        self._j_pos = j_pos

    @property
    def n(self) -> int:
        return self.blocks.n

    @property
    def m(self) -> int:
        return self.blocks.m


@dataclass
class KktRhs:
    """Right-hand sides of the reduced system plus what recovery needs."""

    r_x: np.ndarray
    r_lambda: np.ndarray
    r_z: np.ndarray
    r_tilde_x: np.ndarray


def assemble_kkt(blocks: KktBlocks, pattern_from: KktSystem | None = None) -> KktSystem:
    """Assemble the reduced system; reuse a previous system's frozen pattern.

    With ``pattern_from`` given, the blocks must carry the same patterns as
    the ones that built it; the new system shares the same pattern arrays
    and only its values differ.
    """
    n, m = blocks.n, blocks.m
    dx_diag = blocks.z / blocks.x

    if pattern_from is not None:
        prev = pattern_from
        if not (blocks.H.same_pattern(prev.blocks.H)
                and blocks.J.same_pattern(prev.blocks.J)):
            raise SparseError("assemble_kkt: block patterns differ from the "
                              "pattern-donor system")
        vals = np.zeros(prev.K.nnz)
        np.add.at(vals, prev._h_pos, blocks.H.values)
        np.add.at(vals, prev._d_pos, dx_diag)
        np.add.at(vals, prev._j_pos, blocks.J.values)
        K = prev.K.with_values(vals)
        return KktSystem(K, blocks, dx_diag, prev._h_pos, prev._d_pos, prev._j_pos)

    h_rows = blocks.H.row_of_entry()
    h_cols = blocks.H.col_idx
    j_rows = blocks.J.row_of_entry() + n
    j_cols = blocks.J.col_idx
    d_idx = np.arange(n, dtype=np.int64)
    t = Triplets(n + m, n + m,
                 np.concatenate([h_rows, d_idx, j_rows]),
                 np.concatenate([h_cols, d_idx, j_cols]),
                 np.concatenate([blocks.H.values, dx_diag, blocks.J.values]))
    K = from_triplets(t, SYMMETRIC_LOWER)
    h_pos = entry_positions(K, h_rows, h_cols)
    d_pos = entry_positions(K, d_idx, d_idx)
    j_pos = entry_positions(K, j_rows, j_cols)
    return KktSystem(K, blocks, dx_diag, h_pos, d_pos, j_pos)


def assemble_rhs(blocks: KktBlocks, r_tilde_x, r_lambda, r_z) -> KktRhs:
    """Reduce the 3x3 right-hand side: ``r_x = r~_x + z - mu X^{-1} e``."""
    r_tilde_x = np.asarray(r_tilde_x, dtype=np.float64)
    r_lambda = np.asarray(r_lambda, dtype=np.float64)
    r_z = np.asarray(r_z, dtype=np.float64)
    if r_tilde_x.shape != (blocks.n,) or r_lambda.shape != (blocks.m,) \
            or r_z.shape != (blocks.n,):
        raise ValueError("assemble_rhs: length mismatch")
    # Grouped so the z and mu*X^-1*e terms cancel exactly when equal.
    r_x = r_tilde_x + (blocks.z - blocks.mu / blocks.x)
    return KktRhs(r_x=r_x, r_lambda=r_lambda, r_z=r_z, r_tilde_x=r_tilde_x)


def recover_dz(blocks: KktBlocks, r_z, dx) -> np.ndarray:
    """Bound-multiplier step from ``X dz = r_z - Z dx``."""
    r_z = np.asarray(r_z, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    return (r_z - blocks.z * dx) / blocks.x


def recover_dz_from_gradient(blocks: KktBlocks, r_tilde_x, dx, dlam) -> np.ndarray:
    """Cross-check variant: ``dz = H dx + J^T dlam - r~_x``."""
    r_tilde_x = np.asarray(r_tilde_x, dtype=np.float64)
    dx = np.asarray(dx, dtype=np.float64)
    dlam = np.asarray(dlam, dtype=np.float64)
    return spmv(blocks.H, dx) + spmv(blocks.J, dlam, transpose=True) - r_tilde_x


def gamma_rhs(J: CsMatrix, r_x, r_lambda, gamma: float) -> np.ndarray:
    """Augmented first-block right-hand side ``r_x + gamma J^T r_lambda``."""
    r_x = np.asarray(r_x, dtype=np.float64)
    r_lambda = np.asarray(r_lambda, dtype=np.float64)
    return r_x + gamma * spmv(J, r_lambda, transpose=True)
