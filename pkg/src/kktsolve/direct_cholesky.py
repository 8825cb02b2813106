"""Sparse Cholesky with one-time symbolic analysis and repeated numeric passes.

Analysis computes a fill-reducing permutation, the elimination tree, and the
exact factor pattern; numeric factorization is an up-looking sweep replayed
on that frozen pattern, so a sequence of same-pattern matrices costs graph
work only once.  A nonpositive pivot is reported as :class:`NotSpd` rather
than raised: the caller owns the response (for the Schur-complement solver
that signal means the augmentation weight is too small).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ordering import min_degree_order
from .sparsecore import (
    SYMMETRIC_LOWER,
    CsMatrix,
    Permutation,
    SparseError,
    Triplets,
    entry_positions,
    from_triplets,
    permute_symmetric,
)


@dataclass
class NotSpd:
    """Numeric factorization found a pivot <= 0 at the given column."""

    column: int


class SymbolicChol:
    """Frozen symbolic factorization: ordering, etree, and the L pattern."""

    def __init__(self, perm: Permutation, etree: np.ndarray,
                 col_counts: np.ndarray, L_pattern: CsMatrix):
        self.perm = perm
        self.etree = etree
        self.col_counts = col_counts
        self.L_pattern = L_pattern
        # CSC pattern of L (diagonal entry first in each column).
        self._Lp: np.ndarray | None = None
        self._Li: np.ndarray | None = None
        # Per-row replay schedule: reach columns and append positions.
        self._reach_ptr: np.ndarray | None = None
        self._reach_cols: np.ndarray | None = None
        self._append_pos: np.ndarray | None = None
        self._diag_pos: np.ndarray | None = None
        # Scatter of the permuted input matrix, row by row.
        self._arow_ptr: np.ndarray | None = None
        self._arow_cols: np.ndarray | None = None
        self._aval_map: np.ndarray | None = None
        self._ap_pattern: CsMatrix | None = None
        self._pattern_ref: CsMatrix | None = None

    @property
    def n(self) -> int:
        return self.perm.n

    def gather_permuted_values(self, A: CsMatrix) -> np.ndarray:
        """Values of ``P A P^T`` in the analyzed layout (pure gather).

        Falls back to an explicit permutation when ``A``'s pattern is not the
        analyzed one, validating that it is contained in it.
        """
        if A.same_pattern(self._pattern_ref):
            return A.values[self._aval_map]
        Ap = permute_symmetric(A, self.perm)
        pos = entry_positions(self._ap_pattern, Ap.row_of_entry(), Ap.col_idx)
        out = np.zeros(self._ap_pattern.nnz)
        out[pos] = Ap.values
        return out


class CholFactors:
    """Numeric factor ``P A P^T = L L^T`` on the frozen symbolic pattern."""

    def __init__(self, symbolic: SymbolicChol, Lx: np.ndarray, min_pivot: float):
        self.symbolic = symbolic
        self._Lx = Lx
        self.min_pivot = min_pivot
        self.triangular_solve_count = 0
        self._L_cache: CsMatrix | None = None

    @property
    def L(self) -> CsMatrix:
        if self._L_cache is None:
            sym = self.symbolic
            n = sym.n
            cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(sym._Lp))
            t = Triplets(n, n, sym._Li, cols, self._Lx)
            self._L_cache = from_triplets(t, SYMMETRIC_LOWER)
        return self._L_cache


def _etree(n: int, row_ptr: np.ndarray, col_idx: np.ndarray) -> np.ndarray:
    """Elimination tree from a lower-triangular pattern (path compression)."""
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(row_ptr[k], row_ptr[k + 1]):
            i = col_idx[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


def chol_analyze(A_pattern: CsMatrix, perm: Permutation | None = None) -> SymbolicChol:
    """Symbolic Cholesky of a symmetric pattern.

    Computes (unless given) a minimum-degree permutation, then the
    elimination tree and the exact pattern of L for the permuted matrix,
    plus the replay schedule consumed by :func:`chol_factorize`.
    """
    if A_pattern.symmetry != SYMMETRIC_LOWER:
        raise SparseError("chol_analyze expects symmetric-lower storage")
    n = A_pattern.n_rows
    if perm is None:
        perm = min_degree_order(A_pattern)
    Ap = permute_symmetric(A_pattern, perm)
    rp, ci = Ap.row_ptr, Ap.col_idx
    parent = _etree(n, rp, ci)

    # Row subtree walk per row k: columns j < k with L[k, j] != 0, ascending.
    mark = np.full(n, -1, dtype=np.int64)
    reach_lists: list[np.ndarray] = []
    col_counts = np.ones(n, dtype=np.int64)  # diagonal always present
    for k in range(n):
        mark[k] = k
        found: list[int] = []
        for p in range(rp[k], rp[k + 1]):
            i = ci[p]
            while i != -1 and i < k and mark[i] != k:
                mark[i] = k
                found.append(i)
                i = parent[i]
        reach = np.array(sorted(found), dtype=np.int64)
        reach_lists.append(reach)
        col_counts[reach] += 1

    Lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(col_counts, out=Lp[1:])
    Li = np.empty(Lp[-1], dtype=np.int64)
    fill = Lp[:-1].copy()
    Li[fill] = np.arange(n)  # diagonal first in each column
    fill += 1
    append_parts = []
    for k in range(n):
        reach = reach_lists[k]
        pos = fill[reach]
        Li[pos] = k
        fill[reach] += 1
        append_parts.append(pos)

    reach_ptr = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        reach_ptr[k + 1] = reach_ptr[k] + reach_lists[k].size

    sym = SymbolicChol(
        perm=perm,
        etree=parent,
        col_counts=col_counts,
        L_pattern=CsMatrix(n, n, *_csc_to_csr_pattern(n, Lp, Li),
                           symmetry=SYMMETRIC_LOWER),
    )
    sym._Lp, sym._Li = Lp, Li
    sym._reach_ptr = reach_ptr
    sym._reach_cols = (np.concatenate(reach_lists) if n
                       else np.empty(0, dtype=np.int64))
    sym._append_pos = (np.concatenate(append_parts) if n
                       else np.empty(0, dtype=np.int64))
    sym._diag_pos = Lp[:-1].copy()

    # Map original entry -> permuted layout so later factorizations gather.
    sym._ap_pattern = Ap.with_values(np.zeros(Ap.nnz))
    inv = perm.inv_perm
    orows = A_pattern.row_of_entry()
    prows = inv[orows]
    pcols = inv[A_pattern.col_idx]
    lower_r = np.maximum(prows, pcols)
    lower_c = np.minimum(prows, pcols)
    pos = entry_positions(sym._ap_pattern, lower_r, lower_c)
    aval_map = np.empty(Ap.nnz, dtype=np.int64)
    aval_map[pos] = np.arange(A_pattern.nnz, dtype=np.int64)
    sym._aval_map = aval_map
    sym._arow_ptr = Ap.row_ptr
    sym._arow_cols = Ap.col_idx
    sym._pattern_ref = A_pattern
    return sym


def _csc_to_csr_pattern(n, Lp, Li):
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(Lp))
    order = np.lexsort((cols, Li))
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(Li, minlength=n), out=row_ptr[1:])
    return row_ptr, cols[order], np.zeros(Li.size)


def chol_factorize(sym: SymbolicChol, A: CsMatrix) -> CholFactors | NotSpd:
    """Up-looking numeric factorization on the analyzed pattern.

    Returns :class:`NotSpd` with the failing column index when a pivot is
    nonpositive; no diagonal perturbation is attempted here.
    """
    vals = sym.gather_permuted_values(A)
    return factorize_permuted(sym, vals)


def factorize_permuted(sym: SymbolicChol, ap_values: np.ndarray) -> CholFactors | NotSpd:
    """Numeric pass on already-permuted values (layout from the analysis)."""
    n = sym.n
    Lp, Li = sym._Lp, sym._Li
    Lx = np.zeros(Li.size)
    rp, rcols = sym._arow_ptr, sym._arow_cols
    reach_ptr, reach_cols = sym._reach_ptr, sym._reach_cols
    append_pos, diag_pos = sym._append_pos, sym._diag_pos
    x = np.zeros(n)
    min_pivot = np.inf

    for k in range(n):
        s, e = rp[k], rp[k + 1]
        x[rcols[s:e]] = ap_values[s:e]
        d = x[k]
        x[k] = 0.0
        for t in range(reach_ptr[k], reach_ptr[k + 1]):
            j = reach_cols[t]
            lkj = x[j] / Lx[Lp[j]]
            x[j] = 0.0
            lo, hi = Lp[j] + 1, append_pos[t]
            x[Li[lo:hi]] -= Lx[lo:hi] * lkj
            d -= lkj * lkj
            Lx[append_pos[t]] = lkj
        if d <= 0.0:
            return NotSpd(column=k)
        root = np.sqrt(d)
        Lx[diag_pos[k]] = root
        min_pivot = min(min_pivot, root)

    return CholFactors(sym, Lx, float(min_pivot) if n else 0.0)


def chol_solve(f: CholFactors, b) -> np.ndarray:
    """Solve ``A x = b`` via the permutation and both triangular factors."""
    b = np.asarray(b, dtype=np.float64)
    sym = f.symbolic
    n = sym.n
    if b.shape != (n,):
        raise ValueError(f"chol_solve: b has shape {b.shape}, expected ({n},)")
    Lp, Li, Lx = sym._Lp, sym._Li, f._Lx
    y = b[sym.perm.perm].copy()
    for j in range(n):
        yj = y[j] / Lx[Lp[j]]
        y[j] = yj
        y[Li[Lp[j] + 1:Lp[j + 1]]] -= Lx[Lp[j] + 1:Lp[j + 1]] * yj
    for j in range(n - 1, -1, -1):
        lo, hi = Lp[j] + 1, Lp[j + 1]
        y[j] = (y[j] - np.dot(Lx[lo:hi], y[Li[lo:hi]])) / Lx[Lp[j]]
    x = np.empty(n)
    x[sym.perm.perm] = y
    f.triangular_solve_count += 1
    return x
