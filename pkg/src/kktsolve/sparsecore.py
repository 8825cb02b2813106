"""Compressed sparse row storage and the kernels shared by all solvers.

The whole toolkit revolves around solving long sequences of systems whose
sparsity pattern never changes, so the central contract here is pattern
immutability: once a :class:`CsMatrix` is built, its ``row_ptr``/``col_idx``
arrays are frozen and only ``values`` may be replaced.  All kernels accumulate
in a fixed order for a fixed pattern, which makes repeated runs bitwise
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GENERAL = "general"
SYMMETRIC_LOWER = "symmetric-lower"


class SparseError(ValueError):
    """Raised for structural problems: bad indices, shape mismatch, zero rows."""


@dataclass
class Triplets:
    """Assembly input: coordinate entries, duplicates summed on conversion."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    @classmethod
    def from_entries(cls, n_rows: int, n_cols: int, entries) -> "Triplets":
        """Build from an iterable of ``(row, col, value)`` tuples."""
        entries = list(entries)
        if entries:
            r, c, v = zip(*entries)
        else:
            r, c, v = (), (), ()
        return cls(
            n_rows,
            n_cols,
            np.asarray(r, dtype=np.int64),
            np.asarray(c, dtype=np.int64),
            np.asarray(v, dtype=np.float64),
        )


@dataclass
class Permutation:
    """A bijection: ``perm[new] = old`` with ``inv_perm[old] = new``."""

    perm: np.ndarray
    inv_perm: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        n = self.perm.size
        counts = np.bincount(self.perm, minlength=n)
        if n and (counts.size != n or not np.all(counts == 1)):
            raise SparseError("permutation is not a bijection")
        if self.inv_perm is None:
            inv = np.empty(n, dtype=np.int64)
            inv[self.perm] = np.arange(n, dtype=np.int64)
            self.inv_perm = inv

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n, dtype=np.int64))

    def inverse(self) -> "Permutation":
        return Permutation(self.inv_perm.copy(), self.perm.copy())

    @property
    def n(self) -> int:
        return self.perm.size


@dataclass
class RuizScaling:
    """Symmetric equilibration result: ``D K D`` has row inf-norms near one."""

    d: np.ndarray
    iterations_used: int
    converged: bool


class CsMatrix:
    """Sparse matrix in CSR form with an immutable pattern.

    Symmetric matrices are stored as their lower triangle (including the
    diagonal) with ``symmetry == SYMMETRIC_LOWER``; every kernel expands the
    missing triangle logically.  Column indices are sorted and unique within
    each row.  After construction the pattern arrays are write-protected;
    values change only through :meth:`set_values` or in-place writes to
    ``values``.
    """

    __slots__ = ("n_rows", "n_cols", "row_ptr", "col_idx", "values",
                 "symmetry", "_row_of_entry")

    def __init__(self, n_rows, n_cols, row_ptr, col_idx, values,
                 symmetry=GENERAL, _checked=False):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.symmetry = symmetry
        self._row_of_entry = None
        if not _checked:
            self._validate()
        self.row_ptr.flags.writeable = False
        self.col_idx.flags.writeable = False

    def _validate(self):
        if self.symmetry not in (GENERAL, SYMMETRIC_LOWER):
            raise SparseError(f"unknown symmetry tag {self.symmetry!r}")
        if self.symmetry == SYMMETRIC_LOWER and self.n_rows != self.n_cols:
            raise SparseError("symmetric storage requires a square matrix")
        if self.row_ptr.size != self.n_rows + 1:
            raise SparseError("row_ptr has wrong length")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.col_idx.size:
            raise SparseError("row_ptr endpoints inconsistent with nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise SparseError("row_ptr must be nondecreasing")
        if self.col_idx.size != self.values.size:
            raise SparseError("col_idx and values lengths differ")
        if self.col_idx.size:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.n_cols:
                raise SparseError("column index out of range")
        for i in range(self.n_rows):
            s, e = self.row_ptr[i], self.row_ptr[i + 1]
            if e - s > 1 and np.any(np.diff(self.col_idx[s:e]) <= 0):
                raise SparseError(f"row {i}: column indices not strictly increasing")
            if self.symmetry == SYMMETRIC_LOWER and e > s and self.col_idx[e - 1] > i:
                raise SparseError(f"row {i}: entry above diagonal in symmetric-lower storage")

    @property
    def nnz(self) -> int:
        return self.col_idx.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    def row_of_entry(self) -> np.ndarray:
        """Row index of each stored entry (cached, derived from the pattern)."""
        if self._row_of_entry is None:
            r = np.repeat(np.arange(self.n_rows, dtype=np.int64),
                          np.diff(self.row_ptr))
            r.flags.writeable = False
            self._row_of_entry = r
        return self._row_of_entry

    def set_values(self, new_values) -> None:
        """Replace all values in place; the pattern is untouched."""
        new_values = np.asarray(new_values, dtype=np.float64)
        if new_values.size != self.values.size:
            raise SparseError("value array length does not match pattern nnz")
        self.values[:] = new_values

    def copy(self, share_pattern: bool = True) -> "CsMatrix":
        """Copy with fresh values; pattern arrays are shared by default."""
        if share_pattern:
            out = CsMatrix.__new__(CsMatrix)
            out.n_rows, out.n_cols = self.n_rows, self.n_cols
            out.row_ptr, out.col_idx = self.row_ptr, self.col_idx
            out.values = self.values.copy()
            out.symmetry = self.symmetry
            out._row_of_entry = self._row_of_entry
            return out
        return CsMatrix(self.n_rows, self.n_cols, self.row_ptr.copy(),
                        self.col_idx.copy(), self.values.copy(), self.symmetry)

    def same_pattern(self, other: "CsMatrix") -> bool:
        """True when patterns are identical (object identity or equal arrays)."""
        if self.shape != other.shape:
            return False
        if self.row_ptr is other.row_ptr and self.col_idx is other.col_idx:
            return True
        return (np.array_equal(self.row_ptr, other.row_ptr)
                and np.array_equal(self.col_idx, other.col_idx))

    def with_values(self, values) -> "CsMatrix":
        """New matrix sharing this pattern, carrying the given values."""
        values = np.asarray(values, dtype=np.float64)
        if values.size != self.nnz:
            raise SparseError("value array length does not match pattern nnz")
        out = CsMatrix.__new__(CsMatrix)
        out.n_rows, out.n_cols = self.n_rows, self.n_cols
        out.row_ptr, out.col_idx = self.row_ptr, self.col_idx
        out.values = values
        out.symmetry = self.symmetry
        out._row_of_entry = self._row_of_entry
        return out

    def to_dense(self) -> np.ndarray:
        """Dense copy with the symmetric half expanded."""
        M = np.zeros((self.n_rows, self.n_cols))
        rows = self.row_of_entry()
        M[rows, self.col_idx] = self.values
        if self.symmetry == SYMMETRIC_LOWER:
            strict = rows != self.col_idx
            M[self.col_idx[strict], rows[strict]] = self.values[strict]
        return M

    def __repr__(self):
        return (f"CsMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz}, "
                f"{self.symmetry})")


def from_triplets(t: Triplets, symmetry: str = GENERAL) -> CsMatrix:
    """Convert triplets to sorted CSR, summing duplicate entries.

    Raises :class:`SparseError` when any index is out of range.
    """
    rows = np.asarray(t.rows, dtype=np.int64)
    cols = np.asarray(t.cols, dtype=np.int64)
    vals = np.asarray(t.values, dtype=np.float64)
    if rows.size:
        if rows.min() < 0 or rows.max() >= t.n_rows:
            raise SparseError("row index out of range")
        if cols.min() < 0 or cols.max() >= t.n_cols:
            raise SparseError("column index out of range")
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    if rows.size:
        new_group = np.empty(rows.size, dtype=bool)
        new_group[0] = True
        new_group[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
        starts = np.flatnonzero(new_group)
        urows, ucols = rows[starts], cols[starts]
        uvals = np.add.reduceat(vals, starts)
    else:
        urows = ucols = np.empty(0, dtype=np.int64)
        uvals = np.empty(0, dtype=np.float64)
    row_ptr = np.zeros(t.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(urows, minlength=t.n_rows), out=row_ptr[1:])
    return CsMatrix(t.n_rows, t.n_cols, row_ptr, ucols, uvals, symmetry)


def from_dense(M, symmetry: str = GENERAL, drop_tol: float = 0.0) -> CsMatrix:
    """CSR from a dense array, keeping entries with ``|m_ij| > drop_tol``."""
    M = np.asarray(M, dtype=np.float64)
    mask = np.abs(M) > drop_tol
    if symmetry == SYMMETRIC_LOWER:
        mask &= np.tril(np.ones_like(mask, dtype=bool))
    r, c = np.nonzero(mask)
    t = Triplets(M.shape[0], M.shape[1], r.astype(np.int64),
                 c.astype(np.int64), M[r, c])
    return from_triplets(t, symmetry)


def identity(n: int) -> CsMatrix:
    idx = np.arange(n, dtype=np.int64)
    return CsMatrix(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))


def to_general(A: CsMatrix) -> CsMatrix:
    """Expand symmetric-lower storage into an explicit general matrix."""
    if A.symmetry == GENERAL:
        return A
    rows = A.row_of_entry()
    strict = rows != A.col_idx
    t = Triplets(A.n_rows, A.n_cols,
                 np.concatenate([rows, A.col_idx[strict]]),
                 np.concatenate([A.col_idx, rows[strict]]),
                 np.concatenate([A.values, A.values[strict]]))
    return from_triplets(t, GENERAL)


def lower_triangle(A: CsMatrix, symmetry: str = SYMMETRIC_LOWER) -> CsMatrix:
    """Keep entries with ``row >= col`` (used to store symmetric products)."""
    rows = A.row_of_entry()
    keep = rows >= A.col_idx
    t = Triplets(A.n_rows, A.n_cols, rows[keep], A.col_idx[keep], A.values[keep])
    return from_triplets(t, symmetry)


def spmv(A: CsMatrix, x, transpose: bool = False) -> np.ndarray:
    """Matrix-vector product ``A @ x`` (or ``A.T @ x``).

    Accumulation uses ``np.bincount`` over the stored entry order, so the
    result is bitwise reproducible for a fixed pattern.  Symmetric-lower
    inputs contribute both triangles.
    """
    x = np.asarray(x, dtype=np.float64)
    need = A.n_rows if transpose else A.n_cols
    if x.shape != (need,):
        raise SparseError(f"spmv: x has length {x.shape}, expected ({need},)")
    rows = A.row_of_entry()
    if A.symmetry == SYMMETRIC_LOWER:
        # A == A.T, so the transpose flag is immaterial.
        y = np.bincount(rows, weights=A.values * x[A.col_idx], minlength=A.n_rows)
        strict = rows != A.col_idx
        y += np.bincount(A.col_idx[strict], weights=A.values[strict] * x[rows[strict]],
                         minlength=A.n_rows)
        return y
    if transpose:
        return np.bincount(A.col_idx, weights=A.values * x[rows], minlength=A.n_cols)
    return np.bincount(rows, weights=A.values * x[A.col_idx], minlength=A.n_rows)


def transpose(A: CsMatrix) -> CsMatrix:
    """Explicit transpose; a pure reindexing, so values move bitwise."""
    if A.symmetry == SYMMETRIC_LOWER:
        return A.copy()
    rows = A.row_of_entry()
    order = np.argsort(A.col_idx, kind="stable")
    t_cols = rows[order]
    t_vals = A.values[order]
    row_ptr = np.zeros(A.n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(A.col_idx, minlength=A.n_cols), out=row_ptr[1:])
    return CsMatrix(A.n_cols, A.n_rows, row_ptr, t_cols, t_vals, GENERAL)


def transpose_map(A: CsMatrix) -> tuple[CsMatrix, np.ndarray]:
    """Transpose plus the gather map so ``At.values = A.values[m]`` refreshes it."""
    if A.symmetry == SYMMETRIC_LOWER:
        raise SparseError("transpose_map expects general storage")
    rows = A.row_of_entry()
    order = np.argsort(A.col_idx, kind="stable")
    row_ptr = np.zeros(A.n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(A.col_idx, minlength=A.n_cols), out=row_ptr[1:])
    At = CsMatrix(A.n_cols, A.n_rows, row_ptr, rows[order], A.values[order], GENERAL)
    return At, order


def inf_norm(A: CsMatrix) -> float:
    """Max row sum of absolute values, expanding the symmetric half."""
    if A.nnz == 0:
        return 0.0
    rows = A.row_of_entry()
    av = np.abs(A.values)
    sums = np.bincount(rows, weights=av, minlength=A.n_rows)
    if A.symmetry == SYMMETRIC_LOWER:
        strict = rows != A.col_idx
        sums += np.bincount(A.col_idx[strict], weights=av[strict], minlength=A.n_rows)
    return float(sums.max())


def permute_symmetric(A: CsMatrix, P: Permutation) -> CsMatrix:
    """Symmetric reordering ``P A P^T``: entry (i, j) moves to (inv[i], inv[j]).

    Values are only reindexed, never combined, so a round trip through the
    inverse permutation restores the original exactly.
    """
    if A.n_rows != A.n_cols:
        raise SparseError("permute_symmetric requires a square matrix")
    if P.n != A.n_rows:
        raise SparseError("permutation size does not match matrix")
    inv = P.inv_perm
    rows = inv[A.row_of_entry()]
    cols = inv[A.col_idx]
    if A.symmetry == SYMMETRIC_LOWER:
        r = np.maximum(rows, cols)
        c = np.minimum(rows, cols)
        rows, cols = r, c
    order = np.lexsort((cols, rows))
    row_ptr = np.zeros(A.n_rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=A.n_rows), out=row_ptr[1:])
    return CsMatrix(A.n_rows, A.n_cols, row_ptr, cols[order], A.values[order],
                    A.symmetry)


def row_inf_norms_scaled(A: CsMatrix, d: np.ndarray) -> np.ndarray:
    """Row inf-norms of ``diag(d) A diag(d)`` with symmetric expansion."""
    rows = A.row_of_entry()
    scaled = np.abs(A.values) * d[rows] * d[A.col_idx]
    out = np.zeros(A.n_rows)
    np.maximum.at(out, rows, scaled)
    if A.symmetry == SYMMETRIC_LOWER:
        strict = rows != A.col_idx
        np.maximum.at(out, A.col_idx[strict], scaled[strict])
    return out


def ruiz_scale(K: CsMatrix, max_iters: int = 2, tol: float = 1e-2) -> RuizScaling:
    """Symmetric Ruiz equilibration in the inf-norm.

    Iterates ``d <- d / sqrt(row inf-norm of D K D)`` until every scaled row
    inf-norm lies within ``tol`` of one or the iteration budget runs out.
    Raises :class:`SparseError` for a matrix with an all-zero row, where the
    scaling is undefined.
    """
    if K.n_rows != K.n_cols:
        raise SparseError("ruiz_scale requires a square matrix")
    d = np.ones(K.n_rows)
    iterations = 0
    converged = False
    for _ in range(max_iters + 1):
        norms = row_inf_norms_scaled(K, d)
        if np.any(norms == 0.0):
            bad = int(np.flatnonzero(norms == 0.0)[0])
            raise SparseError(f"ruiz_scale: row {bad} is entirely zero")
        if np.max(np.abs(norms - 1.0)) <= tol:
            converged = True
            break
        if iterations >= max_iters:
            break
        d /= np.sqrt(norms)
        iterations += 1
    return RuizScaling(d=d, iterations_used=iterations, converged=converged)


class SpgemmPlan:
    """Frozen symbolic product pattern, reusable for repeated numeric passes.

    The numeric pass scatters ``a_ik * B[k, :]`` contributions into a dense
    row workspace in stored-entry order, then gathers the frozen pattern, so
    values are deterministic and no pattern allocation happens per call.
    """

    __slots__ = ("pattern", "_a_rows", "_b_cols", "_b_src", "_a_src")

    def __init__(self, A: CsMatrix, B: CsMatrix):
        if A.n_cols != B.n_rows:
            raise SparseError("spgemm: inner dimensions do not match")
        if A.symmetry != GENERAL or B.symmetry != GENERAL:
            raise SparseError("spgemm operates on general storage; expand first")
        a_rows = A.row_of_entry()
        # Gather, for every entry (i, k) of A, the slice of row k of B.
        reps = np.diff(B.row_ptr)[A.col_idx]
        self._a_src = np.repeat(np.arange(A.nnz, dtype=np.int64), reps)
        starts = B.row_ptr[A.col_idx]
        offs = np.arange(reps.sum(), dtype=np.int64) - np.repeat(
            np.cumsum(reps) - reps, reps)
        self._b_src = np.repeat(starts, reps) + offs
        self._a_rows = np.repeat(a_rows, reps)
        self._b_cols = B.col_idx[self._b_src]
        # Symbolic pattern: unique (row, col) targets.
        order = np.lexsort((self._b_cols, self._a_rows))
        rr, cc = self._a_rows[order], self._b_cols[order]
        if rr.size:
            keep = np.empty(rr.size, dtype=bool)
            keep[0] = True
            keep[1:] = (rr[1:] != rr[:-1]) | (cc[1:] != cc[:-1])
            urows, ucols = rr[keep], cc[keep]
        else:
            urows = ucols = np.empty(0, dtype=np.int64)
        row_ptr = np.zeros(A.n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(urows, minlength=A.n_rows), out=row_ptr[1:])
        self.pattern = CsMatrix(A.n_rows, B.n_cols, row_ptr, ucols,
                                np.zeros(ucols.size), GENERAL)

    def numeric(self, A: CsMatrix, B: CsMatrix, out: np.ndarray | None = None) -> np.ndarray:
        """Values of ``A @ B`` on the frozen pattern, in pattern order."""
        contrib = A.values[self._a_src] * B.values[self._b_src]
        flat = self._a_rows * self.pattern.n_cols + self._b_cols
        tgt = self.pattern.row_of_entry() * self.pattern.n_cols + self.pattern.col_idx
        # Dense accumulation keyed by flattened (row, col); summation order is
        # the stored entry order, fixed for a fixed pattern.
        acc = np.zeros(self.pattern.n_rows * self.pattern.n_cols)
        np.add.at(acc, flat, contrib)
        vals = acc[tgt]
        if out is not None:
            out[:] = vals
            return out
        return vals


def spgemm(A: CsMatrix, B: CsMatrix) -> CsMatrix:
    """Sparse product ``A @ B`` with the exact structural (symbolic) pattern."""
    plan = SpgemmPlan(A, B)
    return plan.pattern.with_values(plan.numeric(A, B))


def entry_positions(target: CsMatrix, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Positions in ``target.values`` of the given (row, col) pairs.

    Every pair must exist in the target pattern; used to freeze scatter maps
    at setup time so later value updates are pure gathers.
    """
    pos = np.empty(rows.size, dtype=np.int64)
    for k in range(rows.size):
        s, e = target.row_ptr[rows[k]], target.row_ptr[rows[k] + 1]
        j = np.searchsorted(target.col_idx[s:e], cols[k])
        if j >= e - s or target.col_idx[s + j] != cols[k]:
            raise SparseError(f"entry ({rows[k]}, {cols[k]}) absent from target pattern")
        pos[k] = s + j
    return pos
