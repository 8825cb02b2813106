"""Sparse LU with reusable symbolic analysis and static-pivot refactorization.

The first factorization runs a left-looking (Gilbert-Peierls) elimination
with threshold partial pivoting and a fill-reducing column ordering, and
records everything needed to repeat the numeric work on a new matrix with
the same pattern: the per-column solve schedules, the frozen L/U patterns,
and the pivot sequence.  :func:`refactorize` replays that schedule without
any graph traversal or row exchanges; tiny pivots are patched instead of
reordered, and iterative refinement is expected to clean up afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ordering import min_degree_order
from .sparsecore import (
    GENERAL,
    SYMMETRIC_LOWER,
    CsMatrix,
    Permutation,
    Triplets,
    from_triplets,
    inf_norm,
    to_general,
    transpose_map,
)

# Relative threshold below which a refactorization pivot is replaced.
PATCH_RELATIVE_FLOOR = 1e-12


class SingularMatrixError(RuntimeError):
    """No admissible pivot during a first factorization."""


class PatternMismatchError(ValueError):
    """refactorize() received a matrix with a different sparsity pattern."""


@dataclass
class LuDiagnostics:
    max_abs_pivot: float
    min_abs_pivot: float
    zero_pivots_patched: int
    growth_estimate: float


class LuFactors:
    """LU factors plus the frozen replay schedule.

    ``P_r A P_c = L U`` with ``row_perm.perm[k]`` / ``col_perm.perm[k]`` the
    original row/column pivotal at step ``k``.  ``L`` is unit lower
    triangular; both factor patterns and the pivot sequence are fixed after
    the first factorization.  ``triangular_solve_count`` increments once per
    :func:`lu_solve` call (one L plus one U application is one unit).
    """

    def __init__(self):
        self.n = 0
        self.pivot_tol = 0.0
        self.row_perm: Permutation | None = None
        self.col_perm: Permutation | None = None
        self.from_refactorization = False
        self.triangular_solve_count = 0
        # CSC factor storage in pivot-position space.  L holds the strictly
        # lower part (unit diagonal implicit); U holds the strictly upper
        # part per column with the diagonal split out.
        self._Lp = self._Li = self._Lx = None
        self._Up = self._Ui = self._Ux = None
        self._Udiag = None
        # Replay schedule: per column, the pivot steps whose L columns are
        # applied (topological order from the first factorization's reach).
        self._so_ptr = self._so_data = None
        # Per column, gather/scatter maps from the input matrix values.
        self._ap_ptr = self._a_src = self._a_tgt = None
        self._pattern_ref: CsMatrix | None = None
        self._L_cache = None
        self._U_cache = None

    @property
    def L(self) -> CsMatrix:
        """Unit lower-triangular factor as a CSR matrix."""
        if self._L_cache is None:
            n = self.n
            cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(self._Lp))
            t = Triplets(n, n,
                         np.concatenate([self._Li, np.arange(n, dtype=np.int64)]),
                         np.concatenate([cols, np.arange(n, dtype=np.int64)]),
                         np.concatenate([self._Lx, np.ones(n)]))
            self._L_cache = from_triplets(t, GENERAL)
        return self._L_cache

    @property
    def U(self) -> CsMatrix:
        """Upper-triangular factor as a CSR matrix."""
        if self._U_cache is None:
            n = self.n
            cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(self._Up))
            t = Triplets(n, n,
                         np.concatenate([self._Ui, np.arange(n, dtype=np.int64)]),
                         np.concatenate([cols, np.arange(n, dtype=np.int64)]),
                         np.concatenate([self._Ux, self._Udiag]))
            self._U_cache = from_triplets(t, GENERAL)
        return self._U_cache


def _as_general(A: CsMatrix) -> tuple[CsMatrix, bool]:
    if A.symmetry == SYMMETRIC_LOWER:
        return to_general(A), True
    return A, False


def factorize(A: CsMatrix, pivot_tol: float = 0.1) -> tuple[LuFactors, LuDiagnostics]:
    """Full symbolic + numeric LU of ``A`` with threshold partial pivoting.

    The column ordering is a minimum-degree permutation of ``A + A.T``.  At
    each column the pivot is the diagonal candidate when its magnitude is at
    least ``pivot_tol`` times the column maximum, otherwise the largest
    candidate (ties to the smallest row index).  Symmetric-lower input is
    expanded internally.

    Raises :class:`SingularMatrixError` when a column has no nonzero pivot
    candidate.
    """
    if A.n_rows != A.n_cols:
        raise ValueError("factorize requires a square matrix")
    if not 0.0 < pivot_tol <= 1.0:
        raise ValueError("pivot_tol must lie in (0, 1]")
    Ag, _ = _as_general(A)
    n = Ag.n_rows

    col_perm = min_degree_order(Ag)
    # CSC view of Ag: column c of Ag is row c of the transpose; vmap gathers
    # the matching positions of Ag.values.
    At, vmap = transpose_map(Ag)
    cptr, cidx = At.row_ptr, At.col_idx
    avals = Ag.values

    pinv = np.full(n, -1, dtype=np.int64)
    row_perm = np.empty(n, dtype=np.int64)
    x = np.zeros(n)
    visited = np.full(n, -1, dtype=np.int64)

    l_rows: list[np.ndarray] = []      # original-row indices, per column
    l_vals: list[np.ndarray] = []
    l_rows_list: list[list[int]] = []  # python lists for the DFS
    u_steps: list[np.ndarray] = []
    u_vals: list[np.ndarray] = []
    udiag = np.zeros(n)
    solve_orders: list[np.ndarray] = []
    a_src_parts: list[np.ndarray] = []
    a_rows_parts: list[np.ndarray] = []

    max_abs_a = float(np.max(np.abs(avals))) if avals.size else 0.0
    gmax = 0.0
    patched = 0

    for j in range(n):
        c = int(col_perm.perm[j])
        s, e = cptr[c], cptr[c + 1]
        brows = cidx[s:e]
        bvals = avals[vmap[s:e]]
        if brows.size == 0:
            raise SingularMatrixError(f"structurally singular: column {c} is empty")

        # Depth-first reach over the graph of the columns built so far.
        topo: list[int] = []
        pattern: list[int] = []
        for r0 in brows.tolist():
            if visited[r0] == j:
                continue
            stack = [(r0, 0)]
            visited[r0] = j
            while stack:
                node, ci = stack[-1]
                k = pinv[node]
                if k >= 0:
                    children = l_rows_list[k]
                    advanced = False
                    while ci < len(children):
                        child = children[ci]
                        ci += 1
                        if visited[child] != j:
                            visited[child] = j
                            stack[-1] = (node, ci)
                            stack.append((child, 0))
                            advanced = True
                            break
                    if advanced:
                        continue
                stack.pop()
                pattern.append(node)
                if k >= 0:
                    topo.append(node)

        # Reverse postorder = topological order: a column is applied only
        # after every column it depends on has finalized its x entry.
        topo.reverse()

        x[brows] = bvals
        for r in topo:
            k = pinv[r]
            xr = x[r]
            x[l_rows[k]] -= l_vals[k] * xr

        pat = np.array(pattern, dtype=np.int64)
        nonpiv = pat[pinv[pat] < 0]
        if nonpiv.size == 0:
            raise SingularMatrixError(
                f"structurally singular: no pivot candidate in column {c}")
        nonpiv.sort()
        absx = np.abs(x[nonpiv])
        amax = float(absx.max())
        if amax == 0.0:
            raise SingularMatrixError(
                f"numerically singular: zero pivot column {c} with no admissible swap")
        if pinv[c] < 0 and abs(x[c]) >= pivot_tol * amax:
            ipiv = c
        else:
            ipiv = int(nonpiv[int(np.argmax(absx))])
        pinv[ipiv] = j
        row_perm[j] = ipiv
        ujj = x[ipiv]

        piv_rows = pat[pinv[pat] >= 0]
        piv_rows = piv_rows[piv_rows != ipiv]
        steps = pinv[piv_rows]
        so = np.argsort(steps)
        u_steps.append(steps[so])
        u_vals.append(x[piv_rows][so])
        udiag[j] = ujj
        gmax = max(gmax, amax, float(np.max(np.abs(x[piv_rows]))) if piv_rows.size else 0.0)

        lr = nonpiv[nonpiv != ipiv]
        l_rows.append(lr)
        l_vals.append(x[lr] / ujj)
        l_rows_list.append(lr.tolist())
        solve_orders.append(pinv[np.array(topo, dtype=np.int64)]
                            if topo else np.empty(0, dtype=np.int64))

        a_src_parts.append(vmap[s:e].copy())
        a_rows_parts.append(brows.copy())
        x[pat] = 0.0

    f = LuFactors()
    f.n = n
    f.pivot_tol = pivot_tol
    f.row_perm = Permutation(row_perm)
    f.col_perm = col_perm
    f._pattern_ref = Ag

    # Finalize to position space.  Column entries are sorted by final pivot
    # position; values only move, so the replay path reproduces them bitwise.
    Lp = np.zeros(n + 1, dtype=np.int64)
    Up = np.zeros(n + 1, dtype=np.int64)
    li_parts, lx_parts = [], []
    for j in range(n):
        pos = pinv[l_rows[j]]
        so = np.argsort(pos)
        li_parts.append(pos[so])
        lx_parts.append(l_vals[j][so])
        Lp[j + 1] = Lp[j] + pos.size
        Up[j + 1] = Up[j] + u_steps[j].size
    f._Lp, f._Up = Lp, Up
    f._Li = np.concatenate(li_parts) if n else np.empty(0, dtype=np.int64)
    f._Lx = np.concatenate(lx_parts) if n else np.empty(0)
    f._Ui = np.concatenate(u_steps) if n else np.empty(0, dtype=np.int64)
    f._Ux = np.concatenate(u_vals) if n else np.empty(0)
    f._Udiag = udiag

    so_ptr = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        so_ptr[j + 1] = so_ptr[j] + solve_orders[j].size
    f._so_ptr = so_ptr
    f._so_data = (np.concatenate(solve_orders) if n else np.empty(0, dtype=np.int64))

    ap_ptr = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        ap_ptr[j + 1] = ap_ptr[j] + a_src_parts[j].size
    f._ap_ptr = ap_ptr
    f._a_src = np.concatenate(a_src_parts) if n else np.empty(0, dtype=np.int64)
    f._a_tgt = pinv[np.concatenate(a_rows_parts)] if n else np.empty(0, dtype=np.int64)

    absd = np.abs(udiag)
    diag = LuDiagnostics(
        max_abs_pivot=float(absd.max()) if n else 0.0,
        min_abs_pivot=float(absd.min()) if n else 0.0,
        zero_pivots_patched=patched,
        growth_estimate=gmax / max_abs_a if max_abs_a > 0 else 0.0,
    )
    return f, diag


def refactorize(factors: LuFactors, A_new: CsMatrix) -> LuDiagnostics:
    """Recompute L and U values for ``A_new`` on the frozen pattern.

    The pivot order recorded by :func:`factorize` is kept (static pivoting);
    a pivot whose magnitude falls below ``1e-12 * ||A_new||_inf`` is replaced
    by that floor with its sign preserved and counted in the diagnostics.
    Raises :class:`PatternMismatchError` when ``A_new``'s pattern differs
    from the factorized matrix's.
    """
    Ag, _ = _as_general(A_new)
    if not Ag.same_pattern(factors._pattern_ref):
        raise PatternMismatchError("refactorize: sparsity pattern differs from "
                                   "the originally factorized matrix")
    n = factors.n
    avals = Ag.values
    Lp, Li, Lx = factors._Lp, factors._Li, factors._Lx
    Up, Ui, Ux = factors._Up, factors._Ui, factors._Ux
    udiag = factors._Udiag
    so_ptr, so_data = factors._so_ptr, factors._so_data
    ap_ptr, a_src, a_tgt = factors._ap_ptr, factors._a_src, factors._a_tgt

    eps_patch = PATCH_RELATIVE_FLOOR * inf_norm(Ag)
    patched = 0
    gmax = 0.0
    x = np.zeros(n)
    for j in range(n):
        x[a_tgt[ap_ptr[j]:ap_ptr[j + 1]]] = avals[a_src[ap_ptr[j]:ap_ptr[j + 1]]]
        for k in so_data[so_ptr[j]:so_ptr[j + 1]]:
            xk = x[k]
            x[Li[Lp[k]:Lp[k + 1]]] -= Lx[Lp[k]:Lp[k + 1]] * xk
        us, ue = Up[j], Up[j + 1]
        uvals = x[Ui[us:ue]]
        Ux[us:ue] = uvals
        ujj = x[j]
        if uvals.size:
            gmax = max(gmax, float(np.max(np.abs(uvals))))
        gmax = max(gmax, abs(ujj))
        if abs(ujj) < eps_patch:
            ujj = eps_patch if ujj >= 0.0 else -eps_patch
            patched += 1
        udiag[j] = ujj
        ls, le = Lp[j], Lp[j + 1]
        Lx[ls:le] = x[Li[ls:le]] / ujj
        if le > ls:
            gmax = max(gmax, float(np.max(np.abs(x[Li[ls:le]]))))
        x[Ui[us:ue]] = 0.0
        x[Li[ls:le]] = 0.0
        x[j] = 0.0

    factors.from_refactorization = True
    factors._L_cache = None
    factors._U_cache = None
    max_abs_a = float(np.max(np.abs(avals))) if avals.size else 0.0
    absd = np.abs(udiag)
    return LuDiagnostics(
        max_abs_pivot=float(absd.max()) if n else 0.0,
        min_abs_pivot=float(absd.min()) if n else 0.0,
        zero_pivots_patched=patched,
        growth_estimate=gmax / max_abs_a if max_abs_a > 0 else 0.0,
    )


def lu_solve(factors: LuFactors, b) -> np.ndarray:
    """Solve ``A x = b`` with the current factors; one triangular-solve unit."""
    b = np.asarray(b, dtype=np.float64)
    n = factors.n
    if b.shape != (n,):
        raise ValueError(f"lu_solve: b has shape {b.shape}, expected ({n},)")
    Lp, Li, Lx = factors._Lp, factors._Li, factors._Lx
    Up, Ui, Ux = factors._Up, factors._Ui, factors._Ux
    udiag = factors._Udiag

    y = b[factors.row_perm.perm].copy()
    for j in range(n):
        y[Li[Lp[j]:Lp[j + 1]]] -= Lx[Lp[j]:Lp[j + 1]] * y[j]
    for j in range(n - 1, -1, -1):
        wj = y[j] / udiag[j]
        y[j] = wj
        y[Ui[Up[j]:Up[j + 1]]] -= Ux[Up[j]:Up[j + 1]] * wj
    x = np.empty(n)
    x[factors.col_perm.perm] = y
    factors.triangular_solve_count += 1
    return x
