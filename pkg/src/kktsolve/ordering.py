"""Fill-reducing ordering for the direct factorizations.

A deterministic minimum-degree ordering on the symmetrized pattern, in the
AMD family: eliminate the lowest-degree node (ties broken by smallest index),
connect its neighbors into a clique, repeat.  Exact degrees are affordable at
the problem sizes this toolkit targets; once the remaining graph is nearly
dense the tail is emitted in index order, where ordering no longer matters.
"""

from __future__ import annotations

import numpy as np

from .sparsecore import CsMatrix, Permutation

_DENSE_TAIL_FRACTION = 0.85


def min_degree_order(A: CsMatrix) -> Permutation:
    """Minimum-degree permutation of the pattern of ``A + A.T``.

    Returns a :class:`Permutation` with ``perm[k]`` = original index of the
    node eliminated at step ``k``.  Deterministic for a fixed pattern.
    """
    n = A.n_rows
    if A.n_cols != n:
        raise ValueError("ordering requires a square pattern")
    adj: list[set[int]] = [set() for _ in range(n)]
    rows = A.row_of_entry()
    for i, j in zip(rows.tolist(), A.col_idx.tolist()):
        if i != j:
            adj[i].add(j)
            adj[j].add(i)

    degree = np.array([len(s) for s in adj], dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    order = np.empty(n, dtype=np.int64)
    big = np.iinfo(np.int64).max

    for step in range(n):
        remaining = n - step
        deg_masked = np.where(alive, degree, big)
        v = int(np.argmin(deg_masked))
        if remaining > 2 and degree[v] >= _DENSE_TAIL_FRACTION * (remaining - 1):
            # Near-dense endgame: any order gives the same fill.
            tail = np.flatnonzero(alive)
            order[step:] = tail
            return Permutation(order)
        order[step] = v
        alive[v] = False
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            degree[u] = len(au)
        adj[v] = set()
    return Permutation(order)
