"""Matrix Market coordinate/array readers and writers.

Supports what the sequence files need: ``matrix coordinate real general``,
``matrix coordinate real symmetric`` (populating symmetric-lower storage),
and ``matrix array real general`` for right-hand-side vectors.  Values are
written with 17 significant digits so a write/read round trip reproduces
doubles exactly.  Parse errors carry the offending line number.
"""

from __future__ import annotations

import numpy as np

from .sparsecore import GENERAL, SYMMETRIC_LOWER, CsMatrix, Triplets, from_triplets


class MatrixMarketError(ValueError):
    """Malformed Matrix Market content; message includes the line number."""


def _parse_header(line: str, path: str):
    parts = line.strip().split()
    if len(parts) < 4 or parts[0] != "%%MatrixMarket" or parts[1].lower() != "matrix":
        raise MatrixMarketError(f"{path}:1: not a Matrix Market matrix header")
    fmt, fld = parts[2].lower(), parts[3].lower()
    sym = parts[4].lower() if len(parts) > 4 else "general"
    if fld != "real":
        raise MatrixMarketError(f"{path}:1: only the 'real' field is supported, got {fld!r}")
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"{path}:1: unsupported format {fmt!r}")
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"{path}:1: unsupported symmetry {sym!r}")
    return fmt, sym


def load_matrix_market(path: str) -> CsMatrix:
    """Read a coordinate real general/symmetric file into a CsMatrix.

    Symmetric files must list only the lower triangle and populate
    symmetric-lower storage; indices are 1-based in the file.
    """
    with open(path, "r") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError(f"{path}:1: empty file")
    fmt, sym = _parse_header(lines[0], path)
    if fmt != "coordinate":
        raise MatrixMarketError(f"{path}:1: expected a coordinate matrix, got {fmt!r}")

    ln = 1
    while ln < len(lines) and (not lines[ln].strip() or lines[ln].lstrip().startswith("%")):
        ln += 1
    if ln >= len(lines):
        raise MatrixMarketError(f"{path}:{ln + 1}: missing size line")
    parts = lines[ln].split()
    if len(parts) != 3:
        raise MatrixMarketError(f"{path}:{ln + 1}: size line must be 'rows cols nnz'")
    try:
        n_rows, n_cols, nnz = (int(p) for p in parts)
    except ValueError as exc:
        raise MatrixMarketError(f"{path}:{ln + 1}: bad size line: {exc}") from exc

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    k = 0
    for i in range(ln + 1, len(lines)):
        text = lines[i].strip()
        if not text or text.startswith("%"):
            continue
        if k >= nnz:
            raise MatrixMarketError(f"{path}:{i + 1}: more entries than the declared {nnz}")
        parts = text.split()
        if len(parts) != 3:
            raise MatrixMarketError(f"{path}:{i + 1}: expected 'row col value'")
        try:
            r, c = int(parts[0]), int(parts[1])
            v = float(parts[2])
        except ValueError as exc:
            raise MatrixMarketError(f"{path}:{i + 1}: cannot parse entry: {exc}") from exc
        if not (1 <= r <= n_rows and 1 <= c <= n_cols):
            raise MatrixMarketError(f"{path}:{i + 1}: index ({r}, {c}) out of range "
                                    f"for a {n_rows}x{n_cols} matrix")
        if sym == "symmetric" and c > r:
            raise MatrixMarketError(f"{path}:{i + 1}: symmetric file lists entry "
                                    "above the diagonal")
        rows[k], cols[k], vals[k] = r - 1, c - 1, v
        k += 1
    if k != nnz:
        raise MatrixMarketError(f"{path}: declared {nnz} entries but found {k}")

    tag = SYMMETRIC_LOWER if sym == "symmetric" else GENERAL
    return from_triplets(Triplets(n_rows, n_cols, rows, cols, vals), tag)


def load_vector(path: str) -> np.ndarray:
    """Read an array real file (or an n x 1 coordinate file) as a vector."""
    with open(path, "r") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError(f"{path}:1: empty file")
    fmt, _sym = _parse_header(lines[0], path)
    ln = 1
    while ln < len(lines) and (not lines[ln].strip() or lines[ln].lstrip().startswith("%")):
        ln += 1
    if ln >= len(lines):
        raise MatrixMarketError(f"{path}:{ln + 1}: missing size line")
    if fmt == "coordinate":
        A = load_matrix_market(path)
        if A.n_cols != 1:
            raise MatrixMarketError(f"{path}: expected a single-column vector")
        return A.to_dense()[:, 0]
    parts = lines[ln].split()
    if len(parts) != 2:
        raise MatrixMarketError(f"{path}:{ln + 1}: array size line must be 'rows cols'")
    n_rows, n_cols = int(parts[0]), int(parts[1])
    if n_cols != 1:
        raise MatrixMarketError(f"{path}:{ln + 1}: expected a single-column vector")
    out = np.empty(n_rows)
    k = 0
    for i in range(ln + 1, len(lines)):
        text = lines[i].strip()
        if not text or text.startswith("%"):
            continue
        if k >= n_rows:
            raise MatrixMarketError(f"{path}:{i + 1}: more entries than declared")
        try:
            out[k] = float(text)
        except ValueError as exc:
            raise MatrixMarketError(f"{path}:{i + 1}: cannot parse value: {exc}") from exc
        k += 1
    if k != n_rows:
        raise MatrixMarketError(f"{path}: declared {n_rows} values but found {k}")
    return out


def write_matrix_market(path: str, A: CsMatrix) -> None:
    """Write CSR content as coordinate real general/symmetric, 1-based."""
    sym = "symmetric" if A.symmetry == SYMMETRIC_LOWER else "general"
    rows = A.row_of_entry()
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {sym}\n")
        fh.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        for r, c, v in zip(rows, A.col_idx, A.values):
            fh.write(f"{r + 1} {c + 1} {v:.17g}\n")


def write_vector(path: str, v: np.ndarray) -> None:
    """Write a vector as matrix array real general (n x 1)."""
    v = np.asarray(v, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{v.size} 1\n")
        for x in v:
            fh.write(f"{x:.17g}\n")
