"""Sequence ingestion, solver strategies, and CSV reporting.

A sequence is an ordered set of same-pattern systems, either exported to
Matrix Market files with a JSON manifest or passed in memory straight from
the generator; both travel through the same strategy runner, and metrics are
identical either way since file round trips preserve doubles exactly.

Strategies: fresh factorization per system (``full_lu``), factorize-then-
refactorize (``refactor``), refactorization plus either refinement method,
and the Schur-complement solver (``hykkt``).  Per-system metrics follow one
CSV schema; timing columns are wall-clock and never asserted.  The ``rr``
column is the final solution's relative residual ``||r - Kx||_2 / ||r||_2``
for every strategy.
"""

from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .direct_lu import factorize, lu_solve, refactorize
from .hykkt import HykktConfig, hykkt_factorize, hykkt_setup, hykkt_solve
from .kkt import KktSystem
from .mmio import load_matrix_market, load_vector, write_matrix_market, write_vector
from .refine import RefinementConfig, nrbe, nsr, refine_fgmres, refine_richardson
from .seqgen import BarrierTrace
from .sparsecore import (
    GENERAL,
    SYMMETRIC_LOWER,
    CsMatrix,
    Triplets,
    from_triplets,
    spmv,
    to_general,
)

STRATEGY_KINDS = ("full_lu", "refactor", "refactor_ir_fgmres",
                  "refactor_ir_richardson", "hykkt")

CSV_COLUMNS = ["index", "nsr_before", "nsr_after", "nrbe", "rr",
               "ir_iterations", "triangular_solves", "factorize_time_s",
               "solve_time_s", "refine_time_s", "converged"]


class SequenceError(ValueError):
    """Manifest or sequence-content problems."""


@dataclass
class SequenceItem:
    K: CsMatrix
    rhs: np.ndarray
    matrix_path: str | None = None
    rhs_path: str | None = None


@dataclass
class MatrixSequence:
    name: str
    items: list[SequenceItem]
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.items)


@dataclass
class StrategySpec:
    kind: str
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    hykkt: HykktConfig = field(default_factory=HykktConfig)
    refresh_after: int = 1

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}")


@dataclass
class RowMetrics:
    index: int
    nsr_before: float
    nsr_after: float
    nrbe: float
    rr: float
    ir_iterations: int
    triangular_solves: int
    factorize_time_s: float
    solve_time_s: float
    refine_time_s: float
    converged: bool


@dataclass
class RunReport:
    sequence_name: str
    strategy: str
    rows: list[RowMetrics]
    totals: dict = field(default_factory=dict)
    stage_timings: list[dict] | None = None  # hykkt only, one dict per row

    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)


def _lower_nnz(K: CsMatrix) -> int:
    if K.symmetry == SYMMETRIC_LOWER:
        return K.nnz
    return int(np.count_nonzero(K.row_of_entry() >= K.col_idx))


def load_sequence(manifest_path: str) -> MatrixSequence:
    """Load a manifest's systems, validating the shared sparsity pattern."""
    with open(manifest_path, "r") as fh:
        manifest = json.load(fh)
    systems = manifest.get("systems", [])
    if not systems:
        raise SequenceError("sequence must contain at least one system")
    base = os.path.dirname(os.path.abspath(manifest_path))
    items: list[SequenceItem] = []
    for i, entry in enumerate(systems):
        mpath = os.path.join(base, entry["matrix"])
        rpath = os.path.join(base, entry["rhs"])
        K = load_matrix_market(mpath)
        rhs = load_vector(rpath)
        if rhs.size != K.n_rows:
            raise SequenceError(f"system {i}: rhs length {rhs.size} does not "
                                f"match matrix dimension {K.n_rows}")
        if items and not K.same_pattern(items[0].K):
            raise SequenceError(f"system {i}: sparsity pattern differs from system 0")
        items.append(SequenceItem(K=K, rhs=rhs, matrix_path=mpath, rhs_path=rpath))
    metadata = {
        "N": items[0].K.n_rows,
        "nnz": _lower_nnz(items[0].K),
    }
    for key in ("n", "m", "mu"):
        if key in manifest:
            metadata[key] = manifest[key]
    return MatrixSequence(name=manifest.get("name", "sequence"),
                          items=items, metadata=metadata)


def sequence_from_trace(trace: BarrierTrace, name: str = "seqgen") -> MatrixSequence:
    """Wrap a generated barrier trace as an in-memory sequence."""
    if not trace.systems:
        raise SequenceError("sequence must contain at least one system")
    items = []
    for ksys, rhs, _mu, _cond in trace.systems:
        items.append(SequenceItem(
            K=ksys.K, rhs=np.concatenate([rhs.r_x, rhs.r_lambda])))
    first: KktSystem = trace.systems[0][0]
    metadata = {
        "N": first.K.n_rows,
        "nnz": _lower_nnz(first.K),
        "n": first.n,
        "m": first.m,
        "mu": list(trace.mu_schedule),
    }
    return MatrixSequence(name=name, items=items, metadata=metadata)


def export_trace(trace: BarrierTrace, out_dir: str, name: str = "seqgen") -> str:
    """Write a trace as Matrix Market files plus a manifest; returns its path."""
    os.makedirs(out_dir, exist_ok=True)
    systems = []
    for i, (ksys, rhs, _mu, _cond) in enumerate(trace.systems):
        mname = f"{name}_K{i:03d}.mtx"
        rname = f"{name}_rhs{i:03d}.mtx"
        write_matrix_market(os.path.join(out_dir, mname), ksys.K)
        write_vector(os.path.join(out_dir, rname),
                     np.concatenate([rhs.r_x, rhs.r_lambda]))
        systems.append({"matrix": mname, "rhs": rname})
    first = trace.systems[0][0]
    manifest = {
        "name": name,
        "systems": systems,
        "n": first.n,
        "m": first.m,
        "mu": list(trace.mu_schedule),
    }
    path = os.path.join(out_dir, f"{name}_manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return path


def _failed_row(index: int) -> RowMetrics:
    nan = float("nan")
    return RowMetrics(index, nan, nan, nan, nan, 0, 0, 0.0, 0.0, 0.0, False)


def _split_blocks(K: CsMatrix, n: int, m: int):
    """Split an assembled system into its (1,1) block and Jacobian block."""
    if K.symmetry != SYMMETRIC_LOWER:
        raise SequenceError("hykkt needs symmetric-lower assembled systems")
    rows = K.row_of_entry()
    in_h = rows < n
    in_j = (rows >= n) & (K.col_idx < n)
    bad = (rows >= n) & (K.col_idx >= n)
    if np.any(bad):
        raise SequenceError("hykkt: assembled system has entries in the (2,2) block")
    h_idx = np.flatnonzero(in_h).astype(np.int64)
    j_idx = np.flatnonzero(in_j).astype(np.int64)
    H = from_triplets(Triplets(n, n, rows[h_idx], K.col_idx[h_idx],
                               K.values[h_idx]), SYMMETRIC_LOWER)
    J = from_triplets(Triplets(m, n, rows[j_idx] - n, K.col_idx[j_idx],
                               K.values[j_idx]), GENERAL)
    return H, J, h_idx, j_idx


def _run_direct_family(seq: MatrixSequence, spec: StrategySpec) -> RunReport:
    rows: list[RowMetrics] = []
    factors = None
    for idx, item in enumerate(seq.items):
        K, r = item.K, item.rhs
        try:
            t0 = time.perf_counter()
            Kg = to_general(K)
            fresh = spec.kind == "full_lu" or idx < spec.refresh_after or factors is None
            if fresh:
                factors, _diag = factorize(Kg)
            else:
                refactorize(factors, Kg)
            t_fact = time.perf_counter() - t0

            count0 = factors.triangular_solve_count
            t0 = time.perf_counter()
            x0 = lu_solve(factors, r)
            t_solve = time.perf_counter() - t0

            t_refine = 0.0
            if spec.kind == "refactor_ir_fgmres":
                t0 = time.perf_counter()
                x, rep = refine_fgmres(K, factors, x0, r, spec.refinement)
                t_refine = time.perf_counter() - t0
            elif spec.kind == "refactor_ir_richardson":
                t0 = time.perf_counter()
                x, rep = refine_richardson(K, factors, x0, r, spec.refinement)
                t_refine = time.perf_counter() - t0
            else:
                x, rep = x0, None

            if rep is not None:
                nsr_before, nsr_after = rep.nsr_before, rep.nsr_after
                ir_iters = rep.ir_iterations
                converged = rep.converged
            else:
                nsr_before = nsr_after = nsr(K, x, r)
                ir_iters = 0
                converged = True
            if not np.all(np.isfinite(x)):
                converged = False
            rnorm = float(np.linalg.norm(r))
            rr = float(np.linalg.norm(r - spmv(K, x))) / rnorm if rnorm > 0 else 0.0
            rows.append(RowMetrics(
                index=idx, nsr_before=nsr_before, nsr_after=nsr_after,
                nrbe=nrbe(K, x, r), rr=rr, ir_iterations=ir_iters,
                triangular_solves=factors.triangular_solve_count - count0,
                factorize_time_s=t_fact, solve_time_s=t_solve,
                refine_time_s=t_refine, converged=converged))
        except Exception:
            rows.append(_failed_row(idx))
    return _finish_report(seq, spec, rows, None)


def _run_hykkt(seq: MatrixSequence, spec: StrategySpec) -> RunReport:
    md = seq.metadata
    if "n" not in md or "m" not in md:
        raise SequenceError("hykkt needs block sizes 'n' and 'm' in the "
                            "sequence metadata (seqgen manifests carry them)")
    n, m = int(md["n"]), int(md["m"])
    rows: list[RowMetrics] = []
    stage_rows: list[dict] = []
    H0, J0, h_idx, j_idx = _split_blocks(seq.items[0].K, n, m)
    zeros_dx = np.zeros(n)
    solver = None
    for idx, item in enumerate(seq.items):
        K, r = item.K, item.rhs
        try:
            t0 = time.perf_counter()
            if solver is None:
                solver = hykkt_setup(H0, J0, None, spec.hykkt)
                H, J = H0, J0
            else:
                H = H0.with_values(K.values[h_idx])
                J = J0.with_values(K.values[j_idx])
            info = hykkt_factorize(solver, H, J, zeros_dx)
            t_fact = time.perf_counter() - t0

            chol0 = solver.total_chol_solves
            t0 = time.perf_counter()
            dx, dlam, stats = hykkt_solve(solver, r[:n], r[n:])
            t_solve = time.perf_counter() - t0

            x = np.concatenate([dx, dlam])
            q = nsr(K, x, r)
            rnorm = float(np.linalg.norm(r))
            rr = float(np.linalg.norm(r - spmv(K, x))) / rnorm if rnorm > 0 else 0.0
            ok = stats.cg_converged and bool(np.all(np.isfinite(x)))
            rows.append(RowMetrics(
                index=idx, nsr_before=q, nsr_after=q, nrbe=nrbe(K, x, r),
                rr=rr, ir_iterations=stats.cg_iterations,
                triangular_solves=solver.total_chol_solves - chol0,
                factorize_time_s=t_fact, solve_time_s=t_solve,
                refine_time_s=0.0, converged=ok))
            merged = dict(info.timings)
            for k, v in stats.timings.items():
                merged[k] = merged.get(k, 0.0) + v
            if idx == 0:
                merged.update(solver.setup_timings)
            stage_rows.append(merged)
        except Exception:
            rows.append(_failed_row(idx))
            stage_rows.append({})
    return _finish_report(seq, spec, rows, stage_rows)


def _finish_report(seq, spec, rows, stage_rows) -> RunReport:
    totals = {
        "wall_time_s": sum(r.factorize_time_s + r.solve_time_s + r.refine_time_s
                           for r in rows),
        "total_steps": len(rows),
        "total_triangular_solves": sum(r.triangular_solves for r in rows),
        "total_ir_iterations": sum(r.ir_iterations for r in rows),
    }
    return RunReport(sequence_name=seq.name, strategy=spec.kind, rows=rows,
                     totals=totals, stage_timings=stage_rows)


def run_strategy(seq: MatrixSequence, spec: StrategySpec) -> RunReport:
    """Execute one strategy over a sequence; hard errors fail rows, not runs."""
    if spec.kind == "hykkt":
        return _run_hykkt(seq, spec)
    return _run_direct_family(seq, spec)


def ir_comparison_specs(restart: int = 20,
                        delta_tol: float = 1e-14) -> tuple[StrategySpec, StrategySpec]:
    """The fixed suite for comparing the two refinement methods head to head.

    Both methods are driven to the same effective target, the achievable NSR
    floor: FGMRES refines until its estimated residual stops at
    ``delta_tol`` times the initial one, and Richardson uses the ratio-based
    stagnation stop, which also terminates at the floor.  Comparing at
    unequal targets would be meaningless since the two stopping rules use
    different baselines.
    """
    from .krylov import KrylovConfig
    from .refine import NSR_RATIO

    fg = StrategySpec(
        kind="refactor_ir_fgmres",
        refinement=RefinementConfig(delta_tol=delta_tol,
                                    krylov=KrylovConfig(m=restart)))
    ri = StrategySpec(
        kind="refactor_ir_richardson",
        refinement=RefinementConfig(delta_tol=delta_tol,
                                    krylov=KrylovConfig(m=restart),
                                    richardson_stop=NSR_RATIO))
    return fg, ri


def write_report_csv(report: RunReport, path: str) -> None:
    """Write per-system metrics with the exact CSV schema."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in report.rows:
            w.writerow([r.index, repr(r.nsr_before), repr(r.nsr_after),
                        repr(r.nrbe), repr(r.rr), r.ir_iterations,
                        r.triangular_solves, repr(r.factorize_time_s),
                        repr(r.solve_time_s), repr(r.refine_time_s),
                        int(r.converged)])


def read_report_csv(path: str, strategy: str | None = None,
                    sequence_name: str | None = None) -> RunReport:
    """Rebuild a report from its CSV (for the compare command)."""
    rows: list[RowMetrics] = []
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise SequenceError(f"{path}: unexpected CSV columns {reader.fieldnames}")
        for rec in reader:
            rows.append(RowMetrics(
                index=int(rec["index"]),
                nsr_before=float(rec["nsr_before"]),
                nsr_after=float(rec["nsr_after"]),
                nrbe=float(rec["nrbe"]),
                rr=float(rec["rr"]),
                ir_iterations=int(rec["ir_iterations"]),
                triangular_solves=int(rec["triangular_solves"]),
                factorize_time_s=float(rec["factorize_time_s"]),
                solve_time_s=float(rec["solve_time_s"]),
                refine_time_s=float(rec["refine_time_s"]),
                converged=bool(int(rec["converged"]))))
    name = strategy or os.path.splitext(os.path.basename(path))[0]
    totals = {
        "wall_time_s": sum(r.factorize_time_s + r.solve_time_s + r.refine_time_s
                           for r in rows),
        "total_steps": len(rows),
        "total_triangular_solves": sum(r.triangular_solves for r in rows),
        "total_ir_iterations": sum(r.ir_iterations for r in rows),
    }
    return RunReport(sequence_name=sequence_name or "", strategy=name,
                     rows=rows, totals=totals)


def compare_reports(reports: list[RunReport]) -> tuple[list[str], list[list]]:
    """Summary table: one row per strategy plus per-system (NSR, solves) pairs.

    Raises on mismatched sequence names; reports with an unknown (empty)
    sequence name pass the check.
    """
    if not reports:
        raise ValueError("compare_reports needs at least one report")
    names = {r.sequence_name for r in reports if r.sequence_name}
    if len(names) > 1:
        raise SequenceError(f"reports cover different sequences: {sorted(names)}")
    n_sys = max(len(r.rows) for r in reports)
    header = ["strategy", "total_wall_time_s", "total_steps",
              "total_triangular_solves", "avg_ir_iterations",
              "avg_nsr_after", "max_nsr_after"]
    for i in range(n_sys):
        header += [f"nsr_{i}", f"tsolves_{i}"]
    out: list[list] = []
    for rep in reports:
        finite = [r.nsr_after for r in rep.rows if math.isfinite(r.nsr_after)]
        row: list = [
            rep.strategy,
            rep.totals["wall_time_s"],
            rep.totals["total_steps"],
            rep.totals["total_triangular_solves"],
            (rep.totals["total_ir_iterations"] / len(rep.rows)) if rep.rows else 0.0,
            (sum(finite) / len(finite)) if finite else float("nan"),
            max(finite) if finite else float("nan"),
        ]
        is_ir = rep.strategy in ("refactor_ir_fgmres", "refactor_ir_richardson")
        for i in range(n_sys):
            if is_ir and i < len(rep.rows):
                row += [rep.rows[i].nsr_after, rep.rows[i].triangular_solves]
            else:
                row += ["", ""]
        out.append(row)
    return header, out


def write_comparison_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)
