"""Command-line interface: generate a sequence, solve it, compare reports."""

from __future__ import annotations

import argparse
import sys
from .harness import (
    StrategySpec,
    STRATEGY_KINDS,
    compare_reports,
    load_sequence,
    read_report_csv,
    run_strategy,
    write_comparison_csv,
    write_report_csv,
    export_trace,
)
from .hykkt import HykktConfig
from .krylov import KrylovConfig
from .refine import RefinementConfig
from .seqgen import barrier_sequence, make_qp


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kktsolve",
                                description="Sparse KKT sequence solver toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate an ill-conditioned sequence")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--m", type=int, default=50)
    g.add_argument("--density", type=float, default=0.02)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--mu-start", type=float, default=1.0)
    g.add_argument("--mu-factor", type=float, default=0.1)
    g.add_argument("--steps", type=int, default=9)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--name", default="seqgen")

    s = sub.add_parser("solve", help="run one strategy over a sequence")
    s.add_argument("--manifest", required=True)
    s.add_argument("--strategy", required=True, choices=STRATEGY_KINDS)
    s.add_argument("--delta-tol", type=float, default=1e-9)
    s.add_argument("--restart", type=int, default=10)
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--cg-tol", type=float, default=1e-12)
    s.add_argument("--refresh-after", type=int, default=1)
    s.add_argument("--out", default=None)

    c = sub.add_parser("compare", help="combine strategy report CSVs")
    c.add_argument("--inputs", nargs="+", required=True)
    c.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "generate":
        qp = make_qp(args.n, args.m, args.density, args.seed)
        trace = barrier_sequence(qp, args.mu_start, args.mu_factor, args.steps)
        manifest = export_trace(trace, args.out_dir, name=args.name)
        print(f"wrote {len(trace.systems)} systems; manifest: {manifest}")
        return 0 if not trace.diverged else 1

    if args.command == "solve":
        seq = load_sequence(args.manifest)
        refinement = RefinementConfig(
            delta_tol=args.delta_tol,
            krylov=KrylovConfig(m=args.restart))
        hykkt_cfg = HykktConfig(gamma=args.gamma, cg_tol=args.cg_tol)
        spec = StrategySpec(kind=args.strategy, refinement=refinement,
                            hykkt=hykkt_cfg, refresh_after=args.refresh_after)
        report = run_strategy(seq, spec)
        out = args.out or f"{args.strategy}.csv"
        write_report_csv(report, out)
        ok = report.all_converged()
        print(f"{args.strategy} on {seq.name}: {len(report.rows)} systems, "
              f"{report.totals['total_triangular_solves']} triangular solves, "
              f"{'all converged' if ok else 'FAILURES'} -> {out}")
        return 0 if ok else 1

    if args.command == "compare":
        reports = [read_report_csv(path) for path in args.inputs]
        header, rows = compare_reports(reports)
        write_comparison_csv(args.out, header, rows)
        print(f"compared {len(reports)} reports -> {args.out}")
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
