import csv
import json

import numpy as np
import pytest

from kktsolve.harness import (
    CSV_COLUMNS,
    SequenceError,
    StrategySpec,
    compare_reports,
    export_trace,
    ir_comparison_specs,
    load_sequence,
    read_report_csv,
    run_strategy,
    sequence_from_trace,
    write_comparison_csv,
    write_report_csv,
)
from kktsolve.hykkt import HykktConfig, SETUP_STAGES
from kktsolve.krylov import KrylovConfig
from kktsolve.mmio import write_matrix_market, write_vector
from kktsolve.refine import RefinementConfig
from kktsolve.seqgen import barrier_sequence

from conftest import hand_qp, random_spd


def _row_tuple(row):
    """Numeric fields of a row excluding the timing columns."""
    return (row.index, row.nsr_before, row.nsr_after, row.nrbe, row.rr,
            row.ir_iterations, row.triangular_solves, row.converged)


@pytest.fixture(scope="module")
def small_trace():
    return barrier_sequence(hand_qp(12), 1.0, 0.1, 6)


class TestLoadSequence:
    def test_export_then_load(self, small_trace, tmp_path):
        manifest = export_trace(small_trace, str(tmp_path), name="t")
        seq = load_sequence(manifest)
        assert len(seq) == len(small_trace.systems)
        assert seq.metadata["N"] == small_trace.systems[0][0].K.n_rows
        assert seq.metadata["n"] == 12 and seq.metadata["m"] == 1
        mem = sequence_from_trace(small_trace)
        for a, b in zip(seq.items, mem.items):
            assert np.array_equal(a.K.values, b.K.values)
            assert np.array_equal(a.rhs, b.rhs)

    def test_pattern_mismatch_names_index(self, small_trace, tmp_path):
        manifest_path = export_trace(small_trace, str(tmp_path), name="t")
        # replace system 2's matrix with a different pattern
        rogue = random_spd(small_trace.systems[0][0].K.n_rows, 0.3, 99)
        write_matrix_market(str(tmp_path / "t_K002.mtx"), rogue)
        with pytest.raises(SequenceError, match="system 2"):
            load_sequence(manifest_path)

    def test_empty_manifest_rejected(self, tmp_path):
        p = tmp_path / "empty.json"
        p.write_text(json.dumps({"name": "nothing", "systems": []}))
        with pytest.raises(SequenceError, match="at least one system"):
            load_sequence(str(p))

    def test_missing_file(self, small_trace, tmp_path):
        manifest_path = export_trace(small_trace, str(tmp_path), name="t")
        (tmp_path / "t_K001.mtx").unlink()
        with pytest.raises(FileNotFoundError):
            load_sequence(manifest_path)

    def test_rhs_length_mismatch(self, small_trace, tmp_path):
        manifest_path = export_trace(small_trace, str(tmp_path), name="t")
        write_vector(str(tmp_path / "t_rhs000.mtx"), np.ones(3))
        with pytest.raises(SequenceError, match="rhs length"):
            load_sequence(manifest_path)


class TestRunStrategy:
    def test_identical_wellconditioned_systems_nothing_to_refine(self):
        tr = barrier_sequence(hand_qp(10), 1.0, 0.9, 4)  # mild mu drift
        seq = sequence_from_trace(tr)
        # same system repeated: refactor keeps full quality, IR never fires
        seq.items = [seq.items[0]] * 4
        rep = run_strategy(seq, StrategySpec(
            kind="refactor_ir_fgmres",
            refinement=RefinementConfig(delta_tol=1e-9)))
        assert rep.all_converged()
        for row in rep.rows:
            assert row.nsr_after <= 1e-14
            assert row.ir_iterations == 0

    def test_fig2_analog_ir_beats_plain_refactor(self, trace):
        seq = sequence_from_trace(trace)
        plain = run_strategy(seq, StrategySpec(kind="refactor"))
        ir = run_strategy(seq, StrategySpec(
            kind="refactor_ir_fgmres",
            refinement=RefinementConfig(delta_tol=1e-14,
                                        krylov=KrylovConfig(m=10))))
        assert max(r.nsr_after for r in ir.rows) < max(r.nsr_after
                                                       for r in plain.rows)

    def test_hykkt_rows_and_stage_isolation(self, trace):
        seq = sequence_from_trace(trace)
        cfg = HykktConfig(cg_tol=1e-12, cg_maxit=500)
        rep = run_strategy(seq, StrategySpec(kind="hykkt", hykkt=cfg))
        assert rep.all_converged()
        for row in rep.rows:
            assert row.rr <= 10 * cfg.cg_tol
        assert rep.stage_timings is not None
        first = rep.stage_timings[0]
        assert any(k in first and first[k] > 0 for k in SETUP_STAGES)
        for later in rep.stage_timings[1:]:
            assert not any(k in later for k in SETUP_STAGES)

    def test_failed_row_recorded_not_fatal(self, small_trace):
        seq = sequence_from_trace(small_trace)
        # poison one system's values: NaN aborts that row only
        bad = seq.items[2].K.with_values(seq.items[2].K.values * np.nan)
        seq.items[2] = type(seq.items[2])(K=bad, rhs=seq.items[2].rhs)
        rep = run_strategy(seq, StrategySpec(kind="full_lu"))
        assert not rep.rows[2].converged
        assert all(r.converged for i, r in enumerate(rep.rows) if i != 2)

    def test_accounting(self, small_trace):
        seq = sequence_from_trace(small_trace)
        rep = run_strategy(seq, StrategySpec(kind="refactor"))
        assert rep.totals["total_triangular_solves"] == sum(
            r.triangular_solves for r in rep.rows)
        assert rep.totals["total_steps"] == len(rep.rows)

    def test_determinism_excluding_timings(self, trace):
        seq = sequence_from_trace(trace)
        spec = StrategySpec(kind="refactor_ir_fgmres",
                            refinement=RefinementConfig(delta_tol=1e-12))
        a = run_strategy(seq, spec)
        b = run_strategy(seq, spec)
        assert [_row_tuple(r) for r in a.rows] == [_row_tuple(r) for r in b.rows]

    def test_io_isolation(self, small_trace, tmp_path):
        spec = StrategySpec(kind="refactor_ir_fgmres",
                            refinement=RefinementConfig(delta_tol=1e-12))
        mem = run_strategy(sequence_from_trace(small_trace, name="t"), spec)
        manifest = export_trace(small_trace, str(tmp_path), name="t")
        disk = run_strategy(load_sequence(manifest), spec)
        assert [_row_tuple(r) for r in mem.rows] == [_row_tuple(r) for r in disk.rows]

    def test_hykkt_requires_block_sizes(self, small_trace, tmp_path):
        manifest = export_trace(small_trace, str(tmp_path), name="t")
        with open(manifest) as fh:
            data = json.load(fh)
        del data["n"]
        with open(manifest, "w") as fh:
            json.dump(data, fh)
        seq = load_sequence(manifest)
        with pytest.raises(SequenceError, match="block sizes"):
            run_strategy(seq, StrategySpec(kind="hykkt"))


class TestReportsCsv:
    def test_csv_schema_and_round_trip(self, small_trace, tmp_path):
        seq = sequence_from_trace(small_trace)
        rep = run_strategy(seq, StrategySpec(kind="full_lu"))
        path = str(tmp_path / "full_lu.csv")
        write_report_csv(rep, path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        assert header == CSV_COLUMNS
        back = read_report_csv(path, strategy="full_lu")
        assert [_row_tuple(r) for r in back.rows] == [_row_tuple(r) for r in rep.rows]

    def test_compare_single(self, small_trace):
        seq = sequence_from_trace(small_trace)
        rep = run_strategy(seq, StrategySpec(kind="refactor"))
        header, rows = compare_reports([rep])
        assert len(rows) == 1
        assert rows[0][0] == "refactor"
        assert rows[0][2] == rep.totals["total_steps"]
        assert rows[0][3] == rep.totals["total_triangular_solves"]

    def test_compare_identical_reports(self, small_trace):
        seq = sequence_from_trace(small_trace)
        rep1 = run_strategy(seq, StrategySpec(kind="refactor"))
        rep2 = run_strategy(seq, StrategySpec(kind="refactor"))
        _h, rows = compare_reports([rep1, rep2])
        assert rows[0][2:] == rows[1][2:]  # identical except timing col

    def test_compare_mismatched_sequences(self, small_trace):
        seq1 = sequence_from_trace(small_trace, name="a")
        seq2 = sequence_from_trace(small_trace, name="b")
        r1 = run_strategy(seq1, StrategySpec(kind="refactor"))
        r2 = run_strategy(seq2, StrategySpec(kind="refactor"))
        with pytest.raises(SequenceError):
            compare_reports([r1, r2])

    def test_five_strategy_comparison_consistency(self, small_trace, tmp_path):
        seq = sequence_from_trace(small_trace)
        fg, ri = ir_comparison_specs()
        specs = [StrategySpec(kind="full_lu"), StrategySpec(kind="refactor"),
                 fg, ri, StrategySpec(kind="hykkt")]
        reports = [run_strategy(seq, s) for s in specs]
        header, rows = compare_reports(reports)
        out = str(tmp_path / "cmp.csv")
        write_comparison_csv(out, header, rows)
        with open(out) as fh:
            parsed = list(csv.reader(fh))
        assert parsed[0] == header
        assert [r[0] for r in parsed[1:]] == [s.kind for s in specs]
        for rep, row in zip(reports, rows):
            assert row[3] == rep.totals["total_triangular_solves"]
            assert row[3] == sum(r.triangular_solves for r in rep.rows)


def test_refresh_after_controls_fresh_factorizations(small_trace):
    seq = sequence_from_trace(small_trace)
    # refresh_after=k: first k systems get a full factorization; quality on
    # system k-1 must match full_lu's row exactly (same arithmetic).
    full = run_strategy(seq, StrategySpec(kind="full_lu"))
    two = run_strategy(seq, StrategySpec(kind="refactor", refresh_after=2))
    assert two.rows[1].nsr_after == full.rows[1].nsr_after
    one = run_strategy(seq, StrategySpec(kind="refactor", refresh_after=1))
    assert one.rows[1].nsr_after != full.rows[1].nsr_after or \
        one.rows[1].nsr_after == two.rows[1].nsr_after
