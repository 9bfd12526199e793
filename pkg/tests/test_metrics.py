"""Runtime/process-time accounting and the A/B ratio report."""

from __future__ import annotations

import csv

import pytest
from hypothesis import given, strategies as st

from streamwork.metrics import (
    RATIO_CSV_COLUMNS,
    RunMetrics,
    SpanRecorder,
    coalesce_spans,
    finalize,
    ratio_report,
    write_ratio_csv,
)


def _metrics(runtime: float, process_time: float, workload="wf", n_workers=4) -> RunMetrics:
    return RunMetrics(
        mapping="m", n_workers=n_workers, workload=workload, seed=0,
        runtime=runtime, busy_spans={"w0": [(0.0, process_time)]},
    )


class TestSpans:
    def test_coalesce_merges_overlaps_and_touching(self):
        spans = [(0.0, 1.0), (0.5, 2.0), (2.0, 3.0), (5.0, 6.0)]
        assert coalesce_spans(spans) == [(0.0, 3.0), (5.0, 6.0)]

    def test_recorder_rejects_negative_span(self):
        recorder = SpanRecorder()
        with pytest.raises(ValueError):
            recorder.record_span("w", 2.0, 1.0)

    def test_process_time_sums_all_workers(self):
        recorder = SpanRecorder()
        recorder.record_span("a", 0.0, 1.0)
        recorder.record_span("b", 0.0, 2.0)
        run = finalize("m", 2, "wf", 0, 0.0, 2.0, recorder)
        assert run.process_time == pytest.approx(3.0)
        assert run.runtime == pytest.approx(2.0)

    @given(st.lists(
        st.tuples(st.floats(0, 100, allow_nan=False), st.floats(0, 100, allow_nan=False))
        .map(lambda t: (min(t), max(t))),
        max_size=30,
    ))
    def test_coalesced_total_never_exceeds_raw_total(self, spans):
        merged = coalesce_spans(spans)
        raw = sum(e - s for s, e in spans)
        merged_total = sum(e - s for s, e in merged)
        assert merged_total <= raw + 1e-9
        # Merged spans are disjoint and ordered.
        for (s1, e1), (s2, e2) in zip(merged, merged[1:]):
            assert e1 < s2


class TestJsonRoundtrip:
    def test_roundtrip_preserves_everything(self):
        run = _metrics(2.0, 1.5)
        run.extras["note"] = {"k": 1}
        back = RunMetrics.from_json(run.to_json())
        assert back.runtime == run.runtime
        assert back.process_time == pytest.approx(run.process_time)
        assert back.busy_spans == run.busy_spans
        assert back.extras == run.extras


class TestRatioReport:
    def test_identical_sets_give_unit_ratios(self):
        a = [_metrics(1.0, 2.0, n_workers=n) for n in (2, 4)]
        b = [_metrics(1.0, 2.0, n_workers=n) for n in (2, 4)]
        report = ratio_report(a, b)
        assert all(p.runtime_ratio == pytest.approx(1.0) for p in report.pairs)
        assert report.mean_runtime == pytest.approx(1.0)
        assert report.std_runtime == pytest.approx(0.0)

    def test_best_by_each_metric(self):
        a = [_metrics(1.0, 4.0, n_workers=2), _metrics(3.0, 1.0, n_workers=4)]
        b = [_metrics(2.0, 2.0, n_workers=2), _metrics(2.0, 2.0, n_workers=4)]
        report = ratio_report(a, b)
        assert report.best_by_runtime.label == "wf/n2"
        assert report.best_by_process_time.label == "wf/n4"

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(ValueError):
            ratio_report([_metrics(1, 1)], [])

    def test_degenerate_denominator_rejected(self):
        with pytest.raises(ValueError):
            ratio_report([_metrics(1, 1)], [_metrics(0.0, 1.0)])

    def test_csv_layout(self, tmp_path):
        a = [_metrics(1.0, 1.0, n_workers=2), _metrics(2.0, 4.0, n_workers=4)]
        b = [_metrics(2.0, 2.0, n_workers=2), _metrics(2.0, 2.0, n_workers=4)]
        path = tmp_path / "ratios.csv"
        write_ratio_csv(ratio_report(a, b), str(path), "desk", "A_vs_B")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == RATIO_CSV_COLUMNS
        prioritized = [r[2] for r in rows[1:]]
        assert prioritized.count("pair") == 2
        assert {"runtime", "process_time", "mean_std"} <= set(prioritized)
        mean_row = rows[-1]
        assert mean_row[5] and mean_row[6] and mean_row[7] and mean_row[8]
