"""Runtime and process-time accounting plus A/B ratio reporting.

Runtime is wall-clock from enactment start to last worker exit.  Process time
is the sum of per-worker busy spans; for non-scaling mappings a worker's whole
loop (including blocked dequeue waits) counts as busy, while an auto-scaled
run excludes parked time by only recording spans for launched task workers.
"""

from __future__ import annotations

import csv
import json
import statistics
import threading
import time
from dataclasses import dataclass, field
from typing import Optional


def monotonic() -> float:
    return time.monotonic()


class SpanRecorder:
    """Append-only busy-span log, safe for concurrent submission."""

    def __init__(self):
        self._lock = threading.Lock()
        self._spans: dict[str, list[tuple[float, float]]] = {}

    def record_span(self, worker_id: str, start: float, end: float) -> None:
        if end < start:
            raise ValueError("span end precedes start")
        with self._lock:
            self._spans.setdefault(worker_id, []).append((start, end))

    def spans(self) -> dict[str, list[tuple[float, float]]]:
        with self._lock:
            return {w: list(s) for w, s in self._spans.items()}


def coalesce_spans(spans: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Merge overlapping or touching spans of one worker."""
    merged: list[list[float]] = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


@dataclass
class RunMetrics:
    mapping: str
    n_workers: int
    workload: str
    seed: int
    runtime: float
    busy_spans: dict[str, list[tuple[float, float]]]
    tasks_enqueued: int = 0
    tasks_executed: int = 0
    tasks_failed: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def process_time(self) -> float:
        return sum(e - s for spans in self.busy_spans.values() for s, e in spans)

    def to_json(self) -> str:
        doc = {
            "mapping": self.mapping,
            "n_workers": self.n_workers,
            "workload": self.workload,
            "seed": self.seed,
            "runtime": self.runtime,
            "process_time": self.process_time,
            "busy_spans": {w: [[s, e] for s, e in spans] for w, spans in self.busy_spans.items()},
            "tasks_enqueued": self.tasks_enqueued,
            "tasks_executed": self.tasks_executed,
            "tasks_failed": self.tasks_failed,
            "extras": self.extras,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunMetrics":
        doc = json.loads(text)
        return RunMetrics(
            mapping=doc["mapping"],
            n_workers=doc["n_workers"],
            workload=doc["workload"],
            seed=doc["seed"],
            runtime=doc["runtime"],
            busy_spans={w: [tuple(span) for span in spans] for w, spans in doc["busy_spans"].items()},
            tasks_enqueued=doc["tasks_enqueued"],
            tasks_executed=doc["tasks_executed"],
            tasks_failed=doc["tasks_failed"],
            extras=doc.get("extras", {}),
        )


def finalize(
    mapping: str,
    n_workers: int,
    workload: str,
    seed: int,
    started: float,
    ended: float,
    recorder: SpanRecorder,
    tasks_enqueued: int = 0,
    tasks_executed: int = 0,
    tasks_failed: int = 0,
    extras: Optional[dict] = None,
) -> RunMetrics:
    spans = {w: coalesce_spans(s) for w, s in recorder.spans().items()}
    return RunMetrics(
        mapping=mapping,
        n_workers=n_workers,
        workload=workload,
        seed=seed,
        runtime=max(ended - started, 0.0),
        busy_spans=spans,
        tasks_enqueued=tasks_enqueued,
        tasks_executed=tasks_executed,
        tasks_failed=tasks_failed,
        extras=extras or {},
    )


@dataclass(frozen=True)
class RatioPair:
    label: str
    runtime_ratio: float
    process_time_ratio: float


@dataclass
class RatioReport:
    """Per-pair A/B ratios plus the rows prioritized by each metric.

    ``best_by_runtime`` is the pair whose A run had the best (smallest)
    runtime ratio; ``best_by_process_time`` likewise for process time.
    """

    pairs: list[RatioPair]
    mean_runtime: float
    std_runtime: float
    mean_process_time: float
    std_process_time: float

    @property
    def best_by_runtime(self) -> RatioPair:
        return min(self.pairs, key=lambda p: p.runtime_ratio)

    @property
    def best_by_process_time(self) -> RatioPair:
        return min(self.pairs, key=lambda p: p.process_time_ratio)


def ratio_report(a_runs: list[RunMetrics], b_runs: list[RunMetrics]) -> RatioReport:
    """Pair A and B runs by (workload, n_workers) and compute A/B ratios."""
    if len(a_runs) != len(b_runs):
        raise ValueError(f"mismatched run sets: {len(a_runs)} vs {len(b_runs)}")
    key = lambda m: (m.workload, m.n_workers)
    a_sorted = sorted(a_runs, key=key)
    b_sorted = sorted(b_runs, key=key)
    pairs = []
    for a, b in zip(a_sorted, b_sorted):
        if b.runtime <= 0 or b.process_time <= 0:
            raise ValueError(f"degenerate B run for {key(b)}: zero runtime or process time")
        pairs.append(
            RatioPair(
                label=f"{a.workload}/n{a.n_workers}",
                runtime_ratio=a.runtime / b.runtime,
                process_time_ratio=a.process_time / b.process_time,
            )
        )
    rts = [p.runtime_ratio for p in pairs]
    pts = [p.process_time_ratio for p in pairs]
    return RatioReport(
        pairs=pairs,
        mean_runtime=statistics.fmean(rts),
        std_runtime=statistics.pstdev(rts) if len(rts) > 1 else 0.0,
        mean_process_time=statistics.fmean(pts),
        std_process_time=statistics.pstdev(pts) if len(pts) > 1 else 0.0,
    )


RATIO_CSV_COLUMNS = [
    "platform_tag", "pair", "prioritized_by",
    "runtime_ratio", "process_time_ratio",
    "mean_rt", "std_rt", "mean_pt", "std_pt",
]


def write_ratio_csv(report: RatioReport, path: str, platform_tag: str, pair_name: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RATIO_CSV_COLUMNS)
        for p in report.pairs:
            writer.writerow([platform_tag, f"{pair_name}:{p.label}", "pair",
                             f"{p.runtime_ratio:.4f}", f"{p.process_time_ratio:.4f}", "", "", "", ""])
        best_rt = report.best_by_runtime
        writer.writerow([platform_tag, pair_name, "runtime",
                         f"{best_rt.runtime_ratio:.4f}", f"{best_rt.process_time_ratio:.4f}", "", "", "", ""])
        best_pt = report.best_by_process_time
        writer.writerow([platform_tag, pair_name, "process_time",
                         f"{best_pt.runtime_ratio:.4f}", f"{best_pt.process_time_ratio:.4f}", "", "", "", ""])
        writer.writerow([platform_tag, pair_name, "mean_std", "", "",
                         f"{report.mean_runtime:.4f}", f"{report.std_runtime:.4f}",
                         f"{report.mean_process_time:.4f}", f"{report.std_process_time:.4f}"])
