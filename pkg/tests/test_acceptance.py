"""Acceptance gate: nine end-to-end criteria, one printed pass/fail line
each.  Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines
as they complete.

Performance criteria (5 and 6) are directional medians, not exact targets;
their thresholds are deliberately loose and documented inline.
"""

from __future__ import annotations

import os
import random
import statistics
import time

import pytest

from streamwork.autoscaler import (
    AutoScalerConfig,
    auto_scale,
    done,
    new_scaler,
    scaled_process_loop,
    try_start,
)
from streamwork.dynamic import TerminationConfig, run_dynamic
from streamwork.graph import (
    Behavior,
    Connection,
    GroupingSpec,
    PESpec,
    WorkflowGraph,
    route_key,
)
from streamwork.hybrid import run_hybrid
from streamwork.results import sink_outputs_equal
from streamwork.static import allocate_static, run_sequential, run_static
from streamwork.workflows import WorkloadSpec, derive_seed, load_workflow
from streamwork.workflows.astro import beta25_sample
from streamwork.workflows.sentiment import load_corpus, load_lexicon, tokenize

TERM = TerminationConfig(empty_wait=0.01, max_retries=3)
WORKER_COUNTS = (1, 2, 4, 8, 16)


def _line(num: int, description: str, ok: bool, detail: str = "") -> None:
    verdict = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"criterion {num} [{verdict}]: {description}{suffix}")
    assert ok, f"criterion {num} failed: {description}{suffix}"


def _backends(stream_server):
    from streamwork.stream_broker import StreamBroker

    yield "memory", lambda: ("memory", None)

    def make_stream():
        broker = StreamBroker(stream_server)
        return broker, broker

    yield "stream", make_stream


def test_criterion_1_oracle_equivalence(stream_server, tmp_path):
    """Every feasible mapping x worker count x backend equals the oracle."""
    failures = []
    runs = 0
    for wf_name in ("astro", "seismic", "sentiment"):
        def build(sub: str):
            out = tmp_path / wf_name / sub
            out.mkdir(parents=True, exist_ok=True)
            return load_workflow(wf_name, WorkloadSpec(seed=11),
                                 out_dir=str(out) if wf_name == "seismic" else None)

        wf = build("oracle")
        oracle = run_sequential(wf.graph, wf.inputs)
        n_pes = len(wf.graph.pes)
        stateful = any(pe.stateful for pe in wf.graph.pes)
        pinned = sum(pe.instance_count for pe in wf.graph.pes if pe.stateful)

        def check(label: str, outputs) -> None:
            nonlocal runs
            runs += 1
            if not sink_outputs_equal(oracle, outputs):
                failures.append(f"{wf_name}/{label}")

        for n in WORKER_COUNTS:
            if n >= n_pes:
                wf_run = build(f"static{n}")
                outputs, _ = run_static(wf_run.graph, allocate_static(wf_run.graph, n),
                                        wf_run.inputs)
                check(f"static/n{n}", outputs)
        for backend_name, make in _backends(stream_server):
            for n in WORKER_COUNTS:
                if not stateful:
                    backend, owned = make()
                    wf_run = build(f"dyn-{backend_name}{n}")
                    outputs, _ = run_dynamic(wf_run.graph, n, broker_backend=backend,
                                             inputs=wf_run.inputs, term_cfg=TERM)
                    check(f"dynamic/{backend_name}/n{n}", outputs)
                    if owned:
                        owned.close()

                    backend, owned = make()
                    wf_run = build(f"auto-{backend_name}{n}")
                    scaler = new_scaler(AutoScalerConfig(max_pool_size=n,
                                                         min_sample_interval=0.02))
                    outputs, _, _ = scaled_process_loop(
                        wf_run.graph, scaler, broker_backend=backend,
                        inputs=wf_run.inputs, term_cfg=TERM)
                    check(f"dyn_auto/{backend_name}/n{n}", outputs)
                    if owned:
                        owned.close()
                if n > pinned:
                    backend, owned = make()
                    wf_run = build(f"hyb-{backend_name}{n}")
                    outputs, _ = run_hybrid(wf_run.graph, n, broker_backend=backend,
                                            inputs=wf_run.inputs, term_cfg=TERM)
                    check(f"hybrid/{backend_name}/n{n}", outputs)
                    if owned:
                        owned.close()
    _line(1, "oracle equivalence across the feasible mapping matrix",
          not failures, f"{runs} runs" + (f"; mismatches: {failures}" if failures else ""))


def test_criterion_2_no_lost_tasks():
    """100 randomized dynamic runs lose nothing and terminate promptly."""

    def delayed(stage: str):
        def process(fields, state):
            rng = random.Random(derive_seed(stage, fields["v"]))
            time.sleep(rng.uniform(0, 0.002))
            return [("out", dict(fields))]

        return process

    graph = WorkflowGraph(
        pes=[
            PESpec("gen", "source", Behavior(delayed("gen")), output_ports=("out",)),
            PESpec("mid", "transform", Behavior(delayed("mid")), ("in",), ("out",)),
            PESpec("out", "sink", Behavior(lambda f, s: [(None, dict(f))]), ("in",)),
        ],
        connections=[
            Connection("gen", "out", "mid", "in"),
            Connection("mid", "out", "out", "in"),
        ],
    )
    rng = random.Random(2024)
    violations = []
    for run_idx in range(100):
        n_workers = rng.randint(1, 8)
        n_records = rng.randint(5, 20)
        inputs = {"gen": [{"v": rng.randint(0, 10_000)} for _ in range(n_records)]}
        term = TerminationConfig(empty_wait=0.005, max_retries=3)
        start = time.monotonic()
        outputs, metrics = run_dynamic(graph, n_workers, inputs=inputs,
                                       term_cfg=term, seed=run_idx)
        elapsed = time.monotonic() - start
        # Liveness bound: the work itself plus the retry tail with margin.
        bound = 3 * n_records * 0.004 + 20 * term.empty_wait * term.max_retries + 2.0
        if metrics.tasks_enqueued != metrics.tasks_executed + metrics.tasks_failed:
            violations.append(f"run {run_idx}: conservation broken")
        if metrics.tasks_failed != 0:
            violations.append(f"run {run_idx}: {metrics.tasks_failed} failures")
        if len(outputs["out"]) != n_records:
            violations.append(f"run {run_idx}: lost records")
        if elapsed > bound:
            violations.append(f"run {run_idx}: {elapsed:.2f}s exceeded bound {bound:.2f}s")
    _line(2, "no-lost-task soak over 100 randomized dynamic runs",
          not violations, "; ".join(violations[:3]))


def test_criterion_3_scaler_properties():
    """10^4 random operation sequences keep every scaler invariant."""
    rng = random.Random(99)
    violations = 0
    for _ in range(10_000):
        max_pool = rng.randint(1, 32)
        state = new_scaler(AutoScalerConfig(max_pool_size=max_pool))
        if state.active_size != max(1, max_pool // 2):
            violations += 1
            continue
        running = 0
        for _ in range(rng.randint(1, 12)):
            op = rng.random()
            if op < 0.5:
                before = state.active_size
                action = auto_scale(state, rng.uniform(0, 40))
                if action.amount != 1 or abs(state.active_size - before) > 1:
                    violations += 1
            elif op < 0.8:
                if try_start(state):
                    running += 1
                    if running > state.active_size:
                        violations += 1
            elif running:
                done(state)
                running -= 1
            if not (1 <= state.active_size <= max_pool):
                violations += 1
            if not (0 <= state.active_count <= max_pool):
                violations += 1
    _line(3, "scaler invariants over 10^4 random operation sequences",
          violations == 0, f"{violations} violations")


def test_criterion_4_keyed_routing_audit(fast_term):
    """Sentiment under hybrid: constant key routing, exact aggregates."""
    wf = load_workflow("sentiment", WorkloadSpec(seed=11))
    oracle = run_sequential(wf.graph, wf.inputs)
    outputs, metrics = run_hybrid(wf.graph, 8, inputs=wf.inputs, term_cfg=fast_term)

    conflicts = metrics.extras["key_conflicts"]
    assignments = metrics.extras["key_assignments"].get("happy_state", {})
    spec = GroupingSpec.group_by("state")
    routing_ok = all(inst == route_key(spec, {"state": s}, 4)
                     for s, inst in assignments.items())

    # Independent per-state totals straight from the corpus and lexicons.
    afinn, swn3 = load_lexicon("afinn_mini.txt"), load_lexicon("swn3_mini.txt")
    totals: dict[str, int] = {}
    for article in load_corpus():
        tokens = tokenize(article["text"])
        score = sum(afinn.get(t, 0) for t in tokens) + sum(swn3.get(t, 0) for t in tokens)
        totals[article["state"]] = totals.get(article["state"], 0) + score
    expected_top3 = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))[:3]
    got_top3 = [(r["state"], r["score"]) for r in sorted(outputs["top3"],
                                                         key=lambda r: r["rank"])]
    ok = (not conflicts and routing_ok and got_top3 == expected_top3
          and sink_outputs_equal(oracle, outputs))
    _line(4, "keyed-routing audit: stable state->instance map, exact aggregates",
          ok, f"{len(assignments)} states, {len(conflicts)} conflicts")


# Performance criteria are stated for a multi-core host; on a smaller box the
# thread scheduler distorts wall-clock ratios, so the precondition is honored.
_CORES = os.cpu_count() or 1


def _median_runs(run_once, n: int = 5) -> tuple[float, float]:
    runtimes, process_times = [], []
    for i in range(n):
        metrics = run_once(i)
        runtimes.append(metrics.runtime)
        process_times.append(metrics.process_time)
    return statistics.median(runtimes), statistics.median(process_times)


def test_criterion_5_efficiency_direction():
    """Median-of-5 dyn_auto vs dyn on astro 1X: pt <= 0.90, rt <= 1.75."""
    term = TerminationConfig(empty_wait=0.02, max_retries=5)
    wf = load_workflow("astro", WorkloadSpec(seed=11))

    def run_dyn(i: int):
        _, metrics = run_dynamic(wf.graph, 16, inputs=wf.inputs, term_cfg=term, seed=i)
        return metrics

    def run_auto(i: int):
        scaler = new_scaler(AutoScalerConfig(max_pool_size=16, min_sample_interval=0.02))
        _, metrics, _ = scaled_process_loop(wf.graph, scaler, inputs=wf.inputs,
                                            term_cfg=term, seed=i)
        return metrics

    dyn_rt, dyn_pt = _median_runs(run_dyn)
    auto_rt, auto_pt = _median_runs(run_auto)
    rt_ratio = auto_rt / dyn_rt
    pt_ratio = auto_pt / dyn_pt
    ok = pt_ratio <= 0.90 and rt_ratio <= 1.75
    _line(5, "auto-scaled vs plain dynamic efficiency direction (astro 1X, pool 16)",
          ok, f"rt_ratio={rt_ratio:.3f} (<=1.75), pt_ratio={pt_ratio:.3f} (<=0.90), "
              f"{_CORES} cores")


def test_criterion_6_hybrid_advantage_direction():
    """Median-of-5 hybrid vs static on the sentiment corpus, 14 workers."""
    term = TerminationConfig(empty_wait=0.02, max_retries=5)
    spec = WorkloadSpec(seed=11, heavy=True, sleep_scale=0.02)
    wf = load_workflow("sentiment", spec)

    def run_static_once(i: int):
        plan = allocate_static(wf.graph, 14)
        _, metrics = run_static(wf.graph, plan, wf.inputs, seed=i)
        return metrics

    def run_hybrid_once(i: int):
        _, metrics = run_hybrid(wf.graph, 14, inputs=wf.inputs, term_cfg=term, seed=i)
        return metrics

    static_rt, static_pt = _median_runs(run_static_once)
    hybrid_rt, hybrid_pt = _median_runs(run_hybrid_once)
    rt_ratio = hybrid_rt / static_rt
    pt_ratio = hybrid_pt / static_pt
    ok = rt_ratio <= 1.0 and pt_ratio <= 1.0
    _line(6, "hybrid vs static advantage direction (sentiment, 14 workers)",
          ok, f"rt_ratio={rt_ratio:.3f}, pt_ratio={pt_ratio:.3f} (both <=1.0)")


def test_criterion_7_static_allocation_arithmetic():
    noop = Behavior(lambda f, s: [("out", dict(f))])
    sink = Behavior(lambda f, s: [(None, dict(f))])
    ids = ["p0", "p1", "p2", "p3"]
    graph = WorkflowGraph(
        pes=[PESpec("p0", "source", noop, output_ports=("out",)),
             PESpec("p1", "transform", noop, ("in",), ("out",)),
             PESpec("p2", "transform", noop, ("in",), ("out",)),
             PESpec("p3", "sink", sink, ("in",))],
        connections=[Connection(a, "out", b, "in") for a, b in zip(ids, ids[1:])],
    )
    plan = allocate_static(graph, 12)
    counts = [len(plan.assignments[i]) for i in ids]
    ok = counts == [1, 3, 3, 3] and len(plan.idle_workers) == 2
    _line(7, "static allocation of a 4-PE pipeline over 12 processes",
          ok, f"counts={counts}, idle={len(plan.idle_workers)}")


def test_criterion_8_beta_sampler_mean():
    rng = random.Random(11)
    n = 100_000
    mean = sum(beta25_sample(rng) for _ in range(n)) / n
    ok = abs(mean - 2 / 7) <= 0.01
    _line(8, "Beta(2,5) sampler mean over 10^5 draws", ok,
          f"mean={mean:.4f}, target 0.2857 +/- 0.01")


def test_criterion_9_scaler_trace_coherence():
    """Grow events coincide with their strategy's grow condition; no exceptions."""
    wf = load_workflow("astro", WorkloadSpec(seed=11, heavy=True, sleep_scale=0.005))
    term = TerminationConfig(empty_wait=0.01, max_retries=3)
    violations = []

    for strategy in ("queue_size", "idle_time"):
        cfg = AutoScalerConfig(max_pool_size=8, strategy=strategy,
                               min_sample_interval=0.01, idle_threshold=0.2)
        scaler = new_scaler(cfg)
        _, _, trace = scaled_process_loop(wf.graph, scaler, inputs=wf.inputs,
                                          term_cfg=term)
        prev = 0.0
        for point in trace.points:
            if point.action == "grow":
                if strategy == "queue_size":
                    if not (point.sample_value > prev and point.sample_value >= 1):
                        violations.append((strategy, point))
                elif point.sample_value > cfg.idle_threshold:
                    violations.append((strategy, point))
            prev = point.sample_value
        if not trace.points:
            violations.append((strategy, "empty trace"))
    _line(9, "scaler-trace coherence for both monitoring strategies",
          not violations, f"{len(violations)} violations")
