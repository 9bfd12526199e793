"""Sequential oracle mapping and the static multi-worker mapping.

``run_sequential`` is the single-threaded reference every other mapping is
checked against.  ``allocate_static`` reproduces the classic allocation
arithmetic (one worker per source, floor-divided share for the rest) and
``run_static`` enacts the plan with one worker thread per allocated slot.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from ._util import AtomicCounter
from .broker import MemoryBroker, TaskEnvelope, private_queue_name
from .errors import EnactmentError, GraphInvalidError, InfeasibleAllocationError
from .graph import Connection, DataRecord, RoundRobin, WorkflowGraph, route_key, validate_graph
from .metrics import RunMetrics, SpanRecorder, finalize, monotonic
from .results import SinkOutputs

# How long a static worker blocks per dequeue attempt before re-checking the
# abort flag.  Purely an implementation cadence, not a termination knob.
_POLL = 0.2


def _check_valid(graph: WorkflowGraph) -> None:
    report = validate_graph(graph)
    if not report.ok:
        raise GraphInvalidError(report)


def run_sequential(graph: WorkflowGraph, inputs: dict[str, list[dict]], seed: int = 0) -> SinkOutputs:
    """Process source records one at a time, each propagated depth-first in
    topological order; stateful instances are flushed at end of input."""
    _check_valid(graph)
    order = graph.topological_order()
    rank = {pe_id: i for i, pe_id in enumerate(order)}
    states: dict[tuple[str, int], dict] = {}
    counters: dict[Connection, RoundRobin] = {}
    outputs: SinkOutputs = {pe.id: [] for pe in graph.sinks()}

    def deliver(pe_id: str, instance: int, fields: dict) -> None:
        pe = graph.pe(pe_id)
        state = states.setdefault((pe_id, instance), {}) if pe.stateful else None
        try:
            emissions = pe.behavior.process(fields, state)
        except Exception as exc:
            raise EnactmentError(f"behavior of PE {pe_id!r} failed: {exc}", pe_id=pe_id) from exc
        if pe.kind == "sink":
            outputs[pe_id].extend(f for _, f in emissions)
        else:
            for port, f in emissions:
                route(pe_id, port, f)

    def route(pe_id: str, port: str, fields: dict) -> None:
        for conn in graph.outgoing(pe_id):
            if conn.from_port != port:
                continue
            n = graph.pe(conn.to_pe).instance_count
            idx = route_key(conn.grouping, fields, n, counters.setdefault(conn, RoundRobin()))
            deliver(conn.to_pe, idx, fields)

    for pe_id in order:
        for record in inputs.get(pe_id, []):
            deliver(pe_id, 0, dict(record))

    # End-of-input: flush stateful instances upstream-first so downstream
    # state sees every aggregate before its own flush.
    for pe_id in sorted((p.id for p in graph.pes if p.stateful), key=rank.__getitem__):
        pe = graph.pe(pe_id)
        if pe.behavior.flush is None:
            continue
        for instance in range(pe.instance_count):
            state = states.setdefault((pe_id, instance), {})
            try:
                emissions = pe.behavior.flush(state)
            except Exception as exc:
                raise EnactmentError(f"flush of PE {pe_id!r} failed: {exc}", pe_id=pe_id) from exc
            if pe.kind == "sink":
                outputs[pe_id].extend(f for _, f in emissions)
            else:
                for port, f in emissions:
                    route(pe_id, port, f)
    return outputs


@dataclass(frozen=True)
class AllocationPlan:
    assignments: dict[str, list[int]]
    idle_workers: list[int]

    @property
    def n_processes(self) -> int:
        return sum(len(ws) for ws in self.assignments.values()) + len(self.idle_workers)


def allocate_static(graph: WorkflowGraph, n_processes: int) -> AllocationPlan:
    """One worker per source PE, then floor((n - sources) / (PEs - sources))
    workers for each remaining PE; leftovers stay idle.  Stateful PEs never
    get more workers than their declared instance_count."""
    n_pes = len(graph.pes)
    if n_processes < n_pes:
        raise InfeasibleAllocationError(
            f"{n_pes} processes is the minimum requirement for this graph, got {n_processes}"
        )
    sources = [pe.id for pe in graph.pes if pe.kind == "source"]
    others = [pe for pe in graph.pes if pe.kind != "source"]
    share = (n_processes - len(sources)) // len(others) if others else 0

    assignments: dict[str, list[int]] = {}
    next_worker = 0

    def take(count: int) -> list[int]:
        nonlocal next_worker
        ids = list(range(next_worker, next_worker + count))
        next_worker += count
        return ids

    for pe in graph.pes:
        if pe.kind == "source":
            assignments[pe.id] = take(1)
        else:
            count = share
            if pe.stateful:
                count = min(count, pe.instance_count)
            assignments[pe.id] = take(max(count, 1))
    idle = list(range(next_worker, n_processes))
    return AllocationPlan(assignments, idle)


def run_static(
    graph: WorkflowGraph,
    plan: AllocationPlan,
    inputs: dict[str, list[dict]],
    seed: int = 0,
    workload: str = "",
    mapping_name: str = "static",
) -> tuple[SinkOutputs, RunMetrics]:
    """Enact a static plan: each worker owns one PE instance and an inbox
    queue; termination cascades poison pills from the sources downstream."""
    _check_valid(graph)
    for pe in graph.pes:
        if not plan.assignments.get(pe.id):
            raise InfeasibleAllocationError(f"plan assigns no worker to PE {pe.id!r}")

    broker = MemoryBroker()
    inboxes = {
        (pe_id, i): broker.queue(private_queue_name(pe_id, i))
        for pe_id, workers in plan.assignments.items()
        for i in range(len(workers))
    }
    recorder = SpanRecorder()
    enqueued = AtomicCounter()
    executed = AtomicCounter()
    failed = AtomicCounter()
    outputs: SinkOutputs = {pe.id: [] for pe in graph.sinks()}
    outputs_lock = threading.Lock()
    abort = threading.Event()
    failures: list[EnactmentError] = []

    def route_from(pe_id: str, port: str, fields: dict, counters: dict) -> None:
        for conn in graph.outgoing(pe_id):
            if conn.from_port != port:
                continue
            n = len(plan.assignments[conn.to_pe])
            idx = route_key(conn.grouping, fields, n, counters.setdefault(conn, RoundRobin()))
            env = TaskEnvelope.work(conn.to_pe, DataRecord(fields, (pe_id, 0)), target_instance=idx)
            broker.enqueue(inboxes[(conn.to_pe, idx)], env)
            enqueued.inc()

    def emit(pe, fields: dict, state, counters: dict) -> None:
        emissions = pe.behavior.process(fields, state)
        if pe.kind == "sink":
            with outputs_lock:
                outputs[pe.id].extend(f for _, f in emissions)
        else:
            for port, f in emissions:
                route_from(pe.id, port, f, counters)

    def forward_pills(pe_id: str) -> None:
        for conn in graph.outgoing(pe_id):
            for idx in range(len(plan.assignments[conn.to_pe])):
                broker.enqueue(inboxes[(conn.to_pe, idx)], TaskEnvelope.pill())

    def source_worker(pe) -> None:
        counters: dict = {}
        state: dict = {} if pe.stateful else None
        for record in inputs.get(pe.id, []):
            emit(pe, dict(record), state, counters)
            executed.inc()
        forward_pills(pe.id)

    def instance_worker(pe, local_idx: int) -> None:
        counters: dict = {}
        state = {} if pe.stateful else None
        expected_pills = sum(len(plan.assignments[c.from_pe]) for c in graph.incoming(pe.id))
        pills = 0
        inbox = inboxes[(pe.id, local_idx)]
        while not abort.is_set():
            env = broker.dequeue(inbox, timeout=_POLL)
            if env is None:
                continue
            if env.kind == "poison_pill":
                pills += 1
                if pills < expected_pills:
                    continue
                if pe.stateful and pe.behavior.flush is not None:
                    emissions = pe.behavior.flush(state)
                    if pe.kind == "sink":
                        with outputs_lock:
                            outputs[pe.id].extend(f for _, f in emissions)
                    else:
                        for port, f in emissions:
                            route_from(pe.id, port, f, counters)
                forward_pills(pe.id)
                return
            emit(pe, env.payload.fields, state, counters)
            executed.inc()

    def run_worker(pe, local_idx: int) -> None:
        start = monotonic()
        try:
            if pe.kind == "source":
                source_worker(pe)
            else:
                instance_worker(pe, local_idx)
        except Exception as exc:
            failures.append(EnactmentError(f"worker for PE {pe.id!r} failed: {exc}", pe_id=pe.id))
            abort.set()
        finally:
            recorder.record_span(f"{pe.id}:{local_idx}", start, monotonic())

    enqueued.inc(sum(len(v) for v in inputs.values()))
    started = monotonic()
    threads = [
        threading.Thread(target=run_worker, args=(graph.pe(pe_id), i), name=f"static-{pe_id}-{i}")
        for pe_id, workers in plan.assignments.items()
        for i in range(len(workers))
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    ended = monotonic()
    broker.close()

    run = finalize(
        mapping_name, plan.n_processes, workload, seed, started, ended, recorder,
        tasks_enqueued=enqueued.value, tasks_executed=executed.value, tasks_failed=failed.value,
    )
    if failures:
        first = failures[0]
        raise EnactmentError(str(first), pe_id=first.pe_id, partial_metrics=run)
    return outputs, run
