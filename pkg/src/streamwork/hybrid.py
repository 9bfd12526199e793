"""Hybrid mapping: pinned stateful instances plus a stateless worker pool.

Every declared instance of a stateful PE gets its own worker thread and a
private queue, so key-partitioned state never migrates.  All stateless work
flows through the shared global queue and a pool of interchangeable workers.
Shutdown happens in two phases: the pool terminates with the usual retry /
quiescence protocol, then the coordinator walks the stateful PEs in
topological order, delivering end-of-input pills and draining any stateless
tail work their flushes produce.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

from ._util import AtomicCounter, InFlightLedger
from .backends import make_broker
from .broker import (
    GLOBAL_QUEUE,
    RESULTS_QUEUE,
    Broker,
    DataRecord,
    QueueHandle,
    TaskEnvelope,
    private_queue_name,
)
from .dynamic import (
    RetryState,
    TerminationConfig,
    broadcast_pills,
    check_termination,
    drain_results,
    seed_source_tasks,
)
from .errors import GraphInvalidError, InfeasiblePlanError
from .graph import (
    GroupingSpec,
    RoundRobin,
    WorkflowGraph,
    canonical_key,
    route_key,
    validate_graph,
)
from .metrics import RunMetrics, SpanRecorder, finalize, monotonic
from .results import SinkOutputs


@dataclass(frozen=True)
class HybridPlan:
    """Worker budget split: every stateful instance is pinned, the rest pool."""

    pinned: dict[str, int]  # stateful pe id -> pinned instance count
    pool_size: int

    @property
    def n_workers(self) -> int:
        return sum(self.pinned.values()) + self.pool_size


def plan_hybrid(graph: WorkflowGraph, n_workers: int) -> HybridPlan:
    """Pin ``instance_count`` workers per stateful PE; whatever remains forms
    the stateless pool, which must keep at least one worker."""
    pinned = {pe.id: pe.instance_count for pe in graph.pes if pe.stateful}
    pool = n_workers - sum(pinned.values())
    if pool < 1:
        deficit = 1 - pool
        raise InfeasiblePlanError(
            f"{n_workers} workers cannot cover {sum(pinned.values())} pinned stateful "
            f"instances and a non-empty pool; need {deficit} more",
            deficit=deficit,
        )
    return HybridPlan(pinned, pool)


class _KeyAudit:
    """Observed group_by key -> instance assignments for stateful PEs.

    Every routed record is noted; a key observed at two different instances
    within one run is recorded as a conflict (there must never be any)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seen: dict[str, dict[str, int]] = {}
        self._conflicts: list[tuple[str, str, int, int]] = []

    def note(self, pe_id: str, key: str, instance: int) -> None:
        with self._lock:
            keys = self._seen.setdefault(pe_id, {})
            previous = keys.setdefault(key, instance)
            if previous != instance:
                self._conflicts.append((pe_id, key, previous, instance))

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {pe: dict(keys) for pe, keys in self._seen.items()}

    def conflicts(self) -> list[tuple[str, str, int, int]]:
        with self._lock:
            return list(self._conflicts)


class _HybridRuntime:
    """Shared run context: broker handles, ledger, counters, and routing."""

    def __init__(self, graph: WorkflowGraph, plan: HybridPlan, broker: Broker,
                 term: TerminationConfig):
        self.graph = graph
        self.plan = plan
        self.broker = broker
        self.term = term
        self.global_q = broker.queue(GLOBAL_QUEUE)
        self.results_q = broker.queue(RESULTS_QUEUE)
        self.inboxes: dict[tuple[str, int], QueueHandle] = {
            (pe_id, i): broker.queue(private_queue_name(pe_id, i))
            for pe_id, count in plan.pinned.items()
            for i in range(count)
        }
        self.ledger = InFlightLedger()
        self.executed = AtomicCounter()
        self.failed = AtomicCounter()
        self.recorder = SpanRecorder()
        self.audit = _KeyAudit()

    def route(self, pe_id: str, port, fields: dict, counters: dict) -> None:
        """Send one emission onward: results for sinks, a private inbox for a
        stateful successor, the global queue for a stateless one."""
        if port is None:
            self.broker.enqueue(
                self.results_q, TaskEnvelope.work(pe_id, DataRecord(fields, (pe_id, 0)))
            )
            return
        for conn in self.graph.outgoing(pe_id):
            if conn.from_port != port:
                continue
            target = self.graph.pe(conn.to_pe)
            record = DataRecord(fields, (pe_id, 0))
            if target.stateful:
                idx = route_key(conn.grouping, fields, target.instance_count,
                                counters.setdefault(conn, RoundRobin()))
                if conn.grouping.mode == "group_by":
                    self.audit.note(target.id, canonical_key(fields[conn.grouping.key_field]), idx)
                env = TaskEnvelope.work(target.id, record, target_instance=idx)
                self.broker.enqueue(self.inboxes[(target.id, idx)], env)
            else:
                self.broker.enqueue(self.global_q, TaskEnvelope.work(target.id, record))
            self.ledger.task_created()

    def execute(self, env: TaskEnvelope, state, counters: dict) -> None:
        pe = self.graph.pe(env.pe_id)
        try:
            emissions = pe.behavior.process(env.payload.fields, state)
            if pe.kind == "sink":
                for _, fields in emissions:
                    self.route(pe.id, None, fields, counters)
            else:
                for port, fields in emissions:
                    self.route(pe.id, port, fields, counters)
            self.executed.inc()
        except Exception:
            self.failed.inc()


def _pool_worker(rt: _HybridRuntime, worker_id: str) -> str:
    """Stateless worker over the global queue; same termination protocol as
    plain dynamic scheduling, pills shared among pool members only."""
    retry = RetryState(rt.term.max_retries)
    counters: dict = {}
    while True:
        env = rt.broker.dequeue(rt.global_q, rt.term.empty_wait, consumer=worker_id)
        if env is None:
            if check_termination(True, retry) != "terminate":
                continue
            if not rt.ledger.quiescent():
                threading.Event().wait(rt.term.empty_wait)
                continue
            broadcast_pills(rt.broker, rt.global_q, rt.plan.pool_size)
            return "self_terminated"
        if env.kind == "poison_pill":
            rt.broker.ack(rt.global_q, env)
            return "pill"
        check_termination(False, retry)
        try:
            rt.execute(env, None, counters)
        finally:
            rt.broker.ack(rt.global_q, env)
            rt.ledger.task_completed()


def _expected_pills(graph: WorkflowGraph, pe_id: str) -> int:
    """Pills a pinned instance must collect before flushing: one per stateful
    upstream instance, plus one coordinator pill per stateless upstream edge."""
    total = 0
    for conn in graph.incoming(pe_id):
        upstream = graph.pe(conn.from_pe)
        total += upstream.instance_count if upstream.stateful else 1
    return total


def _pinned_worker(rt: _HybridRuntime, pe_id: str, instance: int) -> None:
    """Owns one stateful instance's private queue until its pill quota is met,
    then flushes and cascades pills to every stateful successor instance."""
    pe = rt.graph.pe(pe_id)
    inbox = rt.inboxes[(pe_id, instance)]
    state: dict = {}
    counters: dict = {}
    expected = _expected_pills(rt.graph, pe_id)
    pills = 0
    while pills < expected:
        env = rt.broker.dequeue(inbox, rt.term.empty_wait, consumer=f"{pe_id}:{instance}")
        if env is None:
            continue
        rt.broker.ack(inbox, env)
        if env.kind == "poison_pill":
            pills += 1
            continue
        try:
            rt.execute(env, state, counters)
        finally:
            rt.ledger.task_completed()
    if pe.behavior.flush is not None:
        emissions = pe.behavior.flush(state)
        if pe.kind == "sink":
            for _, fields in emissions:
                rt.route(pe_id, None, fields, counters)
        else:
            for port, fields in emissions:
                rt.route(pe_id, port, fields, counters)
    for conn in rt.graph.outgoing(pe_id):
        target = rt.graph.pe(conn.to_pe)
        if not target.stateful:
            continue
        for idx in range(target.instance_count):
            rt.broker.enqueue(rt.inboxes[(target.id, idx)], TaskEnvelope.pill())


def _drain_global_inline(rt: _HybridRuntime) -> None:
    """Execute stateless tail tasks on the coordinator thread until the global
    queue is empty.  Flush output bound for downstream stateful PEs is routed
    into private queues along the way."""
    counters: dict = {}
    while True:
        env = rt.broker.dequeue(rt.global_q, timeout=0.01, consumer="coordinator")
        if env is None:
            if rt.broker.queue_len(rt.global_q) == 0:
                return
            continue
        rt.broker.ack(rt.global_q, env)
        if env.kind == "poison_pill":
            continue
        try:
            rt.execute(env, None, counters)
        finally:
            rt.ledger.task_completed()


def run_hybrid(
    graph: WorkflowGraph,
    n_workers: int,
    broker_backend="memory",
    inputs: dict[str, list[dict]] | None = None,
    seed: int = 0,
    term_cfg: TerminationConfig | None = None,
    workload: str = "",
    mapping_name: str = "hybrid",
) -> tuple[SinkOutputs, RunMetrics]:
    report = validate_graph(graph)
    if not report.ok:
        raise GraphInvalidError(report)
    stateful_sources = [pe.id for pe in graph.sources() if pe.stateful]
    if stateful_sources:
        raise InfeasiblePlanError(f"stateful source PEs are not supported: {stateful_sources}")
    plan = plan_hybrid(graph, n_workers)
    inputs = inputs or {}
    term = term_cfg or TerminationConfig()
    broker, owned = make_broker(broker_backend)
    try:
        rt = _HybridRuntime(graph, plan, broker, term)
        exit_reasons: dict[str, str] = {}

        rt.ledger.task_created(seed_source_tasks(graph, inputs, broker, rt.global_q))

        def run_pool(idx: int) -> None:
            wid = f"pool{idx}"
            broker.register_consumer(rt.global_q, wid)
            start = monotonic()
            try:
                exit_reasons[wid] = _pool_worker(rt, wid)
            finally:
                rt.recorder.record_span(wid, start, monotonic())

        def run_pinned(pe_id: str, instance: int) -> None:
            start = monotonic()
            try:
                _pinned_worker(rt, pe_id, instance)
            finally:
                rt.recorder.record_span(f"{pe_id}:{instance}", start, monotonic())

        pinned_threads: dict[str, list[threading.Thread]] = {}
        for pe_id, count in plan.pinned.items():
            pinned_threads[pe_id] = [
                threading.Thread(target=run_pinned, args=(pe_id, i), name=f"hyb-{pe_id}-{i}")
                for i in range(count)
            ]
        pool_threads = [
            threading.Thread(target=run_pool, args=(i,), name=f"hyb-pool{i}")
            for i in range(plan.pool_size)
        ]

        started = monotonic()
        for threads in pinned_threads.values():
            for t in threads:
                t.start()
        for t in pool_threads:
            t.start()
        for t in pool_threads:
            t.join()

        # Shutdown wave: visit stateful PEs upstream-first so each one has all
        # of its input (including peers' flush output) before its own pills.
        topo = graph.topological_order()
        for pe_id in (p for p in topo if p in plan.pinned):
            for conn in graph.incoming(pe_id):
                if graph.pe(conn.from_pe).stateful:
                    continue  # pills arrive from the upstream instances themselves
                for idx in range(plan.pinned[pe_id]):
                    broker.enqueue(rt.inboxes[(pe_id, idx)], TaskEnvelope.pill())
            for t in pinned_threads[pe_id]:
                t.join()
            _drain_global_inline(rt)
        ended = monotonic()

        outputs = drain_results(broker, rt.results_q, graph)
        run = finalize(
            mapping_name, plan.n_workers, workload, seed, started, ended, rt.recorder,
            tasks_enqueued=rt.ledger.created, tasks_executed=rt.executed.value,
            tasks_failed=rt.failed.value,
            extras={
                "pool_size": plan.pool_size,
                "pinned": dict(plan.pinned),
                "exit_reasons": exit_reasons,
                "key_assignments": rt.audit.snapshot(),
                "key_conflicts": rt.audit.conflicts(),
            },
        )
        return outputs, run
    finally:
        if owned:
            broker.close()
