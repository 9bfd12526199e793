"""Dynamic scheduling: stateless graphs over a shared global task queue.

Every worker holds its own copy of the abstract graph, pulls (PE id, record)
tasks from the global queue, executes them, and pushes successor tasks back.
Termination combines an empty-queue retry countdown with poison pills: the
first worker whose retries run dry (with no peer mid-task) broadcasts pills
so the rest exit without burning their own retries.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

from ._util import AtomicCounter, InFlightLedger
from .backends import make_broker
from .broker import (
    GLOBAL_QUEUE,
    RESULTS_QUEUE,
    Broker,
    DataRecord,
    QueueHandle,
    TaskEnvelope,
)
from .errors import GraphInvalidError, StatefulGraphError
from .graph import WorkflowGraph, validate_graph
from .metrics import RunMetrics, SpanRecorder, finalize, monotonic
from .results import SinkOutputs


@dataclass(frozen=True)
class TerminationConfig:
    empty_wait: float = 0.05
    max_retries: int = 10

    def __post_init__(self):
        if self.empty_wait <= 0:
            raise ValueError("empty_wait must be positive")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")


@dataclass
class RetryState:
    max_retries: int
    retries_left: int = field(default=-1)

    def __post_init__(self):
        if self.retries_left < 0:
            self.retries_left = self.max_retries


def check_termination(observed_empty: bool, retry_state: RetryState) -> str:
    """One termination-protocol step: ``continue`` (queue had work, retries
    reset), ``wait`` (empty, burn one retry), or ``terminate`` (retries gone)."""
    if not observed_empty:
        retry_state.retries_left = retry_state.max_retries
        return "continue"
    if retry_state.retries_left > 0:
        retry_state.retries_left -= 1
        return "wait"
    return "terminate"


def broadcast_pills(broker: Broker, global_q: QueueHandle, n_workers: int) -> None:
    """Enqueue one pill for every *other* worker; receivers do not re-broadcast."""
    for _ in range(n_workers - 1):
        broker.enqueue(global_q, TaskEnvelope.pill())


@dataclass
class WorkerContext:
    worker_id: str
    graph: WorkflowGraph
    broker: Broker
    global_q: QueueHandle
    results_q: QueueHandle
    term: TerminationConfig
    n_workers: int
    ledger: InFlightLedger
    executed: AtomicCounter
    failed: AtomicCounter
    seed: int = 0


def execute_task(ctx_graph: WorkflowGraph, env: TaskEnvelope, route_emission, state=None) -> None:
    """Run one work envelope's behavior and hand every emission to
    ``route_emission(pe, port_or_None, fields)``."""
    pe = ctx_graph.pe(env.pe_id)
    emissions = pe.behavior.process(env.payload.fields, state)
    if pe.kind == "sink":
        for _, fields in emissions:
            route_emission(pe, None, fields)
    else:
        for port, fields in emissions:
            route_emission(pe, port, fields)


def _route_to_global(ctx: WorkerContext):
    def route(pe, port, fields):
        if port is None:
            ctx.broker.enqueue(ctx.results_q, TaskEnvelope.work(pe.id, DataRecord(fields, (pe.id, 0))))
            return
        for conn in ctx.graph.outgoing(pe.id):
            if conn.from_port != port:
                continue
            ctx.broker.enqueue(ctx.global_q, TaskEnvelope.work(conn.to_pe, DataRecord(fields, (pe.id, 0))))
            ctx.ledger.task_created()

    return route


def worker_loop(ctx: WorkerContext) -> str:
    """Dequeue / execute / enqueue-successors loop.  Returns the exit reason:
    ``pill`` or ``self_terminated``."""
    retry = RetryState(ctx.term.max_retries)
    route = _route_to_global(ctx)
    while True:
        env = ctx.broker.dequeue(ctx.global_q, ctx.term.empty_wait, consumer=ctx.worker_id)
        if env is None:
            decision = check_termination(True, retry)
            if decision != "terminate":
                continue  # the dequeue timeout already provided the wait
            if not ctx.ledger.quiescent():
                # A peer still holds an unfinished task that may spawn
                # successors; quiescence is not yet decidable.
                time.sleep(ctx.term.empty_wait)
                continue
            broadcast_pills(ctx.broker, ctx.global_q, ctx.n_workers)
            return "self_terminated"
        if env.kind == "poison_pill":
            ctx.broker.ack(ctx.global_q, env)
            return "pill"
        check_termination(False, retry)
        try:
            execute_task(ctx.graph, env, route)
            ctx.executed.inc()
        except Exception:
            ctx.failed.inc()
        finally:
            ctx.broker.ack(ctx.global_q, env)
            ctx.ledger.task_completed()


def seed_source_tasks(
    graph: WorkflowGraph, inputs: dict[str, list[dict]], broker: Broker, global_q: QueueHandle
) -> int:
    count = 0
    for pe in graph.pes:
        if pe.kind != "source":
            continue
        for i, record in enumerate(inputs.get(pe.id, [])):
            broker.enqueue(global_q, TaskEnvelope.work(pe.id, DataRecord(dict(record), (pe.id, i))))
            count += 1
    return count


def drain_results(broker: Broker, results_q: QueueHandle, graph: WorkflowGraph) -> SinkOutputs:
    outputs: SinkOutputs = {pe.id: [] for pe in graph.sinks()}
    while True:
        env = broker.dequeue(results_q, timeout=0.01)
        if env is None:
            if broker.queue_len(results_q) == 0:
                break
            continue
        broker.ack(results_q, env)
        outputs.setdefault(env.pe_id, []).append(env.payload.fields)
    return outputs


def run_dynamic(
    graph: WorkflowGraph,
    n_workers: int,
    broker_backend="memory",
    inputs: dict[str, list[dict]] | None = None,
    seed: int = 0,
    term_cfg: TerminationConfig | None = None,
    workload: str = "",
    mapping_name: str = "dynamic",
) -> tuple[SinkOutputs, RunMetrics]:
    if n_workers < 1:
        raise ValueError("need at least one worker")
    report = validate_graph(graph)
    if not report.ok:
        raise GraphInvalidError(report)
    stateful = [pe.id for pe in graph.pes if pe.stateful]
    if stateful:
        raise StatefulGraphError(
            f"dynamic scheduling manages stateless PEs only; {stateful} are stateful "
            "(use the hybrid mapping)"
        )
    inputs = inputs or {}
    term = term_cfg or TerminationConfig()
    broker, owned = make_broker(broker_backend)
    try:
        global_q = broker.queue(GLOBAL_QUEUE)
        results_q = broker.queue(RESULTS_QUEUE)
        ledger = InFlightLedger()
        executed = AtomicCounter()
        failed = AtomicCounter()
        recorder = SpanRecorder()
        exit_reasons: dict[str, str] = {}

        ledger.task_created(seed_source_tasks(graph, inputs, broker, global_q))

        def run_one(idx: int) -> None:
            wid = f"w{idx}"
            ctx = WorkerContext(
                worker_id=wid, graph=graph, broker=broker, global_q=global_q,
                results_q=results_q, term=term, n_workers=n_workers,
                ledger=ledger, executed=executed, failed=failed, seed=seed,
            )
            broker.register_consumer(global_q, wid)
            start = monotonic()
            try:
                exit_reasons[wid] = worker_loop(ctx)
            finally:
                recorder.record_span(wid, start, monotonic())

        started = monotonic()
        threads = [threading.Thread(target=run_one, args=(i,), name=f"dyn-w{i}") for i in range(n_workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        ended = monotonic()

        outputs = drain_results(broker, results_q, graph)
        residual_work = 0
        while True:
            env = broker.dequeue(global_q, timeout=0.01)
            if env is None and broker.queue_len(global_q) == 0:
                break
            if env is not None:
                broker.ack(global_q, env)
                if env.kind == "work":
                    residual_work += 1
        run = finalize(
            mapping_name, n_workers, workload, seed, started, ended, recorder,
            tasks_enqueued=ledger.created, tasks_executed=executed.value, tasks_failed=failed.value,
            extras={"exit_reasons": exit_reasons, "residual_work_tasks": residual_work},
        )
        return outputs, run
    finally:
        if owned:
            broker.close()
