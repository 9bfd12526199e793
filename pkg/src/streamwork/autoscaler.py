"""Active/idle pool controller with pluggable monitoring strategies.

The scaler keeps an ``active_size`` ceiling (grown/shrunk one step at a time
from a monitor signal) and gates task starts so at most ``active_size``
workers run concurrently.  Workers denied a start are parked, and parked
time never enters process-time accounting.
"""

from __future__ import annotations

import csv
import threading
from dataclasses import dataclass, field
from typing import Optional

from ._util import AtomicCounter, InFlightLedger
from .backends import make_broker
from .broker import GLOBAL_QUEUE, RESULTS_QUEUE, Broker, QueueHandle
from .dynamic import (
    RetryState,
    TerminationConfig,
    WorkerContext,
    _route_to_global,
    check_termination,
    drain_results,
    execute_task,
    seed_source_tasks,
)
from .errors import GraphInvalidError, StatefulGraphError
from .graph import WorkflowGraph, validate_graph
from .metrics import RunMetrics, SpanRecorder, finalize, monotonic
from .results import SinkOutputs

QUEUE_SIZE = "queue_size"
IDLE_TIME = "idle_time"


@dataclass(frozen=True)
class AutoScalerConfig:
    max_pool_size: int
    strategy: str = QUEUE_SIZE
    min_sample_interval: float = 0.1
    idle_threshold: float = 0.2  # seconds; idle_time strategy
    min_queue_floor: int = 1  # queue_size strategy

    def __post_init__(self):
        if self.max_pool_size < 1:
            raise ValueError("max_pool_size must be at least 1")
        if self.strategy not in (QUEUE_SIZE, IDLE_TIME):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class ScaleAction:
    kind: str  # grow | shrink
    amount: int = 1


class ScalerState:
    """Shared, internally synchronized scaler state.

    ``try_start``/``done`` may be called concurrently from all workers;
    ``auto_scale`` belongs to the coordinating loop alone.
    """

    def __init__(self, cfg: AutoScalerConfig):
        self.cfg = cfg
        self.active_size = max(1, cfg.max_pool_size // 2)
        self.active_count = 0
        self.prev_sample: float = 0.0
        self._cond = threading.Condition()


def new_scaler(cfg: AutoScalerConfig) -> ScalerState:
    return ScalerState(cfg)


def shrink(state: ScalerState, k: int) -> None:
    if k < 0:
        raise ValueError("k must be non-negative")
    with state._cond:
        state.active_size = max(1, state.active_size - k)


def grow(state: ScalerState, k: int) -> None:
    if k < 0:
        raise ValueError("k must be non-negative")
    with state._cond:
        state.active_size = min(state.cfg.max_pool_size, state.active_size + k)
        state._cond.notify_all()


def auto_scale(state: ScalerState, sample: float) -> ScaleAction:
    """One scaling step from a monitor sample; always magnitude 1.

    queue_size: grow iff the queue grew since the previous sample and sits
    at or above the floor; ties shrink.  idle_time: shrink iff the average
    idle exceeds the reactivation threshold.
    """
    cfg = state.cfg
    if cfg.strategy == QUEUE_SIZE:
        grew = sample > state.prev_sample and sample >= cfg.min_queue_floor
        state.prev_sample = sample
        action = ScaleAction("grow") if grew else ScaleAction("shrink")
    else:
        state.prev_sample = sample
        action = ScaleAction("shrink") if sample > cfg.idle_threshold else ScaleAction("grow")
    (grow if action.kind == "grow" else shrink)(state, action.amount)
    return action


def try_start(state: ScalerState) -> bool:
    """Grant a task start iff it keeps active_count within active_size."""
    with state._cond:
        if state.active_count >= state.active_size:
            return False
        state.active_count += 1
        return True


def wait_start(state: ScalerState, timeout: float) -> bool:
    """Blocking variant of try_start; parks (no busy polling) up to timeout."""
    deadline = monotonic() + timeout
    with state._cond:
        while state.active_count >= state.active_size:
            remaining = deadline - monotonic()
            if remaining <= 0:
                return False
            state._cond.wait(remaining)
        state.active_count += 1
        return True


def done(state: ScalerState) -> None:
    with state._cond:
        state.active_count = max(0, state.active_count - 1)
        state._cond.notify_all()


class QueueSizeMonitor:
    def __init__(self, broker: Broker, q: QueueHandle):
        self.broker = broker
        self.q = q

    def sample(self) -> float:
        return float(self.broker.queue_len(self.q))


class IdleTimeMonitor:
    """Average consumer idle time (seconds) from broker telemetry."""

    def __init__(self, broker: Broker, q: QueueHandle):
        self.broker = broker
        self.q = q

    def sample(self) -> float:
        stats = self.broker.consumer_stats(self.q)
        if not stats:
            return 0.0
        return sum(s.idle_ms for s in stats) / len(stats) / 1000.0


@dataclass(frozen=True)
class TracePoint:
    t_ms: float
    sample_value: float
    active_size: int
    active_count: int
    action: str  # grow | shrink (not part of the CSV schema)


@dataclass
class ScalerTrace:
    points: list[TracePoint] = field(default_factory=list)

    def add(self, point: TracePoint) -> None:
        self.points.append(point)

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_ms", "sample_value", "active_size", "active_count"])
            for p in self.points:
                writer.writerow([f"{p.t_ms:.3f}", f"{p.sample_value:.4f}", p.active_size, p.active_count])


def scaled_process_loop(
    graph: WorkflowGraph,
    scaler: ScalerState,
    broker_backend="memory",
    inputs: dict[str, list[dict]] | None = None,
    seed: int = 0,
    term_cfg: Optional[TerminationConfig] = None,
    monitor=None,
    workload: str = "",
    mapping_name: str = "dyn_auto",
) -> tuple[SinkOutputs, RunMetrics, ScalerTrace]:
    """Auto-scaled dynamic enactment: the coordinator repeatedly samples the
    monitor, rescales, and launches gated one-task workers, each with its own
    graph reference.  Termination reuses the dynamic retry decision."""
    report = validate_graph(graph)
    if not report.ok:
        raise GraphInvalidError(report)
    stateful = [pe.id for pe in graph.pes if pe.stateful]
    if stateful:
        raise StatefulGraphError(f"auto-scaled dynamic scheduling is stateless-only; got {stateful}")
    inputs = inputs or {}
    term = term_cfg or TerminationConfig()
    broker, owned = make_broker(broker_backend)
    trace = ScalerTrace()
    try:
        global_q = broker.queue(GLOBAL_QUEUE)
        results_q = broker.queue(RESULTS_QUEUE)
        if monitor is None:
            monitor = (
                QueueSizeMonitor(broker, global_q)
                if scaler.cfg.strategy == QUEUE_SIZE
                else IdleTimeMonitor(broker, global_q)
            )
        ledger = InFlightLedger()
        executed = AtomicCounter()
        failed = AtomicCounter()
        recorder = SpanRecorder()

        ledger.task_created(seed_source_tasks(graph, inputs, broker, global_q))
        started = monotonic()

        ctx = WorkerContext(
            worker_id="scaled", graph=graph, broker=broker, global_q=global_q,
            results_q=results_q, term=term, n_workers=scaler.cfg.max_pool_size,
            ledger=ledger, executed=executed, failed=failed, seed=seed,
        )
        route = _route_to_global(ctx)

        def one_shot(slot: str) -> None:
            start = monotonic()
            try:
                env = broker.dequeue(global_q, term.empty_wait, consumer=slot)
                if env is None:
                    return
                if env.kind == "poison_pill":
                    broker.ack(global_q, env)
                    return
                try:
                    execute_task(graph, env, route)
                    executed.inc()
                except Exception:
                    failed.inc()
                finally:
                    broker.ack(global_q, env)
                    ledger.task_completed()
            finally:
                done(scaler)
                recorder.record_span(slot, start, monotonic())

        retry = RetryState(term.max_retries)
        last_sample = float("-inf")
        threads: list[threading.Thread] = []
        while True:
            now = monotonic()
            if now - last_sample >= scaler.cfg.min_sample_interval:
                value = monitor.sample()
                action = auto_scale(scaler, value)
                trace.add(TracePoint(
                    (now - started) * 1000.0, value, scaler.active_size, scaler.active_count, action.kind,
                ))
                last_sample = now
            if broker.queue_len(global_q) == 0:
                if not ledger.quiescent():
                    # Launched workers still hold tasks; quiescence undecided.
                    _sleep(min(term.empty_wait, 0.01))
                    continue
                if check_termination(True, retry) == "terminate":
                    break
                _sleep(term.empty_wait)
                continue
            check_termination(False, retry)
            if wait_start(scaler, timeout=0.05):
                slot = f"w{scaler.active_count - 1}"
                t = threading.Thread(target=one_shot, args=(slot,), name=f"scaled-{slot}")
                threads.append(t)
                t.start()
            if len(threads) > 64:
                threads = [t for t in threads if t.is_alive()]
        for t in threads:
            t.join()
        ended = monotonic()

        outputs = drain_results(broker, results_q, graph)
        run = finalize(
            mapping_name, scaler.cfg.max_pool_size, workload, seed, started, ended, recorder,
            tasks_enqueued=ledger.created, tasks_executed=executed.value, tasks_failed=failed.value,
            extras={"strategy": scaler.cfg.strategy, "trace_points": len(trace.points)},
        )
        return outputs, run, trace
    finally:
        if owned:
            broker.close()


def _sleep(seconds: float) -> None:
    threading.Event().wait(seconds)
