"""Queue transport abstraction: task envelopes, handles and the in-memory backend.

Two interchangeable backends exist: :class:`MemoryBroker` (this module) built
on condition-variable deques, and :class:`streamwork.stream_broker.StreamBroker`
speaking the stream-broker wire protocol.  Both deliver each envelope exactly
once within a run and expose per-consumer idle telemetry.
"""

from __future__ import annotations

import itertools
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from .graph import DataRecord

GLOBAL_QUEUE = "global"
RESULTS_QUEUE = "results"


def private_queue_name(pe_id: str, instance: int) -> str:
    return f"private:{pe_id}:{instance}"


class BrokerError(Exception):
    pass


class QueueClosedError(BrokerError):
    pass


class BrokerUnreachableError(BrokerError):
    pass


_envelope_seq = itertools.count()


@dataclass
class TaskEnvelope:
    """Unit of scheduled work, or a poison pill.

    ``delivery_tag`` is backend-private bookkeeping set on delivery and used
    by :meth:`Broker.ack`.
    """

    kind: str  # work | poison_pill
    pe_id: Optional[str] = None
    target_instance: Optional[int] = None
    payload: Optional[DataRecord] = None
    enqueue_time: float = 0.0
    envelope_id: str = field(default_factory=lambda: f"env-{next(_envelope_seq)}")
    delivery_tag: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("work", "poison_pill"):
            raise ValueError(f"unknown envelope kind: {self.kind!r}")
        if self.kind == "poison_pill" and self.payload is not None:
            raise ValueError("poison pills carry no payload")

    @staticmethod
    def work(pe_id: str, payload: DataRecord, target_instance: Optional[int] = None) -> "TaskEnvelope":
        return TaskEnvelope("work", pe_id=pe_id, payload=payload, target_instance=target_instance)

    @staticmethod
    def pill() -> "TaskEnvelope":
        return TaskEnvelope("poison_pill")

    def to_wire(self) -> str:
        doc = {"kind": self.kind, "id": self.envelope_id}
        if self.kind == "work":
            doc["pe_id"] = self.pe_id
            if self.target_instance is not None:
                doc["target_instance"] = self.target_instance
            doc["fields"] = self.payload.fields
            doc["provenance"] = list(self.payload.provenance)
        return json.dumps(doc)

    @staticmethod
    def from_wire(text: str) -> "TaskEnvelope":
        doc = json.loads(text)
        if doc["kind"] == "poison_pill":
            return TaskEnvelope("poison_pill", envelope_id=doc["id"])
        return TaskEnvelope(
            "work",
            pe_id=doc["pe_id"],
            target_instance=doc.get("target_instance"),
            payload=DataRecord(doc["fields"], tuple(doc.get("provenance", ("", 0)))),
            envelope_id=doc["id"],
        )


@dataclass(frozen=True)
class QueueHandle:
    name: str
    backend: str  # memory | stream_broker


@dataclass(frozen=True)
class ConsumerStats:
    consumer_id: str
    idle_ms: float
    pending: int


class Broker:
    """Abstract multi-producer / multi-consumer queue transport."""

    backend = "abstract"

    def queue(self, name: str) -> QueueHandle:
        raise NotImplementedError

    def enqueue(self, q: QueueHandle, envelope: TaskEnvelope) -> None:
        raise NotImplementedError

    def dequeue(self, q: QueueHandle, timeout: float, consumer: Optional[str] = None) -> Optional[TaskEnvelope]:
        raise NotImplementedError

    def ack(self, q: QueueHandle, envelope: TaskEnvelope) -> None:
        raise NotImplementedError

    def queue_len(self, q: QueueHandle) -> int:
        raise NotImplementedError

    def register_consumer(self, q: QueueHandle, consumer: str) -> None:
        raise NotImplementedError

    def consumer_stats(self, q: QueueHandle) -> list[ConsumerStats]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class _MemQueue:
    __slots__ = ("items", "cond", "consumers", "unacked", "closed")

    def __init__(self):
        self.items: deque[TaskEnvelope] = deque()
        self.cond = threading.Condition()
        # consumer id -> {registered, last_delivery, pending envelope ids}
        self.consumers: dict[str, dict] = {}
        self.unacked: set[str] = set()
        self.closed = False


class MemoryBroker(Broker):
    """In-process queues; safe for concurrent use from many worker threads."""

    backend = "memory"

    def __init__(self):
        self._queues: dict[str, _MemQueue] = {}
        self._lock = threading.Lock()

    def queue(self, name: str) -> QueueHandle:
        with self._lock:
            if name not in self._queues:
                self._queues[name] = _MemQueue()
        return QueueHandle(name, self.backend)

    def _q(self, q: QueueHandle) -> _MemQueue:
        try:
            return self._queues[q.name]
        except KeyError:
            raise BrokerError(f"unknown queue {q.name!r}") from None

    def enqueue(self, q: QueueHandle, envelope: TaskEnvelope) -> None:
        mq = self._q(q)
        with mq.cond:
            if mq.closed:
                raise QueueClosedError(f"queue {q.name!r} is closed")
            envelope.enqueue_time = time.monotonic()
            mq.items.append(envelope)
            mq.cond.notify()

    def dequeue(self, q: QueueHandle, timeout: float, consumer: Optional[str] = None) -> Optional[TaskEnvelope]:
        mq = self._q(q)
        deadline = time.monotonic() + timeout
        with mq.cond:
            while not mq.items:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or mq.closed:
                    return None
                mq.cond.wait(remaining)
            env = mq.items.popleft()
            mq.unacked.add(env.envelope_id)
            if consumer is not None:
                entry = mq.consumers.setdefault(
                    consumer, {"registered": time.monotonic(), "last_delivery": None, "pending": set()}
                )
                entry["last_delivery"] = time.monotonic()
                entry["pending"].add(env.envelope_id)
            env.delivery_tag = f"{consumer or 'anon'}:{env.envelope_id}"
            return env

    def ack(self, q: QueueHandle, envelope: TaskEnvelope) -> None:
        mq = self._q(q)
        if envelope.delivery_tag is None:
            return
        consumer = envelope.delivery_tag.rsplit(":", 1)[0]
        with mq.cond:
            mq.unacked.discard(envelope.envelope_id)
            entry = mq.consumers.get(consumer)
            if entry is not None:
                entry["pending"].discard(envelope.envelope_id)

    def queue_len(self, q: QueueHandle) -> int:
        # Matches the stream backend: undelivered backlog plus envelopes that
        # were delivered but not yet acknowledged.
        mq = self._q(q)
        with mq.cond:
            return len(mq.items) + len(mq.unacked)

    def register_consumer(self, q: QueueHandle, consumer: str) -> None:
        mq = self._q(q)
        with mq.cond:
            mq.consumers.setdefault(
                consumer, {"registered": time.monotonic(), "last_delivery": None, "pending": set()}
            )

    def consumer_stats(self, q: QueueHandle) -> list[ConsumerStats]:
        mq = self._q(q)
        now = time.monotonic()
        stats = []
        with mq.cond:
            for cid, entry in sorted(mq.consumers.items()):
                anchor = entry["last_delivery"] if entry["last_delivery"] is not None else entry["registered"]
                stats.append(ConsumerStats(cid, (now - anchor) * 1000.0, len(entry["pending"])))
        return stats

    def close(self) -> None:
        with self._lock:
            for mq in self._queues.values():
                with mq.cond:
                    mq.closed = True
                    mq.cond.notify_all()
