"""Stream-broker backend: queues as streams, one consumer group per run.

Mapping onto the wire protocol: enqueue is append-to-stream, dequeue is a
consumer-group read, acks happen after task completion, and stranded
deliveries of dead consumers are reclaimed by peers.  Telemetry (pending
counts, per-consumer idle) comes from the group introspection commands.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from typing import Optional

from .broker import (
    Broker,
    BrokerUnreachableError,
    ConsumerStats,
    QueueHandle,
    TaskEnvelope,
)
from .resp import RespConnection, ServerError, pairs_to_dict, parse_broker_url

BROKER_URL_ENV = "BROKER_URL"

# Unacked deliveries older than this are considered abandoned and may be
# reclaimed by any peer.
RECLAIM_MIN_IDLE_MS = 5000


def broker_url_from_env() -> Optional[str]:
    return os.environ.get(BROKER_URL_ENV)


class StreamBroker(Broker):
    """Client for a stream broker reachable at ``url`` (default: $BROKER_URL).

    Stream keys are namespaced per broker instance so concurrent runs against
    one server do not interfere.  Connections are kept per thread; all public
    methods are safe to call from many workers.
    """

    backend = "stream_broker"

    def __init__(self, url: Optional[str] = None, connect_timeout: float = 5.0):
        url = url or broker_url_from_env()
        if not url:
            raise BrokerUnreachableError(f"no broker url given and {BROKER_URL_ENV} is unset")
        self.host, self.port = parse_broker_url(url)
        self.connect_timeout = connect_timeout
        self.namespace = f"sw:{uuid.uuid4().hex[:12]}"
        self.group = "workers"
        self._local = threading.local()
        self._lock = threading.Lock()
        self._known_queues: set[str] = set()
        self._default_consumer_seq = 0
        # Fail fast if the broker is unreachable.
        self._call("PING")

    # -- connection plumbing ---------------------------------------------

    def _conn(self) -> RespConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            try:
                conn = RespConnection(self.host, self.port, self.connect_timeout)
            except ConnectionError as exc:
                raise BrokerUnreachableError(str(exc)) from exc
            self._local.conn = conn
        return conn

    def _call(self, *args, timeout: float = 10.0):
        try:
            return self._conn().execute(*args, timeout=timeout)
        except ConnectionError as exc:
            self._local.conn = None
            raise BrokerUnreachableError(str(exc)) from exc

    def _key(self, name: str) -> str:
        return f"{self.namespace}:{name}"

    def _ensure_group(self, name: str) -> None:
        with self._lock:
            if name in self._known_queues:
                return
        try:
            self._call("XGROUP", "CREATE", self._key(name), self.group, "0", "MKSTREAM")
        except ServerError as exc:
            if "BUSYGROUP" not in str(exc):
                raise
        with self._lock:
            self._known_queues.add(name)

    # -- Broker interface -------------------------------------------------

    def queue(self, name: str) -> QueueHandle:
        self._ensure_group(name)
        return QueueHandle(name, self.backend)

    def enqueue(self, q: QueueHandle, envelope: TaskEnvelope) -> None:
        self._ensure_group(q.name)
        self._call("XADD", self._key(q.name), "*", "d", envelope.to_wire())

    def dequeue(self, q: QueueHandle, timeout: float, consumer: Optional[str] = None) -> Optional[TaskEnvelope]:
        self._ensure_group(q.name)
        if consumer is None:
            with self._lock:
                self._default_consumer_seq += 1
                consumer = f"anon-{self._default_consumer_seq}"
        block_ms = max(1, int(timeout * 1000))
        reply = self._call(
            "XREADGROUP", "GROUP", self.group, consumer, "COUNT", 1,
            "BLOCK", block_ms, "STREAMS", self._key(q.name), ">",
            timeout=timeout + 10.0,
        )
        if reply is None:
            return self._try_reclaim(q, consumer)
        # reply: [[stream, [[id, [field, value, ...]], ...]]]
        entry_id, fields = reply[0][1][0]
        return self._decode(entry_id, fields)

    def _try_reclaim(self, q: QueueHandle, consumer: str) -> Optional[TaskEnvelope]:
        reply = self._call(
            "XAUTOCLAIM", self._key(q.name), self.group, consumer,
            RECLAIM_MIN_IDLE_MS, "0-0", "COUNT", 1,
        )
        entries = reply[1]
        if not entries:
            return None
        entry_id, fields = entries[0]
        return self._decode(entry_id, fields)

    @staticmethod
    def _decode(entry_id, fields) -> TaskEnvelope:
        flat = {fields[i]: fields[i + 1] for i in range(0, len(fields), 2)}
        env = TaskEnvelope.from_wire(flat[b"d"].decode("utf-8"))
        env.delivery_tag = entry_id.decode() if isinstance(entry_id, bytes) else entry_id
        return env

    def ack(self, q: QueueHandle, envelope: TaskEnvelope) -> None:
        if envelope.delivery_tag is None:
            return
        self._call("XACK", self._key(q.name), self.group, envelope.delivery_tag)

    def queue_len(self, q: QueueHandle) -> int:
        # Stream length minus acknowledged deliveries: undelivered lag plus
        # the pending (delivered, unacked) entries.
        self._ensure_group(q.name)
        groups = self._call("XINFO", "GROUPS", self._key(q.name))
        for flat in groups:
            info = pairs_to_dict(flat)
            if info[b"name"] == self.group.encode():
                return int(info[b"lag"]) + int(info[b"pending"])
        return 0

    def register_consumer(self, q: QueueHandle, consumer: str) -> None:
        self._ensure_group(q.name)
        self._call("XGROUP", "CREATECONSUMER", self._key(q.name), self.group, consumer)

    def consumer_stats(self, q: QueueHandle) -> list[ConsumerStats]:
        self._ensure_group(q.name)
        reply = self._call("XINFO", "CONSUMERS", self._key(q.name), self.group)
        stats = []
        for flat in reply:
            info = pairs_to_dict(flat)
            stats.append(
                ConsumerStats(
                    consumer_id=info[b"name"].decode(),
                    idle_ms=float(info[b"idle"]),
                    pending=int(info[b"pending"]),
                )
            )
        return stats

    def close(self) -> None:
        with self._lock:
            queues = list(self._known_queues)
        if queues:
            try:
                self._call("DEL", *[self._key(name) for name in queues])
            except BrokerUnreachableError:
                pass
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None


def json_roundtrip_safe(fields: dict) -> bool:
    """True when a record survives the wire encoding unchanged."""
    try:
        return json.loads(json.dumps(fields)) == fields
    except (TypeError, ValueError):
        return False
