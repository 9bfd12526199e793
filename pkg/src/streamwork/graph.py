"""Workflow graph model: processing elements, ports, connections and groupings.

The graph is the shared vocabulary of every enactment strategy.  A graph is
an immutable DAG of PE (processing element) specs; each connection carries a
grouping rule that decides which downstream instance receives a record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

Scalar = Union[str, int, float]
FieldValue = Union[Scalar, list]
Fields = dict

# An emission is (output port, record fields).  Sink behaviors use port None.
Emission = tuple[Optional[str], Fields]


class RoutingError(Exception):
    """Raised when a record cannot be routed (missing or non-scalar key)."""


@dataclass(frozen=True)
class GroupingSpec:
    """Routing rule on a connection.

    mode is one of ``shuffle`` (per-producer round robin), ``group_by``
    (key-hash partitioning on ``key_field``) or ``global`` (everything to
    instance 0).  ``all_to_one`` is accepted as an alias of ``global`` by the
    graph-file loader.
    """

    mode: str
    key_field: Optional[str] = None

    def __post_init__(self):
        if self.mode not in ("shuffle", "group_by", "global"):
            raise ValueError(f"unknown grouping mode: {self.mode!r}")
        if self.mode == "group_by" and not self.key_field:
            raise ValueError("group_by requires a non-empty key_field")

    @staticmethod
    def shuffle() -> "GroupingSpec":
        return GroupingSpec("shuffle")

    @staticmethod
    def group_by(key_field: str) -> "GroupingSpec":
        return GroupingSpec("group_by", key_field)

    @staticmethod
    def globally() -> "GroupingSpec":
        return GroupingSpec("global")


@dataclass(frozen=True)
class Behavior:
    """Record-processing function bound to a PE.

    ``process(fields, state)`` returns a list of emissions.  ``state`` is a
    mutable dict for stateful PEs and None for stateless ones.  ``flush``
    (stateful only) is called once, after the instance has seen its whole
    input, and may emit final aggregates.
    """

    process: Callable[[Fields, Optional[dict]], list[Emission]]
    flush: Optional[Callable[[dict], list[Emission]]] = None


@dataclass(frozen=True)
class PESpec:
    id: str
    kind: str  # source | transform | sink
    behavior: Behavior
    input_ports: tuple[str, ...] = ()
    output_ports: tuple[str, ...] = ()
    stateful: bool = False
    instance_count: int = 1

    def __post_init__(self):
        if self.kind not in ("source", "transform", "sink"):
            raise ValueError(f"unknown PE kind: {self.kind!r}")


@dataclass(frozen=True)
class Connection:
    from_pe: str
    from_port: str
    to_pe: str
    to_port: str
    grouping: GroupingSpec = field(default_factory=GroupingSpec.shuffle)


@dataclass(frozen=True)
class DataRecord:
    """A streamed data unit: field map plus (producing pe, sequence) provenance."""

    fields: Fields
    provenance: tuple[str, int] = ("", 0)


class WorkflowGraph:
    """Immutable DAG of PE specs and connections.

    Construction tolerates invalid graphs; use :func:`validate_graph` to get
    a violation report.  Lookup helpers assume ids are unique.
    """

    def __init__(self, pes: Iterable[PESpec], connections: Iterable[Connection]):
        self.pes: tuple[PESpec, ...] = tuple(pes)
        self.connections: tuple[Connection, ...] = tuple(connections)
        self._by_id = {pe.id: pe for pe in self.pes}
        self._out: dict[str, list[Connection]] = {pe.id: [] for pe in self.pes}
        self._in: dict[str, list[Connection]] = {pe.id: [] for pe in self.pes}
        for c in self.connections:
            if c.from_pe in self._out:
                self._out[c.from_pe].append(c)
            if c.to_pe in self._in:
                self._in[c.to_pe].append(c)

    def pe(self, pe_id: str) -> PESpec:
        return self._by_id[pe_id]

    def has_pe(self, pe_id: str) -> bool:
        return pe_id in self._by_id

    def outgoing(self, pe_id: str) -> list[Connection]:
        return self._out.get(pe_id, [])

    def incoming(self, pe_id: str) -> list[Connection]:
        return self._in.get(pe_id, [])

    def sources(self) -> list[PESpec]:
        return [pe for pe in self.pes if pe.kind == "source"]

    def sinks(self) -> list[PESpec]:
        return [pe for pe in self.pes if pe.kind == "sink"]

    def topological_order(self) -> list[str]:
        """Kahn topological sort.  Raises ValueError if the graph has a cycle."""
        order, cycle = _topo_sort(self)
        if cycle is not None:
            raise ValueError(f"graph contains a cycle: {cycle}")
        return order


def _topo_sort(graph: WorkflowGraph) -> tuple[list[str], Optional[list[str]]]:
    """Returns (order, cycle).  cycle is None when the graph is acyclic,
    otherwise one offending cycle as a list of pe ids."""
    indeg = {pe.id: 0 for pe in graph.pes}
    for c in graph.connections:
        if c.to_pe in indeg and c.from_pe in indeg:
            indeg[c.to_pe] += 1
    ready = [pid for pid, d in sorted(indeg.items()) if d == 0]
    order: list[str] = []
    while ready:
        pid = ready.pop(0)
        order.append(pid)
        for c in graph.outgoing(pid):
            if c.to_pe not in indeg:
                continue
            indeg[c.to_pe] -= 1
            if indeg[c.to_pe] == 0:
                ready.append(c.to_pe)
    # Compare against the id map, not the pe list, so duplicate ids (reported
    # separately by validation) don't masquerade as cycles.
    if len(order) == len(indeg):
        return order, None
    remaining = {pid for pid, d in indeg.items() if pid not in order}
    start = sorted(remaining)[0]
    path, seen = [start], {start}
    while True:
        nxt = next(c.to_pe for c in graph.outgoing(path[-1]) if c.to_pe in remaining)
        if nxt in seen:
            return order, path[path.index(nxt):]
        path.append(nxt)
        seen.add(nxt)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    cycle: Optional[list[str]] = None

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_graph(graph: WorkflowGraph) -> ValidationReport:
    """Check every structural invariant; violations are reported, not raised."""
    report = ValidationReport()
    add = lambda kind, detail: report.violations.append(Violation(kind, detail))

    seen_ids = set()
    for pe in graph.pes:
        if pe.id in seen_ids:
            add("duplicate-id", f"PE id {pe.id!r} declared more than once")
        seen_ids.add(pe.id)
        if pe.kind == "source" and pe.input_ports:
            add("source-has-inputs", f"source PE {pe.id!r} declares input ports")
        if pe.kind == "sink" and pe.output_ports:
            add("sink-has-outputs", f"sink PE {pe.id!r} declares output ports")
        if pe.instance_count < 1:
            add("bad-instance-count", f"PE {pe.id!r} requests {pe.instance_count} instances")

    for c in graph.connections:
        if c.from_pe == c.to_pe:
            add("self-loop", f"connection {c.from_pe!r} -> itself")
        for pid, port, ports_attr, side in (
            (c.from_pe, c.from_port, "output_ports", "output"),
            (c.to_pe, c.to_port, "input_ports", "input"),
        ):
            if not graph.has_pe(pid):
                add("missing-pe", f"connection references unknown PE {pid!r}")
            elif port not in getattr(graph.pe(pid), ports_attr):
                add("dangling-port", f"PE {pid!r} has no {side} port {port!r}")

    order, cycle = _topo_sort(graph)
    if cycle is not None:
        report.cycle = cycle
        add("cycle", f"cycle detected: {' -> '.join(cycle)}")

    # Reachability and input coverage only make sense on an acyclic graph.
    if cycle is None:
        reachable = set()
        frontier = [pe.id for pe in graph.sources()]
        while frontier:
            pid = frontier.pop()
            if pid in reachable:
                continue
            reachable.add(pid)
            frontier.extend(c.to_pe for c in graph.outgoing(pid) if graph.has_pe(c.to_pe))
        for pe in graph.pes:
            if pe.kind != "source" and pe.id not in reachable:
                add("unreachable", f"PE {pe.id!r} is not reachable from any source")
        for pe in graph.pes:
            covered = {c.to_port for c in graph.incoming(pe.id)}
            for port in pe.input_ports:
                if port not in covered:
                    add("uncovered-input", f"input port {pe.id!r}.{port!r} has no incoming connection")
    return report


FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash, used for deterministic group_by partitioning."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_key(value: FieldValue) -> str:
    """Canonical string form of a group key: ints base-10, floats shortest
    round-trip repr, strings as-is.  Non-scalar keys are rejected."""
    if isinstance(value, bool):
        raise RoutingError(f"boolean group key not supported: {value!r}")
    if isinstance(value, str):
        return value
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value) or math.isinf(value):
            raise RoutingError(f"non-finite group key: {value!r}")
        return repr(value)
    raise RoutingError(f"group key must be a scalar, got {type(value).__name__}")


class RoundRobin:
    """Per-producer shuffle counter; worker-local, not shared across threads."""

    __slots__ = ("_next",)

    def __init__(self):
        self._next = 0

    def take(self) -> int:
        n = self._next
        self._next += 1
        return n


def route_key(
    grouping: GroupingSpec,
    record: Fields,
    instance_count: int,
    shuffle_counter: Optional[RoundRobin] = None,
) -> int:
    """Pick the target instance index in [0, instance_count) for a record.

    group_by hashes the canonical UTF-8 key with FNV-1a 64; global pins
    instance 0; shuffle walks the caller-supplied round-robin counter.
    """
    if instance_count < 1:
        raise ValueError("instance_count must be positive")
    if grouping.mode == "global":
        return 0
    if grouping.mode == "group_by":
        if grouping.key_field not in record:
            raise RoutingError(f"record is missing group_by key field {grouping.key_field!r}")
        key = canonical_key(record[grouping.key_field])
        return fnv1a64(key.encode("utf-8")) % instance_count
    if shuffle_counter is None:
        shuffle_counter = RoundRobin()
    return shuffle_counter.take() % instance_count


def partition_pes(graph: WorkflowGraph) -> tuple[list[tuple[str, int]], list[str]]:
    """Split PEs into (stateful with instance counts, stateless ids)."""
    stateful = [(pe.id, pe.instance_count) for pe in graph.pes if pe.stateful]
    stateless = [pe.id for pe in graph.pes if not pe.stateful]
    return stateful, stateless
