"""Declarative graph-definition files.

A definition file is a YAML document that names PEs, their behaviors (drawn
from the built-in registry below), ports, connections, and groupings, and may
bundle source input records.  Schema::

    name: my_graph              # optional
    pes:
      - id: gen                 # required, unique
        kind: source            # source | transform | sink
        behavior: emit          # registry name
        params: {}              # optional, behavior-specific
        inputs: [in]            # input port names (non-source)
        outputs: [out]          # output port names (non-sink)
        stateful: false         # optional
        instances: 1            # optional
    connections:
      - from: gen.out           # pe.port
        to: agg.in
        grouping: group_by      # shuffle (default) | group_by | global | all_to_one
        key: state              # required for group_by
    inputs:                     # optional: records fed to source PEs
      gen:
        - {state: a, score: 1}

``all_to_one`` is accepted as an alias of ``global``.  User-defined behaviors
via dynamic code loading are deliberately unsupported; the registry is the
whole vocabulary.
"""

from __future__ import annotations

from typing import Callable

import yaml

from .graph import Behavior, Connection, GroupingSpec, PESpec, WorkflowGraph


class GraphFileError(Exception):
    """A definition file is malformed or references unknown names."""


# ---------------------------------------------------------------------------
# Built-in behavior registry: name -> factory(params) -> Behavior


def _emit(params: dict) -> Behavior:
    return Behavior(lambda fields, state: [("out", dict(fields))])


def _identity(params: dict) -> Behavior:
    return Behavior(lambda fields, state: [("out", dict(fields))])


def _collect(params: dict) -> Behavior:
    return Behavior(lambda fields, state: [(None, dict(fields))])


def _scale_field(params: dict) -> Behavior:
    name, factor = params["field"], params.get("factor", 2)

    def process(fields, state):
        return [("out", {**fields, name: fields[name] * factor})]

    return Behavior(process)


def _sum_by_key(params: dict) -> Behavior:
    key, value = params["key"], params["value"]

    def process(fields, state):
        totals = state.setdefault("totals", {})
        totals[fields[key]] = totals.get(fields[key], 0) + fields[value]
        return []

    def flush(state):
        return [("out", {key: k, "total": t})
                for k, t in sorted(state.get("totals", {}).items())]

    return Behavior(process, flush)


def _top_n(params: dict) -> Behavior:
    n = params.get("n", 3)
    key, value = params["key"], params["value"]

    def process(fields, state):
        state.setdefault("rows", []).append((fields[key], fields[value]))
        return []

    def flush(state):
        ranked = sorted(state.get("rows", []), key=lambda r: (-r[1], r[0]))
        return [(None, {"rank": i + 1, key: k, value: v})
                for i, (k, v) in enumerate(ranked[:n])]

    return Behavior(process, flush)


BEHAVIOR_REGISTRY: dict[str, Callable[[dict], Behavior]] = {
    "emit": _emit,
    "identity": _identity,
    "collect": _collect,
    "scale_field": _scale_field,
    "sum_by_key": _sum_by_key,
    "top_n": _top_n,
}

_GROUPING_ALIASES = {"all_to_one": "global"}


def _parse_endpoint(value, side: str) -> tuple[str, str]:
    if not isinstance(value, str) or value.count(".") != 1:
        raise GraphFileError(f"connection {side!r} must look like 'pe.port', got {value!r}")
    pe, port = value.split(".")
    return pe, port


def _parse_grouping(conn: dict) -> GroupingSpec:
    mode = _GROUPING_ALIASES.get(conn.get("grouping", "shuffle"), conn.get("grouping", "shuffle"))
    mode = _GROUPING_ALIASES.get(mode, mode)
    if mode == "group_by":
        key = conn.get("key")
        if not key:
            raise GraphFileError("group_by connection requires a 'key'")
        return GroupingSpec.group_by(key)
    try:
        return GroupingSpec(mode)
    except ValueError as exc:
        raise GraphFileError(str(exc)) from exc


def parse_graph_document(doc: dict) -> tuple[WorkflowGraph, dict[str, list[dict]]]:
    """Build (graph, bundled source inputs) from a parsed definition document."""
    if not isinstance(doc, dict) or "pes" not in doc:
        raise GraphFileError("definition document must be a mapping with a 'pes' list")
    pes = []
    for entry in doc["pes"]:
        for required in ("id", "kind", "behavior"):
            if required not in entry:
                raise GraphFileError(f"PE entry missing {required!r}: {entry!r}")
        factory = BEHAVIOR_REGISTRY.get(entry["behavior"])
        if factory is None:
            raise GraphFileError(
                f"unknown behavior {entry['behavior']!r}; available: "
                f"{sorted(BEHAVIOR_REGISTRY)}"
            )
        try:
            behavior = factory(entry.get("params", {}))
            pes.append(PESpec(
                id=entry["id"],
                kind=entry["kind"],
                behavior=behavior,
                input_ports=tuple(entry.get("inputs", ())),
                output_ports=tuple(entry.get("outputs", ())),
                stateful=bool(entry.get("stateful", False)),
                instance_count=int(entry.get("instances", 1)),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise GraphFileError(f"bad PE entry {entry.get('id')!r}: {exc}") from exc

    connections = []
    for conn in doc.get("connections", []):
        from_pe, from_port = _parse_endpoint(conn.get("from"), "from")
        to_pe, to_port = _parse_endpoint(conn.get("to"), "to")
        connections.append(Connection(from_pe, from_port, to_pe, to_port, _parse_grouping(conn)))

    inputs = doc.get("inputs", {})
    if not isinstance(inputs, dict):
        raise GraphFileError("'inputs' must map source PE ids to record lists")
    return WorkflowGraph(pes, connections), {pe: list(recs) for pe, recs in inputs.items()}


def load_graph_file(path: str) -> tuple[WorkflowGraph, dict[str, list[dict]]]:
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise GraphFileError(f"cannot parse {path}: {exc}") from exc
    return parse_graph_document(doc)
