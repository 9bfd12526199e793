"""Shared fixtures: tiny graphs, fast termination configs, and a stream
broker served by the in-process test server."""

from __future__ import annotations

import pytest

from streamwork.dynamic import TerminationConfig
from streamwork.graph import Behavior, Connection, GroupingSpec, PESpec, WorkflowGraph
from streamwork.mini_broker import MiniStreamServer
from streamwork.stream_broker import StreamBroker


@pytest.fixture(scope="session")
def stream_server():
    with MiniStreamServer() as url:
        yield url


@pytest.fixture
def stream_broker(stream_server):
    broker = StreamBroker(stream_server)
    yield broker
    broker.close()


@pytest.fixture
def fast_term() -> TerminationConfig:
    return TerminationConfig(empty_wait=0.01, max_retries=3)


def passthrough_source(fields, state):
    return [("out", dict(fields))]


def emit_sink(fields, state):
    return [(None, dict(fields))]


@pytest.fixture
def linear_graph() -> WorkflowGraph:
    """source -> doubler -> sink, all stateless."""

    def doubler(fields, state):
        return [("out", {**fields, "v": fields["v"] * 2})]

    return WorkflowGraph(
        pes=[
            PESpec("gen", "source", Behavior(passthrough_source), output_ports=("out",)),
            PESpec("dbl", "transform", Behavior(doubler), ("in",), ("out",)),
            PESpec("out", "sink", Behavior(emit_sink), ("in",)),
        ],
        connections=[
            Connection("gen", "out", "dbl", "in"),
            Connection("dbl", "out", "out", "in"),
        ],
    )


@pytest.fixture
def linear_inputs() -> dict[str, list[dict]]:
    return {"gen": [{"v": i} for i in range(25)]}


def make_keyed_graph(instances: int = 3) -> WorkflowGraph:
    """source -> keyed stateful summer -> global stateful top sink."""

    def summer(fields, state):
        totals = state.setdefault("totals", {})
        totals[fields["k"]] = totals.get(fields["k"], 0) + fields["v"]
        return []

    def summer_flush(state):
        return [("out", {"k": k, "total": t})
                for k, t in sorted(state.get("totals", {}).items())]

    def top(fields, state):
        state.setdefault("rows", []).append(fields)
        return []

    def top_flush(state):
        rows = sorted(state.get("rows", []), key=lambda r: (-r["total"], r["k"]))
        return [(None, r) for r in rows]

    return WorkflowGraph(
        pes=[
            PESpec("gen", "source", Behavior(passthrough_source), output_ports=("out",)),
            PESpec("sum", "transform", Behavior(summer, summer_flush), ("in",), ("out",),
                   stateful=True, instance_count=instances),
            PESpec("top", "sink", Behavior(top, top_flush), ("in",),
                   stateful=True, instance_count=1),
        ],
        connections=[
            Connection("gen", "out", "sum", "in", GroupingSpec.group_by("k")),
            Connection("sum", "out", "top", "in", GroupingSpec.globally()),
        ],
    )


@pytest.fixture
def keyed_graph() -> WorkflowGraph:
    return make_keyed_graph()


@pytest.fixture
def keyed_inputs() -> dict[str, list[dict]]:
    return {"gen": [{"k": f"k{i % 7}", "v": i} for i in range(42)]}
