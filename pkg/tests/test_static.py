"""Sequential oracle and static allocation/enactment."""

from __future__ import annotations

import pytest

from streamwork.errors import EnactmentError, GraphInvalidError, InfeasibleAllocationError
from streamwork.graph import Behavior, Connection, PESpec, WorkflowGraph
from streamwork.results import sink_outputs_equal
from streamwork.static import allocate_static, run_sequential, run_static

from conftest import make_keyed_graph


class TestSequential:
    def test_linear_pipeline_counts_and_values(self, linear_graph, linear_inputs):
        outputs = run_sequential(linear_graph, linear_inputs)
        assert len(outputs["out"]) == len(linear_inputs["gen"])
        assert sorted(r["v"] for r in outputs["out"]) == [2 * i for i in range(25)]

    def test_stateful_aggregation_with_flush_cascade(self, keyed_graph, keyed_inputs):
        outputs = run_sequential(keyed_graph, keyed_inputs)
        # Independent aggregation of the same inputs.
        expected: dict[str, int] = {}
        for record in keyed_inputs["gen"]:
            expected[record["k"]] = expected.get(record["k"], 0) + record["v"]
        got = {r["k"]: r["total"] for r in outputs["top"]}
        assert got == expected
        totals = [r["total"] for r in outputs["top"]]
        assert totals == sorted(totals, reverse=True)

    def test_empty_inputs_give_empty_sinks(self, linear_graph):
        outputs = run_sequential(linear_graph, {})
        assert outputs == {"out": []}

    def test_invalid_graph_rejected(self):
        g = WorkflowGraph([PESpec("s", "source", Behavior(lambda f, s: []), ("in",))], [])
        with pytest.raises(GraphInvalidError):
            run_sequential(g, {})

    def test_failing_behavior_names_pe(self, linear_graph):
        def boom(fields, state):
            raise RuntimeError("boom")

        g = WorkflowGraph(
            pes=[linear_graph.pe("gen"),
                 PESpec("dbl", "transform", Behavior(boom), ("in",), ("out",)),
                 linear_graph.pe("out")],
            connections=linear_graph.connections,
        )
        with pytest.raises(EnactmentError) as exc_info:
            run_sequential(g, {"gen": [{"v": 1}]})
        assert exc_info.value.pe_id == "dbl"


def _pipeline(n_pes: int) -> WorkflowGraph:
    noop = Behavior(lambda fields, state: [("out", dict(fields))])
    sink = Behavior(lambda fields, state: [(None, dict(fields))])
    ids = [f"pe{i}" for i in range(n_pes)]
    pes = [PESpec(ids[0], "source", noop, output_ports=("out",))]
    pes += [PESpec(i, "transform", noop, ("in",), ("out",)) for i in ids[1:-1]]
    pes.append(PESpec(ids[-1], "sink", sink, ("in",)))
    conns = [Connection(a, "out", b, "in") for a, b in zip(ids, ids[1:])]
    return WorkflowGraph(pes, conns)


class TestAllocation:
    def test_four_pe_pipeline_with_twelve_processes(self):
        plan = allocate_static(_pipeline(4), 12)
        assert [len(plan.assignments[f"pe{i}"]) for i in range(4)] == [1, 3, 3, 3]
        assert len(plan.idle_workers) == 2
        assert plan.n_processes == 12

    def test_minimum_is_one_process_per_pe(self):
        plan = allocate_static(_pipeline(9), 9)
        assert all(len(ws) == 1 for ws in plan.assignments.values())
        assert plan.idle_workers == []

    def test_nine_pes_sixteen_processes(self):
        plan = allocate_static(_pipeline(9), 16)
        counts = [len(plan.assignments[f"pe{i}"]) for i in range(9)]
        assert counts == [1] + [1] * 8  # floor(15/8) == 1
        assert len(plan.idle_workers) == 7

    def test_below_minimum_raises_with_requirement(self):
        with pytest.raises(InfeasibleAllocationError) as exc_info:
            allocate_static(_pipeline(9), 8)
        assert "9 processes is the minimum requirement" in str(exc_info.value)

    def test_stateful_capped_at_instance_count(self):
        g = make_keyed_graph(instances=3)  # gen, sum(stateful x3), top(stateful x1)
        plan = allocate_static(g, 16)
        assert len(plan.assignments["gen"]) == 1
        assert len(plan.assignments["sum"]) == 3  # capped below floor(15/2)=7
        assert len(plan.assignments["top"]) == 1

    def test_worker_ids_are_disjoint_and_contiguous(self):
        plan = allocate_static(_pipeline(4), 12)
        used = [w for ws in plan.assignments.values() for w in ws] + plan.idle_workers
        assert sorted(used) == list(range(12))


class TestRunStatic:
    def test_matches_oracle_on_linear_graph(self, linear_graph, linear_inputs):
        expected = run_sequential(linear_graph, linear_inputs)
        for n in (3, 6, 12):
            plan = allocate_static(linear_graph, n)
            outputs, metrics = run_static(linear_graph, plan, linear_inputs)
            assert sink_outputs_equal(expected, outputs), f"n={n}"
            assert metrics.tasks_executed > 0
            assert metrics.runtime > 0

    def test_matches_oracle_on_stateful_graph(self, keyed_graph, keyed_inputs):
        expected = run_sequential(keyed_graph, keyed_inputs)
        plan = allocate_static(keyed_graph, 8)
        outputs, _ = run_static(keyed_graph, plan, keyed_inputs)
        assert sink_outputs_equal(expected, outputs)

    def test_worker_failure_surfaces_with_partial_metrics(self, linear_graph, linear_inputs):
        def boom(fields, state):
            if fields["v"] == 13:
                raise RuntimeError("bad record")
            return [("out", dict(fields))]

        g = WorkflowGraph(
            pes=[linear_graph.pe("gen"),
                 PESpec("dbl", "transform", Behavior(boom), ("in",), ("out",)),
                 linear_graph.pe("out")],
            connections=linear_graph.connections,
        )
        plan = allocate_static(g, 3)
        with pytest.raises(EnactmentError) as exc_info:
            run_static(g, plan, linear_inputs)
        assert exc_info.value.pe_id == "dbl"
        assert exc_info.value.partial_metrics is not None

    def test_process_time_covers_all_workers(self, linear_graph, linear_inputs):
        plan = allocate_static(linear_graph, 3)
        _, metrics = run_static(linear_graph, plan, linear_inputs)
        assert len(metrics.busy_spans) == 3
        assert metrics.process_time >= metrics.runtime * 0.5
