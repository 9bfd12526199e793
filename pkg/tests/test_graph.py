"""Graph model: validation, topology, hashing, and routing."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from streamwork.graph import (
    Behavior,
    Connection,
    GroupingSpec,
    PESpec,
    RoundRobin,
    RoutingError,
    WorkflowGraph,
    canonical_key,
    fnv1a64,
    partition_pes,
    route_key,
    validate_graph,
)

_noop = Behavior(lambda fields, state: [])


def _pe(pe_id, kind="transform", inputs=("in",), outputs=("out",), **kw):
    if kind == "source":
        inputs = ()
    if kind == "sink":
        outputs = ()
    return PESpec(pe_id, kind, _noop, tuple(inputs), tuple(outputs), **kw)


def _linear(*ids):
    pes = [_pe(ids[0], "source")] + [_pe(i) for i in ids[1:-1]] + [_pe(ids[-1], "sink")]
    conns = [Connection(a, "out", b, "in") for a, b in zip(ids, ids[1:])]
    return WorkflowGraph(pes, conns)


class TestValidation:
    def test_four_pe_pipeline_is_valid(self):
        report = validate_graph(_linear("a", "b", "c", "d"))
        assert report.ok
        assert report.violations == []

    def test_duplicate_ids_reported(self):
        g = WorkflowGraph([_pe("a", "source"), _pe("a", "sink")], [])
        kinds = {v.kind for v in validate_graph(g).violations}
        assert "duplicate-id" in kinds

    def test_source_with_inputs_rejected(self):
        g = WorkflowGraph([PESpec("s", "source", _noop, ("in",), ("out",))], [])
        assert "source-has-inputs" in {v.kind for v in validate_graph(g).violations}

    def test_sink_with_outputs_rejected(self):
        g = WorkflowGraph([PESpec("k", "sink", _noop, ("in",), ("out",))], [])
        assert "sink-has-outputs" in {v.kind for v in validate_graph(g).violations}

    def test_dangling_port_reported(self):
        g = WorkflowGraph(
            [_pe("a", "source"), _pe("z", "sink")],
            [Connection("a", "nope", "z", "in")],
        )
        assert "dangling-port" in {v.kind for v in validate_graph(g).violations}

    def test_unknown_pe_in_connection(self):
        g = WorkflowGraph([_pe("a", "source")], [Connection("a", "out", "ghost", "in")])
        assert "missing-pe" in {v.kind for v in validate_graph(g).violations}

    def test_cycle_detected_and_named(self):
        g = WorkflowGraph(
            [_pe("s", "source"), _pe("b"), _pe("c"), _pe("z", "sink")],
            [
                Connection("s", "out", "b", "in"),
                Connection("b", "out", "c", "in"),
                Connection("c", "out", "b", "in"),
                Connection("c", "out", "z", "in"),
            ],
        )
        report = validate_graph(g)
        assert not report.ok
        assert set(report.cycle) == {"b", "c"}

    def test_unreachable_pe_reported(self):
        g = WorkflowGraph(
            [_pe("s", "source"), _pe("island"), _pe("z", "sink")],
            [Connection("s", "out", "z", "in")],
        )
        kinds = {v.kind for v in validate_graph(g).violations}
        assert "unreachable" in kinds

    def test_uncovered_input_port(self):
        g = WorkflowGraph([_pe("s", "source"), _pe("z", "sink")], [])
        assert "uncovered-input" in {v.kind for v in validate_graph(g).violations}

    def test_bad_instance_count(self):
        g = WorkflowGraph([_pe("s", "source", instance_count=0)], [])
        assert "bad-instance-count" in {v.kind for v in validate_graph(g).violations}


class TestTopology:
    def test_topological_order_respects_edges(self):
        g = _linear("a", "b", "c", "d")
        order = g.topological_order()
        assert order.index("a") < order.index("b") < order.index("c") < order.index("d")

    def test_topological_order_raises_on_cycle(self):
        g = WorkflowGraph(
            [_pe("a"), _pe("b")],
            [Connection("a", "out", "b", "in"), Connection("b", "out", "a", "in")],
        )
        with pytest.raises(ValueError):
            g.topological_order()

    def test_partition_pes(self):
        g = WorkflowGraph(
            [
                _pe("s", "source"),
                _pe("agg", stateful=True, instance_count=4),
                _pe("z", "sink", stateful=True),
            ],
            [],
        )
        stateful, stateless = partition_pes(g)
        assert stateful == [("agg", 4), ("z", 1)]
        assert stateless == ["s"]


class TestFnv1a64:
    # Frozen reference values computed with an independent implementation of
    # the 64-bit FNV-1a recurrence (offset 14695981039346656037, prime
    # 1099511628211) before this module was written.
    REFERENCE = {
        b"": 0xCBF29CE484222325,
        b"a": 0xAF63DC4C8601EC8C,
        b"abc": 0xE71FA2190541574B,
        b"state-7": 0xC3F73CF01C130D82,
        "München".encode("utf-8"): 0x5A2D37ADAD99D4F3,
    }

    def test_reference_values(self):
        for data, expected in self.REFERENCE.items():
            assert fnv1a64(data) == expected, data

    @given(st.binary(max_size=64))
    def test_range_and_determinism(self, data):
        h = fnv1a64(data)
        assert 0 <= h < 2**64
        assert h == fnv1a64(data)


class TestCanonicalKey:
    def test_scalar_forms(self):
        assert canonical_key("x") == "x"
        assert canonical_key(42) == "42"
        assert canonical_key(-3) == "-3"
        assert canonical_key(2.5) == "2.5"

    def test_int_and_equal_float_share_no_form_unless_identical(self):
        # repr keeps the float form distinct from the int form.
        assert canonical_key(2) == "2"
        assert canonical_key(2.0) == "2.0"

    @pytest.mark.parametrize("bad", [True, float("nan"), float("inf"), [1], {"a": 1}, None])
    def test_non_scalars_rejected(self, bad):
        with pytest.raises(RoutingError):
            canonical_key(bad)


class TestRouteKey:
    def test_global_pins_instance_zero(self):
        for record in ({"k": "x"}, {"k": 9}):
            assert route_key(GroupingSpec.globally(), record, 5) == 0

    def test_group_by_is_hash_mod_instances(self):
        spec = GroupingSpec.group_by("k")
        record = {"k": "state-7"}
        expected = fnv1a64(b"state-7") % 4
        assert route_key(spec, record, 4) == expected

    def test_group_by_missing_key_raises(self):
        with pytest.raises(RoutingError):
            route_key(GroupingSpec.group_by("k"), {"other": 1}, 4)

    def test_shuffle_round_robin(self):
        counter = RoundRobin()
        picks = [route_key(GroupingSpec.shuffle(), {}, 3, counter) for _ in range(7)]
        assert picks == [0, 1, 2, 0, 1, 2, 0]

    @given(
        st.text(max_size=20) | st.integers() | st.floats(allow_nan=False, allow_infinity=False),
        st.integers(min_value=1, max_value=32),
    )
    def test_group_by_stable_and_in_range(self, key, n):
        spec = GroupingSpec.group_by("k")
        first = route_key(spec, {"k": key}, n)
        assert 0 <= first < n
        assert all(route_key(spec, {"k": key}, n) == first for _ in range(3))

    @given(st.integers(min_value=1, max_value=16), st.integers(min_value=0, max_value=200))
    def test_shuffle_uniform_over_window(self, n, offset):
        counter = RoundRobin()
        for _ in range(offset):
            counter.take()
        window = [route_key(GroupingSpec.shuffle(), {}, n, counter) for _ in range(n)]
        assert sorted(window) == list(range(n))


class TestGroupingSpec:
    def test_group_by_requires_key(self):
        with pytest.raises(ValueError):
            GroupingSpec("group_by")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            GroupingSpec("broadcast")
