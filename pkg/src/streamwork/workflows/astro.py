"""Linear four-PE galaxy pipeline: catalog source, table lookup, column
filter, and an extinction-computing sink.

The source stream is a seeded pseudo-catalog of ``100 * scale`` galaxies.
In heavy mode the two middle PEs sleep per record for Beta(2, 5) * 1 s *
sleep_scale, giving the long-tailed per-task cost profile the benchmarks
exercise.
"""

from __future__ import annotations

import math
import random
import time

from ..graph import Behavior, Connection, PESpec, WorkflowGraph
from . import WorkloadSpec, derive_seed

RECORDS_PER_SCALE = 100


def beta25_sample(rng: random.Random) -> float:
    """One Beta(2, 5) draw (mean 2/7)."""
    return rng.betavariate(2, 5)


def _record_rng(seed: int, stage: str, galaxy_id: int) -> random.Random:
    # Behaviors are shared across worker threads, so per-record randomness is
    # derived from the record itself instead of mutating a captured generator.
    return random.Random(derive_seed(seed, stage, galaxy_id))


def astro_inputs(spec: WorkloadSpec) -> dict[str, list[dict]]:
    rng = random.Random(spec.seed)
    records = [
        {
            "galaxy_id": i,
            "ra": round(rng.uniform(0.0, 360.0), 6),
            "dec": round(rng.uniform(-90.0, 90.0), 6),
        }
        for i in range(RECORDS_PER_SCALE * spec.scale)
    ]
    return {"read_radec": records}


def build_astro(spec: WorkloadSpec) -> WorkflowGraph:
    def read_radec(fields, state):
        return [("out", dict(fields))]

    def get_vo_table(fields, state):
        gid = fields["galaxy_id"]
        if spec.heavy:
            time.sleep(beta25_sample(_record_rng(spec.seed, "vo", gid)) * spec.sleep_scale)
        rng = _record_rng(spec.seed, "catalog", gid)
        # Deterministic per-galaxy morphology code and axis-ratio proxy.
        return [("out", {
            **fields,
            "mtype": rng.randint(-5, 10),
            "logr25": round(rng.uniform(0.0, 1.2), 6),
        })]

    def filter_columns(fields, state):
        if spec.heavy:
            time.sleep(
                beta25_sample(_record_rng(spec.seed, "filter", fields["galaxy_id"]))
                * spec.sleep_scale
            )
        return [("out", {
            "galaxy_id": fields["galaxy_id"],
            "mtype": fields["mtype"],
            "logr25": fields["logr25"],
        })]

    def internal_extinction(fields, state):
        # Inclination-driven extinction estimate from the axis-ratio proxy.
        coeff = 1.2 + 0.1 * fields["mtype"]
        extinction = round(coeff * abs(math.log10(1.0 + fields["logr25"])), 9)
        return [(None, {"galaxy_id": fields["galaxy_id"], "extinction": extinction})]

    return WorkflowGraph(
        pes=[
            PESpec("read_radec", "source", Behavior(read_radec), output_ports=("out",)),
            PESpec("get_vo_table", "transform", Behavior(get_vo_table), ("in",), ("out",)),
            PESpec("filter_columns", "transform", Behavior(filter_columns), ("in",), ("out",)),
            PESpec("internal_extinction", "sink", Behavior(internal_extinction), ("in",)),
        ],
        connections=[
            Connection("read_radec", "out", "get_vo_table", "in"),
            Connection("get_vo_table", "out", "filter_columns", "in"),
            Connection("filter_columns", "out", "internal_extinction", "in"),
        ],
    )
