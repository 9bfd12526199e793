"""Bundled desk-scale workflows: a linear galaxy pipeline, a waveform
pre-processing chain, and a stateful sentiment-ranking graph.

Every builder is a deterministic function of a :class:`WorkloadSpec`; the
same seed always reproduces the same source stream.  Record fields stay
JSON-serializable so any broker backend can carry them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..graph import WorkflowGraph, fnv1a64


def derive_seed(*parts: Union[str, int]) -> int:
    """Stable integer seed from mixed parts.  Unlike hashing a tuple, this is
    reproducible across processes (str hashes are salted per interpreter)."""
    return fnv1a64("|".join(str(p) for p in parts).encode("utf-8"))


@dataclass(frozen=True)
class WorkloadSpec:
    """Workload knobs shared by all bundled workflows.

    ``scale`` multiplies the input volume (1X = 100 galaxy records for the
    astro pipeline).  ``heavy`` switches on per-record synthetic compute cost,
    shrunk by ``sleep_scale`` so a desk run stays in seconds.
    """

    scale: int = 1
    heavy: bool = False
    sleep_scale: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be at least 1")
        if not (0 < self.sleep_scale <= 1):
            raise ValueError("sleep_scale must be in (0, 1]")


@dataclass(frozen=True)
class Workflow:
    """A built graph together with the inputs that feed its source PEs."""

    name: str
    graph: WorkflowGraph
    inputs: dict[str, list[dict]] = field(default_factory=dict)


WORKFLOW_NAMES = ("astro", "seismic", "sentiment")


def load_workflow(name: str, spec: Optional[WorkloadSpec] = None,
                  out_dir: Optional[str] = None) -> Workflow:
    """Build one of the bundled workflows by name.

    ``out_dir`` is required by the seismic workflow (its sink writes files)
    and ignored by the others.
    """
    spec = spec or WorkloadSpec()
    if name == "astro":
        from .astro import build_astro, astro_inputs

        return Workflow(name, build_astro(spec), astro_inputs(spec))
    if name == "seismic":
        from .seismic import build_seismic, seismic_inputs

        if out_dir is None:
            raise ValueError("the seismic workflow requires an output directory")
        return Workflow(name, build_seismic(spec, out_dir), seismic_inputs(spec))
    if name == "sentiment":
        from .sentiment import build_sentiment, sentiment_inputs

        return Workflow(name, build_sentiment(spec), sentiment_inputs(spec))
    raise ValueError(f"unknown workflow {name!r}; expected one of {WORKFLOW_NAMES}")
