"""Exception types shared across the engine."""

from __future__ import annotations

from typing import Optional


class StreamworkError(Exception):
    pass


class GraphInvalidError(StreamworkError):
    """An enactment was asked to run a graph that fails validation."""

    def __init__(self, report):
        self.report = report
        details = "; ".join(v.detail for v in report.violations)
        super().__init__(f"invalid workflow graph: {details}")


class EnactmentError(StreamworkError):
    """A behavior or worker failed; carries the failing PE and partial metrics."""

    def __init__(self, message: str, pe_id: Optional[str] = None, partial_metrics=None):
        self.pe_id = pe_id
        self.partial_metrics = partial_metrics
        super().__init__(message)


class StatefulGraphError(StreamworkError):
    """Dynamic scheduling manages stateless PEs only; callers are pointed at
    the hybrid mapping."""


class InfeasibleAllocationError(StreamworkError):
    """Static allocation needs at least one process per PE."""


class InfeasiblePlanError(StreamworkError):
    """Hybrid planning needs more workers than stateful instances."""

    def __init__(self, message: str, deficit: int = 0):
        self.deficit = deficit
        super().__init__(message)
