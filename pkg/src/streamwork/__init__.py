"""Stream-based dataflow workflow engine with pluggable enactment mappings.

Public surface: the graph model, brokers, the five enactment strategies
(sequential, static, dynamic, auto-scaled dynamic, hybrid), metrics, the
bundled workflows, and the graph-definition-file loader.
"""

from .autoscaler import (
    AutoScalerConfig,
    IdleTimeMonitor,
    QueueSizeMonitor,
    ScalerState,
    ScalerTrace,
    auto_scale,
    new_scaler,
    scaled_process_loop,
)
from .broker import (
    Broker,
    BrokerError,
    BrokerUnreachableError,
    MemoryBroker,
    TaskEnvelope,
)
from .dynamic import TerminationConfig, check_termination, run_dynamic
from .errors import (
    EnactmentError,
    GraphInvalidError,
    InfeasibleAllocationError,
    InfeasiblePlanError,
    StatefulGraphError,
    StreamworkError,
)
from .graph import (
    Behavior,
    Connection,
    DataRecord,
    GroupingSpec,
    PESpec,
    RoutingError,
    ValidationReport,
    WorkflowGraph,
    partition_pes,
    route_key,
    validate_graph,
)
from .graphfile import BEHAVIOR_REGISTRY, GraphFileError, load_graph_file
from .hybrid import HybridPlan, plan_hybrid, run_hybrid
from .metrics import RatioReport, RunMetrics, ratio_report, write_ratio_csv
from .results import sink_digest, sink_outputs_equal
from .static import AllocationPlan, allocate_static, run_sequential, run_static
from .stream_broker import StreamBroker
from .workflows import Workflow, WorkloadSpec, load_workflow

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan", "AutoScalerConfig", "BEHAVIOR_REGISTRY", "Behavior",
    "Broker", "BrokerError", "BrokerUnreachableError", "Connection",
    "DataRecord", "EnactmentError", "GraphFileError", "GraphInvalidError",
    "GroupingSpec", "HybridPlan", "IdleTimeMonitor", "InfeasibleAllocationError",
    "InfeasiblePlanError", "MemoryBroker", "PESpec", "QueueSizeMonitor",
    "RatioReport", "RoutingError", "RunMetrics", "ScalerState", "ScalerTrace",
    "StatefulGraphError", "StreamBroker", "StreamworkError", "TaskEnvelope",
    "TerminationConfig", "ValidationReport", "Workflow", "WorkflowGraph",
    "WorkloadSpec", "allocate_static", "auto_scale", "check_termination",
    "load_graph_file", "load_workflow", "new_scaler", "partition_pes",
    "plan_hybrid", "ratio_report", "route_key", "run_dynamic", "run_hybrid",
    "run_sequential", "run_static", "scaled_process_loop", "sink_digest",
    "sink_outputs_equal", "validate_graph", "write_ratio_csv",
]
