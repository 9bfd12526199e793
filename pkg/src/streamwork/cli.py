"""Command-line entry point: single runs, benchmark sweeps, ratio reports.

The CLI is a thin shell over the module APIs: everything it does is reachable
programmatically, and a given config + seed over the memory backend always
reproduces the same sink-output digest.

Exit codes: 0 success, 2 config error, 3 broker error, 4 run failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import statistics
import sys
from dataclasses import dataclass
from typing import Optional

import yaml

from .autoscaler import AutoScalerConfig, ScalerTrace, new_scaler, scaled_process_loop
from .broker import BrokerUnreachableError
from .dynamic import TerminationConfig, run_dynamic
from .errors import StreamworkError
from .graphfile import GraphFileError, load_graph_file
from .hybrid import run_hybrid
from .metrics import (
    RatioPair,
    RatioReport,
    RunMetrics,
    SpanRecorder,
    finalize,
    monotonic,
    write_ratio_csv,
)
from .results import SinkOutputs, sink_digest
from .static import allocate_static, run_sequential, run_static
from .workflows import WORKFLOW_NAMES, WorkloadSpec, load_workflow

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BROKER = 3
EXIT_RUN = 4

MAPPINGS = ("sequential", "static", "dynamic", "dyn_auto", "dyn_redis",
            "dyn_auto_redis", "hybrid_redis", "hybrid_mem")

_STREAM_MAPPINGS = {"dyn_redis", "dyn_auto_redis", "hybrid_redis"}
_SCALED_MAPPINGS = {"dyn_auto", "dyn_auto_redis"}
_HYBRID_MAPPINGS = {"hybrid_mem", "hybrid_redis"}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    workflow: str
    mapping: str
    n_workers: int = 4
    scale: int = 1
    heavy: bool = False
    sleep_scale: float = 0.02
    seed: int = 0
    broker_url: Optional[str] = None
    out_dir: str = "."
    max_pool: int = 16
    strategy: str = "queue_size"
    idle_threshold_ms: float = 200.0
    empty_wait_ms: float = 50.0
    max_retries: int = 10

    def __post_init__(self):
        if self.mapping not in MAPPINGS:
            raise ConfigError(f"unknown mapping {self.mapping!r}; expected one of {MAPPINGS}")
        if self.n_workers < 1:
            raise ConfigError("workers must be at least 1")

    @property
    def workload_spec(self) -> WorkloadSpec:
        try:
            return WorkloadSpec(scale=self.scale, heavy=self.heavy,
                                sleep_scale=self.sleep_scale, seed=self.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def term_cfg(self) -> TerminationConfig:
        try:
            return TerminationConfig(self.empty_wait_ms / 1000.0, self.max_retries)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def broker_backend(self) -> str:
        return "stream" if self.mapping in _STREAM_MAPPINGS else "memory"


def _load_graph_and_inputs(cfg: RunConfig):
    if cfg.workflow in WORKFLOW_NAMES:
        out_dir = cfg.out_dir if cfg.workflow == "seismic" else None
        wf = load_workflow(cfg.workflow, cfg.workload_spec, out_dir=out_dir)
        return wf.graph, wf.inputs
    if os.path.exists(cfg.workflow):
        try:
            return load_graph_file(cfg.workflow)
        except GraphFileError as exc:
            raise ConfigError(f"bad graph file: {exc}") from exc
    raise ConfigError(
        f"workflow {cfg.workflow!r} is neither a bundled name {WORKFLOW_NAMES} nor a file"
    )


def _check_compatibility(cfg: RunConfig, graph) -> None:
    stateful = [pe.id for pe in graph.pes if pe.stateful]
    if stateful and cfg.mapping not in ("sequential", "static", *_HYBRID_MAPPINGS):
        raise ConfigError(
            f"stateful PEs {stateful} require the sequential, static, or hybrid mapping, "
            f"not {cfg.mapping!r}"
        )


def _sequential_metrics(cfg: RunConfig, graph, inputs) -> tuple[SinkOutputs, RunMetrics]:
    recorder = SpanRecorder()
    started = monotonic()
    outputs = run_sequential(graph, inputs, seed=cfg.seed)
    ended = monotonic()
    recorder.record_span("sequential", started, ended)
    n_tasks = sum(len(v) for v in inputs.values())
    return outputs, finalize("sequential", 1, cfg.workflow, cfg.seed, started, ended,
                             recorder, tasks_enqueued=n_tasks, tasks_executed=n_tasks)


def execute_run(cfg: RunConfig) -> tuple[SinkOutputs, RunMetrics, Optional[ScalerTrace]]:
    """Run one enactment per the config; the single dispatch point shared by
    ``run`` and ``bench``."""
    graph, inputs = _load_graph_and_inputs(cfg)
    _check_compatibility(cfg, graph)
    if cfg.broker_backend == "stream":
        from .backends import make_broker

        broker, _ = make_broker("stream", cfg.broker_url)  # fail fast on connect
        backend = broker
    else:
        backend = "memory"

    if cfg.mapping == "sequential":
        outputs, metrics = _sequential_metrics(cfg, graph, inputs)
        trace = None
    elif cfg.mapping == "static":
        plan = allocate_static(graph, cfg.n_workers)
        outputs, metrics = run_static(graph, plan, inputs, seed=cfg.seed, workload=cfg.workflow)
        trace = None
    elif cfg.mapping in _SCALED_MAPPINGS:
        scaler = new_scaler(AutoScalerConfig(
            max_pool_size=cfg.max_pool, strategy=cfg.strategy,
            idle_threshold=cfg.idle_threshold_ms / 1000.0,
        ))
        outputs, metrics, trace = scaled_process_loop(
            graph, scaler, broker_backend=backend, inputs=inputs, seed=cfg.seed,
            term_cfg=cfg.term_cfg, workload=cfg.workflow, mapping_name=cfg.mapping,
        )
    elif cfg.mapping in _HYBRID_MAPPINGS:
        outputs, metrics = run_hybrid(
            graph, cfg.n_workers, broker_backend=backend, inputs=inputs, seed=cfg.seed,
            term_cfg=cfg.term_cfg, workload=cfg.workflow, mapping_name=cfg.mapping,
        )
        trace = None
    else:  # dynamic / dyn_redis
        outputs, metrics = run_dynamic(
            graph, cfg.n_workers, broker_backend=backend, inputs=inputs, seed=cfg.seed,
            term_cfg=cfg.term_cfg, workload=cfg.workflow, mapping_name=cfg.mapping,
        )
        trace = None
    if cfg.broker_backend == "stream":
        backend.close()
    return outputs, metrics, trace


def cmd_run(cfg: RunConfig) -> int:
    outputs, metrics, trace = execute_run(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    digest = sink_digest(outputs)
    metrics_path = os.path.join(cfg.out_dir, "metrics.json")
    with open(metrics_path, "w") as fh:
        fh.write(metrics.to_json())
    with open(os.path.join(cfg.out_dir, "digest.txt"), "w") as fh:
        fh.write(digest + "\n")
    if trace is not None:
        trace.to_csv(os.path.join(cfg.out_dir, "trace.csv"))
    print(f"mapping={cfg.mapping} workflow={cfg.workflow} runtime={metrics.runtime:.3f}s "
          f"process_time={metrics.process_time:.3f}s digest={digest[:16]}")
    print(f"wrote {metrics_path}")
    return EXIT_OK


BENCH_COLUMNS = ["workflow", "mapping", "n_workers", "reps", "status",
                 "median_runtime", "median_process_time", "digest"]


def cmd_bench(cfg: RunConfig, mappings: list[str], worker_counts: list[int], reps: int) -> int:
    """Sweep mappings x worker counts, ``reps`` runs per cell, medians per
    row.  A failing cell is recorded as failed and the sweep continues."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "bench.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BENCH_COLUMNS)
        for mapping in mappings:
            for n in worker_counts:
                cell = RunConfig(**{**cfg.__dict__, "mapping": mapping, "n_workers": n})
                runtimes, process_times, digest = [], [], ""
                status = "ok"
                for rep in range(reps):
                    try:
                        outputs, metrics, _ = execute_run(cell)
                    except (StreamworkError, ConfigError) as exc:
                        print(f"cell {mapping}/n{n} rep {rep} failed: {exc}", file=sys.stderr)
                        status = "failed"
                        break
                    runtimes.append(metrics.runtime)
                    process_times.append(metrics.process_time)
                    digest = sink_digest(outputs)
                row = [cfg.workflow, mapping, n, reps, status]
                if status == "ok":
                    row += [f"{statistics.median(runtimes):.6f}",
                            f"{statistics.median(process_times):.6f}", digest]
                else:
                    row += ["", "", ""]
                writer.writerow(row)
    print(f"wrote {path}")
    return EXIT_OK


def _read_bench(path: str) -> dict[tuple[str, int], tuple[float, float]]:
    cells = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["status"] != "ok":
                continue
            key = (row["workflow"], int(row["n_workers"]))
            if key in cells:
                raise ConfigError(
                    f"{path} holds several mappings per cell {key}; "
                    "bench one mapping per file before reporting"
                )
            cells[key] = (float(row["median_runtime"]), float(row["median_process_time"]))
    return cells


def cmd_report(csv_a: str, csv_b: str, out_dir: str, platform_tag: str,
               pair_name: str, trace: Optional[str]) -> int:
    a, b = _read_bench(csv_a), _read_bench(csv_b)
    if set(a) != set(b):
        raise ConfigError(
            f"sweep shapes differ: A has {sorted(a)}, B has {sorted(b)}"
        )
    if not a:
        raise ConfigError("no successful cells to compare")
    pairs = []
    for key in sorted(a):
        rt_a, pt_a = a[key]
        rt_b, pt_b = b[key]
        if rt_b <= 0 or pt_b <= 0:
            raise ConfigError(f"degenerate B cell {key}: zero runtime or process time")
        pairs.append(RatioPair(f"{key[0]}/n{key[1]}", rt_a / rt_b, pt_a / pt_b))
    rts = [p.runtime_ratio for p in pairs]
    pts = [p.process_time_ratio for p in pairs]
    report = RatioReport(
        pairs=pairs,
        mean_runtime=statistics.fmean(rts),
        std_runtime=statistics.pstdev(rts) if len(rts) > 1 else 0.0,
        mean_process_time=statistics.fmean(pts),
        std_process_time=statistics.pstdev(pts) if len(pts) > 1 else 0.0,
    )
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "ratios.csv")
    write_ratio_csv(report, path, platform_tag, pair_name)
    if trace:
        # Pass scaler telemetry through next to the ratio table for plotting.
        with open(trace) as src, open(os.path.join(out_dir, "plot_trace.csv"), "w") as dst:
            dst.write(src.read())
    print(f"wrote {path}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamwork",
                                     description="Stream workflow enactment toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--workflow", help=f"bundled name {WORKFLOW_NAMES} or graph file path")
        p.add_argument("--mapping", help=f"one of {MAPPINGS}")
        p.add_argument("--workers", type=int, dest="n_workers")
        p.add_argument("--scale", type=int)
        p.add_argument("--heavy", action="store_const", const=True, default=None)
        p.add_argument("--sleep-scale", type=float, dest="sleep_scale")
        p.add_argument("--seed", type=int)
        p.add_argument("--broker-url", dest="broker_url",
                       help="stream broker URL (overrides $BROKER_URL)")
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--max-pool", type=int, dest="max_pool")
        p.add_argument("--strategy", choices=("queue_size", "idle_time"))
        p.add_argument("--idle-threshold-ms", type=float, dest="idle_threshold_ms")
        p.add_argument("--empty-wait-ms", type=float, dest="empty_wait_ms")
        p.add_argument("--max-retries", type=int, dest="max_retries")
        p.add_argument("--config", help="YAML config file; flags override its values")

    run_p = sub.add_parser("run", help="execute one enactment")
    add_run_flags(run_p)

    bench_p = sub.add_parser("bench", help="sweep mappings x worker counts")
    add_run_flags(bench_p)
    bench_p.add_argument("--mappings", help="comma-separated mapping list")
    bench_p.add_argument("--worker-counts", dest="worker_counts",
                         help="comma-separated counts (default 4,8,12,16)")
    bench_p.add_argument("--reps", type=int)

    report_p = sub.add_parser("report", help="A/B ratio table from two bench CSVs")
    report_p.add_argument("csv_a")
    report_p.add_argument("csv_b")
    report_p.add_argument("--out-dir", dest="out_dir", default=".")
    report_p.add_argument("--platform-tag", dest="platform_tag", default="desk")
    report_p.add_argument("--pair-name", dest="pair_name", default="A_vs_B")
    report_p.add_argument("--trace", help="scaler trace CSV to pass through")
    return parser


_CONFIG_KEYS = ("workflow", "mapping", "n_workers", "scale", "heavy", "sleep_scale",
                "seed", "broker_url", "out_dir", "max_pool", "strategy",
                "idle_threshold_ms", "empty_wait_ms", "max_retries")


def _merge_config(args: argparse.Namespace) -> RunConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                doc = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config file: {exc}")
        unknown = set(doc) - set(_CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for key in _CONFIG_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    if "workflow" not in values or "mapping" not in values:
        raise ConfigError("both a workflow and a mapping are required")
    try:
        return RunConfig(**{k: v for k, v in values.items() if k in _CONFIG_KEYS})
    except TypeError as exc:
        raise ConfigError(str(exc))


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args.csv_a, args.csv_b, args.out_dir,
                              args.platform_tag, args.pair_name, args.trace)
        cfg = _merge_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        mappings = (args.mappings or cfg.mapping).split(",")
        bad = [m for m in mappings if m not in MAPPINGS]
        if bad:
            raise ConfigError(f"unknown mappings {bad}")
        counts = [int(c) for c in (args.worker_counts or "4,8,12,16").split(",")]
        return cmd_bench(cfg, mappings, counts, args.reps or 3)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BrokerUnreachableError as exc:
        print(f"broker error: {exc}", file=sys.stderr)
        return EXIT_BROKER
    except StreamworkError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
