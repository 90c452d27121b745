"""Tiled execution of streaming-dataframe DAGs with bit-identical batch,
mini-batch, and streaming results.

The package is organized in layers, each importable on its own:

- :mod:`tileflow.frame` — time-indexed column frames, intervals, tiles, and
  the canonical byte encoding that defines bit-equality.
- :mod:`tileflow.node` — the node protocol: declared context windows,
  causality, separability, fit/predict phases.
- :mod:`tileflow.stdnodes` — the built-in node catalog (FIR filters, rolling
  means, cross-sectional transforms, joins, and deliberately broken nodes
  for testing the validators).
- :mod:`tileflow.graph` — DAG topology, context-window calculus, critical
  paths, and makespan bounds.
- :mod:`tileflow.tiling` — temporal and columnar tiling plans, windowed DAG
  evaluation, the two-tile execution rule, and its necessity witness.
- :mod:`tileflow.engine` — batch / streaming / fit-predict runners with
  knowledge-time gating and embargoes.
- :mod:`tileflow.cache` — the content-addressed tile store.
- :mod:`tileflow.validate` — tiling validation, future-peek detection,
  run reconciliation, and capture/playback.
- :mod:`tileflow.cli` — the ``tileflow`` command-line front end.
"""

from . import errors
from .cache import CacheStats, TileCache, cache_key
from .engine import (
    BacktestConfig,
    EmbargoSpec,
    ReplayedClock,
    RunManifest,
    RunnerSpec,
    RunResult,
    TimedFrame,
    run_batch,
    run_fit_predict,
    run_rolling,
    run_streaming,
    run_sweep,
    visible_slice,
)
from .errors import TileflowError
from .frame import (
    ColumnGroup,
    ColumnKey,
    Interval,
    StreamFrame,
    Tile,
    TwoTileWindow,
    canonical_bytes,
    concat,
    read_csv,
    restrict,
    write_csv,
)
from .graph import (
    Dag,
    DagConfig,
    DagTopology,
    Edge,
    ScheduleBounds,
    build_dag,
    critical_context_path,
    describe_topology,
    graph_context_window,
    load_topology_file,
    makespan_bounds,
    parse_topology_text,
    topological_sort,
    width,
)
from .node import (
    Node,
    NodeKind,
    NodeSpec,
    NodeState,
    Phase,
    Separability,
    check_pit_idempotency,
)
from .stdnodes import (
    EwmaSpec,
    SinkNode,
    SourceNode,
    anticausal_shift,
    asof_join,
    cross_sectional_normalize,
    cross_sectional_rank,
    diff,
    ewma_fir,
    fir,
    learned_window_ma,
    peek_at,
    pointwise,
    rolling_mean,
    row_map,
    shift,
)
from .tiling import (
    TauCounterexample,
    TileWindowPlan,
    WindowResult,
    build_tau_counterexample,
    evaluate_dag_window,
    plan_columnar,
    plan_temporal,
    run_two_tile,
)
from .validate import (
    DetectionStats,
    Divergence,
    FailureMode,
    ReconcileReport,
    ReplayCapture,
    TilingDiff,
    ValidationReport,
    capture,
    detect_future_peeking,
    playback,
    read_capture,
    reconcile,
    tiling_validation,
    write_capture,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "errors",
    "TileflowError",
    # frames
    "ColumnGroup",
    "ColumnKey",
    "Interval",
    "StreamFrame",
    "Tile",
    "TwoTileWindow",
    "canonical_bytes",
    "concat",
    "read_csv",
    "restrict",
    "write_csv",
    # nodes
    "Node",
    "NodeKind",
    "NodeSpec",
    "NodeState",
    "Phase",
    "Separability",
    "check_pit_idempotency",
    "EwmaSpec",
    "SinkNode",
    "SourceNode",
    "anticausal_shift",
    "asof_join",
    "cross_sectional_normalize",
    "cross_sectional_rank",
    "diff",
    "ewma_fir",
    "fir",
    "learned_window_ma",
    "peek_at",
    "pointwise",
    "rolling_mean",
    "row_map",
    "shift",
    # graphs
    "Dag",
    "DagConfig",
    "DagTopology",
    "Edge",
    "ScheduleBounds",
    "build_dag",
    "critical_context_path",
    "describe_topology",
    "graph_context_window",
    "load_topology_file",
    "makespan_bounds",
    "parse_topology_text",
    "topological_sort",
    "width",
    # tiling
    "TauCounterexample",
    "TileWindowPlan",
    "WindowResult",
    "build_tau_counterexample",
    "evaluate_dag_window",
    "plan_columnar",
    "plan_temporal",
    "run_two_tile",
    # engine
    "BacktestConfig",
    "EmbargoSpec",
    "ReplayedClock",
    "RunManifest",
    "RunnerSpec",
    "RunResult",
    "TimedFrame",
    "run_batch",
    "run_fit_predict",
    "run_rolling",
    "run_streaming",
    "run_sweep",
    "visible_slice",
    # cache
    "CacheStats",
    "TileCache",
    "cache_key",
    # validation and replay
    "DetectionStats",
    "Divergence",
    "FailureMode",
    "ReconcileReport",
    "ReplayCapture",
    "TilingDiff",
    "ValidationReport",
    "capture",
    "detect_future_peeking",
    "playback",
    "read_capture",
    "reconcile",
    "tiling_validation",
    "write_capture",
]
