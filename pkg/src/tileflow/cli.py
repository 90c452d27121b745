"""Command-line frontend.

Subcommands: ``run`` (execute a backtest config), ``analyze`` (window,
path, and schedule analysis of a topology), ``validate`` (tiling validation
and randomized future-peek detection), ``cache`` (store inspection), and
``replay`` (capture / playback of a DAG cut).

Exit codes: 0 success; 1 when validation fails or the configured tile is
too small to be correct; 2 for usage, file, or config errors.

A run config is TOML:

    [backtest]
    topology = "chain.topo"   # path, relative to this file
    run = [0, 99]             # inclusive interval
    tile_length = 8           # optional, defaults to the graph window
    universe = ["A", "B"]     # optional entity filter
    fit = [-50, -1]           # optional: fit here, then predict over run
    embargo = 0               # optional emission delay (streaming)
    code_version = "0"        # optional cache namespace

    [dag.src]
    stream = "prices"
    [dag.f]
    weights = [1.0, 2.0, 3.0]

Data is one CSV in the frame layout (``time,feature:entity,...``), or a
directory of ``<stream>.csv`` files when the DAG reads several streams. The
cache root comes from TILEFLOW_CACHE_DIR unless the run supplies one.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from .cache import TileCache
from .config import load_config_file
from .engine import BacktestConfig, EmbargoSpec, RunnerSpec, run_batch, run_streaming
from .errors import TileflowError, TileTooSmall
from .frame import Interval, StreamFrame, canonical_bytes, read_csv, write_csv
from .graph import (
    Dag,
    DagConfig,
    build_dag,
    critical_context_path,
    graph_context_window,
    load_topology_file,
    makespan_bounds,
    width,
)
from .validate import (
    capture,
    detect_future_peeking,
    playback,
    read_capture,
    tiling_validation,
    write_capture,
)

__all__ = ["main"]


def _digest(frame: StreamFrame) -> str:
    return hashlib.sha256(canonical_bytes(frame)).hexdigest()


def _load_backtest(config_path: Path) -> tuple[dict, Dag]:
    cfg = load_config_file(config_path)
    backtest = cfg.get("backtest")
    if not isinstance(backtest, dict):
        raise TileflowError(f"{config_path}: missing [backtest] table")
    topo_ref = backtest.get("topology")
    if not topo_ref:
        raise TileflowError(f"{config_path}: [backtest] needs a topology path")
    parsed = load_topology_file(config_path.parent / topo_ref)
    dag = build_dag(parsed, DagConfig(cfg.get("dag", {})))
    return backtest, dag


def _interval(raw, what: str) -> Interval:
    if not isinstance(raw, (list, tuple)) or len(raw) != 2:
        raise TileflowError(f"{what} must be [start, end]")
    return Interval(int(raw[0]), int(raw[1]))


def _backtest_config(backtest: dict, dag: Dag, mode: str) -> BacktestConfig:
    run = _interval(backtest.get("run"), "backtest.run")
    runner = None
    if "fit" in backtest:
        runner = RunnerSpec.train_test(_interval(backtest["fit"], "backtest.fit"), run)
    universe = backtest.get("universe")
    return BacktestConfig(
        dag,
        run,
        tile_length=backtest.get("tile_length"),
        universe=tuple(universe) if universe is not None else None,
        runner=runner,
        clock_kind="replayed" if mode == "streaming" else "static",
        embargo=EmbargoSpec(int(backtest.get("embargo", 0))),
        code_version=str(backtest.get("code_version", "0")),
    )


def _load_data(data_path: Path, dag: Dag) -> dict[str, StreamFrame]:
    streams = sorted({dag.nodes[nid].stream for nid in dag.source_nids})
    if data_path.is_dir():
        frames = {p.stem: read_csv(p) for p in sorted(data_path.glob("*.csv"))}
        missing = [s for s in streams if s not in frames]
        if missing:
            raise TileflowError(f"{data_path}: no csv for stream(s) {missing}")
        return frames
    if len(streams) != 1:
        raise TileflowError(
            f"DAG reads streams {streams}; pass a directory of <stream>.csv files"
        )
    return {streams[0]: read_csv(data_path)}


def _cache_for(out_dir: Path | None, no_cache: bool) -> TileCache | None:
    if no_cache:
        return None
    root = os.environ.get("TILEFLOW_CACHE_DIR")
    if root is None and out_dir is not None:
        root = str(out_dir / "cache")
    return TileCache(root) if root else None


def _write_outputs(outputs, out_dir: Path) -> list[Path]:
    target = out_dir / "outputs"
    target.mkdir(parents=True, exist_ok=True)
    written = []
    for key in sorted(outputs):
        path = target / f"{key.replace(':', '_')}.csv"
        write_csv(outputs[key], path)
        written.append(path)
    return written


# --- subcommands ------------------------------------------------------------


def _cmd_run(args) -> int:
    backtest, dag = _load_backtest(args.config)
    config = _backtest_config(backtest, dag, args.mode)
    data = _load_data(args.data, dag)
    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    cache = _cache_for(out_dir, args.no_cache)

    if args.mode == "batch":
        result = run_batch(
            config, data, cache=cache, workers=args.workers, out_dir=out_dir
        )
    else:
        result = run_streaming(config, data, cache=cache)
        result.manifest.write(out_dir / "manifest.json")

    _write_outputs(result.outputs, out_dir)
    if args.figures:
        from . import report  # heavy import, only when drawing

        report.output_series(result.outputs, out_dir / "figures")
        report.window_profile(dag.topology, out_dir / "figures" / "context_windows.png")

    manifest = result.manifest
    print(f"mode: {manifest.mode}")
    print(f"graph context window: {manifest.graph_window}")
    print(f"tile length: {manifest.tile_length}")
    for key in sorted(result.outputs):
        frame = result.outputs[key]
        print(f"output {key} rows={frame.n_rows} sha256={_digest(frame)}")
    stats = manifest.cache_stats
    print(
        "cache: hits={hits} misses={misses} puts={puts}".format(**stats)
        if stats
        else "cache: disabled"
    )
    print(f"wrote: {out_dir}")
    return 0


def _parse_times(raw: str | None, nids) -> dict[str, float]:
    times = {nid: 1.0 for nid in nids}
    if raw:
        for part in raw.split(","):
            if "=" not in part:
                raise TileflowError(f"--times expects nid=seconds, got {part!r}")
            nid, value = part.split("=", 1)
            if nid not in times:
                raise TileflowError(f"--times names unknown node {nid!r}")
            times[nid] = float(value)
    return times


def _cmd_analyze(args) -> int:
    parsed = load_topology_file(args.topology)
    topology = parsed.to_topology()  # raises on cycles
    w = graph_context_window(topology)
    context = critical_context_path(topology)
    times = _parse_times(args.times, topology.nodes)
    bounds = makespan_bounds(topology, times, args.processors)

    print(f"nodes: {len(topology.nodes)}")
    print(f"graph context window: {w}")
    print(f"minimum tile length: {w}")
    print("critical context path: " + " -> ".join(context.path))
    print(f"width: {width(topology)}")
    print(f"processors: {args.processors}")
    print(f"total work: {bounds.total_work:g}")
    print(f"critical path time: {bounds.l_star:g}")
    print("critical path: " + " -> ".join(bounds.critical_path))
    print(f"bounds: [{bounds.lower:g}, {bounds.upper:g}]")
    print(f"greedy makespan: {bounds.greedy_makespan:g}")

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        summary = {
            "nodes": len(topology.nodes),
            "graph_window": w,
            "minimum_tile_length": w,
            "critical_context_path": list(context.path),
            "width": width(topology),
            "processors": args.processors,
            "total_work": bounds.total_work,
            "critical_path_time": bounds.l_star,
            "critical_path": list(bounds.critical_path),
            "bounds": [bounds.lower, bounds.upper],
            "greedy_makespan": bounds.greedy_makespan,
            "schedule": [list(entry) for entry in bounds.schedule],
        }
        (args.out / "analysis.json").write_text(json.dumps(summary, indent=2))
        if args.figures:
            from . import report

            report.schedule_gantt(bounds, args.out / "figures" / "schedule.png")
            report.window_profile(
                topology, args.out / "figures" / "context_windows.png"
            )
        print(f"wrote: {args.out}")
    return 0


def _cmd_validate(args) -> int:
    backtest, dag = _load_backtest(args.config)
    data = _load_data(args.data, dag)
    w = dag.context_window()
    if args.tilings:
        tile_lengths = [int(t) for t in args.tilings.split(",")]
    else:
        tile_lengths = [w, w + 3]
    seeds = (args.seed, args.seed + 1, args.seed + 2)

    report_obj = tiling_validation(dag, data, tile_lengths, boundary_seeds=seeds)
    print(report_obj.to_text())

    failed = not report_obj.passed
    if args.trials is not None:
        stats = detect_future_peeking(
            dag, data, args.trials, boundary_rng_seed=args.seed
        )
        print(
            f"detection: trials={stats.trials_n}"
            f" violations={stats.violations_found} rho_hat={stats.rho_hat:g}"
        )
        failed = failed or stats.violations_found > 0

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "report.txt").write_text(report_obj.to_text() + "\n")
        (args.out / "report.json").write_text(report_obj.to_json())
        if args.figures:
            from . import report

            report.divergence_map(report_obj, args.out / "figures" / "divergence.png")
        print(f"wrote: {args.out}")
    return 1 if failed else 0


def _store_path(args) -> Path:
    if args.store is not None:
        return args.store
    env = os.environ.get("TILEFLOW_CACHE_DIR")
    if env:
        return Path(env)
    raise TileflowError("no cache store: pass one or set TILEFLOW_CACHE_DIR")


def _cmd_cache(args) -> int:
    store = _store_path(args)
    cache = TileCache(store)
    if args.action == "clear":
        removed = cache.entry_count()
        cache.clear()
        print(f"cleared {removed} entries from {store}")
        return 0
    print(f"store: {store}")
    print(f"entries: {cache.entry_count()}")
    print(f"bytes: {cache.total_bytes()}")
    return 0


def _cmd_replay(args) -> int:
    _, dag = _load_backtest(args.config)
    if args.action == "capture":
        data = _load_data(args.data, dag)
        cut = [edge.strip() for edge in args.cut.split(",") if edge.strip()]
        cap = capture(dag, data, cut, run_id=args.run_id)
        base = write_capture(cap, args.out)
        print(f"captured {len(cap.cut)} edge(s), "
              f"{sum(len(r) for r in cap.recorded.values())} record(s)")
        print(f"wrote: {base}")
        return 0

    cap = read_capture(args.capture_root, args.run_id)
    results = playback(cap, dag)
    for step, result in enumerate(results):
        for key in sorted(result.outputs):
            print(f"step {step} output {key} sha256={_digest(result.outputs[key])}")
    if args.out is not None:
        for step, result in enumerate(results):
            suffix = f"_{step}" if len(results) > 1 else ""
            target = args.out / "outputs"
            target.mkdir(parents=True, exist_ok=True)
            for key in sorted(result.outputs):
                write_csv(
                    result.outputs[key],
                    target / f"{key.replace(':', '_')}{suffix}.csv",
                )
        print(f"wrote: {args.out}")
    return 0


# --- argument parsing -------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tileflow",
        description="Tiled streaming-dataframe DAG engine.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a backtest config")
    run.add_argument("config", type=Path)
    run.add_argument("data", type=Path)
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--mode", choices=("batch", "streaming"), default="batch")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--no-cache", action="store_true")
    run.add_argument("--figures", action="store_true")
    run.set_defaults(fn=_cmd_run)

    analyze = sub.add_parser("analyze", help="window/path/schedule analysis")
    analyze.add_argument("topology", type=Path)
    analyze.add_argument("--processors", type=int, default=1)
    analyze.add_argument("--times", help="per-node service times, nid=sec,...")
    analyze.add_argument("--out", type=Path)
    analyze.add_argument("--figures", action="store_true")
    analyze.set_defaults(fn=_cmd_analyze)

    validate = sub.add_parser("validate", help="tiling validation + detection")
    validate.add_argument("config", type=Path)
    validate.add_argument("data", type=Path)
    validate.add_argument("--tilings", help="comma-separated tile lengths")
    validate.add_argument("--trials", type=int)
    validate.add_argument("--seed", type=int, default=0)
    validate.add_argument("--out", type=Path)
    validate.add_argument("--figures", action="store_true")
    validate.set_defaults(fn=_cmd_validate)

    cache = sub.add_parser("cache", help="cache store inspection")
    cache.add_argument("action", choices=("stats", "clear"))
    cache.add_argument("store", type=Path, nargs="?")
    cache.set_defaults(fn=_cmd_cache)

    replay = sub.add_parser("replay", help="capture / play back a DAG cut")
    replay_sub = replay.add_subparsers(dest="action", required=True)
    rec = replay_sub.add_parser("capture")
    rec.add_argument("config", type=Path)
    rec.add_argument("data", type=Path)
    rec.add_argument("--cut", required=True, help="comma-separated edge ids")
    rec.add_argument("--out", type=Path, required=True)
    rec.add_argument("--run-id", default="capture")
    rec.set_defaults(fn=_cmd_replay)
    play = replay_sub.add_parser("playback")
    play.add_argument("config", type=Path)
    play.add_argument("--capture-root", type=Path, required=True)
    play.add_argument("--run-id", default="capture")
    play.add_argument("--out", type=Path)
    play.set_defaults(fn=_cmd_replay)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except TileTooSmall as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TileflowError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
