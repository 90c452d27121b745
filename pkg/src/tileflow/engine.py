"""Execution engine: clocks, knowledge-time gating, embargo, and runners.

The module guarantees one thing above all: every execution mode — batch over
two-tile plans, per-step streaming behind a clock, fit/predict splits,
rolling windows, config sweeps — produces bit-identical outputs wherever
their output intervals overlap. Batch gets throughput from tiling and
parallel workers; streaming gets causality from knowledge-time gating and
embargo; the equivalence between them is what makes a result trustworthy.

The run loops nest in a fixed order — configs, then splits, then temporal
tiles, then column groups, then nodes in topological order — and emit trace
events that tests check for exactly that nesting.
"""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .cache import DEFAULT_CODE_VERSION, TileCache, cached_runner
from .config import canonical_config_text
from .errors import (
    ClockNotMonotone,
    EmptyFitInterval,
    InsufficientHistory,
    TileflowError,
    TileTooSmall,
    WindowOrderViolation,
)
from .frame import (
    ColumnKey,
    Interval,
    StreamFrame,
    Tile,
    canonical_bytes,
    concat,
    merge_columns,
    restrict,
    write_tile,
)
from .graph import Dag, describe_topology
from .node import NodeState, Phase, apply
from .tiling import (
    ColumnPlan,
    TemporalPlan,
    column_plan_for_dag,
    evaluate_dag_window,
    plan_temporal,
)

TimeIndex = int

# --- clocks ----------------------------------------------------------------


class Clock:
    """Monotone supplier of the current time step. ``now`` is the latest
    step that has happened; data with knowledge time beyond it is invisible."""

    kind: str

    @property
    def now(self) -> TimeIndex:
        raise NotImplementedError


class StaticClock(Clock):
    """A clock that never advances: the non-timed simulation, where all data
    is available from the outset."""

    kind = "static"

    def __init__(self, now: TimeIndex):
        self._now = int(now)

    @property
    def now(self) -> TimeIndex:
        return self._now


class ReplayedClock(Clock):
    """Advances through a recorded schedule of steps.

    Raises:
        ClockNotMonotone: if the schedule ever goes backwards.
    """

    kind = "replayed"

    def __init__(self, schedule: Iterable[TimeIndex]):
        self._schedule = iter(schedule)
        self._now: TimeIndex | None = None

    @property
    def now(self) -> TimeIndex:
        if self._now is None:
            raise ClockNotMonotone("clock has not started; call advance() first")
        return self._now

    def advance(self) -> TimeIndex | None:
        """The next step, or None when the schedule is exhausted."""
        step = next(self._schedule, None)
        if step is None:
            return None
        step = int(step)
        if self._now is not None and step < self._now:
            raise ClockNotMonotone(f"clock moved from {self._now} back to {step}")
        self._now = step
        return step


class RealClock(ReplayedClock):
    """Wall-time-driven clock: step = floor((wall - origin) / step_seconds).

    Implemented as a replayed clock whose schedule reads the wall clock, so
    everything downstream of `advance()` is shared with replayed runs.
    """

    kind = "real"

    def __init__(self, step_seconds: float, origin_wall: float | None = None):
        origin = time.time() if origin_wall is None else origin_wall

        def walk():
            while True:
                yield int((time.time() - origin) // step_seconds)

        super().__init__(walk())


# --- knowledge time --------------------------------------------------------


@dataclass(frozen=True)
class TimedFrame:
    """A stream frame plus per-row knowledge times k(u): the clock step at
    which each row becomes visible. On-time data has k(u) = u."""

    frame: StreamFrame
    knowledge: tuple[TimeIndex, ...]

    def __post_init__(self):
        if len(self.knowledge) != self.frame.n_rows:
            raise ValueError(
                f"{len(self.knowledge)} knowledge times for {self.frame.n_rows} rows"
            )

    @staticmethod
    def punctual(frame: StreamFrame) -> "TimedFrame":
        dom = frame.domain
        times = tuple(range(dom.start, dom.end + 1)) if dom else ()
        return TimedFrame(frame, times)

    @staticmethod
    def delayed(frame: StreamFrame, lag: int) -> "TimedFrame":
        dom = frame.domain
        times = tuple(range(dom.start + lag, dom.end + 1 + lag)) if dom else ()
        return TimedFrame(frame, times)


def visible_slice(timed: TimedFrame | StreamFrame, clock: Clock | TimeIndex) -> StreamFrame:
    """Rows visible at the clock's current step.

    The result stays a contiguous frame: it extends through the latest row
    with k <= now, and any not-yet-visible row inside that range appears as
    missing values — at this clock step the two are indistinguishable.
    """
    if isinstance(timed, StreamFrame):
        timed = TimedFrame.punctual(timed)
    now = clock.now if isinstance(clock, Clock) else int(clock)
    frame = timed.frame
    dom = frame.domain
    if dom is None:
        return frame
    visible = np.array([k <= now for k in timed.knowledge])
    if not visible.any():
        return StreamFrame.empty()
    last = dom.start + int(np.nonzero(visible)[0].max())
    values = frame.values[: last - dom.start + 1].copy()
    values[~visible[: last - dom.start + 1]] = np.nan
    return StreamFrame(dom.start, frame.columns, values)


# --- run specifications ----------------------------------------------------


@dataclass(frozen=True)
class EmbargoSpec:
    """Emit the output for logical time t no earlier than clock t + delta."""

    delta: int = 0

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("embargo delta must be >= 0")


@dataclass(frozen=True)
class Split:
    """One evaluation split: fit on one interval, optionally validate on a
    second, predict on a third."""

    fit: Interval | None
    predict: Interval
    validate: Interval | None = None


_RUNNER_KINDS = (
    "in_sample",
    "train_test",
    "train_validate_test",
    "cross_validation",
    "rolling",
    "real_time",
)


@dataclass(frozen=True)
class RunnerSpec:
    """Which learning pattern a run follows, as a list of splits.

    Raises:
        WindowOrderViolation: fit/validate/predict intervals out of temporal
            order for the kind's rules, or rolling predicts overlapping.
    """

    kind: str
    splits: tuple[Split, ...]

    def __post_init__(self):
        if self.kind not in _RUNNER_KINDS:
            raise ValueError(f"unknown runner kind {self.kind!r}")
        if not self.splits:
            raise ValueError("runner needs at least one split")
        for s in self.splits:
            if self.kind == "in_sample":
                if s.fit != s.predict:
                    raise WindowOrderViolation(
                        "in_sample fits and predicts on one interval"
                    )
            elif s.fit is not None:
                if s.fit.end >= s.predict.start:
                    raise WindowOrderViolation(
                        f"fit {s.fit} must end before predict {s.predict} starts"
                    )
                if s.validate is not None and not (
                    s.fit.end < s.validate.start and s.validate.end < s.predict.start
                ):
                    raise WindowOrderViolation(
                        f"validate {s.validate} must sit between fit and predict"
                    )
        if self.kind in ("rolling", "cross_validation"):
            ps = [s.predict for s in self.splits]
            for a, b in zip(ps, ps[1:]):
                if b.start <= a.end:
                    raise WindowOrderViolation(
                        f"predict intervals must advance: {a} then {b}"
                    )

    @staticmethod
    def in_sample(interval: Interval) -> "RunnerSpec":
        return RunnerSpec("in_sample", (Split(interval, interval),))

    @staticmethod
    def train_test(fit: Interval, predict: Interval) -> "RunnerSpec":
        return RunnerSpec("train_test", (Split(fit, predict),))

    @staticmethod
    def train_validate_test(
        fit: Interval, validate: Interval, predict: Interval
    ) -> "RunnerSpec":
        return RunnerSpec(
            "train_validate_test", (Split(fit, predict, validate),)
        )

    @staticmethod
    def rolling(
        start: TimeIndex, fit_length: int, predict_length: int, n_windows: int
    ) -> "RunnerSpec":
        """n adjacent windows: each test set immediately follows its
        training set; the next window starts where the last test ended."""
        splits = []
        a = start
        for _ in range(n_windows):
            fit = Interval(a, a + fit_length - 1)
            predict = Interval(fit.end + 1, fit.end + predict_length)
            splits.append(Split(fit, predict))
            a += predict_length
        return RunnerSpec("rolling", tuple(splits))

    @staticmethod
    def cross_validation(
        start: TimeIndex, fit_length: int, predict_length: int, n_folds: int
    ) -> "RunnerSpec":
        """Temporally ordered folds; identical geometry to rolling, named
        for intent (scoring across folds rather than deployment simulation)."""
        rolling = RunnerSpec.rolling(start, fit_length, predict_length, n_folds)
        return RunnerSpec("cross_validation", rolling.splits)


@dataclass(frozen=True)
class BacktestConfig:
    """Everything one run needs: the DAG, the interval, tiling, learning
    pattern, clock kind, and embargo.

    Raises:
        TileTooSmall: tile_length below the DAG's context window.
    """

    dag: Dag
    run_interval: Interval
    tile_length: int | None = None
    universe: tuple[str, ...] | None = None
    runner: RunnerSpec | None = None
    clock_kind: str = "static"
    embargo: EmbargoSpec = field(default_factory=EmbargoSpec)
    code_version: str = DEFAULT_CODE_VERSION

    def __post_init__(self):
        w = self.dag.context_window()
        if self.tile_length is not None and self.tile_length < w:
            raise TileTooSmall(
                f"tile length {self.tile_length} < graph context window {w}"
            )
        if self.clock_kind not in ("static", "replayed", "real"):
            raise ValueError(f"unknown clock kind {self.clock_kind!r}")

    @property
    def effective_tile_length(self) -> int:
        return (
            self.tile_length
            if self.tile_length is not None
            else self.dag.context_window()
        )

    @property
    def effective_runner(self) -> RunnerSpec:
        return (
            self.runner
            if self.runner is not None
            else RunnerSpec.in_sample(self.run_interval)
        )

    def canonical_text(self) -> str:
        payload = {
            "run_start": self.run_interval.start,
            "run_end": self.run_interval.end,
            "tile_length": self.effective_tile_length,
            "clock": self.clock_kind,
            "embargo": self.embargo.delta,
            "runner": self.effective_runner.kind,
            "code_version": self.code_version,
        }
        if self.universe is not None:
            payload["universe"] = list(self.universe)
        return canonical_config_text(payload)


# --- tracing ---------------------------------------------------------------

TRACE_LEVELS = ("config", "split", "tile", "group", "node")
_LEVEL_INDEX = {name: i for i, name in enumerate(TRACE_LEVELS)}


@dataclass(frozen=True)
class TraceEvent:
    kind: str  # "enter" | "exit"
    level: str
    label: str


class Tracer:
    """Collects enter/exit events for the nested run loops."""

    def __init__(self):
        self.events: list[TraceEvent] = []

    @contextmanager
    def scope(self, level: str, label: str) -> Iterator[None]:
        self.events.append(TraceEvent("enter", level, label))
        try:
            yield
        finally:
            self.events.append(TraceEvent("exit", level, label))


@contextmanager
def _maybe_scope(tracer: Tracer | None, level: str, label: str) -> Iterator[None]:
    if tracer is None:
        yield
    else:
        with tracer.scope(level, label):
            yield


def check_trace_nesting(events: Sequence[TraceEvent]) -> None:
    """Verify stack discipline and that scopes only ever deepen along
    config > split > tile > group > node.

    Raises:
        ValueError: on unbalanced events or an out-of-order level.
    """
    stack: list[TraceEvent] = []
    for ev in events:
        if ev.level not in _LEVEL_INDEX:
            raise ValueError(f"unknown trace level {ev.level!r}")
        if ev.kind == "enter":
            if stack and _LEVEL_INDEX[ev.level] <= _LEVEL_INDEX[stack[-1].level]:
                raise ValueError(
                    f"{ev.level} scope opened inside {stack[-1].level}"
                )
            stack.append(ev)
        elif ev.kind == "exit":
            if not stack or stack[-1].level != ev.level or stack[-1].label != ev.label:
                raise ValueError(f"unbalanced exit {ev}")
            stack.pop()
        else:
            raise ValueError(f"unknown event kind {ev.kind!r}")
    if stack:
        raise ValueError(f"{len(stack)} scopes never exited")


def _tracing_runner(base, tracer: Tracer | None):
    if tracer is None:
        return base

    def runner(node, phase, inputs, state, interval):
        with tracer.scope("node", node.spec.nid):
            return base(node, phase, inputs, state, interval)

    return runner


# --- results ---------------------------------------------------------------


@dataclass
class RunManifest:
    """Machine-readable record of one run: what was configured, how it was
    planned, what the cache did, and digests of what came out."""

    mode: str
    config_text: str
    dag_config_text: str
    topology_text: str
    tile_length: int
    graph_window: int
    temporal_windows: list[dict]
    column_groups: list[dict]
    cache_stats: dict
    output_digests: dict[str, str]
    workers: int
    emissions: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path


@dataclass
class RunResult:
    outputs: dict[str, StreamFrame]
    states: dict[str, NodeState]
    manifest: RunManifest
    emitted: tuple[tuple[TimeIndex, TimeIndex], ...] = ()  # (clock, logical)


@dataclass
class FitPredictResult:
    fit_outputs: dict[str, StreamFrame]
    validate_outputs: dict[str, StreamFrame] | None
    predict_outputs: dict[str, StreamFrame]
    states: dict[str, NodeState]


@dataclass
class RollingResult:
    windows: list[FitPredictResult]

    @property
    def snapshots(self) -> list[dict[str, NodeState]]:
        return [w.states for w in self.windows]

    @property
    def predict_intervals(self) -> list[Interval]:
        return [
            next(iter(w.predict_outputs.values())).domain for w in self.windows
        ]


@dataclass
class SweepEntry:
    ok: bool
    result: RunResult | None = None
    error: str | None = None


# --- shared helpers --------------------------------------------------------


def _as_plain(f: TimedFrame | StreamFrame) -> StreamFrame:
    return f.frame if isinstance(f, TimedFrame) else f


def _as_timed(f: TimedFrame | StreamFrame) -> TimedFrame:
    return f if isinstance(f, TimedFrame) else TimedFrame.punctual(f)


def _apply_universe(
    frame: StreamFrame, universe: tuple[str, ...] | None
) -> StreamFrame:
    if universe is None:
        return frame
    keep = [c for c in frame.columns if c.entity in universe]
    return restrict(frame, frame.domain, keep)


def _prepare_frames(
    data: Mapping[str, TimedFrame | StreamFrame], config: BacktestConfig
) -> dict[str, StreamFrame]:
    frames = {
        name: _apply_universe(_as_plain(f), config.universe)
        for name, f in data.items()
    }
    for name, f in frames.items():
        dom = f.domain
        if dom is None or not dom.contains(config.run_interval):
            raise InsufficientHistory(
                f"stream {name!r} domain {dom} does not cover run {config.run_interval}"
            )
    return frames


def _source_columns(dag: Dag) -> list[ColumnKey]:
    cols: set[ColumnKey] = set()
    for nid in dag.source_nids:
        frame = dag.nodes[nid]._frame
        if frame is not None:
            cols.update(frame.columns)
    return sorted(cols, key=lambda c: c.sort_key)


def _fit_states(
    dag: Dag,
    split: Split,
    frames: Mapping[str, StreamFrame],
    tracer: Tracer | None = None,
) -> dict[str, NodeState]:
    """Fit stateful nodes, untiled, over the split's fit interval."""
    if not any(n.stateful for n in dag.nodes.values()):
        return {}
    if split.fit is None:
        raise EmptyFitInterval("DAG has stateful nodes but the split has no fit interval")
    domain = _common_domain(frames)
    if domain is None or split.fit.start > domain.end or split.fit.end < domain.start:
        raise EmptyFitInterval(f"fit interval {split.fit} outside data {domain}")
    if not domain.contains(split.fit):
        raise InsufficientHistory(
            f"fit interval {split.fit} only partly covered by data {domain}"
        )
    dag.bind(frames)
    with _maybe_scope(tracer, "tile", f"fit_{split.fit.start}_{split.fit.end}"):
        with _maybe_scope(tracer, "group", "all"):
            result = evaluate_dag_window(
                dag,
                split.fit,
                phase=Phase.FIT,
                runner=_tracing_runner(
                    lambda n, p, i, s, iv: apply(n, p, i, state=s, interval=iv),
                    tracer,
                ),
            )
    return result.states


def _common_domain(frames: Mapping[str, StreamFrame]) -> Interval | None:
    doms = [f.domain for f in frames.values() if f.domain is not None]
    if not doms:
        return None
    start = max(d.start for d in doms)
    end = min(d.end for d in doms)
    return Interval(start, end) if start <= end else None


def _digest(frame: StreamFrame) -> str:
    return hashlib.sha256(canonical_bytes(frame)).hexdigest()


def _cache_delta(cache: TileCache | None, before: tuple[int, int, int, int]) -> dict:
    if cache is None:
        return {"enabled": False, "hits": 0, "misses": 0, "puts": 0, "evictions": 0}
    s = cache.stats
    now = (s.hits, s.misses, s.puts, s.evictions)
    keys = ("hits", "misses", "puts", "evictions")
    return {"enabled": True, **{k: now[i] - before[i] for i, k in enumerate(keys)}}


def _cache_snapshot(cache: TileCache | None) -> tuple[int, int, int, int]:
    if cache is None:
        return (0, 0, 0, 0)
    s = cache.stats
    return (s.hits, s.misses, s.puts, s.evictions)


# --- batch execution -------------------------------------------------------


def _tiled_predict(
    dag: Dag,
    interval: Interval,
    tplan: TemporalPlan,
    cplan: ColumnPlan,
    states: Mapping[str, NodeState],
    cache: TileCache | None,
    code_version: str,
    workers: int,
    tracer: Tracer | None,
) -> dict[str, StreamFrame]:
    """plan_temporal x plan_columnar x topological order, then recombine."""
    base = cached_runner(cache, code_version)

    def task(plan_window, group):
        result = evaluate_dag_window(
            dag,
            plan_window.window,
            phase=Phase.PREDICT,
            states=states,
            columns=group.columns,
            runner=_tracing_runner(base, tracer),
        )
        return {
            key: restrict(tile, plan_window.output)
            for key, tile in result.outputs.items()
        }

    grid: dict[tuple[int, int], dict[str, Tile]] = {}
    if workers > 1 and tracer is None:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                (ti, gi): pool.submit(task, pw, g)
                for ti, pw in enumerate(tplan.windows)
                for gi, g in enumerate(cplan.groups)
            }
            grid = {key: fut.result() for key, fut in futures.items()}
    else:
        for ti, pw in enumerate(tplan.windows):
            with _maybe_scope(tracer, "tile", f"t{pw.output.start}_{pw.output.end}"):
                for gi, g in enumerate(cplan.groups):
                    with _maybe_scope(tracer, "group", g.group_id):
                        grid[(ti, gi)] = task(pw, g)

    keys = sorted(grid[(0, 0)]) if grid else []
    outputs: dict[str, StreamFrame] = {}
    for key in keys:
        tiles = []
        for ti in range(len(tplan.windows)):
            tiles.append(
                merge_columns(
                    [grid[(ti, gi)][key] for gi in range(len(cplan.groups))]
                )
            )
        whole = tiles[0]
        for t in tiles[1:]:
            whole = concat(whole, t)
        outputs[key] = whole
    return outputs


def run_batch(
    config: BacktestConfig,
    data: Mapping[str, TimedFrame | StreamFrame],
    *,
    cache: TileCache | None = None,
    workers: int = 1,
    tracer: Tracer | None = None,
    out_dir: str | Path | None = None,
) -> RunResult:
    """Batch mode: all data available from the outset; the run interval is
    cut into two-tile plans and column groups, executed (optionally in
    parallel), and recombined. Output is bit-equal to a streaming run of the
    same config on the same data.
    """
    dag = config.dag
    w = dag.context_window()
    tau = config.effective_tile_length
    frames = _prepare_frames(data, config)
    dag.bind(frames)
    before = _cache_snapshot(cache)
    data_start = min(f.domain.start for f in frames.values())
    cplan = column_plan_for_dag(dag, _source_columns(dag))

    outputs: dict[str, StreamFrame] = {}
    states: dict[str, NodeState] = {}
    tplans: list[TemporalPlan] = []
    with _maybe_scope(tracer, "config", "batch"):
        for si, split in enumerate(config.effective_runner.splits):
            with _maybe_scope(tracer, "split", f"s{si}"):
                states = _fit_states(dag, split, frames, tracer)
                predict = split.predict
                tplan = plan_temporal(predict, tau, w, data_start=data_start)
                tplans.append(tplan)
                part = _tiled_predict(
                    dag, predict, tplan, cplan, states, cache,
                    config.code_version, workers, tracer,
                )
                for key, frame in part.items():
                    outputs[key] = (
                        frame if key not in outputs else concat(outputs[key], frame)
                    )

    manifest = RunManifest(
        mode="batch",
        config_text=config.canonical_text(),
        dag_config_text=dag.config.canonical_text() if dag.config else "",
        topology_text=describe_topology(dag.topology),
        tile_length=tau,
        graph_window=w,
        temporal_windows=[
            {"window": str(pw.window), "output": str(pw.output)}
            for tp in tplans
            for pw in tp.windows
        ],
        column_groups=[
            {"group": g.group_id, "columns": [c.label() for c in g.columns]}
            for g in cplan.groups
        ],
        cache_stats=_cache_delta(cache, before),
        output_digests={k: _digest(v) for k, v in sorted(outputs.items())},
        workers=workers,
    )
    result = RunResult(outputs=outputs, states=states, manifest=manifest)
    if out_dir is not None:
        _write_result(result, tplans, Path(out_dir))
    return result


def _write_result(result: RunResult, tplans: list[TemporalPlan], out_dir: Path) -> None:
    for key, frame in result.outputs.items():
        for tp in tplans:
            for pw in tp.windows:
                write_tile(restrict(frame, pw.output), out_dir / "tiles", key, "all")
    result.manifest.write(out_dir / "manifest.json")


# --- streaming execution ---------------------------------------------------


def run_streaming(
    config: BacktestConfig,
    data: Mapping[str, TimedFrame | StreamFrame],
    *,
    clock: ReplayedClock | None = None,
    cache: TileCache | None = None,
    tracer: Tracer | None = None,
) -> RunResult:
    """Streaming mode: one minimal tile per clock step behind knowledge-time
    gating.

    At clock step s the engine emits the output row for logical time
    t = s - delta, evaluated on the window [t - w(G) + 1, t] built from rows
    visible at s (k <= s); invisible rows enter as missing. With embargo
    delta covering the worst lateness, this is bit-equal to the batch run.

    Raises:
        ClockNotMonotone: the supplied clock goes backwards.
    """
    dag = config.dag
    w = dag.context_window()
    delta = config.embargo.delta
    run = config.run_interval
    timed = {
        name: TimedFrame(
            _apply_universe(_as_timed(f).frame, config.universe),
            _as_timed(f).knowledge,
        )
        for name, f in data.items()
    }
    for name, tf in timed.items():
        dom = tf.frame.domain
        if dom is None or not dom.contains(run):
            raise InsufficientHistory(
                f"stream {name!r} domain {dom} does not cover run {run}"
            )
    data_start = min(tf.frame.domain.start for tf in timed.values())
    if clock is None:
        clock = ReplayedClock(range(run.start + delta, run.end + delta + 1))
    before = _cache_snapshot(cache)
    base = cached_runner(cache, config.code_version)

    split = config.effective_runner.splits[0]
    fit_frames = {name: tf.frame for name, tf in timed.items()}
    states = _fit_states(dag, split, fit_frames, None)

    rows: dict[str, list[Tile]] = {}
    emitted: list[tuple[TimeIndex, TimeIndex]] = []
    with _maybe_scope(tracer, "config", "streaming"):
        with _maybe_scope(tracer, "split", "s0"):
            while (now := clock.advance()) is not None:
                t = now - delta
                if t < run.start:
                    continue
                if t > run.end:
                    break
                if emitted and t <= emitted[-1][1]:
                    continue  # clock held at one step; t already emitted
                window = Interval(max(data_start, t - w + 1), t)
                step_frames = {
                    name: _window_view(tf, window, now) for name, tf in timed.items()
                }
                for name, tf in timed.items():  # causality: nothing future-visible
                    assert _max_visible_knowledge(tf, window, now) <= now
                dag.bind(step_frames)
                with _maybe_scope(tracer, "tile", f"t{t}"):
                    with _maybe_scope(tracer, "group", "all"):
                        result = evaluate_dag_window(
                            dag,
                            window,
                            phase=Phase.PREDICT,
                            states=states,
                            runner=_tracing_runner(base, tracer),
                        )
                for key, tile in result.outputs.items():
                    rows.setdefault(key, []).append(restrict(tile, Interval(t, t)))
                emitted.append((now, t))

    outputs: dict[str, StreamFrame] = {}
    for key, tiles in rows.items():
        whole = tiles[0]
        for tile in tiles[1:]:
            whole = concat(whole, tile)
        outputs[key] = whole

    manifest = RunManifest(
        mode="streaming",
        config_text=config.canonical_text(),
        dag_config_text=dag.config.canonical_text() if dag.config else "",
        topology_text=describe_topology(dag.topology),
        tile_length=w,
        graph_window=w,
        temporal_windows=[{"window": f"per-step minimal tiles over {run}"}],
        column_groups=[{"group": "all"}],
        cache_stats=_cache_delta(cache, before),
        output_digests={k: _digest(v) for k, v in sorted(outputs.items())},
        workers=1,
        emissions=len(emitted),
    )
    return RunResult(
        outputs=outputs, states=states, manifest=manifest, emitted=tuple(emitted)
    )


def _window_view(tf: TimedFrame, window: Interval, now: TimeIndex) -> StreamFrame:
    """The input tile for one step: rows of ``window``, with rows not yet
    visible at ``now`` (k > now) as missing."""
    frame = tf.frame
    dom = frame.domain
    values = np.full((window.length, frame.n_cols), np.nan)
    for t in range(window.start, window.end + 1):
        if dom is None or not dom.contains_time(t):
            continue
        row = t - dom.start
        if tf.knowledge[row] <= now:
            values[t - window.start] = frame.values[row]
    return StreamFrame(window.start, frame.columns, values)


def _max_visible_knowledge(tf: TimedFrame, window: Interval, now: TimeIndex) -> TimeIndex:
    dom = tf.frame.domain
    best = -(10**18)
    if dom is None:
        return best
    for t in range(window.start, window.end + 1):
        if dom.contains_time(t):
            k = tf.knowledge[t - dom.start]
            if k <= now:
                best = max(best, k)
    return best


# --- fit/predict and rolling -----------------------------------------------


def run_fit_predict(
    dag: Dag,
    runner: RunnerSpec,
    data: Mapping[str, TimedFrame | StreamFrame],
    *,
    cache: TileCache | None = None,
    code_version: str = DEFAULT_CODE_VERSION,
) -> FitPredictResult:
    """One split: fit, optionally validate, then predict with frozen state.

    Raises:
        EmptyFitInterval: the split has no usable fit data.
    """
    split = runner.splits[0]
    frames = {name: _as_plain(f) for name, f in data.items()}
    dag.bind(frames)
    domain = _common_domain(frames)
    if split.fit is None:
        raise EmptyFitInterval("split has no fit interval")
    if domain is None or split.fit.start > domain.end or split.fit.end < domain.start:
        raise EmptyFitInterval(f"fit interval {split.fit} outside data {domain}")
    if not domain.contains(split.fit):
        raise InsufficientHistory(
            f"fit interval {split.fit} only partly covered by data {domain}"
        )

    fit_res = evaluate_dag_window(dag, split.fit, phase=Phase.FIT)
    states = fit_res.states
    validate_outputs = None
    if split.validate is not None:
        val_res = evaluate_dag_window(
            dag, split.validate, phase=Phase.VALIDATE, states=states
        )
        validate_outputs = val_res.outputs
    pred_res = evaluate_dag_window(
        dag,
        split.predict,
        phase=Phase.PREDICT,
        states=states,
        runner=cached_runner(cache, code_version),
    )
    return FitPredictResult(
        fit_outputs=fit_res.outputs,
        validate_outputs=validate_outputs,
        predict_outputs=pred_res.outputs,
        states=states,
    )


def run_rolling(
    dag: Dag,
    runner: RunnerSpec,
    data: Mapping[str, TimedFrame | StreamFrame],
    *,
    cache: TileCache | None = None,
    code_version: str = DEFAULT_CODE_VERSION,
) -> RollingResult:
    """Sequential fit/predict windows, re-fitting per window; the per-window
    states are retained so learned parameters can be examined over time.

    Raises:
        WindowOrderViolation: runner is not a rolling spec (ordering within
            it is enforced when the RunnerSpec is built).
    """
    if runner.kind not in ("rolling", "cross_validation"):
        raise WindowOrderViolation(f"run_rolling needs a rolling spec, got {runner.kind}")
    windows = []
    for split in runner.splits:
        single = RunnerSpec(
            "train_test" if split.fit != split.predict else "in_sample",
            (split,),
        )
        windows.append(
            run_fit_predict(dag, single, data, cache=cache, code_version=code_version)
        )
    return RollingResult(windows=windows)


# --- sweeps ----------------------------------------------------------------


def run_sweep(
    configs: Sequence[BacktestConfig],
    data: Mapping[str, TimedFrame | StreamFrame],
    *,
    cache: TileCache | None = None,
    workers: int = 1,
    tracer: Tracer | None = None,
) -> list[SweepEntry]:
    """Independent runs over a shared cache; configs with coinciding DAG
    prefixes reuse each other's node outputs. A failing config is reported
    in its slot without stopping the sweep."""
    entries: list[SweepEntry] = []
    for config in configs:
        try:
            result = run_batch(
                config, data, cache=cache, workers=workers, tracer=tracer
            )
        except TileflowError as exc:
            entries.append(
                SweepEntry(ok=False, error=f"{type(exc).__name__}: {exc}")
            )
        else:
            entries.append(SweepEntry(ok=True, result=result))
    return entries
