"""Clocks, knowledge-time gating, embargo, and run modes.

The suite's center of gravity is TestReconciliation: batch and streaming runs
of the same config on the same data must be bit-equal, including under
embargo with late-arriving rows.
"""

import json

import numpy as np
import pytest

from tileflow.cache import TileCache
from tileflow.engine import (
    BacktestConfig,
    EmbargoSpec,
    RealClock,
    ReplayedClock,
    RunnerSpec,
    Split,
    StaticClock,
    TimedFrame,
    Tracer,
    check_trace_nesting,
    run_batch,
    run_fit_predict,
    run_rolling,
    run_streaming,
    run_sweep,
    visible_slice,
)
from tileflow.errors import (
    ClockNotMonotone,
    EmptyFitInterval,
    InsufficientHistory,
    StateRequired,
    TileTooSmall,
    WindowOrderViolation,
)
from tileflow.frame import ColumnKey, Interval, StreamFrame, canonical_bytes, frames_equal
from tileflow.graph import Dag
from tileflow.node import Phase, apply
from tileflow.stdnodes import (
    SinkNode,
    SourceNode,
    fir,
    learned_window_ma,
    pointwise,
    rolling_mean,
    row_map,
    shift,
)

from conftest import market_frame, random_std_dag

A = ColumnKey("A", "px")


def simple_dag(*mid_nodes):
    """source -> given nodes in a chain -> sink, over stream 'prices'."""
    nodes = [SourceNode("src", "prices"), *mid_nodes, SinkNode("out")]
    ids = ["src"] + [n.spec.nid for n in mid_nodes] + ["out"]
    edges = list(zip(ids, ids[1:]))
    return Dag.from_nodes(nodes, edges)


def frame_of(start, values):
    return StreamFrame.from_columns(start, {A: values})


class TestClocks:
    def test_static_never_changes(self):
        clock = StaticClock(7)
        assert clock.now == 7

    def test_replayed_walks_schedule(self):
        clock = ReplayedClock([1, 2, 2, 5])
        assert [clock.advance() for _ in range(4)] == [1, 2, 2, 5]
        assert clock.now == 5
        assert clock.advance() is None

    def test_replayed_rejects_backwards(self):
        clock = ReplayedClock([3, 1])
        clock.advance()
        with pytest.raises(ClockNotMonotone):
            clock.advance()

    def test_now_before_start_rejected(self):
        with pytest.raises(ClockNotMonotone):
            ReplayedClock([1]).now

    def test_real_clock_is_wall_driven_and_monotone(self):
        clock = RealClock(step_seconds=1000.0)
        first = clock.advance()
        second = clock.advance()
        assert second >= first


class TestVisibleSlice:
    def test_static_clock_past_all_knowledge_sees_everything(self):
        f = frame_of(0, [1.0, 2.0, 3.0])
        timed = TimedFrame.punctual(f)
        assert frames_equal(visible_slice(timed, StaticClock(99)), f)

    def test_clock_before_min_knowledge_sees_nothing(self):
        timed = TimedFrame.punctual(frame_of(5, [1.0, 2.0]))
        assert visible_slice(timed, 4).n_rows == 0

    def test_punctual_gives_prefix(self):
        timed = TimedFrame.punctual(frame_of(0, [1.0, 2.0, 3.0, 4.0]))
        sliced = visible_slice(timed, 2)
        assert sliced.domain == Interval(0, 2)
        np.testing.assert_array_equal(sliced.values[:, 0], [1.0, 2.0, 3.0])

    def test_late_interior_row_is_masked(self):
        timed = TimedFrame(frame_of(0, [1.0, 2.0, 3.0]), knowledge=(0, 5, 2))
        sliced = visible_slice(timed, 2)
        assert sliced.domain == Interval(0, 2)
        assert np.isnan(sliced.values[1, 0])
        assert sliced.values[2, 0] == 3.0

    def test_plain_frame_treated_as_punctual(self):
        f = frame_of(0, [1.0, 2.0, 3.0])
        assert visible_slice(f, 1).domain == Interval(0, 1)

    def test_knowledge_length_must_match(self):
        with pytest.raises(ValueError):
            TimedFrame(frame_of(0, [1.0, 2.0]), knowledge=(0,))

    def test_delayed_constructor(self):
        timed = TimedFrame.delayed(frame_of(0, [1.0, 2.0]), lag=3)
        assert timed.knowledge == (3, 4)


class TestRunnerSpec:
    def test_in_sample_must_coincide(self):
        with pytest.raises(WindowOrderViolation):
            RunnerSpec("in_sample", (Split(Interval(0, 5), Interval(0, 6)),))

    def test_fit_must_precede_predict(self):
        with pytest.raises(WindowOrderViolation):
            RunnerSpec.train_test(Interval(0, 10), Interval(10, 20))
        spec = RunnerSpec.train_test(Interval(0, 9), Interval(10, 20))
        assert spec.splits[0].fit.end < spec.splits[0].predict.start

    def test_validate_sits_between(self):
        with pytest.raises(WindowOrderViolation):
            RunnerSpec.train_validate_test(
                Interval(0, 9), Interval(15, 20), Interval(12, 30)
            )
        RunnerSpec.train_validate_test(Interval(0, 9), Interval(10, 14), Interval(15, 30))

    def test_rolling_windows_adjacent(self):
        spec = RunnerSpec.rolling(start=0, fit_length=10, predict_length=5, n_windows=3)
        for s in spec.splits:
            assert s.predict.start == s.fit.end + 1  # test follows training
        assert [s.predict for s in spec.splits] == [
            Interval(10, 14), Interval(15, 19), Interval(20, 24),
        ]

    def test_overlapping_predicts_rejected(self):
        with pytest.raises(WindowOrderViolation):
            RunnerSpec(
                "rolling",
                (
                    Split(Interval(0, 4), Interval(5, 10)),
                    Split(Interval(5, 9), Interval(10, 15)),
                ),
            )


class TestBacktestConfig:
    def test_small_tile_rejected(self, rng):
        dag = simple_dag(fir("f", [1.0, 1.0, 1.0]))  # w(G) = 3
        with pytest.raises(TileTooSmall):
            BacktestConfig(dag, Interval(0, 9), tile_length=2)

    def test_defaults(self):
        dag = simple_dag(fir("f", [1.0, 1.0, 1.0]))
        config = BacktestConfig(dag, Interval(0, 9))
        assert config.effective_tile_length == 3
        assert config.effective_runner.kind == "in_sample"


class TestRunBatch:
    def test_single_compute_node(self, rng):
        dag = simple_dag(pointwise("sq", "square"))
        frame = market_frame(rng, 0, 10, entities=("A",))
        result = run_batch(BacktestConfig(dag, Interval(0, 9)), {"prices": frame})
        np.testing.assert_array_equal(
            result.outputs["out"].values, frame.values**2
        )

    def test_tau_4_vs_8_identical(self, rng):
        frame = market_frame(rng, 0, 60)
        outs = []
        for tau in (4, 8):
            dag = simple_dag(fir("d", [-1.0, 1.0]))
            config = BacktestConfig(dag, Interval(10, 49), tile_length=tau)
            outs.append(run_batch(config, {"prices": frame}).outputs["out"])
        assert canonical_bytes(outs[0]) == canonical_bytes(outs[1])

    def test_sum_then_shift_matches_direct_formula(self, rng):
        # c = (a + b) shifted one step, built as row_map + shift
        n = 20
        a = rng.normal(size=n)
        b = rng.normal(size=n)
        frame = StreamFrame.from_columns(
            0, {ColumnKey("X", "a"): a, ColumnKey("X", "b"): b}
        )
        dag = simple_dag(row_map("c", ["a", "b"], "c"), shift("lag", 1))
        result = run_batch(BacktestConfig(dag, Interval(0, n - 1)), {"prices": frame})
        got = result.outputs["out"]
        assert got.columns == (ColumnKey("X", "c"),)
        expect = np.empty(n)
        expect[0] = np.nan
        expect[1:] = a[:-1] + b[:-1]
        np.testing.assert_array_equal(got.values[1:, 0], expect[1:])
        assert np.isnan(got.values[0, 0])

    def test_workers_bit_identical(self, rng):
        for _ in range(5):
            dag = random_std_dag(rng)
            w = dag.context_window()
            frame = market_frame(rng, 0, 6 * w + 50)
            config = BacktestConfig(
                dag, Interval(2 * w, 4 * w + 30), tile_length=w + 1
            )
            serial = run_batch(config, {"prices": frame}, workers=1)
            parallel = run_batch(config, {"prices": frame}, workers=4)
            assert serial.manifest.output_digests == parallel.manifest.output_digests

    def test_universe_filters_entities(self, rng):
        frame = market_frame(rng, 0, 15, entities=("A", "B", "C"))
        dag = simple_dag(rolling_mean("m", 3))
        config = BacktestConfig(dag, Interval(0, 14), universe=("A", "C"))
        result = run_batch(config, {"prices": frame})
        assert [c.entity for c in result.outputs["out"].columns] == ["A", "C"]

    def test_run_beyond_data_rejected(self, rng):
        dag = simple_dag(pointwise("sq", "square"))
        frame = market_frame(rng, 0, 10)
        with pytest.raises(InsufficientHistory):
            run_batch(BacktestConfig(dag, Interval(0, 20)), {"prices": frame})

    def test_manifest_and_output_files(self, rng, tmp_path):
        dag = simple_dag(rolling_mean("m", 2))
        frame = market_frame(rng, 0, 20)
        config = BacktestConfig(dag, Interval(4, 19), tile_length=4)
        result = run_batch(
            config, {"prices": frame}, out_dir=tmp_path, cache=TileCache(tmp_path / "c")
        )
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["mode"] == "batch"
        assert manifest["graph_window"] == 2
        assert len(manifest["temporal_windows"]) == 4
        assert manifest["cache_stats"]["enabled"] is True
        assert manifest["output_digests"]["out"] == result.manifest.output_digests["out"]
        tiles = sorted(p.name for p in (tmp_path / "tiles" / "out" / "all").iterdir())
        assert tiles == ["12_15.tile", "16_19.tile", "4_7.tile", "8_11.tile"]

    def test_cache_transparency(self, rng, tmp_path):
        dag = simple_dag(fir("f", [0.5, 0.25, 0.25]), pointwise("sq", "square"))
        frame = market_frame(rng, 0, 40)
        config = BacktestConfig(dag, Interval(6, 39), tile_length=6)
        plain = run_batch(config, {"prices": frame})
        cache = TileCache(tmp_path)
        warm = run_batch(config, {"prices": frame}, cache=cache)
        hot = run_batch(config, {"prices": frame}, cache=cache)
        assert plain.manifest.output_digests == warm.manifest.output_digests
        assert plain.manifest.output_digests == hot.manifest.output_digests
        assert hot.manifest.cache_stats["hits"] > 0
        assert hot.manifest.cache_stats["misses"] == 0


class TestReconciliation:
    def test_batch_equals_streaming_random_dags(self, rng):
        for _ in range(5):
            dag = random_std_dag(rng)
            w = dag.context_window()
            frame = market_frame(rng, 0, 4 * w + 40)
            run = Interval(0, frame.domain.end)
            config = BacktestConfig(dag, run, tile_length=w + 2)
            batch = run_batch(config, {"prices": frame})
            stream = run_streaming(config, {"prices": frame})
            assert batch.manifest.output_digests == stream.manifest.output_digests

    def test_streaming_emission_times_respect_embargo(self, rng):
        dag = simple_dag(rolling_mean("m", 2))
        frame = market_frame(rng, 0, 12)
        config = BacktestConfig(dag, Interval(0, 11), embargo=EmbargoSpec(2))
        result = run_streaming(config, {"prices": frame})
        assert all(clock == t + 2 for clock, t in result.emitted)
        assert [t for _, t in result.emitted] == list(range(12))

    def test_embargo_absorbs_late_arrivals(self, rng):
        # k(u) = u + 1 everywhere; delta = 1 waits exactly long enough
        dag = simple_dag(fir("f", [0.2, 0.8]), rolling_mean("m", 3))
        frame = market_frame(rng, 0, 30)
        late = TimedFrame.delayed(frame, lag=1)
        config = BacktestConfig(dag, Interval(0, 29), embargo=EmbargoSpec(1))
        ideal = run_batch(BacktestConfig(dag, Interval(0, 29)), {"prices": frame})
        embargoed = run_streaming(config, {"prices": late})
        assert ideal.manifest.output_digests == embargoed.manifest.output_digests

    def test_no_embargo_with_late_data_diverges(self, rng):
        dag = simple_dag(fir("f", [0.2, 0.8]))
        frame = market_frame(rng, 0, 20)
        late = TimedFrame.delayed(frame, lag=1)
        config = BacktestConfig(dag, Interval(0, 19))
        ideal = run_batch(config, {"prices": frame})
        rushed = run_streaming(config, {"prices": late})
        assert ideal.manifest.output_digests != rushed.manifest.output_digests

    def test_streaming_with_cache_bit_equal(self, rng, tmp_path):
        dag = simple_dag(rolling_mean("m", 4))
        frame = market_frame(rng, 0, 25)
        config = BacktestConfig(dag, Interval(0, 24))
        plain = run_streaming(config, {"prices": frame})
        cache = TileCache(tmp_path)
        warm = run_streaming(config, {"prices": frame}, cache=cache)
        hot = run_streaming(config, {"prices": frame}, cache=cache)
        assert plain.manifest.output_digests == warm.manifest.output_digests
        assert plain.manifest.output_digests == hot.manifest.output_digests
        assert hot.manifest.cache_stats["hits"] > 0

    def test_monotone_clock_enforced(self, rng):
        dag = simple_dag(pointwise("sq", "square"))
        frame = market_frame(rng, 0, 10)
        config = BacktestConfig(dag, Interval(0, 9))
        clock = ReplayedClock([0, 1, 2, 1])
        with pytest.raises(ClockNotMonotone):
            run_streaming(config, {"prices": frame}, clock=clock)


class TestFitPredict:
    def _learned_dag(self):
        return simple_dag(learned_window_ma("ma", (2, 5)))

    def test_stateless_fit_and_predict_identical(self, rng):
        dag = simple_dag(rolling_mean("m", 3))
        frame = market_frame(rng, 0, 20)
        runner = RunnerSpec.in_sample(Interval(0, 19))
        result = run_fit_predict(dag, runner, {"prices": frame})
        assert canonical_bytes(result.fit_outputs["out"]) == canonical_bytes(
            result.predict_outputs["out"]
        )

    def test_stateful_train_test(self, rng):
        dag = self._learned_dag()
        frame = market_frame(rng, 0, 60, entities=("A",))
        runner = RunnerSpec.train_test(Interval(0, 39), Interval(40, 59))
        result = run_fit_predict(dag, runner, {"prices": frame})
        assert "ma" in result.states
        assert not result.states["ma"].is_empty
        assert result.predict_outputs["out"].domain == Interval(40, 59)

    def test_predict_without_fit_raises(self, rng):
        node = learned_window_ma("ma", (2, 5))
        frame = market_frame(rng, 0, 20, entities=("A",))
        with pytest.raises(StateRequired):
            apply(node, Phase.PREDICT, (frame,))

    def test_fit_outside_data_rejected(self, rng):
        dag = self._learned_dag()
        frame = market_frame(rng, 50, 30, entities=("A",))
        runner = RunnerSpec.train_test(Interval(0, 19), Interval(55, 70))
        with pytest.raises(EmptyFitInterval):
            run_fit_predict(dag, runner, {"prices": frame})

    def test_validate_phase_runs(self, rng):
        dag = simple_dag(rolling_mean("m", 2))
        frame = market_frame(rng, 0, 30)
        runner = RunnerSpec.train_validate_test(
            Interval(0, 9), Interval(10, 19), Interval(20, 29)
        )
        result = run_fit_predict(dag, runner, {"prices": frame})
        assert result.validate_outputs is not None
        assert result.validate_outputs["out"].domain == Interval(10, 19)


class TestRolling:
    def test_three_windows_three_snapshots_disjoint_predicts(self, rng):
        dag = simple_dag(learned_window_ma("ma", (2, 4)))
        frame = market_frame(rng, 0, 40, entities=("A",))
        runner = RunnerSpec.rolling(start=0, fit_length=10, predict_length=5, n_windows=3)
        result = run_rolling(dag, runner, {"prices": frame})
        assert len(result.snapshots) == 3
        assert all("ma" in snap for snap in result.snapshots)
        intervals = result.predict_intervals
        assert intervals == [Interval(10, 14), Interval(15, 19), Interval(20, 24)]

    def test_single_window_equals_fit_predict(self, rng):
        dag = simple_dag(rolling_mean("m", 2))
        frame = market_frame(rng, 0, 30)
        runner = RunnerSpec.rolling(start=0, fit_length=10, predict_length=10, n_windows=1)
        rolled = run_rolling(dag, runner, {"prices": frame})
        single = run_fit_predict(
            dag, RunnerSpec.train_test(Interval(0, 9), Interval(10, 19)), {"prices": frame}
        )
        assert canonical_bytes(rolled.windows[0].predict_outputs["out"]) == canonical_bytes(
            single.predict_outputs["out"]
        )

    def test_non_rolling_spec_rejected(self, rng):
        dag = simple_dag(rolling_mean("m", 2))
        with pytest.raises(WindowOrderViolation):
            run_rolling(dag, RunnerSpec.in_sample(Interval(0, 9)), {})


class TestSweep:
    def test_shared_upstream_hits(self, rng, tmp_path):
        frame = market_frame(rng, 0, 40)
        cache = TileCache(tmp_path)
        configs = []
        for tail_fn in ("square", "negate"):  # same chain, different tail
            dag = simple_dag(fir("f", [1.0, 1.0, 1.0]), pointwise("tail", tail_fn))
            configs.append(BacktestConfig(dag, Interval(5, 39), tile_length=5))
        entries = run_sweep(configs, {"prices": frame}, cache=cache)
        assert all(e.ok for e in entries)
        # the second run reuses every evaluation of the shared fir node
        assert entries[1].result.manifest.cache_stats["hits"] >= 1

    def test_single_config_matches_run_batch(self, rng):
        dag = simple_dag(rolling_mean("m", 2))
        frame = market_frame(rng, 0, 20)
        config = BacktestConfig(dag, Interval(2, 19))
        [entry] = run_sweep([config], {"prices": frame})
        direct = run_batch(config, {"prices": frame})
        assert entry.result.manifest.output_digests == direct.manifest.output_digests

    def test_empty_sweep(self):
        assert run_sweep([], {}) == []

    def test_errors_isolated_per_config(self, rng):
        frame = market_frame(rng, 0, 10)
        good = BacktestConfig(simple_dag(pointwise("p", "abs")), Interval(0, 9))
        bad = BacktestConfig(simple_dag(pointwise("p", "abs")), Interval(0, 50))
        entries = run_sweep([bad, good], {"prices": frame})
        assert not entries[0].ok and "InsufficientHistory" in entries[0].error
        assert entries[1].ok


class TestTraceNesting:
    def test_batch_trace_well_nested(self, rng):
        dag = simple_dag(fir("f", [1.0, 1.0]), pointwise("sq", "square"))
        frame = market_frame(rng, 0, 20)
        tracer = Tracer()
        run_batch(
            BacktestConfig(dag, Interval(2, 17), tile_length=4),
            {"prices": frame},
            tracer=tracer,
        )
        check_trace_nesting(tracer.events)
        levels = {e.level for e in tracer.events}
        assert levels == {"config", "split", "tile", "group", "node"}

    def test_nodes_fire_in_topological_order_within_groups(self, rng):
        dag = simple_dag(fir("f", [1.0, 1.0]))
        frame = market_frame(rng, 0, 20)
        tracer = Tracer()
        run_batch(
            BacktestConfig(dag, Interval(2, 17), tile_length=4),
            {"prices": frame},
            tracer=tracer,
        )
        group_nodes = []
        current = None
        for ev in tracer.events:
            if ev.level == "group" and ev.kind == "enter":
                current = []
            elif ev.level == "group" and ev.kind == "exit":
                group_nodes.append(current)
                current = None
            elif ev.level == "node" and ev.kind == "enter" and current is not None:
                current.append(ev.label)
        assert group_nodes
        for nodes in group_nodes:
            assert nodes == list(dag.order)

    def test_sweep_trace_well_nested(self, rng):
        frame = market_frame(rng, 0, 20)
        configs = [
            BacktestConfig(simple_dag(pointwise("p", "abs")), Interval(0, 19)),
            BacktestConfig(simple_dag(rolling_mean("m", 2)), Interval(1, 19)),
        ]
        tracer = Tracer()
        run_sweep(configs, {"prices": frame}, tracer=tracer)
        check_trace_nesting(tracer.events)
        assert sum(1 for e in tracer.events if e.level == "config" and e.kind == "enter") == 2

    def test_streaming_trace_well_nested(self, rng):
        dag = simple_dag(rolling_mean("m", 2))
        frame = market_frame(rng, 0, 12)
        tracer = Tracer()
        run_streaming(
            BacktestConfig(dag, Interval(0, 11)), {"prices": frame}, tracer=tracer
        )
        check_trace_nesting(tracer.events)

    def test_malformed_traces_rejected(self):
        from tileflow.engine import TraceEvent

        with pytest.raises(ValueError):
            check_trace_nesting([TraceEvent("enter", "node", "x"),
                                 TraceEvent("enter", "tile", "t")])
        with pytest.raises(ValueError):
            check_trace_nesting([TraceEvent("enter", "config", "c")])
        with pytest.raises(ValueError):
            check_trace_nesting([TraceEvent("exit", "config", "c")])
