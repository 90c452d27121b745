"""Tiling: temporal plans, column plans, two-tile execution.

The two-tile theorem is the reason any of this works: if the tile length tau
is at least the graph context window w(G), evaluating the DAG on the extended
window [t - 2*tau + 1, t] and keeping only the second tile reproduces, bit for
bit, what a full-history run would produce there. plan_temporal refuses
tau < w(G); build_tau_counterexample materializes why (a spike just inside the
graph window but outside the two-tile window flips the output).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InsufficientHistory, TauNotSmall, TileTooSmall
from .frame import (
    ColumnGroup,
    ColumnKey,
    Interval,
    StreamFrame,
    Tile,
    TwoTileWindow,
    restrict,
)
from .graph import Dag
from .node import Node, NodeKind, NodeState, Phase, Separability, apply
from .stdnodes import SinkNode, SourceNode, fir

# A node runner has the same shape as node.apply; the engine swaps in a
# cache-aware one without tiling having to know about the cache.
NodeRunner = Callable[..., tuple[tuple[Tile, ...], NodeState]]


def _plain_runner(node, phase, inputs, state, interval):
    return apply(node, phase, inputs, state=state, interval=interval)


# --- temporal planning -----------------------------------------------------


@dataclass(frozen=True)
class TileWindowPlan:
    """One scheduled evaluation: run the DAG on ``window``, keep ``output``."""

    window: Interval
    output: Interval


@dataclass(frozen=True)
class TemporalPlan:
    """Consecutive output tiles of length tau, each evaluated with a leading
    context prefix of up to tau rows (the two-tile realization).

    The output intervals partition the run interval exactly once; windows are
    truncated at the data start, where outputs inside the first w(G) - 1 rows
    of available history are expected missing.
    """

    run_interval: Interval
    tile_length: int
    graph_window: int
    data_start: int
    windows: tuple[TileWindowPlan, ...]

    @property
    def context_rows(self) -> int:
        return self.tile_length


def plan_temporal(
    run_interval: Interval,
    tile_length: int,
    graph_window: int,
    data_start: int | None = None,
) -> TemporalPlan:
    """Slice a run interval into two-tile evaluation windows.

    Raises:
        TileTooSmall: if tile_length < graph_window — such a tiling provably
            diverges from the untiled run (see build_tau_counterexample).
    """
    tau = int(tile_length)
    if tau < graph_window:
        raise TileTooSmall(
            f"tile length {tau} < graph context window {graph_window}"
        )
    if data_start is None:
        data_start = run_interval.start
    if data_start > run_interval.start:
        raise InsufficientHistory(
            f"data starts at {data_start}, after run start {run_interval.start}"
        )
    windows = []
    a = run_interval.start
    while a <= run_interval.end:
        b = min(a + tau - 1, run_interval.end)
        windows.append(
            TileWindowPlan(window=Interval(max(data_start, a - tau), b),
                           output=Interval(a, b))
        )
        a = b + 1
    return TemporalPlan(
        run_interval=run_interval,
        tile_length=tau,
        graph_window=graph_window,
        data_start=data_start,
        windows=tuple(windows),
    )


# --- columnar planning -----------------------------------------------------


@dataclass(frozen=True)
class ColumnPlan:
    """Finest legal column partition plus the combining-map identifier."""

    groups: tuple[ColumnGroup, ...]
    combine: str = "column_concat"


def plan_columnar(
    columns: Iterable[ColumnKey], separabilities: Iterable[Separability]
) -> ColumnPlan:
    """Finest partition compatible with every node's separability.

    Column-separable nodes contribute their atomic blocks (per column, per
    feature, or per entity); any cross-sectional node forces the full
    cross-section it reads — conservatively, all columns — into one group.
    The result is the transitive closure of "must stay together".
    """
    cols = sorted(set(columns), key=lambda c: c.sort_key)
    parent: dict[ColumnKey, ColumnKey] = {c: c for c in cols}

    def find(c: ColumnKey) -> ColumnKey:
        while parent[c] != c:
            parent[c] = parent[parent[c]]
            c = parent[c]
        return c

    def union(a: ColumnKey, b: ColumnKey) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[rb] = ra

    for sep in separabilities:
        if not sep.is_separable:
            for a, b in zip(cols, cols[1:]):
                union(a, b)
        elif sep.kind == "feature":
            by = {}
            for c in cols:
                by.setdefault(c.feature, []).append(c)
            for group in by.values():
                for a, b in zip(group, group[1:]):
                    union(a, b)
        elif sep.kind == "entity":
            by = {}
            for c in cols:
                by.setdefault(c.entity, []).append(c)
            for group in by.values():
                for a, b in zip(group, group[1:]):
                    union(a, b)
        # "column": no constraint
    blocks: dict[ColumnKey, list[ColumnKey]] = {}
    for c in cols:
        blocks.setdefault(find(c), []).append(c)
    ordered = sorted(blocks.values(), key=lambda g: g[0].sort_key)
    groups = tuple(
        ColumnGroup(group_id=f"g{i:03d}", columns=tuple(g))
        for i, g in enumerate(ordered)
    )
    return ColumnPlan(groups=groups)


def column_plan_for_dag(dag: Dag, columns: Iterable[ColumnKey]) -> ColumnPlan:
    return plan_columnar(
        columns, [n.spec.separability for n in dag.nodes.values()]
    )


# --- single-window DAG evaluation ------------------------------------------


@dataclass
class WindowResult:
    """Outputs of one DAG evaluation window, keyed by sink id (or, for a
    sink with several inputs, ``sink:port``; DAGs without sinks report their
    terminal nodes' outputs the same way)."""

    window: Interval
    outputs: dict[str, Tile]
    states: dict[str, NodeState]


def evaluate_dag_window(
    dag: Dag,
    window: Interval,
    phase: Phase = Phase.PREDICT,
    states: Mapping[str, NodeState] | None = None,
    columns: Sequence[ColumnKey] | None = None,
    runner: NodeRunner = _plain_runner,
    edge_tap: Callable[[object, Tile], None] | None = None,
) -> WindowResult:
    """Evaluate every node once, in topological order, on one interval.

    ``columns`` restricts the source emissions to a column group; ``runner``
    lets callers intercept node evaluation (caching); ``edge_tap`` observes
    every tile that flows along an edge (capture/replay).
    """
    states = dict(states) if states else {}
    colset = set(columns) if columns is not None else None
    port_out: dict[tuple[str, int], Tile] = {}
    results: dict[str, Tile] = {}
    for nid in dag.order:
        node = dag.nodes[nid]
        in_edges = dag.topology.in_edges(nid)
        inputs = tuple(port_out[(e.src, e.src_port)] for e in in_edges)
        outs, new_state = runner(node, phase, inputs, states.get(nid), window)
        if colset is not None and isinstance(node, SourceNode):
            keep = [c for c in outs[0].columns if c in colset]
            outs = (restrict(outs[0], window, keep),)
        states[nid] = new_state
        for port, tile in enumerate(outs):
            port_out[(nid, port)] = tile
        if edge_tap is not None:
            for e in dag.topology.edges:
                if e.src == nid:
                    edge_tap(e, port_out[(nid, e.src_port)])
        if node.spec.kind is NodeKind.SINK:
            if len(inputs) == 1:
                results[nid] = inputs[0]
            else:
                for port, tile in enumerate(inputs):
                    results[f"{nid}:{port}"] = tile
    if not results:  # no sinks: report terminal node outputs
        for nid in dag.topology.terminal_nodes:
            spec = dag.nodes[nid].spec
            if spec.outputs_n == 1:
                results[nid] = port_out[(nid, 0)]
            else:
                for port in range(spec.outputs_n):
                    results[f"{nid}:{port}"] = port_out[(nid, port)]
    return WindowResult(window=window, outputs=results, states=states)


def node_source_frame(node: SourceNode) -> StreamFrame:
    if node._frame is None:
        raise InsufficientHistory(f"source {node.spec.nid}: no stream bound")
    return node._frame


# --- two-tile execution ----------------------------------------------------


def run_two_tile(
    dag: Dag,
    data: Mapping[str, StreamFrame],
    two_tile: TwoTileWindow,
    phase: Phase = Phase.PREDICT,
    states: Mapping[str, NodeState] | None = None,
    enforce_tile_size: bool = True,
) -> WindowResult:
    """Evaluate on the extended window [t - 2*tau + 1, t]; keep the second
    tile [t - tau + 1, t].

    With tau >= w(G) the kept outputs are bit-equal to a full-history run
    (the two-tile theorem). ``enforce_tile_size=False`` lets validation code
    run deliberately undersized tilings to demonstrate the failure.

    Raises:
        TileTooSmall: tau < w(G) and enforcement is on.
        InsufficientHistory: the data does not cover the extended window.
    """
    w_g = dag.context_window()
    if enforce_tile_size and two_tile.tile_length < w_g:
        raise TileTooSmall(
            f"tau {two_tile.tile_length} < graph context window {w_g}"
        )
    dag.bind(data)
    for frame in data.values():
        dom = frame.domain
        if dom is None or not dom.contains(two_tile.window):
            raise InsufficientHistory(
                f"two-tile window {two_tile.window} not covered by data {dom}"
            )
    full = evaluate_dag_window(dag, two_tile.window, phase=phase, states=states)
    kept = {
        key: restrict(tile, two_tile.second_tile)
        for key, tile in full.outputs.items()
    }
    return WindowResult(window=two_tile.second_tile, outputs=kept, states=full.states)


# --- the tau-necessity counterexample --------------------------------------


@dataclass(frozen=True)
class TauCounterexample:
    """A materialized witness that tau >= w(G) is necessary, not just
    sufficient: a unit spike at t - w(G) + 1 is inside the streaming context
    but outside the undersized two-tile window, so the two executions
    disagree at t."""

    dag: Dag
    data: dict[str, StreamFrame]
    t: int
    spike_time: int
    tau: int
    graph_window: int

    def streaming_value(self) -> Tile:
        """Output row at t from minimal streaming context [t - w(G) + 1, t]."""
        self.dag.bind(self.data)
        window = Interval(self.t - self.graph_window + 1, self.t)
        result = evaluate_dag_window(self.dag, window)
        (tile,) = result.outputs.values()
        return restrict(tile, Interval(self.t, self.t))

    def two_tile_value(self) -> Tile:
        """Output row at t from the undersized two-tile window."""
        result = run_two_tile(
            self.dag,
            self.data,
            TwoTileWindow(right_endpoint=self.t, tile_length=self.tau),
            enforce_tile_size=False,
        )
        (tile,) = result.outputs.values()
        return restrict(tile, Interval(self.t, self.t))


def build_tau_counterexample(
    chain_windows: Sequence[int], tau: int
) -> TauCounterexample:
    """Construct the witness for a chain of rolling sums with the given
    per-node windows (each >= 2).

    The spike sits at t - w(G) + 1: the oldest row the full-history run still
    reads at t, and strictly outside the two-tile window when 2*tau < w(G)
    (always true for tau = floor(w(G) / 2) with odd w(G)). Larger undersized
    tau still diverges from the untiled run, but at the start of the kept
    tile rather than at t, so this particular witness does not cover it.

    Raises:
        TauNotSmall: if tau >= w(G), where no counterexample exists.
        ValueError: if w(G) <= 2*tau, where the spike would be visible to
            the two-tile run and this witness proves nothing.
    """
    if not chain_windows or any(w < 2 for w in chain_windows):
        raise ValueError("chain windows must all be >= 2")
    if tau < 1:
        raise ValueError("tau must be >= 1")
    w_g = 1 + sum(w - 1 for w in chain_windows)
    if tau >= w_g:
        raise TauNotSmall(f"tau {tau} >= graph context window {w_g}")
    if 2 * tau >= w_g:
        raise ValueError(
            f"spike witness needs 2*tau < w(G); got tau={tau}, w(G)={w_g}"
        )
    nodes: list[Node] = [SourceNode("src", "spike")]
    edges: list[tuple] = []
    last = "src"
    for i, w in enumerate(chain_windows):
        nid = f"sum{i}"
        nodes.append(fir(nid, [1.0] * w))  # rolling sum: every tap matters
        edges.append((last, nid))
        last = nid
    nodes.append(SinkNode("out"))
    edges.append((last, "out"))
    dag = Dag.from_nodes(nodes, edges)

    history = 2 * max(tau, w_g) + w_g + 4
    t = history - 1
    spike_time = t - w_g + 1
    values = np.zeros(history)
    values[spike_time] = 1.0
    frame = StreamFrame.from_columns(0, {ColumnKey("S", "x"): values})
    return TauCounterexample(
        dag=dag,
        data={"spike": frame},
        t=t,
        spike_time=spike_time,
        tau=tau,
        graph_window=w_g,
    )
