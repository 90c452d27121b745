"""Validation harness for tiled DAG execution.

Four independent checks live here:

- :func:`tiling_validation` re-runs a DAG under several tile lengths and
  randomized boundary placements and compares every tiling bit-exactly
  against the full-history reference, including a minimal-context streaming
  pass that catches nodes whose declared window understates what they read.
- :func:`detect_future_peeking` estimates how often a randomly placed tiling
  exposes a node that reads the future, by comparing streaming against
  two-tile execution on the same kept tile.
- :func:`reconcile` compares two finished runs on their overlapping output
  interval and locates the first diverging (time, column) cell.
- :func:`capture` / :func:`playback` record the tiles crossing a cut of the
  DAG and re-run just the downstream subgraph against the recording.

"Bit-equal" throughout means equality of the canonical cell encoding: all
NaNs are collapsed to one quiet-NaN pattern, everything else must match bit
for bit. A float tolerance mode exists on :func:`reconcile` but is off by
default — the determinism guarantees are exact, so a tolerance would only
hide bugs.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    ColumnMismatch,
    InsufficientHistory,
    InvalidCut,
    NoOverlap,
    TileTooSmall,
)
from .frame import (
    ColumnKey,
    Interval,
    StreamFrame,
    Tile,
    TwoTileWindow,
    _canonical_cell_bits,
    canonical_bytes,
    concat,
    from_canonical_bytes,
    restrict,
)
from .graph import Dag, Edge
from .node import NodeState, Phase
from .stdnodes import SourceNode
from .tiling import (
    TileWindowPlan,
    WindowResult,
    evaluate_dag_window,
    plan_temporal,
    run_two_tile,
)

__all__ = [
    "FailureMode",
    "TilingDiff",
    "ValidationReport",
    "tiling_validation",
    "DetectionStats",
    "detect_future_peeking",
    "Divergence",
    "ReconcileReport",
    "reconcile",
    "CaptureRecord",
    "ReplayCapture",
    "capture",
    "playback",
    "write_capture",
    "read_capture",
]


# --- bit-exact frame comparison --------------------------------------------


@dataclass(frozen=True)
class _FrameDiff:
    """First differing cell of an aligned frame pair, plus spread."""

    time: int
    column: ColumnKey
    value_a: float
    value_b: float
    max_abs_diff: float
    n_cells: int


def _compare_frames(a: StreamFrame, b: StreamFrame, atol: float | None = None) -> _FrameDiff | None:
    """First divergence between two frames with identical start/columns.

    ``atol=None`` compares canonicalized bit patterns (missing equals
    missing, everything else exact). With a tolerance, cells count as equal
    when both are missing or their absolute difference is within ``atol``;
    missing-versus-value always diverges. The reported max_abs_diff is
    infinite when a divergence involves exactly one missing cell.
    """
    if atol is None:
        neq = _canonical_cell_bits(a.values) != _canonical_cell_bits(b.values)
    else:
        both_nan = np.isnan(a.values) & np.isnan(b.values)
        with np.errstate(invalid="ignore"):
            close = np.abs(a.values - b.values) <= atol
        neq = ~(both_nan | close)
    if not neq.any():
        return None
    rows, cols = np.nonzero(neq)
    r, c = int(rows[0]), int(cols[0])
    gaps = np.abs(a.values - b.values)
    gaps = np.where(np.isnan(gaps), np.inf, gaps)
    return _FrameDiff(
        time=a.start + r,
        column=a.columns[c],
        value_a=float(a.values[r, c]),
        value_b=float(b.values[r, c]),
        max_abs_diff=float(gaps[neq].max()),
        n_cells=int(neq.sum()),
    )


def _common_domain(data: Mapping[str, StreamFrame]) -> Interval:
    """Intersection of all stream domains; the validated run interval."""
    domain: Interval | None = None
    for name, frame in data.items():
        dom = frame.domain
        if dom is None:
            raise InsufficientHistory(f"stream {name!r} is empty")
        domain = dom if domain is None else domain.intersect(dom)
        if domain is None:
            raise InsufficientHistory("input streams have no common interval")
    if domain is None:
        raise InsufficientHistory("no input streams supplied")
    return domain


# --- tiling validation ------------------------------------------------------


class FailureMode(Enum):
    """Heuristic hint at why a tiling diverged. A hint, not a verdict: the
    probes below separate the three causes on the constructions this package
    can express, but a sufficiently strange node could be misclassified."""

    WINDOW_TOO_SMALL = "window_too_small"
    FUTURE_PEEK = "future_peek"
    NONDETERMINISM = "nondeterminism"


@dataclass(frozen=True)
class TilingDiff:
    """One tiling/output pair that failed to reproduce the reference run."""

    mode: str  # "two_tile" | "streaming"
    tile_length: int
    offset: int
    output: str
    first_time: int
    first_column: ColumnKey
    max_abs_diff: float
    n_cells: int


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of tiling validation; passed iff diffs is empty."""

    passed: bool
    graph_window: int
    interval: Interval
    checked: tuple[tuple[str, int, int], ...]  # (mode, tile_length, offset)
    seeds: tuple[int, ...]
    diffs: tuple[TilingDiff, ...]
    failure_mode: FailureMode | None

    def to_json(self) -> str:
        return json.dumps(
            {
                "passed": self.passed,
                "graph_window": self.graph_window,
                "interval": [self.interval.start, self.interval.end],
                "checked": [list(c) for c in self.checked],
                "seeds": list(self.seeds),
                "diffs": [
                    {
                        "mode": d.mode,
                        "tile_length": d.tile_length,
                        "offset": d.offset,
                        "output": d.output,
                        "first_time": d.first_time,
                        "first_column": d.first_column.label(),
                        "max_abs_diff": d.max_abs_diff,
                        "n_cells": d.n_cells,
                    }
                    for d in self.diffs
                ],
                "failure_mode": self.failure_mode.value if self.failure_mode else None,
            },
            indent=2,
        )

    def to_text(self) -> str:
        lines = [
            f"tiling validation: {'PASS' if self.passed else 'FAIL'}",
            f"graph context window: {self.graph_window}",
            f"interval: [{self.interval.start}, {self.interval.end}]",
            "checked: "
            + ", ".join(f"{m}(tau={t}, offset={o})" for m, t, o in self.checked),
        ]
        for d in self.diffs:
            lines.append(
                f"  diff {d.mode}(tau={d.tile_length}, offset={d.offset})"
                f" output={d.output} first_time={d.first_time}"
                f" column={d.first_column.label()} cells={d.n_cells}"
                f" max_abs_diff={d.max_abs_diff:g}"
            )
        if self.failure_mode is not None:
            lines.append(f"failure mode hint: {self.failure_mode.value}")
        return "\n".join(lines)


def _full_history(dag: Dag, data: Mapping[str, StreamFrame], domain: Interval) -> dict[str, Tile]:
    dag.bind(data)
    return evaluate_dag_window(dag, domain).outputs


def _offset_plans(domain: Interval, tau: int, offset: int, graph_window: int) -> list[TileWindowPlan]:
    """Two-tile plan for ``domain`` with tile boundaries shifted by ``offset``.

    The shift is realized as one short head tile of ``offset`` rows followed
    by the regular tiling of the remainder; every window carries up to tau
    rows of leading context, clipped at the domain start.
    """
    plans: list[TileWindowPlan] = []
    head_end = min(domain.start + offset - 1, domain.end)
    if offset > 0:
        head = Interval(domain.start, head_end)
        plans.append(TileWindowPlan(window=head, output=head))
    if head_end < domain.end:
        rest = Interval(head_end + 1, domain.end)
        shifted = plan_temporal(rest, tau, graph_window, data_start=domain.start)
        plans.extend(shifted.windows)
    return plans


def _run_plans(dag: Dag, plans: Sequence[TileWindowPlan]) -> dict[str, StreamFrame]:
    """Evaluate each plan window, keep its output tile, stitch per output."""
    pieces: dict[str, list[Tile]] = {}
    for plan in plans:
        result = evaluate_dag_window(dag, plan.window)
        for key, tile in result.outputs.items():
            pieces.setdefault(key, []).append(restrict(tile, plan.output))
    out: dict[str, StreamFrame] = {}
    for key, tiles in pieces.items():
        whole = tiles[0]
        for tile in tiles[1:]:
            whole = concat(whole, tile)
        out[key] = whole
    return out


def _streaming_rows(dag: Dag, domain: Interval, graph_window: int, keep: Interval) -> dict[str, StreamFrame]:
    """Row-at-a-time evaluation on minimal context windows [t - w + 1, t].

    This is the strictest execution the engine ever performs: each output row
    sees exactly the declared graph context (clipped at the data start), so a
    node that actually reads further back — or forward — cannot reproduce the
    full-history run here even when generous two-tile context hides it.
    """
    plans = [
        TileWindowPlan(
            window=Interval(max(domain.start, t - graph_window + 1), t),
            output=Interval(t, t),
        )
        for t in range(keep.start, keep.end + 1)
    ]
    return _run_plans(dag, plans)


def _perturb_after(data: Mapping[str, StreamFrame], t: int) -> dict[str, StreamFrame]:
    """Copy of the inputs with every cell strictly after ``t`` shifted by 1."""
    out: dict[str, StreamFrame] = {}
    for name, frame in data.items():
        cut = t + 1 - frame.start
        if cut < frame.n_rows:
            values = frame.values.copy()
            values[max(cut, 0):] += 1.0
            out[name] = frame.with_values(values)
        else:
            out[name] = frame
    return out


def _failure_hint(
    dag: Dag,
    data: Mapping[str, StreamFrame],
    domain: Interval,
    reference: Mapping[str, Tile],
    diffs: Sequence[TilingDiff],
) -> FailureMode:
    """Classify a validation failure.

    Order of probes: an unstable reference (two identical full-history runs
    that disagree) is nondeterminism; otherwise, if the reference output at
    the first diverging time reacts to perturbing inputs strictly after it,
    something reads the future; otherwise the declared window is too small.
    """
    rerun = _full_history(dag, data, domain)
    for key, frame in reference.items():
        if canonical_bytes(frame) != canonical_bytes(rerun[key]):
            return FailureMode.NONDETERMINISM

    site = min(diffs, key=lambda d: (d.first_time, d.output))
    t_star = site.first_time
    if t_star < domain.end:
        perturbed = _full_history(dag, _perturb_after(data, t_star), domain)
        dag.bind(data)  # leave the dag bound to the original inputs
        row = Interval(t_star, t_star)
        before = restrict(reference[site.output], row)
        after = restrict(perturbed[site.output], row)
        if canonical_bytes(before) != canonical_bytes(after):
            return FailureMode.FUTURE_PEEK
    return FailureMode.WINDOW_TOO_SMALL


def tiling_validation(
    dag: Dag,
    data: Mapping[str, StreamFrame],
    tile_lengths: Sequence[int],
    boundary_seeds: Sequence[int] = (0,),
    interval: Interval | None = None,
) -> ValidationReport:
    """Check that tiled execution reproduces the full-history run bit-exactly.

    The reference is one evaluation over the whole interval. Each requested
    tile length is executed as a two-tile plan once per boundary seed, with
    the tile boundaries shifted by a seeded uniform offset in [0, tau). A
    final streaming pass at the declared graph window runs every row on its
    minimal context; two-tile plans hand each kept row at least tau rows of
    history, which can mask a declaration that is short by a row or two, and
    the minimal pass closes exactly that gap.

    Raises:
        TileTooSmall: if any requested tile length is below the declared
            graph window. Such tilings are known-divergent by construction;
            validating them would only restate that.
    """
    w = dag.context_window()
    for tau in tile_lengths:
        if tau < w:
            raise TileTooSmall(f"tile length {tau} < graph context window {w}")
    domain = _common_domain(data)
    if interval is not None:
        if not domain.contains(interval):
            raise InsufficientHistory(f"{interval} not covered by data {domain}")
        domain = interval

    reference = _full_history(dag, data, domain)

    checked: list[tuple[str, int, int]] = []
    diffs: list[TilingDiff] = []

    def record(mode: str, tau: int, offset: int, outputs: Mapping[str, StreamFrame]) -> None:
        checked.append((mode, tau, offset))
        for key in sorted(reference):
            diff = _compare_frames(reference[key], outputs[key])
            if diff is not None:
                diffs.append(
                    TilingDiff(
                        mode=mode,
                        tile_length=tau,
                        offset=offset,
                        output=key,
                        first_time=diff.time,
                        first_column=diff.column,
                        max_abs_diff=diff.max_abs_diff,
                        n_cells=diff.n_cells,
                    )
                )

    for tau in tile_lengths:
        for seed in boundary_seeds:
            offset = int(np.random.default_rng(seed).integers(tau))
            record("two_tile", tau, offset, _run_plans(dag, _offset_plans(domain, tau, offset, w)))
    record("streaming", w, 0, _streaming_rows(dag, domain, w, domain))

    failure = None if not diffs else _failure_hint(dag, data, domain, reference, diffs)
    return ValidationReport(
        passed=not diffs,
        graph_window=w,
        interval=domain,
        checked=tuple(checked),
        seeds=tuple(int(s) for s in boundary_seeds),
        diffs=tuple(diffs),
        failure_mode=failure,
    )


# --- randomized future-peek detection ---------------------------------------


@dataclass(frozen=True)
class DetectionStats:
    """Outcome of randomized-tiling detection trials."""

    trials_n: int
    violations_found: int
    tile_length: int
    seed: int
    placements: tuple[int, ...]

    @property
    def rho_hat(self) -> float:
        """Empirical per-placement violation rate."""
        return self.violations_found / self.trials_n

    def p_detect_bound(self, rho: float, n: int | None = None) -> float:
        """Detection probability 1 - (1 - rho)^n for a known per-placement
        rate rho over n independent placements (n defaults to trials_n)."""
        if not 0.0 <= rho <= 1.0:
            raise ValueError(f"rho must be a probability, got {rho}")
        count = self.trials_n if n is None else n
        return 1.0 - (1.0 - rho) ** count


def detect_future_peeking(
    dag: Dag,
    data: Mapping[str, StreamFrame],
    n_trials: int,
    boundary_rng_seed: int = 0,
    tile_length: int | None = None,
) -> DetectionStats:
    """Probe for future-reading nodes with randomly placed tilings.

    Each trial draws a tile right endpoint uniformly over the feasible range
    and compares the kept tile of a two-tile execution against a streaming
    execution of the same rows. For a correctly declared DAG the two always
    agree; a node that reads the future disagrees whenever the draw puts the
    read inside the two-tile window but past the streaming one. When the
    feasible range spans exactly tau placements this is a uniform boundary
    offset in [0, tau).

    The tile length defaults to max(graph window, 2): with a length-1 tile
    the kept row is also the window's last row, so a forward read is invisible
    to both executions and nothing can be detected.

    Deterministic given the seed; placements are recorded in the result.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    w = dag.context_window()
    tau = max(w, 2) if tile_length is None else int(tile_length)
    if tau < w:
        raise TileTooSmall(f"tile length {tau} < graph context window {w}")
    domain = _common_domain(data)
    lo = domain.start + 2 * tau - 1
    if lo > domain.end:
        raise InsufficientHistory(
            f"data {domain} too short for a two-tile window of length {2 * tau}"
        )
    rng = np.random.default_rng(boundary_rng_seed)
    placements = tuple(int(t) for t in rng.integers(lo, domain.end + 1, size=n_trials))

    dag.bind(data)
    violations = 0
    for right in placements:
        kept = run_two_tile(dag, data, TwoTileWindow(right, tau)).outputs
        tile = Interval(right - tau + 1, right)
        streamed = _streaming_rows(dag, domain, w, tile)
        if any(_compare_frames(kept[k], streamed[k]) is not None for k in kept):
            violations += 1
    return DetectionStats(
        trials_n=n_trials,
        violations_found=violations,
        tile_length=tau,
        seed=int(boundary_rng_seed),
        placements=placements,
    )


# --- run reconciliation -----------------------------------------------------


@dataclass(frozen=True)
class Divergence:
    """First cell where two runs disagree."""

    output: str
    time: int
    column: ColumnKey
    value_a: float
    value_b: float


@dataclass(frozen=True)
class ReconcileReport:
    equal: bool
    divergence: Divergence | None
    overlap: tuple[tuple[str, Interval], ...]


def _outputs_of(run) -> Mapping[str, StreamFrame]:
    """Accept a finished run (anything with .outputs) or a plain mapping."""
    outputs = getattr(run, "outputs", run)
    if not isinstance(outputs, Mapping):
        raise TypeError(f"cannot read outputs from {type(run).__name__}")
    return outputs


def reconcile(run_a, run_b, atol: float | None = None) -> ReconcileReport:
    """Compare two runs on their overlapping outputs.

    Comparison is bit-exact by default; pass ``atol`` for a float tolerance
    (missing cells still must agree). The first divergence is the earliest
    differing time across all shared outputs, ties broken by output key and
    then column order.

    Raises:
        NoOverlap: no shared output keys, or a shared output has disjoint
            time domains in the two runs.
        ColumnMismatch: a shared output carries different columns.
    """
    a, b = _outputs_of(run_a), _outputs_of(run_b)
    keys = sorted(set(a) & set(b))
    if not keys:
        raise NoOverlap("runs share no output keys")
    overlaps: list[tuple[str, Interval]] = []
    for key in keys:
        da, db = a[key].domain, b[key].domain
        shared = da.intersect(db) if da is not None and db is not None else None
        if shared is None:
            raise NoOverlap(f"output {key!r}: intervals {da} and {db} do not overlap")
        overlaps.append((key, shared))

    first: Divergence | None = None
    for key, shared in overlaps:
        fa, fb = restrict(a[key], shared), restrict(b[key], shared)
        if fa.columns != fb.columns:
            raise ColumnMismatch(f"output {key!r}: column sets differ")
        diff = _compare_frames(fa, fb, atol=atol)
        if diff is not None and (first is None or diff.time < first.time):
            first = Divergence(
                output=key,
                time=diff.time,
                column=diff.column,
                value_a=diff.value_a,
                value_b=diff.value_b,
            )
    return ReconcileReport(equal=first is None, divergence=first, overlap=tuple(overlaps))


# --- capture and replay of DAG cuts ----------------------------------------


@dataclass(frozen=True)
class CaptureRecord:
    """One tile observed on one cut edge: what flowed, where, and when it
    was known (the right endpoint of the producing evaluation window)."""

    interval: Interval
    tile: Tile
    knowledge_time: int


@dataclass(frozen=True)
class ReplayCapture:
    """Everything that crossed a cut, in evaluation order per edge."""

    run_id: str
    cut: tuple[Edge, ...]
    recorded: Mapping[str, tuple[CaptureRecord, ...]]  # edge_id -> records


def _normalize_cut(dag: Dag, cut: Iterable) -> tuple[Edge, ...]:
    present = {e.edge_id: e for e in dag.topology.edges}
    edges: list[Edge] = []
    for item in cut:
        if isinstance(item, Edge):
            edge = item
        elif isinstance(item, str):
            if item not in present:
                raise InvalidCut(f"edge {item!r} is not in the DAG")
            edge = present[item]
        else:
            parts = tuple(item)
            if len(parts) == 2:
                edge = Edge(parts[0], 0, parts[1], 0)
            elif len(parts) == 4:
                edge = Edge(parts[0], int(parts[1]), parts[2], int(parts[3]))
            else:
                raise InvalidCut(f"cannot interpret {item!r} as an edge")
        if edge.edge_id not in present:
            raise InvalidCut(f"edge {edge.edge_id} is not in the DAG")
        edges.append(edge)
    if not edges:
        raise InvalidCut("empty cut")
    return tuple(dict.fromkeys(edges))


def _downstream_of(dag: Dag, cut: Sequence[Edge]) -> list[str]:
    """Nodes fed (transitively) through the cut, in topological order.

    Raises InvalidCut unless every edge entering this set is either in the
    cut or internal to it — i.e. unless the cut actually separates the
    subgraph from the rest of the DAG.
    """
    cutset = set(cut)
    down: set[str] = {e.dst for e in cut}
    for nid in dag.order:
        if any(e.src in down for e in dag.topology.in_edges(nid) if e not in cutset):
            down.add(nid)
    for nid in down:
        for e in dag.topology.in_edges(nid):
            if e not in cutset and e.src not in down:
                raise InvalidCut(
                    f"edge {e.edge_id} feeds the replayed subgraph but is not in the cut"
                )
    return [nid for nid in dag.order if nid in down]


def capture(
    dag: Dag,
    data: Mapping[str, StreamFrame],
    cut: Iterable,
    windows: Sequence[Interval] | None = None,
    run_id: str = "capture",
    phase: Phase = Phase.PREDICT,
    states: Mapping[str, NodeState] | None = None,
) -> ReplayCapture:
    """Run the DAG and record every tile crossing the cut.

    One record per cut edge per evaluation window, in window order; the
    knowledge time of a record is the window's right endpoint (the step at
    which that tile existed in the original run). Windows default to one
    evaluation over the common data domain.

    Raises:
        InvalidCut: the cut has edges outside the DAG or does not separate
            its downstream subgraph from the sources.
    """
    edges = _normalize_cut(dag, cut)
    _downstream_of(dag, edges)  # validates separation before any work
    dag.bind(data)
    if windows is None:
        windows = [_common_domain(data)]
    wanted = {e.edge_id for e in edges}
    recorded: dict[str, list[CaptureRecord]] = {eid: [] for eid in wanted}
    for window in windows:
        seen: dict[str, Tile] = {}

        def tap(edge: Edge, tile: Tile) -> None:
            if edge.edge_id in wanted:
                seen[edge.edge_id] = tile

        evaluate_dag_window(dag, window, phase=phase, states=states, edge_tap=tap)
        for eid in wanted:
            recorded[eid].append(CaptureRecord(window, seen[eid], window.end))
    return ReplayCapture(
        run_id=run_id,
        cut=edges,
        recorded={eid: tuple(records) for eid, records in recorded.items()},
    )


def _replay_stream(edge: Edge) -> str:
    return f"replay.{edge.edge_id}"


def playback(
    cap: ReplayCapture,
    dag: Dag,
    phase: Phase = Phase.PREDICT,
    states: Mapping[str, NodeState] | None = None,
) -> tuple[WindowResult, ...]:
    """Re-run the subgraph downstream of the cut against the recording.

    Every node upstream of the cut is replaced by a synthetic source that
    replays the recorded tiles; the downstream nodes are the same objects as
    in the original DAG. Records are replayed in captured order, one
    evaluation per record step, reproducing the original windows exactly —
    bit-equal outputs are the expected (and tested) behavior.
    """
    edges = _normalize_cut(dag, cap.cut)
    down = _downstream_of(dag, edges)
    downset = set(down)

    nodes = [SourceNode(_replay_stream(e), _replay_stream(e)) for e in edges]
    nodes.extend(dag.nodes[nid] for nid in down)
    cutset = set(edges)
    wired: list[Edge] = [
        Edge(_replay_stream(e), 0, e.dst, e.dst_port) for e in edges
    ]
    wired.extend(
        e
        for e in dag.topology.edges
        if e not in cutset and e.src in downset and e.dst in downset
    )
    sub = Dag.from_nodes(nodes, wired)

    counts = {len(records) for records in cap.recorded.values()}
    if len(counts) != 1:
        raise InvalidCut(f"cut edges have unequal record counts: {sorted(counts)}")
    (n_records,) = counts

    results: list[WindowResult] = []
    for step in range(n_records):
        window = cap.recorded[edges[0].edge_id][step].interval
        feed: dict[str, StreamFrame] = {}
        for e in edges:
            record = cap.recorded[e.edge_id][step]
            if record.interval != window:
                raise InvalidCut(
                    f"record {step}: edge {e.edge_id} window {record.interval}"
                    f" does not match {window}"
                )
            feed[_replay_stream(e)] = record.tile
        sub.bind(feed)
        results.append(evaluate_dag_window(sub, window, phase=phase, states=states))
    return tuple(results)


# --- capture persistence ----------------------------------------------------

_CAPTURE_MAGIC = b"TFCP"
_CAPTURE_VERSION = 1


def write_capture(cap: ReplayCapture, root: str | Path) -> Path:
    """Persist a capture under ``root``/captures/<run_id>/.

    Layout: one framed binary file per cut edge plus a small JSON manifest
    naming the cut. Each record frame is (start, end, knowledge time, byte
    length, canonical tile bytes).
    """
    base = Path(root) / "captures" / cap.run_id
    base.mkdir(parents=True, exist_ok=True)
    for edge in cap.cut:
        records = cap.recorded[edge.edge_id]
        parts = [_CAPTURE_MAGIC, struct.pack("<HI", _CAPTURE_VERSION, len(records))]
        for record in records:
            blob = canonical_bytes(record.tile)
            parts.append(
                struct.pack(
                    "<qqqQ",
                    record.interval.start,
                    record.interval.end,
                    record.knowledge_time,
                    len(blob),
                )
            )
            parts.append(blob)
        (base / f"{edge.edge_id}.cap").write_bytes(b"".join(parts))
    manifest = {
        "run_id": cap.run_id,
        "cut": [[e.src, e.src_port, e.dst, e.dst_port] for e in cap.cut],
    }
    (base / "capture.json").write_text(json.dumps(manifest, indent=2))
    return base


def read_capture(root: str | Path, run_id: str) -> ReplayCapture:
    """Load a capture written by :func:`write_capture`."""
    base = Path(root) / "captures" / run_id
    manifest = json.loads((base / "capture.json").read_text())
    cut = tuple(Edge(s, int(sp), d, int(dp)) for s, sp, d, dp in manifest["cut"])
    recorded: dict[str, tuple[CaptureRecord, ...]] = {}
    for edge in cut:
        raw = (base / f"{edge.edge_id}.cap").read_bytes()
        if raw[:4] != _CAPTURE_MAGIC:
            raise ValueError(f"{edge.edge_id}.cap: not a capture file")
        version, count = struct.unpack_from("<HI", raw, 4)
        if version != _CAPTURE_VERSION:
            raise ValueError(f"unsupported capture version {version}")
        offset = 4 + struct.calcsize("<HI")
        records = []
        for _ in range(count):
            start, end, known, length = struct.unpack_from("<qqqQ", raw, offset)
            offset += struct.calcsize("<qqqQ")
            tile = from_canonical_bytes(raw[offset : offset + length])
            offset += length
            records.append(CaptureRecord(Interval(start, end), tile, known))
        recorded[edge.edge_id] = tuple(records)
    return ReplayCapture(run_id=manifest["run_id"], cut=cut, recorded=recorded)
