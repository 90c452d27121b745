"""DAG topology: context-window calculus, scheduling analysis, building.

The load-bearing quantity is the graph context window w(G): along a path the
windows compose as w(p) = 1 + sum(w_v - 1), and w(G) is the maximum over
source-to-sink paths, computed by dynamic programming (never by path
enumeration). Any tile length >= w(G) makes tiled execution reproduce the
untiled outputs; anything smaller provably cannot.
"""

from __future__ import annotations

import dataclasses
import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .config import canonical_config_text
from .errors import (
    ConfigError,
    CycleDetected,
    InvalidNodeConfig,
    NoSourceSinkPath,
    NotAPath,
    UnknownNid,
)
from .frame import StreamFrame
from .node import Node, NodeKind, NodeSpec
from .stdnodes import CATALOG, SourceNode, build_catalog_node


@dataclass(frozen=True)
class Edge:
    """Directed edge from an output port to an input port."""

    src: str
    src_port: int
    dst: str
    dst_port: int

    @property
    def edge_id(self) -> str:
        return f"{self.src}.{self.src_port}-{self.dst}.{self.dst_port}"


def _normalize_edge(edge) -> Edge:
    if isinstance(edge, Edge):
        return edge
    if len(edge) == 2:
        return Edge(edge[0], 0, edge[1], 0)
    if len(edge) == 4:
        return Edge(edge[0], int(edge[1]), edge[2], int(edge[3]))
    raise ValueError(f"edge must be (src, dst) or (src, sport, dst, dport): {edge!r}")


class DagTopology:
    """Nodes (specs) and port-wired edges; validated acyclic on construction."""

    def __init__(self, nodes: Mapping[str, NodeSpec], edges: Iterable[Edge | tuple]):
        self.nodes: dict[str, NodeSpec] = dict(nodes)
        self.edges: tuple[Edge, ...] = tuple(_normalize_edge(e) for e in edges)
        for nid, spec in self.nodes.items():
            if spec.nid != nid:
                raise ValueError(f"key {nid!r} does not match spec nid {spec.nid!r}")
        seen_inputs: set[tuple[str, int]] = set()
        for e in self.edges:
            for endpoint in (e.src, e.dst):
                if endpoint not in self.nodes:
                    raise ValueError(f"edge references unknown node {endpoint!r}")
            if not 0 <= e.src_port < self.nodes[e.src].outputs_n:
                raise ValueError(f"{e.edge_id}: source port out of range")
            if not 0 <= e.dst_port < self.nodes[e.dst].inputs_m:
                raise ValueError(f"{e.edge_id}: destination port out of range")
            key = (e.dst, e.dst_port)
            if key in seen_inputs:
                raise ValueError(f"input port {key} fed by more than one edge")
            seen_inputs.add(key)
        for nid, spec in self.nodes.items():
            for port in range(spec.inputs_m):
                if (nid, port) not in seen_inputs:
                    raise ValueError(f"input port ({nid}, {port}) is unconnected")
        self._succs: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        self._preds: dict[str, list[str]] = {nid: [] for nid in self.nodes}
        for e in self.edges:
            self._succs[e.src].append(e.dst)
            self._preds[e.dst].append(e.src)
        self.order = topological_sort(self)  # raises CycleDetected

    def successors(self, nid: str) -> list[str]:
        return sorted(set(self._succs[nid]))

    def predecessors(self, nid: str) -> list[str]:
        return sorted(set(self._preds[nid]))

    def in_edges(self, nid: str) -> list[Edge]:
        return sorted(
            (e for e in self.edges if e.dst == nid), key=lambda e: e.dst_port
        )

    @property
    def initial_nodes(self) -> list[str]:
        return sorted(n for n in self.nodes if not self._preds[n])

    @property
    def terminal_nodes(self) -> list[str]:
        return sorted(n for n in self.nodes if not self._succs[n])


def topological_sort(topology: DagTopology) -> tuple[str, ...]:
    """Reverse DFS post-order; children visited in lexicographic nid order so
    the result is deterministic.

    Raises:
        CycleDetected: if the graph is not acyclic.
    """
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {nid: WHITE for nid in topology.nodes}
    post: list[str] = []
    for root in sorted(topology.nodes):
        if color[root] != WHITE:
            continue
        stack: list[tuple[str, int]] = [(root, 0)]
        color[root] = GRAY
        while stack:
            nid, child_i = stack[-1]
            children = sorted(set(topology._succs[nid]))
            if child_i < len(children):
                stack[-1] = (nid, child_i + 1)
                child = children[child_i]
                if color[child] == GRAY:
                    raise CycleDetected(f"cycle through {child!r}")
                if color[child] == WHITE:
                    color[child] = GRAY
                    stack.append((child, 0))
            else:
                stack.pop()
                color[nid] = BLACK
                post.append(nid)
    return tuple(reversed(post))


# --- context-window calculus ----------------------------------------------


def path_context_window(topology: DagTopology, path: Sequence[str]) -> int:
    """w(p) = 1 + sum over path nodes of (w_v - 1).

    Raises:
        NotAPath: if consecutive nodes are not joined by an edge.
    """
    if not path:
        raise NotAPath("empty path")
    for nid in path:
        if nid not in topology.nodes:
            raise NotAPath(f"unknown node {nid!r}")
    for a, b in zip(path, path[1:]):
        if b not in topology._succs[a]:
            raise NotAPath(f"no edge {a!r} -> {b!r}")
    return 1 + sum(topology.nodes[nid].context_window - 1 for nid in path)


@dataclass(frozen=True)
class PathAnalysis:
    """A path achieving the graph context window."""

    window: int
    path: tuple[str, ...]


def critical_context_path(topology: DagTopology) -> PathAnalysis:
    """Maximizing path for the context window, by longest-path DP over the
    topological order (weights w_v - 1).

    Raises:
        NoSourceSinkPath: if the topology has no nodes.
    """
    if not topology.nodes:
        raise NoSourceSinkPath("empty topology")
    best: dict[str, int] = {}
    back: dict[str, str | None] = {}
    for nid in topology.order:
        w = topology.nodes[nid].context_window - 1
        pred_best, pred_arg = -1, None  # any predecessor beats none
        for p in topology.predecessors(nid):
            if best[p] > pred_best:
                pred_best, pred_arg = best[p], p
        best[nid] = w + max(pred_best, 0)
        back[nid] = pred_arg
    # only maximal paths (ending at terminal nodes) are source-to-sink paths
    end = max(topology.terminal_nodes, key=lambda n: (best[n], n))
    path: list[str] = []
    cur: str | None = end
    while cur is not None:
        path.append(cur)
        cur = back[cur]
    return PathAnalysis(window=1 + best[end], path=tuple(reversed(path)))


def graph_context_window(topology: DagTopology) -> int:
    """w(G): max path context window over source-to-sink paths."""
    return critical_context_path(topology).window


# --- scheduling analysis ---------------------------------------------------


def critical_path(
    topology: DagTopology, service_times: Mapping[str, float]
) -> tuple[float, tuple[str, ...]]:
    """Longest path by total service time: (L*, the path)."""
    if not topology.nodes:
        raise NoSourceSinkPath("empty topology")
    tau = {nid: float(service_times[nid]) for nid in topology.nodes}
    best: dict[str, float] = {}
    back: dict[str, str | None] = {}
    for nid in topology.order:
        pred_best, pred_arg = -1.0, None  # any predecessor beats none
        for p in topology.predecessors(nid):
            if best[p] > pred_best:
                pred_best, pred_arg = best[p], p
        best[nid] = tau[nid] + max(pred_best, 0.0)
        back[nid] = pred_arg
    end = max(topology.nodes, key=lambda n: (best[n], n))
    path: list[str] = []
    cur: str | None = end
    while cur is not None:
        path.append(cur)
        cur = back[cur]
    return best[end], tuple(reversed(path))


def _reachability(topology: DagTopology) -> dict[str, set[str]]:
    """Strict descendants of each node (transitive closure)."""
    reach: dict[str, set[str]] = {nid: set() for nid in topology.nodes}
    for nid in reversed(topology.order):
        for s in topology.successors(nid):
            reach[nid].add(s)
            reach[nid] |= reach[s]
    return reach


def width(topology: DagTopology) -> int:
    """Maximum antichain size (peak exploitable parallelism).

    Dilworth: the minimum chain cover of the reachability order equals
    n - (maximum matching of the transitive closure as a bipartite graph),
    and the maximum antichain has exactly that size.
    """
    nodes = list(topology.nodes)
    if not nodes:
        return 0
    reach = _reachability(topology)
    match_right: dict[str, str] = {}  # right node -> left node

    def try_assign(u: str, seen: set[str]) -> bool:
        for v in sorted(reach[u]):
            if v in seen:
                continue
            seen.add(v)
            if v not in match_right or try_assign(match_right[v], seen):
                match_right[v] = u
                return True
        return False

    matched = 0
    for u in sorted(nodes):
        if try_assign(u, set()):
            matched += 1
    return len(nodes) - matched


def concurrent(topology: DagTopology, a: str, b: str) -> bool:
    """True iff a and b are order-incomparable (may run in parallel)."""
    for nid in (a, b):
        if nid not in topology.nodes:
            raise UnknownNid(nid)
    if a == b:
        return False
    reach = _reachability(topology)
    return b not in reach[a] and a not in reach[b]


@dataclass(frozen=True)
class ScheduleBounds:
    """Makespan envelope for P processors plus a witness greedy schedule.

    lower = max(L*, W/P); upper = L* + (W - L*)/P. Any greedy list schedule
    lands inside the envelope; ``schedule`` holds one, as (nid, processor,
    start, end) tuples.
    """

    processors: int
    l_star: float
    total_work: float
    lower: float
    upper: float
    critical_path: tuple[str, ...]
    greedy_makespan: float
    schedule: tuple[tuple[str, int, float, float], ...]


def makespan_bounds(
    topology: DagTopology, service_times: Mapping[str, float], processors: int
) -> ScheduleBounds:
    """Compute the makespan envelope and a greedy list schedule inside it."""
    if processors < 1:
        raise ValueError("need at least one processor")
    tau = {nid: float(service_times[nid]) for nid in topology.nodes}
    l_star, cpath = critical_path(topology, tau)
    total = sum(tau.values())
    lower = max(l_star, total / processors)
    upper = l_star + (total - l_star) / processors

    # greedy list scheduling, priority = longest remaining path (ties by nid)
    rank: dict[str, float] = {}
    for nid in reversed(topology.order):
        rank[nid] = tau[nid] + max(
            (rank[s] for s in topology.successors(nid)), default=0.0
        )
    indeg = {nid: len(topology.predecessors(nid)) for nid in topology.nodes}
    ready = [(-rank[nid], nid) for nid, d in indeg.items() if d == 0]
    heapq.heapify(ready)
    running: list[tuple[float, int, str]] = []  # (finish, processor, nid)
    free = list(range(processors))
    now = 0.0
    placed: list[tuple[str, int, float, float]] = []
    scheduled = 0
    while scheduled < len(tau) or running:
        while ready and free:
            _, nid = heapq.heappop(ready)
            proc = free.pop(0)
            heapq.heappush(running, (now + tau[nid], proc, nid))
            placed.append((nid, proc, now, now + tau[nid]))
            scheduled += 1
        if not running:
            break
        finish, proc, nid = heapq.heappop(running)
        now = finish
        free.append(proc)
        free.sort()
        for s in topology.successors(nid):
            indeg[s] -= 1
            if indeg[s] == 0:
                heapq.heappush(ready, (-rank[s], s))
        # release everything else finishing at the same instant
        while running and running[0][0] == now:
            _, proc2, nid2 = heapq.heappop(running)
            free.append(proc2)
            free.sort()
            for s in topology.successors(nid2):
                indeg[s] -= 1
                if indeg[s] == 0:
                    heapq.heappush(ready, (-rank[s], s))
    makespan = max((end for _, _, _, end in placed), default=0.0)
    return ScheduleBounds(
        processors=processors,
        l_star=l_star,
        total_work=total,
        lower=lower,
        upper=upper,
        critical_path=cpath,
        greedy_makespan=makespan,
        schedule=tuple(placed),
    )


# --- building a runnable DAG ----------------------------------------------


@dataclass(frozen=True)
class DagConfig:
    """Per-node parameter tables. Carries no connectivity — wiring lives in
    the topology, so reconfiguration can never change the graph shape."""

    per_nid: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)

    def params(self, nid: str) -> Mapping[str, Any]:
        return self.per_nid.get(nid, {})

    def canonical_text(self) -> str:
        return canonical_config_text({nid: dict(tbl) for nid, tbl in self.per_nid.items()})


class Dag:
    """A runnable graph: topology plus instantiated nodes in topo order."""

    def __init__(self, nodes: Mapping[str, Node], edges: Iterable[Edge | tuple],
                 config: DagConfig | None = None):
        self.nodes: dict[str, Node] = dict(nodes)
        self.topology = DagTopology(
            {nid: n.spec for nid, n in self.nodes.items()}, edges
        )
        self.config = config or DagConfig({})
        self.order = self.topology.order

    @staticmethod
    def from_nodes(nodes: Sequence[Node], edges: Iterable[Edge | tuple],
                   config: DagConfig | None = None) -> "Dag":
        return Dag({n.spec.nid: n for n in nodes}, edges, config)

    def node(self, nid: str) -> Node:
        return self.nodes[nid]

    def context_window(self) -> int:
        return graph_context_window(self.topology)

    @property
    def source_nids(self) -> list[str]:
        return sorted(
            nid for nid, n in self.nodes.items() if n.spec.kind is NodeKind.SOURCE
        )

    @property
    def sink_nids(self) -> list[str]:
        return sorted(
            nid for nid, n in self.nodes.items() if n.spec.kind is NodeKind.SINK
        )

    def bind(self, data: Mapping[str, StreamFrame]) -> None:
        """Attach named input streams to the source nodes."""
        for nid in self.source_nids:
            node = self.nodes[nid]
            assert isinstance(node, SourceNode)
            if node.stream not in data:
                raise ConfigError(
                    f"source {nid}: no input stream named {node.stream!r}"
                )
            node.bind(data[node.stream])


# --- topology text format --------------------------------------------------


@dataclass(frozen=True)
class TopologyNodeLine:
    nid: str
    kind: NodeKind
    type_name: str
    window: int | None  # None: derive from the built node's config


@dataclass(frozen=True)
class ParsedTopology:
    node_lines: tuple[TopologyNodeLine, ...]
    edges: tuple[Edge, ...]

    def to_topology(self) -> DagTopology:
        """Analysis view using declared windows (default 1) without building.

        Arities are inferred from the wired ports, so window/schedule analysis
        works on a bare topology file with no configs."""
        in_ports: dict[str, int] = {}
        out_ports: dict[str, int] = {}
        for e in self.edges:
            in_ports[e.dst] = max(in_ports.get(e.dst, 0), e.dst_port + 1)
            out_ports[e.src] = max(out_ports.get(e.src, 0), e.src_port + 1)
        specs = {}
        for line in self.node_lines:
            if line.kind is NodeKind.SOURCE:
                m, n = 0, max(out_ports.get(line.nid, 0), 1)
            elif line.kind is NodeKind.SINK:
                m, n = max(in_ports.get(line.nid, 0), 1), 0
            elif line.kind is NodeKind.SISO:
                m, n = 1, 1
            else:
                m = max(in_ports.get(line.nid, 0), 1)
                n = max(out_ports.get(line.nid, 0), 1)
            specs[line.nid] = NodeSpec(
                line.nid, line.kind, m, n, line.window or 1
            )
        return DagTopology(specs, self.edges)


def parse_topology_text(text: str) -> ParsedTopology:
    """Parse the line-oriented topology format:

    node <nid> kind=<source|sink|siso|general> [window=<L>] type=<catalog name>
    edge <src>:<port> -> <dst>:<port>

    '#' starts a comment; blank lines are ignored.
    """
    node_lines: list[TopologyNodeLine] = []
    edges: list[Edge] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node":
            if len(parts) < 2:
                raise ConfigError(f"line {lineno}: node needs an id")
            nid = parts[1]
            attrs: dict[str, str] = {}
            for p in parts[2:]:
                if "=" not in p:
                    raise ConfigError(f"line {lineno}: expected key=value, got {p!r}")
                k, v = p.split("=", 1)
                attrs[k] = v
            if "kind" not in attrs or "type" not in attrs:
                raise ConfigError(f"line {lineno}: node needs kind= and type=")
            try:
                kind = NodeKind(attrs["kind"])
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad kind {attrs['kind']!r}") from exc
            window = int(attrs["window"]) if "window" in attrs else None
            node_lines.append(TopologyNodeLine(nid, kind, attrs["type"], window))
        elif parts[0] == "edge":
            if len(parts) != 4 or parts[2] != "->":
                raise ConfigError(
                    f"line {lineno}: expected 'edge src:port -> dst:port'"
                )
            try:
                src, sp = parts[1].rsplit(":", 1)
                dst, dp = parts[3].rsplit(":", 1)
                edges.append(Edge(src, int(sp), dst, int(dp)))
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad edge endpoints") from exc
        else:
            raise ConfigError(f"line {lineno}: unknown directive {parts[0]!r}")
    return ParsedTopology(tuple(node_lines), tuple(edges))


def load_topology_file(path: str | Path) -> ParsedTopology:
    return parse_topology_text(Path(path).read_text(encoding="utf-8"))


def format_topology(parsed: ParsedTopology) -> str:
    lines = []
    for n in parsed.node_lines:
        window = f" window={n.window}" if n.window is not None else ""
        lines.append(f"node {n.nid} kind={n.kind.value}{window} type={n.type_name}")
    for e in parsed.edges:
        lines.append(f"edge {e.src}:{e.src_port} -> {e.dst}:{e.dst_port}")
    return "\n".join(lines) + "\n"


def describe_topology(topology: DagTopology) -> str:
    """Line-format rendering of a live topology (specs carry no catalog type
    name, so only structure and windows appear)."""
    lines = []
    for nid in topology.order:
        spec = topology.nodes[nid]
        lines.append(
            f"node {nid} kind={spec.kind.value} window={spec.context_window}"
        )
    for e in topology.edges:
        lines.append(f"edge {e.src}:{e.src_port} -> {e.dst}:{e.dst_port}")
    return "\n".join(lines) + "\n"


def build_dag(parsed: ParsedTopology, config: DagConfig) -> Dag:
    """Instantiate catalog nodes for a parsed topology under a config.

    Window precedence per node: an explicit ``declared_window`` config key
    (deliberate mislabeling hook) wins, then an explicit ``window=`` in the
    topology line, then the window derived from the node's own parameters.
    Rewiring cannot happen here: the config carries no connectivity, so a
    reconfiguration with unchanged windows preserves w(G).

    Raises:
        UnknownNid: config mentions a node id absent from the topology.
        InvalidNodeConfig: unknown catalog type, bad parameters, or a node
            whose built kind contradicts the declared kind.
    """
    declared_nids = {line.nid for line in parsed.node_lines}
    for nid in config.per_nid:
        if nid not in declared_nids:
            raise UnknownNid(f"config for unknown node {nid!r}")
    nodes: dict[str, Node] = {}
    for line in parsed.node_lines:
        if line.type_name not in CATALOG:
            raise InvalidNodeConfig(f"{line.nid}: unknown type {line.type_name!r}")
        params = dict(config.params(line.nid))
        node = build_catalog_node(line.type_name, line.nid, params)
        if node.spec.kind is not line.kind:
            raise InvalidNodeConfig(
                f"{line.nid}: declared kind={line.kind.value} but type "
                f"{line.type_name!r} builds kind={node.spec.kind.value}"
            )
        if "declared_window" not in params and line.window is not None:
            node.spec = dataclasses.replace(node.spec, context_window=line.window)
        nodes[line.nid] = node
    return Dag(nodes, parsed.edges, config)
