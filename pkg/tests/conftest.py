"""Shared generators: random topologies for algorithm oracles, random
catalog DAGs + data for execution-equivalence suites."""

import numpy as np
import pytest

from tileflow.frame import ColumnKey, StreamFrame
from tileflow.graph import Dag, DagTopology, Edge
from tileflow.node import NodeKind, NodeSpec
from tileflow.stdnodes import (
    EwmaSpec,
    SinkNode,
    SourceNode,
    asof_join,
    cross_sectional_normalize,
    cross_sectional_rank,
    diff,
    ewma_fir,
    fir,
    pointwise,
    rolling_mean,
    row_map,
    shift,
)


def random_dag_topology(rng: np.random.Generator, n_nodes: int) -> DagTopology:
    """Random acyclic topology with random context windows; kinds are
    general so arbitrary arities are legal. For algorithm oracles only."""
    preds: dict[int, list[int]] = {}
    for i in range(n_nodes):
        if i == 0 or rng.uniform() < 0.2:
            preds[i] = []
        else:
            k = int(rng.integers(1, min(i, 2) + 1))
            preds[i] = sorted(rng.choice(i, size=k, replace=False).tolist())
    succ_count = {i: 0 for i in range(n_nodes)}
    edges = []
    for i, ps in preds.items():
        for port, p in enumerate(ps):
            edges.append(Edge(f"n{p:02d}", succ_count[p], f"n{i:02d}", port))
            succ_count[p] += 1
    specs = {}
    for i in range(n_nodes):
        nid = f"n{i:02d}"
        specs[nid] = NodeSpec(
            nid,
            NodeKind.GENERAL,
            inputs_m=len(preds[i]),
            outputs_n=max(succ_count[i], 1),
            context_window=int(rng.integers(1, 5)),
        )
    return DagTopology(specs, edges)


def enumerate_source_sink_paths(topology: DagTopology) -> list[list[str]]:
    """Every maximal path, by explicit walk (test oracle; exponential)."""
    paths: list[list[str]] = []

    def walk(nid, acc):
        acc.append(nid)
        succs = topology.successors(nid)
        if not succs:
            paths.append(list(acc))
        for s in succs:
            walk(s, acc)
        acc.pop()

    for root in topology.initial_nodes:
        walk(root, [])
    return paths


PX = "px"


def market_frame(rng: np.random.Generator, start: int, n: int,
                 entities=("A", "B"), nan_prob: float = 0.0) -> StreamFrame:
    cols = {}
    for e in entities:
        vals = np.cumsum(rng.normal(size=n)) + rng.uniform(1, 3)
        if nan_prob:
            vals = np.where(rng.uniform(size=n) < nan_prob, np.nan, vals)
        cols[ColumnKey(e, PX)] = vals
    return StreamFrame.from_columns(start, cols)


def _random_siso(rng: np.random.Generator, nid: str):
    kind = rng.choice(
        ["fir", "rolling_mean", "diff", "shift", "pointwise", "ewma", "xs_norm", "xs_rank"]
    )
    if kind == "fir":
        h = int(rng.integers(2, 5))
        return fir(nid, rng.uniform(-1, 1, size=h).round(3).tolist())
    if kind == "rolling_mean":
        return rolling_mean(nid, int(rng.integers(2, 5)))
    if kind == "diff":
        return diff(nid)
    if kind == "shift":
        return shift(nid, int(rng.integers(1, 4)))
    if kind == "pointwise":
        return pointwise(nid, str(rng.choice(["square", "negate", "abs"])))
    if kind == "ewma":
        return ewma_fir(nid, EwmaSpec(0.5, 0.2))  # horizon 3
    if kind == "xs_norm":
        return cross_sectional_normalize(nid)
    return cross_sectional_rank(nid)


def random_std_dag(rng: np.random.Generator) -> Dag:
    """Random catalog DAG: source -> chain, optionally forking into a renamed
    branch re-merged through an as-of join, then a sink. At most 8
    computational nodes."""
    nodes = [SourceNode("src", "prices")]
    edges = []
    last = "src"
    for i in range(int(rng.integers(1, 4))):
        n = _random_siso(rng, f"a{i}")
        nodes.append(n)
        edges.append((last, n.spec.nid))
        last = n.spec.nid
    if rng.uniform() < 0.5:
        rename = row_map("rn", [PX], "alt")
        nodes.append(rename)
        edges.append((last, "rn"))
        b_last = "rn"
        for i in range(int(rng.integers(0, 3))):
            n = _random_siso(rng, f"b{i}")
            while not n.spec.separability.is_separable:
                n = _random_siso(rng, f"b{i}")  # keep the branch per-column
            nodes.append(n)
            edges.append((b_last, n.spec.nid))
            b_last = n.spec.nid
        join = asof_join("join", int(rng.integers(0, 3)))
        nodes.append(join)
        edges.append((last, 0, "join", 0))
        edges.append((b_last, 0, "join", 1))
        last = "join"
    tail = _random_siso(rng, "tail")
    nodes.append(tail)
    edges.append((last, "tail"))
    nodes.append(SinkNode("out"))
    edges.append(("tail", "out"))
    return Dag.from_nodes(nodes, edges)


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
