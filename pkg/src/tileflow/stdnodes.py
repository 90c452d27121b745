"""Standard node catalog.

Every node here computes each output row from at most its declared context
window of trailing input rows, and emits missing for rows that lack a full
context window inside the evaluation window. That uniform warm-up rule is
what makes outputs independent of where the evaluation window starts, which
in turn is what the tiled/streaming equivalence guarantees rest on.

Catalog names (usable as ``type=`` in topology files): source, sink,
pointwise, fir, rolling_mean, diff, shift, anticausal_shift, ewma_fir,
asof_join, xs_normalize, xs_rank, learned_window_ma, row_map.
"""

from __future__ import annotations

import dataclasses
import math
import struct
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .config import canonical_config_text
from .errors import (
    ColumnMismatch,
    InsufficientHistory,
    InvalidNodeConfig,
    StateRequired,
    StateSchemaMismatch,
)
from .frame import ColumnKey, StreamFrame, restrict
from .node import (
    Node,
    NodeKind,
    NodeSpec,
    NodeState,
    Phase,
    Separability,
    mask_leading_rows,
)

# --- deterministic kernels -------------------------------------------------
#
# All windowed kernels accumulate with a fixed left-to-right loop over taps
# (elementwise ufuncs only, no matrix products), so a given output row is
# computed by the identical float operation sequence in every window that
# contains its context. That is what makes bit-equality across execution
# modes achievable rather than merely approximate.


def _fir_kernel(values: np.ndarray, weights: Sequence[float]) -> np.ndarray:
    """y[i] = sum_j w[j] * x[i - h + 1 + j]; first h-1 rows missing."""
    h = len(weights)
    n, k = values.shape
    out = np.full((n, k), np.nan)
    if n >= h:
        acc = np.zeros((n - h + 1, k))
        for j, w in enumerate(weights):
            acc += w * values[j : j + n - h + 1]
        out[h - 1 :] = acc
    return out


def _moving_sum(values: np.ndarray, w: int) -> np.ndarray:
    n, k = values.shape
    out = np.full((n, k), np.nan)
    if n >= w:
        acc = np.zeros((n - w + 1, k))
        for j in range(w):
            acc += values[j : j + n - w + 1]
        out[w - 1 :] = acc
    return out


def _moving_average(values: np.ndarray, w: int) -> np.ndarray:
    return _moving_sum(values, w) / w


def _bounded_locf(col: np.ndarray, delta: int) -> np.ndarray:
    """Last observation carried forward, looking back at most ``delta`` rows.

    The bounded lookback matters: it keeps each output row a function of a
    fixed trailing window, so the fill is window-start invariant.
    """
    n = col.shape[0]
    idx = np.arange(n)
    valid = ~np.isnan(col)
    last = np.maximum.accumulate(np.where(valid, idx, -1))
    take = np.maximum(last, 0)
    filled = np.where((last >= 0) & (idx - last <= delta), col[take], np.nan)
    return filled


def _average_ranks(row: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged; missing stays missing."""
    out = np.full(row.shape, np.nan)
    mask = ~np.isnan(row)
    vals = row[mask]
    if vals.size == 0:
        return out
    order = np.argsort(vals, kind="stable")
    sorted_vals = vals[order]
    ranks = np.empty(vals.size)
    i = 0
    while i < vals.size:
        j = i
        while j + 1 < vals.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    out[mask] = ranks
    return out


def _feature_blocks(columns: Sequence[ColumnKey]) -> list[tuple[str, slice]]:
    """Contiguous column slices per feature (columns are feature-sorted)."""
    blocks: list[tuple[str, slice]] = []
    i = 0
    while i < len(columns):
        j = i
        while j + 1 < len(columns) and columns[j + 1].feature == columns[i].feature:
            j += 1
        blocks.append((columns[i].feature, slice(i, j + 1)))
        i = j + 1
    return blocks


def _mislabel(spec: NodeSpec, declared_window: int | None) -> NodeSpec:
    """Override the declared context window (validation fixtures use this to
    construct nodes whose declaration lies about what they read)."""
    if declared_window is None:
        return spec
    return dataclasses.replace(spec, context_window=int(declared_window))


# --- base classes ----------------------------------------------------------


class SisoKernelNode(Node):
    """1-in-1-out node: a kernel over the window matrix plus warm-up masking."""

    def __init__(self, spec: NodeSpec, config: Mapping[str, Any]):
        super().__init__(spec)
        self.config_text = canonical_config_text(config)

    def _kernel(self, values: np.ndarray, state: NodeState) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, phase, interval, inputs, state):
        x = inputs[0]
        out = self._kernel(x.values, state)
        out = mask_leading_rows(out, self.spec.context_window - 1)
        return (x.with_values(out),), state


class SourceNode(Node):
    """Emits a named input stream. The engine binds the stream frame before a
    run; evaluation is restriction to the requested interval."""

    def __init__(self, nid: str, stream: str):
        super().__init__(NodeSpec(nid, NodeKind.SOURCE, 0, 1, 1))
        self.stream = stream
        self.config_text = canonical_config_text({"type": "source", "stream": stream})
        self._frame: StreamFrame | None = None

    def bind(self, frame: StreamFrame) -> None:
        self._frame = frame

    def evaluate(self, phase, interval, inputs, state):
        if self._frame is None:
            raise InsufficientHistory(f"source {self.spec.nid}: no stream bound")
        dom = self._frame.domain
        if dom is None or not dom.contains(interval):
            raise InsufficientHistory(
                f"source {self.spec.nid}: {interval} not covered by stream domain {dom}"
            )
        return (restrict(self._frame, interval),), state


class SinkNode(Node):
    """Consumes final tiles; the engine records its inputs as run outputs."""

    def __init__(self, nid: str, inputs_m: int = 1):
        super().__init__(NodeSpec(nid, NodeKind.SINK, inputs_m, 0, 1))
        self.config_text = canonical_config_text({"type": "sink"})

    def evaluate(self, phase, interval, inputs, state):
        return (), state


# --- pointwise -------------------------------------------------------------

POINTWISE_FNS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda v: v.copy(),
    "log": np.log,
    "exp": np.exp,
    "abs": np.abs,
    "square": np.square,
    "sqrt": np.sqrt,
    "negate": np.negative,
}


class PointwiseNode(SisoKernelNode):
    def __init__(self, nid: str, fn: str | Callable, fn_id: str | None = None):
        if isinstance(fn, str):
            if fn not in POINTWISE_FNS:
                raise InvalidNodeConfig(f"unknown pointwise fn {fn!r}")
            fn_id, fn = fn, POINTWISE_FNS[fn]
        elif fn_id is None:
            raise InvalidNodeConfig("callable pointwise fn needs an fn_id")
        spec = NodeSpec(nid, NodeKind.SISO, 1, 1, 1)
        super().__init__(spec, {"type": "pointwise", "fn": fn_id})
        self.fn = fn

    def _kernel(self, values, state):
        return self.fn(values)


def pointwise(nid: str, fn: str | Callable, fn_id: str | None = None) -> PointwiseNode:
    """Elementwise map with context window 1."""
    return PointwiseNode(nid, fn, fn_id)


# --- FIR family ------------------------------------------------------------


class FirNode(SisoKernelNode):
    def __init__(
        self,
        nid: str,
        weights: Sequence[float],
        type_name: str = "fir",
        declared_window: int | None = None,
        extra_config: Mapping[str, Any] | None = None,
    ):
        weights = tuple(float(w) for w in weights)
        if not weights:
            raise InvalidNodeConfig("fir needs at least one weight")
        spec = _mislabel(
            NodeSpec(nid, NodeKind.SISO, 1, 1, len(weights)), declared_window
        )
        cfg: dict[str, Any] = {"type": type_name, "weights": list(weights)}
        if declared_window is not None:
            cfg["declared_window"] = int(declared_window)
        if extra_config:
            cfg.update(extra_config)
        super().__init__(spec, cfg)
        self.weights = weights

    def _kernel(self, values, state):
        return _fir_kernel(values, self.weights)


def fir(nid: str, weights: Sequence[float], declared_window: int | None = None) -> FirNode:
    """Causal finite impulse response: y(t) = sum_j w_j x(t-h+1+j).

    Weights are ordered oldest tap first; the last weight multiplies x(t).
    """
    return FirNode(nid, weights, declared_window=declared_window)


class RollingMeanNode(SisoKernelNode):
    """Trailing mean of the last ``window`` rows (sum then divide)."""

    def __init__(self, nid: str, window: int, declared_window: int | None = None):
        window = int(window)
        if window < 1:
            raise InvalidNodeConfig("rolling_mean window must be >= 1")
        spec = _mislabel(NodeSpec(nid, NodeKind.SISO, 1, 1, window), declared_window)
        cfg: dict[str, Any] = {"type": "rolling_mean", "window": window}
        if declared_window is not None:
            cfg["declared_window"] = int(declared_window)
        super().__init__(spec, cfg)
        self.window = window

    def _kernel(self, values, state):
        return _moving_average(values, self.window)


def rolling_mean(nid: str, window: int, declared_window: int | None = None) -> RollingMeanNode:
    return RollingMeanNode(nid, window, declared_window)


def diff(nid: str) -> FirNode:
    """First difference y(t) = x(t) - x(t-1); context window 2."""
    return FirNode(nid, (-1.0, 1.0), type_name="diff")


class ShiftNode(SisoKernelNode):
    def __init__(self, nid: str, k: int):
        k = int(k)
        if k < 0:
            raise InvalidNodeConfig("shift lag must be >= 0")
        spec = NodeSpec(nid, NodeKind.SISO, 1, 1, k + 1)
        super().__init__(spec, {"type": "shift", "k": k})
        self.k = k

    def _kernel(self, values, state):
        n, cols = values.shape
        out = np.full((n, cols), np.nan)
        if n > self.k:
            out[self.k :] = values[: n - self.k]
        return out


def shift(nid: str, k: int) -> ShiftNode:
    """Lag by k steps: y(t) = x(t-k); context window k+1."""
    return ShiftNode(nid, k)


class AnticausalShiftNode(SisoKernelNode):
    """Test fixture that reads the future: y(t) = x(t+k) while *declaring*
    context window 1. Not admissible; exists so the validation harness has a
    real violation to catch."""

    causal = False

    def __init__(self, nid: str, k: int):
        k = int(k)
        if k < 1:
            raise InvalidNodeConfig("anticausal shift needs k >= 1")
        spec = NodeSpec(nid, NodeKind.SISO, 1, 1, 1)
        super().__init__(spec, {"type": "anticausal_shift", "k": k})
        self.k = k

    def _kernel(self, values, state):
        n, cols = values.shape
        out = np.full((n, cols), np.nan)
        if n > self.k:
            out[: n - self.k] = values[self.k :]
        return out


def anticausal_shift(nid: str, k: int) -> AnticausalShiftNode:
    return AnticausalShiftNode(nid, k)


class PeekAtNode(Node):
    """Test fixture that peeks exactly once: y(t) = x(t) everywhere except at
    the configured time t_star, where it reads x(t_star + 1) if that row is in
    the evaluation window (missing otherwise).

    Declares context window 2, so its *past* reach is honestly declared; the
    single forward read is the only violation. Because the read lands at a
    fixed time, the probability that a randomly placed tile boundary exposes
    the peek can be computed in closed form, which is what the detection-rate
    statistics are checked against.
    """

    causal = False

    def __init__(self, nid: str, t_star: int):
        super().__init__(NodeSpec(nid, NodeKind.SISO, 1, 1, 2))
        self.t_star = int(t_star)
        self.config_text = canonical_config_text(
            {"type": "peek_at", "t_star": self.t_star}
        )

    def evaluate(self, phase, interval, inputs, state):
        x = inputs[0]
        out = x.values.copy()
        if interval.start <= self.t_star <= interval.end:
            row = self.t_star - interval.start
            if self.t_star + 1 <= interval.end:
                out[row] = x.values[row + 1]
            else:
                out[row] = np.nan
        out = mask_leading_rows(out, self.spec.context_window - 1)
        return (x.with_values(out),), state


def peek_at(nid: str, t_star: int) -> PeekAtNode:
    return PeekAtNode(nid, t_star)


# --- EWMA via FIR truncation -----------------------------------------------


@dataclass(frozen=True)
class EwmaSpec:
    """Exponential weights lambda with truncation tolerance epsilon.

    ``horizon`` is the shortest FIR length h with truncation error at most
    lambda**h * max|x| <= epsilon * max|x|, i.e. ceil(ln(1/eps)/ln(1/lambda)).
    """

    lam: float
    epsilon: float

    def __post_init__(self) -> None:
        if not (0.0 < self.lam < 1.0):
            raise InvalidNodeConfig("ewma lambda must be in (0, 1)")
        if not (0.0 < self.epsilon < 1.0):
            raise InvalidNodeConfig("ewma epsilon must be in (0, 1)")

    @property
    def horizon(self) -> int:
        return math.ceil(math.log(1.0 / self.epsilon) / math.log(1.0 / self.lam))

    def weights(self) -> tuple[float, ...]:
        """FIR taps oldest first: (1-lam) * lam**age, age = h-1 .. 0."""
        h = self.horizon
        ages = np.arange(h - 1, -1, -1, dtype=np.float64)
        return tuple((1.0 - self.lam) * self.lam**ages)


def ewma_fir(nid: str, spec: EwmaSpec) -> FirNode:
    """Truncated EWMA: y(t) = (1-lam) * sum_{j<h} lam**j x(t-j), h = horizon."""
    return FirNode(
        nid,
        spec.weights(),
        type_name="ewma_fir",
        extra_config={"lam": spec.lam, "epsilon": spec.epsilon},
    )


# --- as-of join ------------------------------------------------------------


class AsofJoinNode(Node):
    """Pair left rows with the most recent right values within ``delta`` steps.

    Left columns pass through; right columns are filled by bounded
    last-observation-carried-forward. Column sets must be disjoint.
    Context window delta + 1.
    """

    def __init__(self, nid: str, delta: int, declared_window: int | None = None):
        delta = int(delta)
        if delta < 0:
            raise InvalidNodeConfig("asof_join delta must be >= 0")
        spec = _mislabel(
            NodeSpec(nid, NodeKind.GENERAL, 2, 1, delta + 1), declared_window
        )
        super().__init__(spec)
        self.delta = delta
        self.config_text = canonical_config_text({"type": "asof_join", "delta": delta})

    def evaluate(self, phase, interval, inputs, state):
        left, right = inputs
        overlap = set(left.columns) & set(right.columns)
        if overlap:
            raise ColumnMismatch(
                f"asof_join {self.spec.nid}: shared columns {sorted(c.label() for c in overlap)}"
            )
        filled = np.column_stack(
            [_bounded_locf(right.values[:, i], self.delta) for i in range(right.n_cols)]
        ) if right.n_cols else np.empty((right.n_rows, 0))
        columns = sorted(left.columns + right.columns, key=lambda c: c.sort_key)
        merged = np.empty((left.n_rows, len(columns)))
        left_pos = {c: i for i, c in enumerate(left.columns)}
        right_pos = {c: i for i, c in enumerate(right.columns)}
        for j, c in enumerate(columns):
            if c in left_pos:
                merged[:, j] = left.values[:, left_pos[c]]
            else:
                merged[:, j] = filled[:, right_pos[c]]
        merged = mask_leading_rows(merged, self.spec.context_window - 1)
        return (StreamFrame(interval.start, columns, merged),), state


def asof_join(nid: str, delta: int, declared_window: int | None = None) -> AsofJoinNode:
    return AsofJoinNode(nid, delta, declared_window)


# --- cross-sectional -------------------------------------------------------


class CrossSectionalNormalizeNode(Node):
    """Demean each feature across entities, row by row. Context window 1 but
    cross-sectional: needs the whole row, so it collapses column plans."""

    def __init__(self, nid: str):
        super().__init__(
            NodeSpec(nid, NodeKind.SISO, 1, 1, 1, Separability.cross_sectional())
        )
        self.config_text = canonical_config_text({"type": "xs_normalize"})

    def evaluate(self, phase, interval, inputs, state):
        x = inputs[0]
        out = np.array(x.values, copy=True)
        for _, block in _feature_blocks(x.columns):
            vals = x.values[:, block]
            present = ~np.isnan(vals)
            counts = present.sum(axis=1)
            sums = np.where(present, vals, 0.0).sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                means = np.where(counts > 0, sums / counts, np.nan)
            out[:, block] = vals - means[:, None]
        return (x.with_values(out),), state


def cross_sectional_normalize(nid: str) -> CrossSectionalNormalizeNode:
    return CrossSectionalNormalizeNode(nid)


class CrossSectionalRankNode(Node):
    """1-based average-tie ranks of each feature across entities, per row."""

    def __init__(self, nid: str):
        super().__init__(
            NodeSpec(nid, NodeKind.SISO, 1, 1, 1, Separability.cross_sectional())
        )
        self.config_text = canonical_config_text({"type": "xs_rank"})

    def evaluate(self, phase, interval, inputs, state):
        x = inputs[0]
        out = np.array(x.values, copy=True)
        for _, block in _feature_blocks(x.columns):
            vals = x.values[:, block]
            for i in range(vals.shape[0]):
                out[i, block] = _average_ranks(vals[i])
        return (x.with_values(out),), state


def cross_sectional_rank(nid: str) -> CrossSectionalRankNode:
    return CrossSectionalRankNode(nid)


# --- row-wise feature arithmetic -------------------------------------------

ROW_FNS = ("sum", "mean", "prod", "diff")


class RowMapNode(Node):
    """Per entity, combine several features into one output feature, row by
    row (context window 1). Entities lacking any input feature are skipped."""

    def __init__(self, nid: str, in_features: Sequence[str], out_feature: str, fn: str = "sum"):
        if fn not in ROW_FNS:
            raise InvalidNodeConfig(f"unknown row fn {fn!r}")
        in_features = tuple(in_features)
        if len(in_features) < 1:
            raise InvalidNodeConfig("row_map needs at least one input feature")
        if fn == "diff" and len(in_features) != 2:
            raise InvalidNodeConfig("row fn 'diff' needs exactly two input features")
        spec = NodeSpec(
            nid, NodeKind.SISO, 1, 1, 1, separability=Separability.by_entity()
        )
        super().__init__(spec)
        self.in_features = in_features
        self.out_feature = out_feature
        self.fn = fn
        self.config_text = canonical_config_text(
            {
                "type": "row_map",
                "in_features": list(in_features),
                "out_feature": out_feature,
                "fn": fn,
            }
        )

    def evaluate(self, phase, interval, inputs, state):
        x = inputs[0]
        by_entity: dict[str, dict[str, int]] = {}
        for i, c in enumerate(x.columns):
            by_entity.setdefault(c.entity, {})[c.feature] = i
        entities = sorted(
            e for e, feats in by_entity.items() if all(f in feats for f in self.in_features)
        )
        out_cols = [ColumnKey(entity=e, feature=self.out_feature) for e in entities]
        out = np.empty((x.n_rows, len(entities)))
        for j, e in enumerate(entities):
            stack = [x.values[:, by_entity[e][f]] for f in self.in_features]
            if self.fn == "diff":
                combined = stack[0] - stack[1]
            elif self.fn == "prod":
                combined = stack[0].copy()
                for s in stack[1:]:
                    combined = combined * s
            else:  # sum / mean, fixed left-to-right accumulation
                combined = stack[0].copy()
                for s in stack[1:]:
                    combined = combined + s
                if self.fn == "mean":
                    combined = combined / len(stack)
            out[:, j] = combined
        cols = sorted(out_cols, key=lambda c: c.sort_key)
        order = [out_cols.index(c) for c in cols]
        return (StreamFrame(interval.start, cols, out[:, order]),), state


def row_map(nid: str, in_features: Sequence[str], out_feature: str, fn: str = "sum") -> RowMapNode:
    return RowMapNode(nid, in_features, out_feature, fn)


# --- learned moving average ------------------------------------------------


class LearnedWindowMaNode(Node):
    """Moving average whose window length is learned in the fit phase.

    Fit searches w in [lo, hi) for the lowest mean squared one-step-ahead
    error (the t+1 target is in-sample and confined to fit); strict
    improvement keeps the smallest tied window. Predict applies the learned
    window and requires a fitted state. Declared context window is hi, the
    worst case over the search range.
    """

    stateful = True
    _STATE_KEY = "optimal_window"

    def __init__(self, nid: str, window_range: tuple[int, int] = (5, 50)):
        lo, hi = int(window_range[0]), int(window_range[1])
        if not (1 <= lo < hi):
            raise InvalidNodeConfig(f"bad window_range ({lo}, {hi})")
        super().__init__(NodeSpec(nid, NodeKind.SISO, 1, 1, hi))
        self.config_text = canonical_config_text(
            {"type": "learned_window_ma", "window_range": [lo, hi]}
        )
        self.window_range = (lo, hi)

    # -- state schema --

    def check_state(self, state: NodeState) -> None:
        if state.is_empty:
            return
        keys = [k for k, _ in state.entries]
        if keys != [self._STATE_KEY] or len(state.entries[0][1]) != 4:
            raise StateSchemaMismatch(
                f"{self.spec.nid}: expected single 4-byte {self._STATE_KEY!r}, got {keys}"
            )

    def _learned(self, state: NodeState) -> int:
        if state.is_empty:
            raise StateRequired(f"{self.spec.nid}: predict before fit")
        return struct.unpack("<I", state.get(self._STATE_KEY))[0]

    # -- evaluation --

    def _fit(self, values: np.ndarray) -> int:
        lo, hi = self.window_range
        best_w, best_score = lo, math.inf
        for w in range(lo, hi):
            ma = _moving_average(values, w)
            err = values[1:] - ma[:-1]  # x(t+1) vs MA_w(t)
            sq = err * err
            finite = ~np.isnan(sq)
            if not finite.any():
                continue
            score = float(sq[finite].mean())
            if score < best_score:  # strict: ties keep the smallest window
                best_w, best_score = w, score
        return best_w

    def evaluate(self, phase, interval, inputs, state):
        x = inputs[0]
        if phase is Phase.FIT:
            w = self._fit(x.values)
            state = NodeState.single(self._STATE_KEY, struct.pack("<I", w))
        else:
            w = self._learned(state)
        out = _moving_average(x.values, w)
        out = mask_leading_rows(out, self.spec.context_window - 1)
        return (x.with_values(out),), state


def learned_window_ma(nid: str, window_range: tuple[int, int] = (5, 50)) -> LearnedWindowMaNode:
    return LearnedWindowMaNode(nid, window_range)


# --- catalog ---------------------------------------------------------------


def _need(config: Mapping[str, Any], key: str, type_name: str) -> Any:
    if key not in config:
        raise InvalidNodeConfig(f"{type_name} config needs {key!r}")
    return config[key]


def _build_source(nid, cfg):
    return SourceNode(nid, str(_need(cfg, "stream", "source")))


def _build_sink(nid, cfg):
    return SinkNode(nid, int(cfg.get("inputs", 1)))


def _build_pointwise(nid, cfg):
    return PointwiseNode(nid, str(_need(cfg, "fn", "pointwise")))


def _build_fir(nid, cfg):
    return FirNode(
        nid,
        [float(w) for w in _need(cfg, "weights", "fir")],
        declared_window=cfg.get("declared_window"),
    )


def _build_rolling_mean(nid, cfg):
    return RollingMeanNode(
        nid, int(_need(cfg, "window", "rolling_mean")), cfg.get("declared_window")
    )


def _build_ewma(nid, cfg):
    return ewma_fir(
        nid,
        EwmaSpec(
            lam=float(_need(cfg, "lam", "ewma_fir")),
            epsilon=float(_need(cfg, "epsilon", "ewma_fir")),
        ),
    )


def _build_asof_join(nid, cfg):
    return AsofJoinNode(
        nid, int(_need(cfg, "delta", "asof_join")), cfg.get("declared_window")
    )


def _build_learned(nid, cfg):
    rng = cfg.get("window_range", [5, 50])
    if len(rng) != 2:
        raise InvalidNodeConfig("window_range must be [lo, hi]")
    return LearnedWindowMaNode(nid, (int(rng[0]), int(rng[1])))


def _build_row_map(nid, cfg):
    return RowMapNode(
        nid,
        [str(f) for f in _need(cfg, "in_features", "row_map")],
        str(_need(cfg, "out_feature", "row_map")),
        str(cfg.get("fn", "sum")),
    )


CATALOG: dict[str, Callable[[str, Mapping[str, Any]], Node]] = {
    "source": _build_source,
    "sink": _build_sink,
    "pointwise": _build_pointwise,
    "fir": _build_fir,
    "rolling_mean": _build_rolling_mean,
    "diff": lambda nid, cfg: diff(nid),
    "shift": lambda nid, cfg: ShiftNode(nid, int(_need(cfg, "k", "shift"))),
    "anticausal_shift": lambda nid, cfg: AnticausalShiftNode(
        nid, int(_need(cfg, "k", "anticausal_shift"))
    ),
    "peek_at": lambda nid, cfg: PeekAtNode(nid, int(_need(cfg, "t_star", "peek_at"))),
    "ewma_fir": _build_ewma,
    "asof_join": _build_asof_join,
    "xs_normalize": lambda nid, cfg: CrossSectionalNormalizeNode(nid),
    "xs_rank": lambda nid, cfg: CrossSectionalRankNode(nid),
    "learned_window_ma": _build_learned,
    "row_map": _build_row_map,
}


def build_catalog_node(type_name: str, nid: str, config: Mapping[str, Any]) -> Node:
    """Instantiate a catalog node from a config table.

    Raises:
        InvalidNodeConfig: unknown type or bad parameters.
    """
    if type_name not in CATALOG:
        raise InvalidNodeConfig(f"unknown node type {type_name!r}")
    try:
        return CATALOG[type_name](nid, config)
    except (TypeError, ValueError) as exc:
        raise InvalidNodeConfig(f"{nid} ({type_name}): {exc}") from exc
