"""Node contracts: specs, phases, state, and the point-in-time reference.

A node is a function from input tiles on a shared interval to output tiles on
the same interval, plus (for stateful nodes) a state that evolves only in the
fit phase. The central admissibility property is point-in-time idempotency:
the output at time t depends only on inputs in [t - L + 1, t], where L is the
node's declared context window, so the output at t is unchanged no matter how
much extra history the evaluation window carries.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    ArityMismatch,
    InsufficientHistory,
    IntervalMismatch,
    NonEmptyStateOnStateless,
    StateSchemaMismatch,
)
from .frame import Interval, StreamFrame, Tile, canonical_bytes, restrict

_STATE_MAGIC = b"TFST"


class Phase(enum.Enum):
    """Lifecycle phases a node evaluation can run under."""

    INITIALIZE = "initialize"
    FIT = "fit"
    VALIDATE = "validate"
    PREDICT = "predict"
    LOAD_STATE = "load_state"
    SAVE_STATE = "save_state"
    SAVE_RESULTS = "save_results"


class NodeKind(enum.Enum):
    SOURCE = "source"
    SINK = "sink"
    SISO = "siso"
    GENERAL = "general"


@dataclass(frozen=True)
class Separability:
    """How a node's computation factors over columns.

    ``column`` / ``feature`` / ``entity`` are column-separable with that unit
    as the atomic block; ``cross_sectional`` nodes read whole rows and force
    everything they touch into one execution group.
    """

    kind: str

    _KINDS = ("column", "feature", "entity", "cross_sectional")

    def __post_init__(self) -> None:
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown separability {self.kind!r}")

    @property
    def is_separable(self) -> bool:
        return self.kind != "cross_sectional"

    @staticmethod
    def by_column() -> "Separability":
        return Separability("column")

    @staticmethod
    def by_feature() -> "Separability":
        return Separability("feature")

    @staticmethod
    def by_entity() -> "Separability":
        return Separability("entity")

    @staticmethod
    def cross_sectional() -> "Separability":
        return Separability("cross_sectional")


_NID_OK = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-")


@dataclass(frozen=True)
class NodeSpec:
    """Static description of a node: identity, arity, context window, shape."""

    nid: str
    kind: NodeKind
    inputs_m: int
    outputs_n: int
    context_window: int = 1
    separability: Separability = field(default_factory=Separability.by_column)

    def __post_init__(self) -> None:
        if not self.nid or not set(self.nid) <= _NID_OK:
            raise ValueError(f"bad node id {self.nid!r}")
        if self.context_window < 1:
            raise ValueError("context_window must be >= 1")
        if self.inputs_m < 0 or self.outputs_n < 0:
            raise ValueError("arity must be non-negative")
        if self.kind is NodeKind.SOURCE and self.inputs_m != 0:
            raise ValueError("source nodes take no inputs")
        if self.kind is NodeKind.SINK and self.outputs_n != 0:
            raise ValueError("sink nodes produce no outputs")
        if self.kind is NodeKind.SISO and (self.inputs_m, self.outputs_n) != (1, 1):
            raise ValueError("siso nodes are 1-in 1-out")


@dataclass(frozen=True)
class NodeState:
    """Ordered key -> bytes blobs plus a schema version. Immutable; fit
    returns a replacement rather than mutating."""

    version: int = 1
    entries: tuple[tuple[str, bytes], ...] = ()

    @staticmethod
    def empty() -> "NodeState":
        return NodeState()

    @staticmethod
    def single(key: str, blob: bytes, version: int = 1) -> "NodeState":
        return NodeState(version=version, entries=((key, blob),))

    @property
    def is_empty(self) -> bool:
        return not self.entries

    def get(self, key: str) -> bytes:
        for k, v in self.entries:
            if k == key:
                return v
        raise KeyError(key)

    def digest_material(self) -> bytes:
        """Deterministic bytes folded into cache keys for predict-with-state."""
        parts = [struct.pack("<I", self.version)]
        for k, v in self.entries:
            kb = k.encode("utf-8")
            parts.append(struct.pack("<I", len(kb)) + kb + struct.pack("<Q", len(v)) + v)
        return b"".join(parts)


class Node:
    """Runtime node: a spec plus the evaluation function.

    Subclasses implement :meth:`evaluate`. Stateful nodes set ``stateful`` and
    override :meth:`check_state`; nodes that intentionally violate causality
    (test fixtures) set ``causal = False``.
    """

    causal: bool = True
    stateful: bool = False

    def __init__(self, spec: NodeSpec):
        self.spec = spec
        # canonical parameter text; folded into cache keys (see cache.key)
        self.config_text = f'type = "{type(self).__name__}"'

    def initial_state(self) -> NodeState:
        return NodeState.empty()

    def evaluate(
        self,
        phase: Phase,
        interval: Interval,
        inputs: tuple[Tile, ...],
        state: NodeState,
    ) -> tuple[tuple[Tile, ...], NodeState]:
        raise NotImplementedError

    def check_state(self, state: NodeState) -> None:
        """Validate a deserialized state against this node's schema."""
        if not self.stateful and not state.is_empty:
            raise NonEmptyStateOnStateless(
                f"node {self.spec.nid} is stateless but was handed state entries "
                f"{[k for k, _ in state.entries]}"
            )

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.spec.nid!r})"


def mask_leading_rows(values: np.ndarray, count: int) -> np.ndarray:
    """Return a copy with the first ``count`` rows set to missing.

    Used to enforce the uniform warm-up rule: within any evaluation window,
    rows that lack a full context window are emitted as missing.
    """
    out = np.array(values, dtype=np.float64, copy=True)
    if count > 0:
        out[: min(count, out.shape[0])] = np.nan
    return out


def apply(
    node: Node,
    phase: Phase,
    inputs: Sequence[Tile],
    state: NodeState | None = None,
    interval: Interval | None = None,
) -> tuple[tuple[Tile, ...], NodeState]:
    """Evaluate a node under the arity/interval/state contract.

    All inputs must share one interval, which becomes the output interval.
    For source nodes (no inputs) the interval must be passed explicitly.

    Raises:
        ArityMismatch: wrong number of input tiles.
        IntervalMismatch: inputs do not share a single interval.
        StateRequired: stateful node asked to predict with no fitted state
            (raised by the node itself).
        NonEmptyStateOnStateless: stateless node handed non-empty state.
    """
    inputs = tuple(inputs)
    if len(inputs) != node.spec.inputs_m:
        raise ArityMismatch(
            f"{node.spec.nid}: got {len(inputs)} inputs, spec says {node.spec.inputs_m}"
        )
    domains = {f.domain for f in inputs}
    if len(domains) > 1:
        raise IntervalMismatch(f"{node.spec.nid}: input domains differ: {domains}")
    if inputs:
        shared = domains.pop()
        if shared is None:
            raise IntervalMismatch(f"{node.spec.nid}: empty input frames")
        if interval is not None and interval != shared:
            raise IntervalMismatch(
                f"{node.spec.nid}: interval {interval} != input domain {shared}"
            )
        interval = shared
    elif interval is None:
        raise IntervalMismatch(f"{node.spec.nid}: source evaluation needs an interval")
    if state is None:
        state = node.initial_state()
    node.check_state(state)
    outputs, new_state = node.evaluate(phase, interval, inputs, state)
    outputs = tuple(outputs)
    if len(outputs) != node.spec.outputs_n:
        raise ArityMismatch(
            f"{node.spec.nid}: produced {len(outputs)} outputs, spec says {node.spec.outputs_n}"
        )
    for out in outputs:
        if out.domain != interval:
            raise IntervalMismatch(
                f"{node.spec.nid}: output domain {out.domain} != input interval {interval}"
            )
    return outputs, new_state


def ideal_output_at(
    node: Node,
    inputs: Sequence[StreamFrame],
    t: int,
    state: NodeState | None = None,
    phase: Phase = Phase.PREDICT,
) -> tuple[Tile, ...]:
    """Reference output at time t: evaluate on exactly [t - L + 1, t].

    This is the defining oracle for point-in-time idempotency — any admissible
    evaluation that covers this window must agree with it at t.

    Raises:
        InsufficientHistory: the inputs do not cover [t - L + 1, t].
    """
    if node.spec.inputs_m == 0:
        raise ArityMismatch("ideal_output_at needs a node with inputs")
    window = Interval(t - node.spec.context_window + 1, t)
    clipped = []
    for f in inputs:
        dom = f.domain
        if dom is None or not dom.contains(window):
            raise InsufficientHistory(
                f"{node.spec.nid}: window {window} not covered by input domain {dom}"
            )
        clipped.append(restrict(f, window))
    outputs, _ = apply(node, phase, clipped, state=state)
    return tuple(restrict(out, Interval(t, t)) for out in outputs)


def check_pit_idempotency(
    node: Node,
    inputs: Sequence[StreamFrame],
    t: int,
    window_lengths: Sequence[int],
    state: NodeState | None = None,
    phase: Phase = Phase.PREDICT,
) -> bool:
    """True iff the output row at t is bit-identical across every placement
    of every given window length that contains the context [t - L + 1, t].

    Placements slide both ways: windows that merely *end* at t would let an
    anticausal node pass (its future reads fall outside every such window),
    so windows extending past t are included — a node whose value at t shifts
    when the window grows to the right is reading the future.

    Window lengths must each be >= the declared context window L.
    """
    L = node.spec.context_window
    lengths = sorted(set(window_lengths))
    if not lengths:
        raise ValueError("need at least one window length")
    if lengths[0] < L:
        raise ValueError(f"window lengths must be >= context window {L}")
    reference: list[bytes] | None = None
    for w in lengths:
        tried = 0
        for s in range(t - w + 1, t - L + 2):
            window = Interval(s, s + w - 1)
            if any(
                f.domain is None or not f.domain.contains(window) for f in inputs
            ):
                continue
            tried += 1
            clipped = [restrict(f, window) for f in inputs]
            outputs, _ = apply(node, phase, clipped, state=state)
            rows = [canonical_bytes(restrict(out, Interval(t, t))) for out in outputs]
            if reference is None:
                reference = rows
            elif rows != reference:
                return False
        if tried == 0:
            raise InsufficientHistory(
                f"no length-{w} window containing [{t - L + 1}, {t}] fits the inputs"
            )
    return True


# --- state persistence -----------------------------------------------------


def state_path(root: str | Path, run_id: str, nid: str) -> Path:
    return Path(root) / run_id / f"{nid}.state"


def save_state(node: Node, state: NodeState, root: str | Path, run_id: str) -> Path:
    """Write length-prefixed state records to ``state/<run_id>/<nid>.state``."""
    node.check_state(state)
    path = state_path(root, run_id, node.spec.nid)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [_STATE_MAGIC, struct.pack("<II", state.version, len(state.entries))]
    for key, blob in state.entries:
        kb = key.encode("utf-8")
        parts.append(struct.pack("<I", len(kb)) + kb)
        parts.append(struct.pack("<Q", len(blob)) + blob)
    path.write_bytes(b"".join(parts))
    return path


def load_state(node: Node, root: str | Path, run_id: str) -> NodeState:
    """Read a node's state back; validates against the node's schema.

    Raises:
        StateSchemaMismatch: malformed file or wrong shape for this node.
        NonEmptyStateOnStateless: stateless node with stored entries.
    """
    path = state_path(root, run_id, node.spec.nid)
    data = path.read_bytes()
    if data[:4] != _STATE_MAGIC:
        raise StateSchemaMismatch(f"{path}: bad magic")
    try:
        version, count = struct.unpack_from("<II", data, 4)
        off = 12
        entries = []
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", data, off)
            off += 4
            key = data[off : off + klen].decode("utf-8")
            off += klen
            (blen,) = struct.unpack_from("<Q", data, off)
            off += 8
            entries.append((key, bytes(data[off : off + blen])))
            off += blen
    except (struct.error, UnicodeDecodeError) as exc:
        raise StateSchemaMismatch(f"{path}: truncated or corrupt ({exc})") from exc
    state = NodeState(version=version, entries=tuple(entries))
    node.check_state(state)
    return state
