"""Time-indexed wide frames, tiles, and their canonical byte encoding.

A :class:`StreamFrame` is an immutable dense table: rows are consecutive integer
time steps, columns are (entity, feature) pairs, cells are float64 with NaN
meaning "missing". A tile is simply a frame whose domain is one bounded
interval — every frame here is bounded, so ``Tile`` is an alias.

The canonical byte encoding is the backbone of every bit-equality guarantee in
the package: two frames are *equal* exactly when their canonical bytes match.
All NaNs are written as the single quiet-NaN pattern 0x7FF8000000000000 so that
NaN payloads can never leak into comparisons or cache digests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    ColumnMismatch,
    DuplicateCell,
    GapOrOverlap,
    OutOfDomain,
    UnknownColumn,
)

TimeIndex = int

_MAGIC = b"TFLF"
_VERSION = 1
_CANONICAL_NAN_BITS = np.uint64(0x7FF8000000000000)


@dataclass(frozen=True, order=True)
class Interval:
    """Closed integer interval [start, end] on the time axis."""

    start: TimeIndex
    end: TimeIndex

    def __post_init__(self) -> None:
        if self.end < self.start:
            raise ValueError(f"empty interval [{self.start}, {self.end}]")

    @property
    def length(self) -> int:
        return self.end - self.start + 1

    def contains(self, other: "Interval") -> bool:
        return self.start <= other.start and other.end <= self.end

    def contains_time(self, t: TimeIndex) -> bool:
        return self.start <= t <= self.end

    def intersect(self, other: "Interval") -> "Interval | None":
        lo = max(self.start, other.start)
        hi = min(self.end, other.end)
        return Interval(lo, hi) if lo <= hi else None

    def shift(self, by: int) -> "Interval":
        return Interval(self.start + by, self.end + by)

    def __str__(self) -> str:  # compact form used in paths and messages
        return f"{self.start}_{self.end}"


class ColumnKey(NamedTuple):
    """One column of a wide frame: a feature observed for an entity."""

    entity: str
    feature: str

    @property
    def sort_key(self) -> tuple[str, str]:
        return (self.feature, self.entity)

    def label(self) -> str:
        return f"{self.feature}:{self.entity}"

    @staticmethod
    def from_label(label: str) -> "ColumnKey":
        feature, sep, entity = label.partition(":")
        if not sep:
            raise ValueError(f"column label {label!r} lacks ':' separator")
        return ColumnKey(entity=entity, feature=feature)


def _sorted_columns(columns: Iterable[ColumnKey]) -> tuple[ColumnKey, ...]:
    return tuple(sorted(columns, key=lambda c: c.sort_key))


class StreamFrame:
    """Immutable time-indexed table over (entity, feature) columns.

    Columns are kept in lexicographic (feature, entity) order; values are a
    read-only float64 matrix with one row per time step starting at ``start``.
    """

    __slots__ = ("start", "columns", "values", "_index")

    def __init__(self, start: TimeIndex, columns: Sequence[ColumnKey], values: np.ndarray):
        columns = tuple(ColumnKey(*c) for c in columns)
        if list(columns) != sorted(columns, key=lambda c: c.sort_key):
            raise ValueError("columns must be sorted by (feature, entity)")
        if len(set(columns)) != len(columns):
            raise ValueError("duplicate columns")
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != len(columns):
            raise ValueError(
                f"values shape {arr.shape} inconsistent with {len(columns)} columns"
            )
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "start", int(start))
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(columns)})

    def __setattr__(self, name, value):  # immutability guard
        raise AttributeError("StreamFrame is immutable")

    # -- construction -------------------------------------------------------

    @staticmethod
    def from_columns(start: TimeIndex, data: Mapping[ColumnKey, Sequence[float]]) -> "StreamFrame":
        cols = _sorted_columns(data.keys())
        if not cols:
            return StreamFrame(start, (), np.empty((0, 0)))
        series = [np.asarray(data[c], dtype=np.float64) for c in cols]
        lengths = {len(s) for s in series}
        if len(lengths) > 1:
            raise ValueError(f"column lengths differ: {sorted(lengths)}")
        return StreamFrame(start, cols, np.column_stack(series) if series else np.empty((0, 0)))

    @staticmethod
    def empty() -> "StreamFrame":
        """The empty frame: no rows, no columns, empty-domain sentinel."""
        return StreamFrame(0, (), np.empty((0, 0)))

    # -- basic properties ---------------------------------------------------

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    @property
    def domain(self) -> Interval | None:
        """The covered interval, or None for the empty frame."""
        if self.n_rows == 0:
            return None
        return Interval(self.start, self.start + self.n_rows - 1)

    @property
    def end(self) -> TimeIndex:
        if self.n_rows == 0:
            raise OutOfDomain("empty frame has no end")
        return self.start + self.n_rows - 1

    def row_of(self, t: TimeIndex) -> int:
        dom = self.domain
        if dom is None or not dom.contains_time(t):
            raise OutOfDomain(f"time {t} outside domain {dom}")
        return t - self.start

    def at(self, t: TimeIndex, column: ColumnKey) -> float:
        if column not in self._index:
            raise UnknownColumn(str(column))
        return float(self.values[self.row_of(t), self._index[column]])

    def column(self, column: ColumnKey) -> np.ndarray:
        if column not in self._index:
            raise UnknownColumn(str(column))
        return self.values[:, self._index[column]]

    def with_values(self, values: np.ndarray) -> "StreamFrame":
        """Same shape/columns/start, new cell values."""
        return StreamFrame(self.start, self.columns, values)

    def __repr__(self) -> str:
        return f"StreamFrame(domain={self.domain}, n_cols={self.n_cols})"


# A tile is a frame restricted to one bounded interval. Every StreamFrame in
# this package is bounded, so the distinction is vocabulary, not type.
Tile = StreamFrame


@dataclass(frozen=True)
class ColumnGroup:
    """A named group of columns that may be executed independently."""

    group_id: str
    columns: tuple[ColumnKey, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", _sorted_columns(self.columns))


@dataclass(frozen=True)
class TwoTileWindow:
    """The two-tile input window I2_t = [t - 2*tau + 1, t].

    Outputs are read from the second tile [t - tau + 1, t]; the first tile is
    context that guarantees every kept row sees at least tau rows of history.
    """

    right_endpoint: TimeIndex
    tile_length: int

    def __post_init__(self) -> None:
        if self.tile_length < 1:
            raise ValueError("tile_length must be >= 1")

    @property
    def window(self) -> Interval:
        return Interval(self.right_endpoint - 2 * self.tile_length + 1, self.right_endpoint)

    @property
    def first_tile(self) -> Interval:
        return Interval(self.window.start, self.right_endpoint - self.tile_length)

    @property
    def second_tile(self) -> Interval:
        return Interval(self.right_endpoint - self.tile_length + 1, self.right_endpoint)


# --- operations ------------------------------------------------------------


def pivot_long_to_wide(
    records: Iterable[tuple[TimeIndex, str, str, float]],
) -> StreamFrame:
    """Build a wide frame from (time, entity, feature, value) records.

    The domain is [min time, max time]; cells not covered by any record are
    missing. Each cell may be given at most once.

    Raises:
        DuplicateCell: if the same (time, entity, feature) appears twice.
    """
    recs = list(records)
    if not recs:
        return StreamFrame.empty()
    times = [int(t) for t, _, _, _ in recs]
    start, end = min(times), max(times)
    columns = _sorted_columns({ColumnKey(entity=e, feature=f) for _, e, f, _ in recs})
    index = {c: i for i, c in enumerate(columns)}
    values = np.full((end - start + 1, len(columns)), np.nan)
    seen: set[tuple[TimeIndex, ColumnKey]] = set()
    for t, entity, feature, value in recs:
        key = ColumnKey(entity=entity, feature=feature)
        cell = (int(t), key)
        if cell in seen:
            raise DuplicateCell(f"cell t={t} {key.label()} given more than once")
        seen.add(cell)
        values[int(t) - start, index[key]] = value
    return StreamFrame(start, columns, values)


def restrict(
    frame: StreamFrame,
    interval: Interval,
    columns: Iterable[ColumnKey] | None = None,
) -> Tile:
    """Restrict a frame to ``interval`` (and optionally a column subset).

    Raises:
        OutOfDomain: if ``interval`` is not contained in the frame's domain.
        UnknownColumn: if a requested column is absent.
    """
    dom = frame.domain
    if dom is None or not dom.contains(interval):
        raise OutOfDomain(f"{interval} not contained in domain {dom}")
    if columns is None:
        cols = frame.columns
    else:
        cols = _sorted_columns(columns)
        missing = [c for c in cols if c not in frame._index]
        if missing:
            raise UnknownColumn(", ".join(c.label() for c in missing))
    col_idx = [frame._index[c] for c in cols]
    lo = interval.start - frame.start
    hi = interval.end - frame.start + 1
    return StreamFrame(interval.start, cols, frame.values[lo:hi][:, col_idx])


def concat(first: Tile, second: Tile) -> StreamFrame:
    """Concatenate two adjacent tiles with identical column sets.

    Raises:
        GapOrOverlap: if ``second`` does not start at ``first.end + 1``.
        ColumnMismatch: if the column sets differ.
    """
    if first.n_rows == 0:
        return second
    if second.n_rows == 0:
        return first
    if first.columns != second.columns:
        raise ColumnMismatch(
            f"{len(first.columns)} vs {len(second.columns)} columns or different keys"
        )
    if second.start != first.end + 1:
        raise GapOrOverlap(
            f"second starts at {second.start}, expected {first.end + 1}"
        )
    return StreamFrame(
        first.start, first.columns, np.concatenate([first.values, second.values])
    )


def _canonical_cell_bits(values: np.ndarray) -> np.ndarray:
    """Little-endian uint64 views of cells with every NaN canonicalized."""
    le = np.ascontiguousarray(values, dtype="<f8")
    bits = le.view("<u8").copy()
    bits[np.isnan(le)] = _CANONICAL_NAN_BITS
    return bits


def canonical_bytes(frame: StreamFrame) -> bytes:
    """Deterministic byte encoding of a frame.

    Header: magic, version, row count, right endpoint, sorted column labels.
    Body: cells row-major, little-endian float64, all NaNs written as the
    quiet-NaN pattern 0x7FF8000000000000. Equal frames (up to NaN payload)
    encode to equal bytes; any cell, domain, or column difference changes the
    bytes.
    """
    n = frame.n_rows
    right = frame.start + n - 1 if n else 0
    parts = [_MAGIC, struct.pack("<HQq I", _VERSION, n, right, frame.n_cols)]
    for col in frame.columns:
        f = col.feature.encode("utf-8")
        e = col.entity.encode("utf-8")
        parts.append(struct.pack("<I", len(f)) + f + struct.pack("<I", len(e)) + e)
    parts.append(_canonical_cell_bits(frame.values).tobytes())
    return b"".join(parts)


def from_canonical_bytes(data: bytes) -> StreamFrame:
    """Inverse of :func:`canonical_bytes`."""
    if data[:4] != _MAGIC:
        raise ValueError("not a canonical frame: bad magic")
    off = 4
    version, n, right, n_cols = struct.unpack_from("<HQq I", data, off)
    off += struct.calcsize("<HQq I")
    if version != _VERSION:
        raise ValueError(f"unsupported frame encoding version {version}")
    cols = []
    for _ in range(n_cols):
        (flen,) = struct.unpack_from("<I", data, off)
        off += 4
        feature = data[off : off + flen].decode("utf-8")
        off += flen
        (elen,) = struct.unpack_from("<I", data, off)
        off += 4
        entity = data[off : off + elen].decode("utf-8")
        off += elen
        cols.append(ColumnKey(entity=entity, feature=feature))
    cells = np.frombuffer(data, dtype="<u8", offset=off, count=n * n_cols)
    values = cells.view("<f8").reshape(n, n_cols).astype(np.float64)
    start = right - n + 1 if n else 0
    return StreamFrame(start, cols, values)


def frames_equal(a: StreamFrame, b: StreamFrame) -> bool:
    """Bit-equality: canonical byte encodings match."""
    return canonical_bytes(a) == canonical_bytes(b)


def merge_columns(frames: Sequence[StreamFrame]) -> StreamFrame:
    """Combine frames with disjoint column sets on one shared interval.

    This is the combining map for column-group execution: per-group outputs
    concatenate column-wise back into the full frame.

    Raises:
        ColumnMismatch: if column sets overlap.
        IntervalMismatch-like ValueError: if domains differ.
    """
    frames = [f for f in frames if f.n_cols > 0]
    if not frames:
        return StreamFrame.empty()
    domains = {f.domain for f in frames}
    if len(domains) != 1:
        raise ValueError(f"cannot merge frames over different domains: {domains}")
    all_cols: list[ColumnKey] = []
    for f in frames:
        all_cols.extend(f.columns)
    if len(set(all_cols)) != len(all_cols):
        raise ColumnMismatch("overlapping columns across groups")
    cols = _sorted_columns(all_cols)
    index: dict[ColumnKey, tuple[int, int]] = {}
    for fi, f in enumerate(frames):
        for ci, c in enumerate(f.columns):
            index[c] = (fi, ci)
    values = np.empty((frames[0].n_rows, len(cols)))
    for j, c in enumerate(cols):
        fi, ci = index[c]
        values[:, j] = frames[fi].values[:, ci]
    return StreamFrame(frames[0].start, cols, values)


# --- delimited interchange -------------------------------------------------


def write_csv(frame: StreamFrame, path: str | Path) -> None:
    """Write ``time,<feature>:<entity>,...`` delimited text; missing cells
    are empty fields. Floats use shortest round-trip repr."""
    for col in frame.columns:
        if ":" in col.feature:
            raise ValueError(f"feature {col.feature!r} may not contain ':'")
    lines = ["time," + ",".join(c.label() for c in frame.columns)]
    for i in range(frame.n_rows):
        cells = [str(frame.start + i)]
        for v in frame.values[i]:
            cells.append("" if np.isnan(v) else repr(float(v)))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path: str | Path) -> StreamFrame:
    """Read the delimited format written by :func:`write_csv`.

    Rows must be consecutive in time. Empty fields and the literal strings
    nan/NaN are missing.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return StreamFrame.empty()
    header = lines[0].split(",")
    if header[0] != "time":
        raise ValueError("first column must be 'time'")
    columns = [ColumnKey.from_label(lbl) for lbl in header[1:]]
    order = sorted(range(len(columns)), key=lambda i: columns[i].sort_key)
    times: list[int] = []
    rows: list[list[float]] = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != len(header):
            raise ValueError(f"row has {len(cells)} fields, header has {len(header)}")
        times.append(int(cells[0]))
        parsed = [
            np.nan if c.strip() in ("", "nan", "NaN") else float(c) for c in cells[1:]
        ]
        rows.append([parsed[i] for i in order])
    start = times[0]
    if times != list(range(start, start + len(times))):
        raise ValueError("times must be consecutive")
    return StreamFrame(start, [columns[i] for i in order], np.array(rows).reshape(len(rows), len(columns)))


# --- tile store ------------------------------------------------------------


def tile_path(root: str | Path, stream_name: str, group_id: str, interval: Interval) -> Path:
    return Path(root) / stream_name / group_id / f"{interval}.tile"


def write_tile(frame: Tile, root: str | Path, stream_name: str, group_id: str) -> Path:
    """Persist one tile under ``<root>/<stream>/<group>/<start>_<end>.tile``."""
    dom = frame.domain
    if dom is None:
        raise OutOfDomain("cannot store an empty tile")
    path = tile_path(root, stream_name, group_id, dom)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(canonical_bytes(frame))
    return path


def read_tile(path: str | Path) -> Tile:
    return from_canonical_bytes(Path(path).read_bytes())
