"""Content-addressed tile cache.

Keys hash what actually determines a node's output: the exact input tile
bytes, the node's canonical configuration (which names its type), the fitted
state, the code version, and the phase. Node ids stay out of the key, so two
nodes configured identically share entries; anything that could change the
output — input data, config, code — changes the key, which is the whole
invalidation story.

Fit is never cached (it is where learning happens and it is cheap to rerun
relative to the risk of stale state). Sources are never cached: they have no
input tiles, so their key could not see the bound stream's content.
"""

from __future__ import annotations

import hashlib
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .errors import CacheCorruption
from .frame import Tile, canonical_bytes, from_canonical_bytes
from .node import Node, NodeKind, NodeState, Phase, apply

_KEY_MAGIC = b"TFCK"
_ENTRY_MAGIC = b"TFCE"
_VERSION = 1

DEFAULT_CODE_VERSION = "0"

_CACHED_PHASES = (Phase.PREDICT, Phase.VALIDATE)


def _prefixed(blob: bytes) -> bytes:
    return struct.pack("<Q", len(blob)) + blob


def cache_key(
    node: Node,
    phase: Phase,
    inputs: Sequence[Tile],
    state: NodeState | None,
    code_version: str = DEFAULT_CODE_VERSION,
) -> str:
    """SHA-256 hex digest identifying one node evaluation by content."""
    h = hashlib.sha256()
    h.update(_KEY_MAGIC)
    h.update(struct.pack("<H", _VERSION))
    h.update(_prefixed(phase.name.encode("utf-8")))
    h.update(_prefixed(code_version.encode("utf-8")))
    h.update(_prefixed(node.config_text.encode("utf-8")))
    if state is not None and not state.is_empty:
        h.update(b"\x01")
        h.update(_prefixed(state.digest_material()))
    else:
        h.update(b"\x00")
    h.update(struct.pack("<I", len(inputs)))
    for tile in inputs:
        h.update(_prefixed(canonical_bytes(tile)))
    return h.hexdigest()


def is_cacheable(node: Node, phase: Phase) -> bool:
    """Predict/validate evaluations of compute nodes. Sources (no keyable
    inputs) and sinks (no outputs) are excluded; fit always reruns."""
    return (
        phase in _CACHED_PHASES
        and node.spec.kind not in (NodeKind.SOURCE, NodeKind.SINK)
        and node.spec.inputs_m > 0
    )


def _serialize_outputs(outputs: Sequence[Tile]) -> bytes:
    body = [struct.pack("<HI", _VERSION, len(outputs))]
    for tile in outputs:
        body.append(_prefixed(canonical_bytes(tile)))
    payload = b"".join(body)
    return _ENTRY_MAGIC + payload + hashlib.sha256(payload).digest()


def _deserialize_outputs(blob: bytes, where: str) -> tuple[Tile, ...]:
    if len(blob) < 4 + 6 + 32 or blob[:4] != _ENTRY_MAGIC:
        raise CacheCorruption(f"{where}: bad magic or truncated entry")
    payload, digest = blob[4:-32], blob[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CacheCorruption(f"{where}: checksum mismatch")
    version, count = struct.unpack_from("<HI", payload, 0)
    if version != _VERSION:
        raise CacheCorruption(f"{where}: entry version {version}")
    off = 6
    tiles = []
    for _ in range(count):
        if off + 8 > len(payload):
            raise CacheCorruption(f"{where}: truncated tile table")
        (n,) = struct.unpack_from("<Q", payload, off)
        off += 8
        if off + n > len(payload):
            raise CacheCorruption(f"{where}: truncated tile body")
        try:
            tiles.append(from_canonical_bytes(payload[off : off + n]))
        except Exception as exc:
            raise CacheCorruption(f"{where}: undecodable tile: {exc}") from exc
        off += n
    if off != len(payload):
        raise CacheCorruption(f"{where}: trailing bytes in entry")
    return tuple(tiles)


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    puts: int = 0
    evictions: int = 0

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


class TileCache:
    """Filesystem store of node outputs, addressed by :func:`cache_key`.

    Entries live at ``<root>/<key[:2]>/<key[2:]>.entry`` and are written via
    temp-file + atomic rename, so a crashed writer can never leave a partial
    entry under the final name. When ``capacity_bytes`` is set, least
    recently used entries (by mtime; reads refresh it) are evicted after
    each write.
    """

    def __init__(self, root: str | Path, capacity_bytes: int | None = None):
        self.root = Path(root)
        self.capacity_bytes = capacity_bytes
        self.stats = CacheStats()
        self._stats_lock = threading.Lock()
        self.root.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key[2:]}.entry"

    def get(self, key: str) -> tuple[Tile, ...] | None:
        """The stored outputs, or None on a miss.

        Raises:
            CacheCorruption: the entry exists but cannot be trusted.
        """
        path = self._path(key)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            with self._stats_lock:
                self.stats.misses += 1
            return None
        tiles = _deserialize_outputs(blob, path.name)
        os.utime(path)  # refresh recency for LRU
        with self._stats_lock:
            self.stats.hits += 1
        return tiles

    def put(self, key: str, outputs: Sequence[Tile]) -> Path:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        blob = _serialize_outputs(outputs)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}.{threading.get_ident()}")
        tmp.write_bytes(blob)
        os.replace(tmp, path)
        with self._stats_lock:
            self.stats.puts += 1
        if self.capacity_bytes is not None:
            self._evict_to(self.capacity_bytes)
        return path

    def _entries(self) -> list[Path]:
        return [p for p in self.root.rglob("*.entry") if p.is_file()]

    def _evict_to(self, capacity: int) -> None:
        entries = [(p.stat().st_mtime_ns, p.stat().st_size, p) for p in self._entries()]
        total = sum(size for _, size, _ in entries)
        for _, size, path in sorted(entries):
            if total <= capacity:
                break
            path.unlink(missing_ok=True)
            with self._stats_lock:
                self.stats.evictions += 1
            total -= size

    def entry_count(self) -> int:
        return len(self._entries())

    def total_bytes(self) -> int:
        return sum(p.stat().st_size for p in self._entries())

    def clear(self) -> int:
        entries = self._entries()
        for p in entries:
            p.unlink(missing_ok=True)
        return len(entries)


def execute_cached(
    node: Node,
    phase: Phase,
    inputs: Sequence[Tile],
    state: NodeState | None,
    cache: TileCache | None,
    code_version: str = DEFAULT_CODE_VERSION,
    interval=None,
) -> tuple[tuple[Tile, ...], NodeState, bool]:
    """Evaluate one node through the cache.

    Returns (outputs, state, hit). On a hit the stored outputs are returned
    and the passed state is preserved; on a miss the node is evaluated and
    its outputs stored. Uncacheable evaluations (fit, sources, sinks) pass
    straight through with hit=False.
    """
    if cache is None or not is_cacheable(node, phase):
        outputs, new_state = apply(node, phase, inputs, state=state, interval=interval)
        return outputs, new_state, False
    key = cache_key(node, phase, inputs, state, code_version)
    found = cache.get(key)
    if found is not None:
        return found, (state if state is not None else node.initial_state()), True
    outputs, new_state = apply(node, phase, inputs, state=state, interval=interval)
    cache.put(key, outputs)
    return outputs, new_state, False


def cached_runner(
    cache: TileCache | None, code_version: str = DEFAULT_CODE_VERSION
) -> Callable:
    """A node runner (drop-in for the evaluator's ``runner`` argument) that
    consults the cache around :func:`tileflow.node.apply`."""

    def runner(node, phase, inputs, state, interval):
        outputs, new_state, _ = execute_cached(
            node, phase, inputs, state, cache, code_version, interval=interval
        )
        return outputs, new_state

    return runner
