"""Exception hierarchy for tileflow.

Every error raised by the library derives from :class:`TileflowError` so callers
can catch one base type. Names describe the violated contract.
"""


class TileflowError(Exception):
    """Base class for all tileflow errors."""


# --- frame layer -----------------------------------------------------------

class DuplicateCell(TileflowError):
    """The same (time, entity, feature) cell was supplied more than once."""


class OutOfDomain(TileflowError):
    """A requested interval is not contained in the frame's domain."""


class UnknownColumn(TileflowError):
    """A requested column does not exist in the frame."""


class GapOrOverlap(TileflowError):
    """Concatenated frames are not exactly adjacent in time."""


class ColumnMismatch(TileflowError):
    """Two frames that must share a column set do not."""


# --- node layer ------------------------------------------------------------

class ArityMismatch(TileflowError):
    """Number of input frames does not match the node's declared arity."""


class IntervalMismatch(TileflowError):
    """Input frames to one evaluation do not share a common interval."""


class StateRequired(TileflowError):
    """A stateful node was asked to predict before any state was fitted."""


class InsufficientHistory(TileflowError):
    """The available data does not cover the requested evaluation window."""


class StateSchemaMismatch(TileflowError):
    """A serialized state blob does not match the node's expected schema."""


class NonEmptyStateOnStateless(TileflowError):
    """A stateless node was handed a non-empty state."""


# --- graph layer -----------------------------------------------------------

class CycleDetected(TileflowError):
    """The supposed DAG contains a directed cycle."""


class NotAPath(TileflowError):
    """A node sequence is not a directed path in the topology."""


class NoSourceSinkPath(TileflowError):
    """The topology has no source-to-sink path (it is empty)."""


class UnknownNid(TileflowError):
    """A config references a node id that is not in the topology."""


class InvalidNodeConfig(TileflowError):
    """A node config has missing, ill-typed, or out-of-range parameters."""


# --- tiling layer ----------------------------------------------------------

class TileTooSmall(TileflowError):
    """Tile length is below the graph context window, so tiled execution
    would not reproduce the untiled outputs."""


class TauNotSmall(TileflowError):
    """A counterexample was requested for a tile length that is actually
    legal (tau >= the graph context window)."""


# --- engine layer ----------------------------------------------------------

class ClockNotMonotone(TileflowError):
    """A replayed clock was driven backwards."""


class EmptyFitInterval(TileflowError):
    """A fit/predict runner was given an empty fit interval."""


class WindowOrderViolation(TileflowError):
    """Rolling windows were supplied out of time order."""


# --- cache layer -----------------------------------------------------------

class CacheCorruption(TileflowError):
    """A cache entry failed its digest check on readback."""


# --- validation layer ------------------------------------------------------

class NoOverlap(TileflowError):
    """Two runs share no overlapping output interval to reconcile."""


class InvalidCut(TileflowError):
    """A capture cut does not separate the replayed subgraph from the
    rest of the DAG."""


# --- cli / config ----------------------------------------------------------

class ConfigError(TileflowError):
    """A config or topology file is malformed."""
