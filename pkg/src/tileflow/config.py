"""Config text: TOML-compatible parsing and canonical rendering.

Configs are nested key-value tables. Before hashing or embedding in manifests
they are canonicalized: flattened to dotted keys, sorted, one ``key = value``
line each, with deterministic value rendering. Two configs that parse to the
same mapping always canonicalize to the same text.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

try:  # Python 3.11+
    import tomllib as _toml
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as _toml

from .errors import ConfigError


def load_config_text(text: str) -> dict[str, Any]:
    try:
        return _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc


def load_config_file(path: str | Path) -> dict[str, Any]:
    return load_config_text(Path(path).read_text(encoding="utf-8"))


def _render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_render_value(v) for v in value) + "]"
    raise ConfigError(f"cannot render config value of type {type(value).__name__}")


def _flatten(prefix: str, mapping: Mapping[str, Any], out: dict[str, Any]) -> None:
    for key in mapping:
        if not isinstance(key, str):
            raise ConfigError(f"config keys must be strings, got {key!r}")
        dotted = f"{prefix}.{key}" if prefix else key
        value = mapping[key]
        if isinstance(value, Mapping):
            _flatten(dotted, value, out)
        else:
            out[dotted] = value


def canonical_config_text(config: Mapping[str, Any]) -> str:
    """Flatten, sort, and render a config mapping deterministically."""
    flat: dict[str, Any] = {}
    _flatten("", config, flat)
    lines = [f"{k} = {_render_value(flat[k])}" for k in sorted(flat)]
    return "\n".join(lines)
