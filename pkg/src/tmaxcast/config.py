"""Flat ``key = value`` run-config files.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Values are parsed by the type of the dataclass field they set: integers,
floats, booleans (true/false), strings, and comma-separated tuples. The
word ``none`` clears an optional field. Unknown keys are an error.
"""
from __future__ import annotations

import dataclasses
import typing
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_lines(text, str(path))


def _convert(value: str, tp: Any, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union or type(tp).__name__ == "UnionType":
        if value.lower() == "none" and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(value, inner[0], key)
    if origin is tuple:
        items = [v.strip() for v in value.split(",") if v.strip()]
        elem = args[0] if args else str
        return tuple(_convert(v, elem, key) for v in items)
    try:
        if tp is bool:
            low = value.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(value)
        if tp is int:
            return int(value)
        if tp is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {tp.__name__}") from None
    return value


def build(cls, values: Mapping[str, str], base=None):
    """Instantiate dataclass ``cls`` from string ``values`` over ``base`` (or defaults)."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown}; valid keys: {sorted(names)}")
    kwargs = {k: _convert(v, hints[k], k) for k, v in values.items()}
    try:
        if base is not None:
            return dataclasses.replace(base, **kwargs)
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def dump(obj) -> str:
    """Render a dataclass as a config file that :func:`build` reads back identically."""
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if v is None:
            s = "none"
        elif isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, (tuple, list)):
            s = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"
