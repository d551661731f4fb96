"""Minimal TOML emit/parse used for manifests and checkpoints.

Reading uses the stdlib parser (``tomllib``/``tomli``); writing is a small
deterministic emitter covering the subset we produce: string/int/float/bool
scalars, flat lists of scalars, and one level of nested tables.  Keys are
emitted in sorted order so identical dicts serialize to identical bytes.
"""

from __future__ import annotations

import math
import os
from typing import Any, Mapping, Union

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

__all__ = ["dump_toml", "load_toml", "dumps_toml"]

PathLike = Union[str, os.PathLike]


def _fmt_scalar(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError(f"cannot serialize non-finite float {v}")
        return repr(v) if v != int(v) or abs(v) >= 1e16 else f"{v:.1f}"
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    raise TypeError(f"unsupported TOML scalar type {type(v).__name__}")


def _fmt_value(v: Any) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_scalar(x) for x in v) + "]"
    return _fmt_scalar(v)


def dumps_toml(data: Mapping[str, Any]) -> str:
    lines: list[str] = []
    tables: list[tuple[str, Mapping[str, Any]]] = []
    for key in sorted(data):
        value = data[key]
        if isinstance(value, Mapping):
            tables.append((key, value))
        else:
            lines.append(f"{key} = {_fmt_value(value)}")
    for name, table in tables:
        if lines and lines[-1] != "":
            lines.append("")
        lines.append(f"[{name}]")
        for key in sorted(table):
            value = table[key]
            if isinstance(value, Mapping):
                raise TypeError("tables nested deeper than one level are unsupported")
            lines.append(f"{key} = {_fmt_value(value)}")
    return "\n".join(lines) + "\n"


def dump_toml(path: PathLike, data: Mapping[str, Any]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_toml(data))


def load_toml(path: PathLike) -> dict:
    with open(path, "rb") as f:
        return tomllib.load(f)
