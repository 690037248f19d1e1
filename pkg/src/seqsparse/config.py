"""Plain-text run configuration: ``key = value`` lines, ``#`` comments.

Each command declares a schema mapping keys to :class:`Field` objects;
unknown keys, duplicates and unparsable values raise :class:`ConfigError`.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

__all__ = ["ConfigError", "Field", "parse_config", "parse_text", "check_input_path", "check_output_path"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    convert: Callable[[str], Any]
    default: Any = None
    required: bool = False
    choices: tuple | None = None
    help: str = ""


def parse_text(text: str) -> dict:
    """Raw ``{key: value}`` strings; rejects malformed and duplicate lines."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def to_bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def to_list(text: str) -> tuple:
    return tuple(item.strip() for item in text.split(",") if item.strip())


def optional(convert):
    def conv(text):
        return None if text.lower() in ("", "none") else convert(text)

    return conv


def parse_config(text: str, schema: dict) -> dict:
    """Typed values for every schema key, defaults filled in."""
    raw = parse_text(text)
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join(unknown)}")
    out = {}
    for key, fld in schema.items():
        if key not in raw:
            if fld.required:
                raise ConfigError(f"missing required key {key!r}")
            out[key] = fld.default
            continue
        try:
            value = fld.convert(raw[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        if fld.choices is not None:
            items = value if isinstance(value, tuple) else (value,)
            bad = [v for v in items if v not in fld.choices]
            if bad:
                raise ConfigError(f"{key}: {bad[0]!r} not in {fld.choices}")
        out[key] = value
    return out


def check_input_path(path, kind: str = "file") -> Path:
    p = Path(path)
    ok = p.is_dir() if kind == "dir" else p.is_file()
    if not ok:
        raise FileNotFoundError(f"{kind} not found: {p}")
    return p


def check_output_path(path) -> Path:
    """Fail early unless ``path`` can be created under a writable ancestor."""
    p = Path(path)
    if p.exists() and p.is_dir() and not os.access(p, os.W_OK):
        raise PermissionError(f"not writable: {p}")
    anc = p.parent
    while not anc.exists():
        if anc.parent == anc:
            break
        anc = anc.parent
    if not anc.is_dir() or not os.access(anc, os.W_OK):
        raise PermissionError(f"cannot create {p}: {anc} is not a writable directory")
    return p
