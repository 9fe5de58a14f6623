"""Flat ``key = value`` experiment configuration files.

Format::

    # comment
    schema_version = 1
    kind = theorem01
    ladder = (8, 12, 16, 24)
    patterns = ["[(0,0,0)]"]

Values are Python literals (numbers, strings, tuples, lists); anything that
is not a literal is kept as a bare string, so ``kind = theorem01`` works
unquoted.  Every file must carry ``schema_version``.
"""
from __future__ import annotations

import ast
from pathlib import Path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


def parse_value(text: str):
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str, require_version: bool = True) -> dict:
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key.isidentifier():
            raise ConfigError(f"line {lineno}: invalid key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    if require_version:
        if "schema_version" not in out:
            raise ConfigError("missing schema_version")
        if out["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {out['schema_version']!r} (expected {SCHEMA_VERSION})")
    return out


def load_config(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def dump_config(values: dict) -> str:
    lines = [f"schema_version = {SCHEMA_VERSION}"]
    for k, v in values.items():
        if k == "schema_version":
            continue
        lines.append(f"{k} = {v!r}")
    return "\n".join(lines) + "\n"


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` from the command line."""
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), parse_value(v)
