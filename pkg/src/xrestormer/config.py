"""Canonical configuration text: INI-style sections of ``key = value`` lines.

Sections and keys are written in sorted order so equal configurations always
produce identical text (and identical hashes).
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import typing

from .errors import ConfigError


def format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    return kind(text)


def parse_value(text: str, annotation):
    """Parse ``text`` according to a dataclass field annotation."""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin in (typing.Union, getattr(__import__("types"), "UnionType", None)):
        if text.strip().lower() == "none":
            return None
        inner = [a for a in args if a is not type(None)]
        return parse_value(text, inner[0])
    if origin in (tuple, list):
        kind = args[0] if args else float
        items = [s for s in text.split(",") if s.strip()]
        return tuple(_parse_scalar(s, kind) for s in items)
    return _parse_scalar(text, annotation)


def dataclass_to_section(obj) -> dict[str, str]:
    return {f.name: format_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def dataclass_from_section(cls, section: dict[str, str], where: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
        try:
            kwargs[key] = parse_value(raw, hints[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: bad value for {key!r}: {raw!r} ({exc})") from exc
    return cls(**kwargs)


def dump_sections(sections: dict[str, dict[str, str]]) -> str:
    lines: list[str] = []
    for name in sorted(sections):
        if lines:
            lines.append("")
        lines.append(f"[{name}]")
        for key in sorted(sections[name]):
            lines.append(f"{key} = {sections[name][key]}")
    return "\n".join(lines) + "\n"


def load_sections(text: str, source: str = "<text>") -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return {s: dict(parser[s]) for s in parser.sections()}


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
