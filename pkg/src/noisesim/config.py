"""Loading dataclass configs from JSON documents (keys mirror field names)."""

from __future__ import annotations

import dataclasses
import json
import typing
from pathlib import Path


def from_dict(cls, doc: dict | None):
    """Build dataclass ``cls`` from ``doc``, recursing into nested dataclass fields.

    Unknown keys raise ``ValueError`` so typos in config files do not pass silently.
    """
    doc = dict(doc or {})
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        hint = hints.get(key)
        if dataclasses.is_dataclass(hint) and isinstance(value, dict):
            value = from_dict(hint, value)
        elif isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def to_dict(obj) -> dict:
    out = dataclasses.asdict(obj)
    return json.loads(json.dumps(out))  # tuples -> lists


def load_config(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))
