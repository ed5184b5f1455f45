"""Lenient extraction of JSON payloads from model responses.

Model output frequently wraps the requested JSON in code fences or prose.
These helpers locate the first well-formed JSON value of the wanted type;
validation of its content stays with the caller.
"""

from __future__ import annotations

import json
from typing import Any


def extract_first_json_array(text: str) -> list | None:
    return _extract_first(text, list, "[")


def extract_first_json_object(text: str) -> dict | None:
    return _extract_first(text, dict, "{")


def _extract_first(text: str, typ: type, opener: str) -> Any | None:
    try:
        value = json.loads(text.strip())
        if isinstance(value, typ):
            return value
    except json.JSONDecodeError:
        pass
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch != opener:
            continue
        try:
            value, _ = decoder.raw_decode(text[i:])
        except json.JSONDecodeError:
            continue
        if isinstance(value, typ):
            return value
    return None
