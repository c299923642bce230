"""Structural conformance of JSON-like values against base types and schemas.

A base type with structural content (Record, Enum, ListOf) derives a
JSON-Schema-style dict. ``conforms`` walks a value against a base type and
``schema_accepts`` walks it against such a dict; the two agree on every
derivable type.
"""

from __future__ import annotations

import json
from typing import Any, Optional

from .core import Boolean, Enum, Integer, JsonValue, ListOf, Real, Record, Text

# keys that carry presentation only and never affect acceptance
PRESENTATION_KEYS = frozenset({"title", "description", "examples", "$comment"})


class Underivable(ValueError):
    """The type has no structural content to describe as a schema."""


def conformance_errors(value: Any, base, path: str = "$") -> list[str]:
    errors: list[str] = []
    match base:
        case Text():
            if not isinstance(value, str):
                errors.append(f"{path}: expected string")
        case Integer():
            if isinstance(value, bool) or not isinstance(value, int):
                errors.append(f"{path}: expected integer")
        case Real():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                errors.append(f"{path}: expected number")
        case Boolean():
            if not isinstance(value, bool):
                errors.append(f"{path}: expected boolean")
        case JsonValue():
            pass
        case Enum(labels):
            if not isinstance(value, str) or value not in labels:
                errors.append(f"{path}: {value!r} not one of {list(labels)}")
        case ListOf(element):
            if not isinstance(value, list):
                errors.append(f"{path}: expected array")
            else:
                for i, v in enumerate(value):
                    errors += conformance_errors(v, element, f"{path}[{i}]")
        case Record(fields):
            if not isinstance(value, dict):
                errors.append(f"{path}: expected object")
            else:
                fmap = dict(fields)
                for name in fmap:
                    if name not in value:
                        errors.append(f"{path}: missing field {name!r}")
                for name, v in value.items():
                    if name not in fmap:
                        errors.append(f"{path}: unexpected field {name!r}")
                    else:
                        errors += conformance_errors(v, fmap[name], f"{path}.{name}")
    return errors


def conforms(value: Any, base) -> bool:
    return not conformance_errors(value, base)


def schema_derivable(base) -> bool:
    return isinstance(base, (Record, Enum, ListOf))


def type_schema(base) -> dict:
    """Schema dict for any base type (JsonValue maps to the empty schema)."""
    match base:
        case Text():
            return {"type": "string"}
        case Integer():
            return {"type": "integer"}
        case Real():
            return {"type": "number"}
        case Boolean():
            return {"type": "boolean"}
        case JsonValue():
            return {}
        case Enum(labels):
            return {"type": "string", "enum": list(labels)}
        case ListOf(element):
            return {"type": "array", "items": type_schema(element)}
        case Record(fields):
            return {"type": "object",
                    "properties": {n: type_schema(t) for n, t in fields},
                    "required": [n for n, _ in fields],
                    "additionalProperties": False}
    raise TypeError(f"not a base type: {base!r}")


def derive_schema(base) -> dict:
    if not schema_derivable(base):
        raise Underivable(f"{type(base).__name__} has no structural schema")
    return type_schema(base)


def normalize_schema(schema: Any) -> Any:
    """Drop presentation keys and fix ordering so equal schemas compare equal."""
    if isinstance(schema, dict):
        out = {}
        for k in sorted(schema):
            if k in PRESENTATION_KEYS:
                continue
            v = schema[k]
            if k == "required":
                v = sorted(v)
            elif k == "properties":
                v = {pk: normalize_schema(pv) for pk, pv in sorted(v.items())}
            else:
                v = normalize_schema(v)
            out[k] = v
        return out
    if isinstance(schema, list):
        return [normalize_schema(v) for v in schema]
    return schema


def parse_schema_text(text: str) -> dict:
    schema = json.loads(text)
    if not isinstance(schema, dict):
        raise ValueError("schema text must be a JSON object")
    return schema


def schema_matches_type(text: str, base) -> bool:
    """True iff the schema text describes exactly the values of ``base``."""
    try:
        schema = parse_schema_text(text)
    except (ValueError, json.JSONDecodeError):
        return False
    return normalize_schema(schema) == normalize_schema(type_schema(base))


_JSON_TYPES = {
    "string": lambda v: isinstance(v, str),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "boolean": lambda v: isinstance(v, bool),
    "object": lambda v: isinstance(v, dict),
    "array": lambda v: isinstance(v, list),
    "null": lambda v: v is None,
}


def schema_errors(value: Any, schema: dict, path: str = "$") -> list[str]:
    """Validate against the schema subset used here: type, enum, properties,
    required, additionalProperties and items."""
    errors: list[str] = []
    t = schema.get("type")
    if t is not None:
        types = t if isinstance(t, list) else [t]
        if not any(_JSON_TYPES[x](value) for x in types):
            return [f"{path}: expected {'/'.join(types)}"]
    if "enum" in schema and value not in schema["enum"]:
        errors.append(f"{path}: {value!r} not one of {schema['enum']}")
    if isinstance(value, dict):
        props = schema.get("properties", {})
        for name in schema.get("required", []):
            if name not in value:
                errors.append(f"{path}: missing field {name!r}")
        for name, v in value.items():
            if name in props:
                errors += schema_errors(v, props[name], f"{path}.{name}")
            elif schema.get("additionalProperties", True) is False:
                errors.append(f"{path}: unexpected field {name!r}")
    if isinstance(value, list) and "items" in schema:
        for i, v in enumerate(value):
            errors += schema_errors(v, schema["items"], f"{path}[{i}]")
    return errors


def schema_accepts(value: Any, schema: dict) -> bool:
    return not schema_errors(value, schema)


def example_value(base, pick: Optional[int] = None) -> Any:
    """A value of ``base``; ``pick`` varies enum choices and list lengths."""
    k = pick or 0
    match base:
        case Text():
            return "text"
        case Integer():
            return k
        case Real():
            return 0.5
        case Boolean():
            return k % 2 == 0
        case JsonValue():
            return None
        case Enum(labels):
            return labels[k % len(labels)]
        case ListOf(element):
            return [example_value(element, k)]
        case Record(fields):
            return {n: example_value(t, k + i) for i, (n, t) in enumerate(fields)}
    raise TypeError(base)
