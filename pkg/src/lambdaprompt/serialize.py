"""Canonical JSON encoding of programs and types.

Field order is fixed and variants are tagged by name, so encoding the same
program twice yields identical bytes.
"""

from __future__ import annotations

import json
from typing import Any

from .core import (Boolean, Constraint, Enum, Hole, InstructionBlock, Integer, JsonValue,
                   ListOf, Literal, Probabilistic, PromptProgram, Real, Record, RefinedType,
                   SchemaSlot, Syntactic, Text)


def base_to_json(b) -> dict:
    match b:
        case Enum(labels):
            return {"kind": "Enum", "labels": list(labels)}
        case ListOf(element):
            return {"kind": "ListOf", "element": base_to_json(element)}
        case Record(fields):
            return {"kind": "Record",
                    "fields": [{"name": n, "type": base_to_json(t)} for n, t in fields]}
        case _:
            return {"kind": type(b).__name__}


_SIMPLE = {"Text": Text, "Integer": Integer, "Boolean": Boolean, "Real": Real,
           "JsonValue": JsonValue}


def base_from_json(d: dict):
    kind = d["kind"]
    if kind in _SIMPLE:
        return _SIMPLE[kind]()
    if kind == "Enum":
        return Enum(tuple(d["labels"]))
    if kind == "ListOf":
        return ListOf(base_from_json(d["element"]))
    if kind == "Record":
        return Record(tuple((f["name"], base_from_json(f["type"])) for f in d["fields"]))
    raise ValueError(f"unknown base type kind {kind!r}")


def constraint_to_json(c: Constraint) -> dict:
    return {"code": c.code, "params": c.params, "target": c.target}


def constraint_from_json(d: dict) -> Constraint:
    return Constraint(d["code"], d.get("params", {}), d.get("target"))


def refined_to_json(t: RefinedType) -> dict:
    refs = []
    for r in t.refinements:
        if isinstance(r, Syntactic):
            refs.append({"kind": "Syntactic", "constraint": constraint_to_json(r.constraint)})
        else:
            refs.append({"kind": "Probabilistic", "scorer": r.scorer,
                         "comparator": r.comparator, "threshold": r.threshold,
                         "confidence_delta": r.confidence_delta})
    return {"base": base_to_json(t.base), "refinements": refs}


def refined_from_json(d: dict) -> RefinedType:
    refs = []
    for r in d.get("refinements", []):
        if r["kind"] == "Syntactic":
            refs.append(Syntactic(constraint_from_json(r["constraint"])))
        else:
            refs.append(Probabilistic(r["scorer"], r["comparator"], r["threshold"],
                                      r["confidence_delta"]))
    return RefinedType(base_from_json(d["base"]), tuple(refs))


def segment_to_json(s) -> dict:
    match s:
        case Literal(text):
            return {"kind": "Literal", "text": text}
        case Hole(name):
            return {"kind": "Hole", "input": name}
        case SchemaSlot(slot_id, filled):
            return {"kind": "SchemaSlot", "slot_id": slot_id, "filled": filled}
        case InstructionBlock(block_id, text, reorderable):
            return {"kind": "InstructionBlock", "block_id": block_id, "text": text,
                    "reorderable": reorderable}
    raise TypeError(f"not a segment: {s!r}")


def segment_from_json(d: dict):
    kind = d["kind"]
    if kind == "Literal":
        return Literal(d["text"])
    if kind == "Hole":
        return Hole(d["input"])
    if kind == "SchemaSlot":
        return SchemaSlot(d["slot_id"], d.get("filled"))
    if kind == "InstructionBlock":
        return InstructionBlock(d["block_id"], d["text"], bool(d.get("reorderable", False)))
    raise ValueError(f"unknown segment kind {kind!r}")


def program_to_json(p: PromptProgram) -> dict:
    return {
        "name": p.name,
        "inputs": [{"name": n, "type": refined_to_json(t)} for n, t in p.inputs],
        "output_name": p.output_name,
        "output": refined_to_json(p.output),
        "body": [segment_to_json(s) for s in p.body],
        "constraints": [constraint_to_json(c) for c in p.constraints],
    }


def program_from_json(d: dict) -> PromptProgram:
    return PromptProgram(
        name=d["name"],
        inputs=tuple((i["name"], refined_from_json(i["type"])) for i in d["inputs"]),
        output=refined_from_json(d["output"]),
        body=tuple(segment_from_json(s) for s in d["body"]),
        constraints=tuple(constraint_from_json(c) for c in d.get("constraints", [])),
        output_name=d.get("output_name", "output"),
    )


def canonical_value(value: Any) -> str:
    """Canonical text of a JSON-like value; used for output equality."""
    return json.dumps(value, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def dumps(obj: Any, pretty: bool = False) -> str:
    if pretty:
        return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"
