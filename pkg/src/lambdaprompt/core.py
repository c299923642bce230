"""Data model for typed prompt programs.

A prompt program is the tuple (inputs, output, body, constraints). Inputs and
output carry refined types: a base type plus a conjunctive list of
refinements. The body is a list of template segments.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Union

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

CODES = tuple(f"C{i}" for i in range(1, 14))
SYNTACTIC_CODES = frozenset({"C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C11", "C12"})
SEMANTIC_CODES = frozenset({"C9", "C10", "C13"})


# -- base types -------------------------------------------------------------

@dataclass(frozen=True)
class Text:
    pass


@dataclass(frozen=True)
class Integer:
    pass


@dataclass(frozen=True)
class Boolean:
    pass


@dataclass(frozen=True)
class Real:
    pass


@dataclass(frozen=True)
class JsonValue:
    pass


@dataclass(frozen=True)
class Enum:
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))


@dataclass(frozen=True)
class ListOf:
    element: "BaseType"


@dataclass(frozen=True)
class Record:
    fields: tuple[tuple[str, "BaseType"], ...]

    def __post_init__(self):
        items = self.fields.items() if isinstance(self.fields, Mapping) else self.fields
        object.__setattr__(self, "fields", tuple((k, v) for k, v in items))

    def field_map(self) -> dict[str, "BaseType"]:
        return dict(self.fields)


BaseType = Union[Text, Integer, Boolean, Real, JsonValue, Enum, ListOf, Record]


# -- constraints and refinements --------------------------------------------

def _canonical_params(params: Mapping[str, Any]) -> dict[str, Any]:
    # lists/tuples normalize to lists so JSON round-trips compare equal
    return json.loads(json.dumps(dict(params), sort_keys=True))


@dataclass(frozen=True, eq=True)
class Constraint:
    """One entry of the C1..C13 catalog.

    ``target`` names the declaration the constraint talks about (an input
    name or the output name). Program-wide constraints such as NeedsSchema
    and mental-model agreement have no target.
    """

    code: str
    params: dict = field(default_factory=dict)
    target: Optional[str] = None

    __hash__ = None  # params is a dict

    def __post_init__(self):
        if self.code not in CODES:
            raise ValueError(f"unknown constraint code {self.code!r}")
        object.__setattr__(self, "params", _canonical_params(self.params))

    @property
    def is_needs_schema(self) -> bool:
        return self.code == "C4" and bool(self.params.get("needs_schema"))

    @property
    def kind(self) -> str:
        return "syntactic" if self.code in SYNTACTIC_CODES else "probabilistic"


def needs_schema() -> Constraint:
    return Constraint("C4", {"needs_schema": True})


@dataclass(frozen=True)
class Syntactic:
    constraint: Constraint

    __hash__ = None


@dataclass(frozen=True)
class Probabilistic:
    """Scorer-thresholded refinement.

    ``scorer`` is ``"formality:<lexicon>"`` or ``"domain:<ontology>"``.
    """

    scorer: str
    comparator: str
    threshold: float
    confidence_delta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "threshold", float(self.threshold))
        object.__setattr__(self, "confidence_delta", float(self.confidence_delta))


Refinement = Union[Syntactic, Probabilistic]


@dataclass(frozen=True)
class RefinedType:
    base: BaseType
    refinements: tuple[Refinement, ...] = ()

    __hash__ = None

    def __post_init__(self):
        object.__setattr__(self, "refinements", tuple(self.refinements))


# -- template segments ------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class Hole:
    input_name: str


@dataclass(frozen=True)
class SchemaSlot:
    slot_id: str
    filled: Optional[str] = None


@dataclass(frozen=True)
class InstructionBlock:
    block_id: str
    text: str
    reorderable: bool = False


TemplateSegment = Union[Literal, Hole, SchemaSlot, InstructionBlock]


@dataclass(frozen=True)
class PromptProgram:
    name: str
    inputs: tuple[tuple[str, RefinedType], ...]
    output: RefinedType
    body: tuple[TemplateSegment, ...]
    constraints: tuple[Constraint, ...] = ()
    output_name: str = "output"

    __hash__ = None

    def __post_init__(self):
        items = self.inputs.items() if isinstance(self.inputs, Mapping) else self.inputs
        object.__setattr__(self, "inputs", tuple((k, v) for k, v in items))
        object.__setattr__(self, "body", tuple(self.body))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def input_map(self) -> dict[str, RefinedType]:
        return dict(self.inputs)

    def schema_slot_ids(self) -> list[str]:
        return [s.slot_id for s in self.body if isinstance(s, SchemaSlot)]

    def replace(self, **changes) -> "PromptProgram":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class EffectfulFn:
    """A program bound to a backend; stochasticity enters only via seeds."""

    program: PromptProgram
    backend: Any

    __hash__ = None

    def __call__(self, inputs: Mapping[str, Any], *, seed: int = 0, max_retries: int = 3):
        from .runtime import execute
        return execute(self.program, inputs, self.backend, max_retries=max_retries, seed=seed)


# -- refinement <-> constraint views ----------------------------------------

def probabilistic_to_constraint(r: Probabilistic, target: Optional[str]) -> Constraint:
    kind, _, ref = r.scorer.partition(":")
    if kind == "formality":
        return Constraint("C10", {"scorer": "formality", "lexicon": ref,
                                  "comparator": r.comparator, "threshold": r.threshold,
                                  "delta": r.confidence_delta}, target)
    if kind == "domain":
        return Constraint("C9", {"ontology": ref, "min_score": r.threshold,
                                 "delta": r.confidence_delta}, target)
    raise ValueError(f"unknown scorer {r.scorer!r}")


def constraint_to_probabilistic(c: Constraint) -> Probabilistic:
    if c.code == "C10":
        return Probabilistic(f"formality:{c.params['lexicon']}", c.params.get("comparator", ">="),
                             c.params["threshold"], c.params.get("delta", 1.0))
    if c.code == "C9":
        return Probabilistic(f"domain:{c.params['ontology']}", ">=",
                             c.params["min_score"], c.params.get("delta", 1.0))
    raise ValueError(f"{c.code} has no refinement form")


def refinement_constraint(r: Refinement, target: Optional[str]) -> Constraint:
    if isinstance(r, Syntactic):
        return r.constraint
    return probabilistic_to_constraint(r, target)


def all_constraints(p: PromptProgram) -> list[Constraint]:
    """The full constraint set: declaration refinements first, then program-level lines."""
    out = []
    for name, t in p.inputs:
        out.extend(refinement_constraint(r, name) for r in t.refinements)
    out.extend(refinement_constraint(r, p.output_name) for r in p.output.refinements)
    out.extend(p.constraints)
    return out


def output_constraints(p: PromptProgram) -> list[Constraint]:
    """Constraints checked against each produced output value."""
    return [c for c in all_constraints(p)
            if c.target == p.output_name and c.code not in ("C11", "C12", "C13")
            and not c.is_needs_schema]


# -- erasure and well-formedness --------------------------------------------

def erase(t: RefinedType) -> BaseType:
    return t.base


def strip(t: RefinedType) -> RefinedType:
    """The refined type with no refinements (erasure kept in refined form)."""
    return RefinedType(t.base, ())


def base_defects(b: BaseType, path: str = "$") -> list[str]:
    defects = []
    match b:
        case Enum(labels):
            if not labels:
                defects.append(f"{path}: empty enum")
            if len(set(labels)) != len(labels):
                defects.append(f"{path}: duplicate enum label")
            if any(not isinstance(x, str) for x in labels):
                defects.append(f"{path}: non-string enum label")
        case ListOf(element):
            defects += base_defects(element, path + "[]")
        case Record(fields):
            names = [n for n, _ in fields]
            if len(set(names)) != len(names):
                defects.append(f"{path}: duplicate record field")
            for n, ft in fields:
                defects += base_defects(ft, f"{path}.{n}")
        case Text() | Integer() | Boolean() | Real() | JsonValue():
            pass
        case _:
            defects.append(f"{path}: unknown base type {b!r}")
    return defects


# code -> predicate over the base type the constraint is attached to
_APPLICABLE = {
    "C1": lambda b: isinstance(b, Text),
    "C2": lambda b: isinstance(b, Text),
    "C3": lambda b: isinstance(b, (Text, Enum)),
    "C4": lambda b: isinstance(b, (Record, JsonValue, ListOf, Enum)),
    "C5": lambda b: isinstance(b, (Enum, Text)),
    "C6": lambda b: not isinstance(b, (Integer, Real, Boolean)),  # counted on the raw text
    "C7": lambda b: True,
    "C8": lambda b: True,
    "C9": lambda b: isinstance(b, Text),
    "C10": lambda b: isinstance(b, Text),
    "C11": lambda b: isinstance(b, Text),
    "C12": lambda b: isinstance(b, Text),
}


def applicable(c: Constraint, base: BaseType) -> bool:
    check = _APPLICABLE.get(c.code)
    return check is not None and check(base)


def well_formed(t: RefinedType, path: str = "$") -> list[str]:
    """Defects of a refined type; an empty list means well-formed."""
    defects = base_defects(t.base, path)
    for r in t.refinements:
        match r:
            case Syntactic(c):
                if c.code in SEMANTIC_CODES or c.is_needs_schema:
                    defects.append(f"{path}: {c.code} is not a syntactic refinement")
                elif not applicable(c, t.base):
                    defects.append(f"{path}: refinement inapplicable to base ({c.code})")
            case Probabilistic(scorer, comparator, threshold, delta):
                if scorer.partition(":")[0] not in ("formality", "domain"):
                    defects.append(f"{path}: unknown scorer {scorer!r}")
                elif not isinstance(t.base, Text):
                    defects.append(f"{path}: refinement inapplicable to base ({scorer})")
                if comparator not in (">=", "<="):
                    defects.append(f"{path}: bad comparator {comparator!r}")
                if not 0.0 <= threshold <= 1.0:
                    defects.append(f"{path}: threshold outside [0,1]")
                if not 0.0 < delta <= 1.0:
                    defects.append(f"{path}: confidence delta outside (0,1]")
    return defects


def program_defects(p: PromptProgram) -> list[str]:
    """Structural defects of a program (invariants of the data model)."""
    defects = []
    if not IDENT_RE.match(p.name or ""):
        defects.append(f"bad program name {p.name!r}")
    names = [n for n, _ in p.inputs]
    if len(set(names)) != len(names):
        defects.append("duplicate input name")
    if p.output_name in names:
        defects.append("output name collides with an input")
    for n, t in p.inputs:
        defects += well_formed(t, n)
        defects += _refinement_targets(t, n)
    defects += well_formed(p.output, p.output_name)
    defects += _refinement_targets(p.output, p.output_name)
    ids = []
    prev_literal = False
    for i, seg in enumerate(p.body):
        match seg:
            case Literal(text):
                if not text:
                    defects.append(f"segment {i}: empty literal")
                if prev_literal:
                    defects.append(f"segment {i}: adjacent literals")
            case Hole(name):
                if name not in names:
                    defects.append(f"segment {i}: hole {name!r} not declared")
            case SchemaSlot(slot_id, _):
                ids.append(slot_id)
            case InstructionBlock(block_id, _, _):
                ids.append(block_id)
        prev_literal = isinstance(seg, Literal)
    if len(set(ids)) != len(ids):
        defects.append("duplicate slot/block id")
    return defects


def _refinement_targets(t: RefinedType, name: str) -> list[str]:
    return [f"{name}: refinement targets {r.constraint.target!r}"
            for r in t.refinements
            if isinstance(r, Syntactic) and r.constraint.target != name]
