"""Refinement type checking with a static/deferred split.

Syntactic constraints (C1-C8, C11, C12) become static obligations that are
discharged here as far as they are decidable without running the program.
Semantic constraints (C9, C10, C13) become deferred obligations carrying the
runtime plan (scorer, threshold, confidence delta).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .core import (SEMANTIC_CODES, Boolean, Constraint, Enum, Hole, InstructionBlock, Integer,
                   JsonValue, ListOf, Literal, PromptProgram, Real, Record,
                   RefinedType, SchemaSlot, Syntactic, Text, all_constraints, applicable,
                   base_defects, probabilistic_to_constraint)
from .engine import (_OPS, DEFAULT_RULES, Context, MissingRef, SatResult, Violation, check,
                     compile_pattern)
from .grammar import GrammarIllFormed
from .schema import conformance_errors, schema_derivable, schema_matches_type
from .serialize import constraint_to_json

STATIC = "Static"
DEFERRED = "Deferred"


def classify_constraint(c: Constraint) -> str:
    return DEFERRED if c.code in SEMANTIC_CODES else STATIC


@dataclass(frozen=True)
class TypeDiagnostic:
    kind: str  # UnboundHole | InapplicableConstraint | StaticViolation | IllFormedType
    location: str
    detail: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "location": self.location, "detail": self.detail}


class TypeCheckFailed(Exception):
    def __init__(self, errors: list[TypeDiagnostic]):
        self.errors = errors
        super().__init__("; ".join(f"{e.kind} at {e.location}: {e.detail}" for e in errors))


@dataclass(frozen=True)
class StaticObligation:
    constraint: Constraint
    status: str  # Proven | Violated
    note: str = ""

    __hash__ = None

    def to_json(self) -> dict:
        return {"constraint": constraint_to_json(self.constraint), "status": self.status,
                "note": self.note}


@dataclass(frozen=True)
class DeferredObligation:
    constraint: Constraint
    plan: dict

    __hash__ = None

    def to_json(self) -> dict:
        return {"constraint": constraint_to_json(self.constraint), "plan": self.plan}


@dataclass(frozen=True)
class TypedProgram:
    program: PromptProgram
    static_obligations: tuple[StaticObligation, ...]
    deferred_obligations: tuple[DeferredObligation, ...]

    __hash__ = None

    def status_of(self, code: str) -> list[str]:
        return [o.status for o in self.static_obligations if o.constraint.code == code]

    @property
    def needs_schema_status(self) -> Optional[str]:
        found = [o.status for o in self.static_obligations if o.constraint.is_needs_schema]
        return found[0] if found else None

    def to_json(self) -> dict:
        return {"program": self.program.name,
                "static_obligations": [o.to_json() for o in self.static_obligations],
                "deferred_obligations": [o.to_json() for o in self.deferred_obligations]}


@dataclass
class TypeEnv:
    bindings: dict[str, RefinedType] = field(default_factory=dict)

    def extend(self, items: Iterable[tuple[str, RefinedType]]) -> "TypeEnv":
        merged = dict(self.bindings)
        merged.update(items)
        return TypeEnv(merged)


def _describe(c: Constraint) -> str:
    return f"{c.code}{'(NeedsSchema)' if c.is_needs_schema else ''}"


class _Checker:
    def __init__(self, env: TypeEnv, p: PromptProgram, ctx: Optional[Context]):
        self.p = p
        self.ctx = ctx
        self.env = env.extend(p.inputs)
        self.errors: list[TypeDiagnostic] = []
        self.inputs = p.input_map()

    def error(self, kind: str, location: str, detail: str):
        self.errors.append(TypeDiagnostic(kind, location, detail))

    # -- declarations and body

    def check_declarations(self):
        seen = set()
        for name, t in self.p.inputs:
            if name in seen:
                self.error("IllFormedType", name, "duplicate input declaration")
            seen.add(name)
            for d in base_defects(t.base, name):
                self.error("IllFormedType", name, d)
        if self.p.output_name in seen:
            self.error("IllFormedType", self.p.output_name, "output name collides with an input")
        for d in base_defects(self.p.output.base, self.p.output_name):
            self.error("IllFormedType", self.p.output_name, d)

    def check_body(self):
        ids = set()
        prev_literal = False
        for i, seg in enumerate(self.p.body):
            loc = f"segment {i}"
            match seg:
                case Literal(text):
                    if not text:
                        self.error("IllFormedType", loc, "empty literal")
                    if prev_literal:
                        self.error("IllFormedType", loc, "adjacent literal segments")
                case Hole(name):
                    # every base type splices: Text verbatim, others as canonical JSON
                    if name not in self.env.bindings:
                        self.error("UnboundHole", loc, f"hole {{{{{name}}}}} is not bound")
                case SchemaSlot(sid, _) | InstructionBlock(sid, _, _):
                    if sid in ids:
                        self.error("IllFormedType", loc, f"duplicate slot/block id {sid!r}")
                    ids.add(sid)
            prev_literal = isinstance(seg, Literal)

    # -- obligations

    def target_type(self, c: Constraint, loc: str) -> Optional[RefinedType]:
        if c.target is None:
            self.error("InapplicableConstraint", loc, f"{_describe(c)} has no target")
            return None
        if c.target == self.p.output_name:
            if c.code in ("C11", "C12"):
                self.error("InapplicableConstraint", loc,
                           f"{c.code} constrains input encoding, not the output")
                return None
            return self.p.output
        if c.target in self.inputs:
            if c.code not in ("C11", "C12"):
                self.error("InapplicableConstraint", loc,
                           f"{c.code} constrains the output, not input {c.target!r}")
                return None
            return self.inputs[c.target]
        self.error("InapplicableConstraint", loc, f"unknown target {c.target!r}")
        return None

    def resolve_refs(self, c: Constraint, loc: str) -> bool:
        if self.ctx is None:
            return True
        try:
            self.ctx.resolve(c)
        except MissingRef as e:
            self.error("StaticViolation", loc, f"unresolved reference: {e}")
            return False
        except GrammarIllFormed as e:
            self.error("StaticViolation", loc, f"ill-formed grammar: {e}")
            return False
        return True

    def static(self, c: Constraint, loc: str) -> Optional[StaticObligation]:
        if c.is_needs_schema:
            return self.needs_schema(c, loc)
        if c.code == "C13":
            return None
        t = self.target_type(c, loc)
        if t is None:
            return None
        base = t.base
        if not applicable(c, base):
            self.error("InapplicableConstraint", loc,
                       f"{c.code} is inapplicable to {type(base).__name__}")
            return None
        p = c.params
        before = len(self.errors)
        note = "checked per output by validate_output"
        match c.code:
            case "C3" if "labels" in p:
                labels = p["labels"]
                if not labels:
                    self.error("StaticViolation", loc, "empty decoding label set")
                elif isinstance(base, Enum) and not set(labels) <= set(base.labels):
                    self.error("StaticViolation", loc, "decoding labels outside the enum")
            case "C5":
                labels = p.get("labels")
                if labels is None:
                    if not isinstance(base, Enum):
                        self.error("InapplicableConstraint", loc,
                                   "label_range without labels needs an Enum type")
                        return None
                    note = f"labels {list(base.labels)} well-formed"
                elif not labels or len(set(labels)) != len(labels):
                    self.error("StaticViolation", loc, "label set empty or duplicated")
                elif isinstance(base, Enum) and not set(labels) <= set(base.labels):
                    self.error("StaticViolation", loc, "label_range labels outside the enum")
                else:
                    note = f"labels {list(labels)} well-formed"
            case "C6":
                if p.get("unit") not in ("words", "tokens") or p.get("op") not in _OPS:
                    self.error("StaticViolation", loc, "malformed length constraint")
                elif not isinstance(p.get("bound"), int) or p["bound"] < 0:
                    self.error("StaticViolation", loc, "length bound must be a natural number")
                elif p["op"] == "<" and p["bound"] == 0:
                    self.error("StaticViolation", loc, "length < 0 is unsatisfiable")
            case "C7":
                for pat in p.get("patterns", []):
                    try:
                        compile_pattern(pat)
                    except (ValueError, re.error) as e:
                        self.error("StaticViolation", loc, f"bad exclusion pattern: {e}")
            case "C8":
                if not all(isinstance(m, str) and m.strip() for m in p.get("mentions", [])):
                    self.error("StaticViolation", loc, "empty required mention")
            case "C11":
                unknown = [r for r in p.get("rules", DEFAULT_RULES)
                           if r not in ("control", "whitespace", "injection")]
                if unknown:
                    self.error("StaticViolation", loc, f"unknown sanitation rules {unknown}")
                note = "applied to the input at render time"
            case "C12":
                note = "applied to the input at render time"
        if c.code in ("C1", "C2", "C3", "C4") and ("grammar" in p or "schema" in p):
            note = "reference resolves; " + note if self.ctx else "reference unchecked; " + note
        self.resolve_refs(c, loc)
        if len(self.errors) > before:
            return None
        return StaticObligation(c, "Proven", note)

    def needs_schema(self, c: Constraint, loc: str) -> Optional[StaticObligation]:
        out = self.p.output.base
        if not schema_derivable(out):
            self.error("StaticViolation", loc,
                       f"NeedsSchema: no schema derivable for {type(out).__name__}")
            return None
        slots = [s for s in self.p.body if isinstance(s, SchemaSlot)]
        if not slots:
            self.error("StaticViolation", loc, "NeedsSchema: prompt has no schema slot")
            return None
        for s in slots:
            if s.filled is not None and not schema_matches_type(s.filled, out):
                self.error("StaticViolation", loc,
                           f"NeedsSchema: slot {s.slot_id!r} holds a schema that does not "
                           "match the output type")
                return None
        filled = [s.slot_id for s in slots if s.filled is not None]
        note = (f"schema injected at {filled}" if filled
                else f"open schema slots {[s.slot_id for s in slots]}")
        return StaticObligation(c, "Proven", note)

    def deferred(self, c: Constraint, loc: str) -> Optional[DeferredObligation]:
        p = c.params
        delta = p.get("delta", 1.0)
        if not 0.0 < delta <= 1.0:
            self.error("StaticViolation", loc, "confidence delta outside (0, 1]")
            return None
        if c.code == "C13":
            if c.target is not None:
                self.error("InapplicableConstraint", loc, "C13 constrains the whole program")
                return None
            if not self.resolve_refs(c, loc):
                return None
            return DeferredObligation(c, {"check": "mental_model_agreement",
                                          "oracle": p["oracle"], "delta": delta,
                                          "over": "dataset"})
        t = self.target_type(c, loc)
        if t is None:
            return None
        if not applicable(c, t.base):
            self.error("InapplicableConstraint", loc,
                       f"{c.code} is inapplicable to {type(t.base).__name__}")
            return None
        threshold = p["min_score"] if c.code == "C9" else p["threshold"]
        comparator = ">=" if c.code == "C9" else p.get("comparator", ">=")
        if not 0.0 <= threshold <= 1.0 or comparator not in (">=", "<="):
            self.error("StaticViolation", loc, "scorer threshold outside [0, 1]")
            return None
        if not self.resolve_refs(c, loc):
            return None
        scorer = "domain_membership" if c.code == "C9" else p.get("scorer", "formality")
        return DeferredObligation(c, {"check": scorer, "comparator": comparator,
                                      "threshold": threshold, "delta": delta,
                                      "target": c.target, "over": "outputs"})

    def run(self) -> TypedProgram:
        self.check_declarations()
        self.check_body()
        static, deferred = [], []
        for i, c in enumerate(all_constraints(self.p)):
            loc = f"constraint {i} ({_describe(c)})"
            if classify_constraint(c) == STATIC:
                ob = self.static(c, loc)
                if ob is not None:
                    static.append(ob)
            else:
                ob = self.deferred(c, loc)
                if ob is not None:
                    deferred.append(ob)
        if self.errors:
            raise TypeCheckFailed(self.errors)
        return TypedProgram(self.p, tuple(static), tuple(deferred))


def typecheck(env: Optional[TypeEnv], p: PromptProgram,
              ctx: Optional[Context] = None) -> TypedProgram:
    """Check ``p`` under ``env`` extended with its own inputs.

    All defects are collected before failing; ``TypeCheckFailed.errors``
    lists every one. With ``ctx`` given, grammar/schema/lexicon/ontology
    references must resolve in it.
    """
    return _Checker(env or TypeEnv(), p, ctx).run()


def diagnose(p: PromptProgram, ctx: Optional[Context] = None,
             env: Optional[TypeEnv] = None) -> list[TypeDiagnostic]:
    try:
        typecheck(env, p, ctx)
    except TypeCheckFailed as e:
        return e.errors
    return []


# -- output validation --------------------------------------------------------

class ParseFailure(ValueError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


_FENCE_RE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)


def _json(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        m = _FENCE_RE.search(raw)
        if m:
            try:
                return json.loads(m.group(1))
            except json.JSONDecodeError:
                pass
        raise ParseFailure("C4", f"output is not valid JSON: {e.msg}") from None


def parse_value(raw: str, base) -> Any:
    """Read backend text at a base type; raises ParseFailure."""
    match base:
        case Text():
            return raw
        case Enum():
            s = raw.strip()
            if s.startswith('"'):
                try:
                    v = json.loads(s)
                except json.JSONDecodeError:
                    return s
                return v if isinstance(v, str) else s
            return s
        case Integer():
            try:
                v = json.loads(raw.strip())
            except json.JSONDecodeError:
                raise ParseFailure("C2", f"{raw.strip()!r} is not an integer") from None
            return v
        case Real():
            try:
                return json.loads(raw.strip())
            except json.JSONDecodeError:
                raise ParseFailure("C2", f"{raw.strip()!r} is not a number") from None
        case Boolean():
            s = raw.strip().lower()
            if s in ("true", "false"):
                return s == "true"
            raise ParseFailure("C2", f"{raw.strip()!r} is not a boolean")
        case JsonValue() | Record() | ListOf():
            return _json(raw.strip())
    raise TypeError(base)


def validate_output(raw: str, t: RefinedType, ctx: Optional[Context] = None, *,
                    extra: Iterable[Constraint] = (),
                    target: Optional[str] = None) -> tuple[Any, SatResult]:
    """Parse ``raw`` at ``t.base`` and check structure plus every refinement.

    ``extra`` holds program-level constraints aimed at the same output.
    Returns the parsed value (None on parse failure) and the aggregate result.
    """
    try:
        value = parse_value(raw, t.base)
    except ParseFailure as e:
        return None, SatResult((Violation(e.code, str(e)),))
    errs = conformance_errors(value, t.base)
    if errs:
        code = "C5" if isinstance(t.base, Enum) else "C4"
        return value, SatResult(tuple(Violation(code, e) for e in errs))
    result = SatResult()
    for r in t.refinements:
        c = r.constraint if isinstance(r, Syntactic) else probabilistic_to_constraint(r, target)
        result = result.merge(check(c, value, ctx, base=t.base, raw=raw))
    for c in extra:
        result = result.merge(check(c, value, ctx, base=t.base, raw=raw))
    return value, result
