"""Executable checkers for the C1..C13 constraint catalog.

Semantic scorers here are deterministic lexicon/ontology procedures. A
different scorer (for instance a small classifier) can be registered in
``Context.scorers`` under the same name and is used instead.
"""

from __future__ import annotations

import json
import math
import operator
import re
import unicodedata
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

from .core import Constraint, Enum
from .grammar import Grammar, GrammarIllFormed, parse_grammar
from .schema import conformance_errors, schema_errors
from .serialize import canonical_value


class MissingRef(LookupError):
    def __init__(self, kind: str, name: str):
        self.kind = kind
        self.name = name
        super().__init__(f"missing {kind} {name!r}")


class EmptySample(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    code: str
    reason: str
    location: Optional[Any] = None

    def to_json(self) -> dict:
        loc = list(self.location) if isinstance(self.location, tuple) else self.location
        return {"code": self.code, "reason": self.reason, "location": loc}


@dataclass(frozen=True)
class SatResult:
    violations: tuple[Violation, ...] = ()
    score: Optional[float] = None

    @property
    def satisfied(self) -> bool:
        return not self.violations

    def merge(self, other: "SatResult") -> "SatResult":
        score = other.score if other.score is not None else self.score
        return SatResult(self.violations + other.violations, score)

    def to_json(self) -> dict:
        return {"satisfied": self.satisfied, "score": self.score,
                "violations": [v.to_json() for v in self.violations]}


OK = SatResult()


def _fail(code: str, reason: str, location=None, score=None) -> SatResult:
    return SatResult((Violation(code, reason, location),), score)


# -- ontologies and lexicons --------------------------------------------------

DEFAULT_STOPWORDS = frozenset("""
a an the and or but if of to in on at by for with from as is are was were be been being
it its this that these those i you he she we they me him her us them my your our their
not no do does did so than then there here about into over under can will would should
could may might must has have had
""".split())


@dataclass(frozen=True)
class Ontology:
    domain: str
    in_scope_terms: frozenset[str]
    excluded_terms: frozenset[str]
    stopwords: frozenset[str] = DEFAULT_STOPWORDS

    def __post_init__(self):
        for name in ("in_scope_terms", "excluded_terms", "stopwords"):
            object.__setattr__(self, name, frozenset(t.lower() for t in getattr(self, name)))
        if self.in_scope_terms & self.excluded_terms:
            raise ValueError("in-scope and excluded terms overlap")

    @classmethod
    def from_json(cls, d: dict) -> "Ontology":
        return cls(d.get("domain", ""), frozenset(d.get("in_scope_terms", [])),
                   frozenset(d.get("excluded_terms", [])),
                   frozenset(d["stopwords"]) if "stopwords" in d else DEFAULT_STOPWORDS)


@dataclass(frozen=True)
class Lexicon:
    entries: dict = field(default_factory=dict)
    informal_markers: frozenset[str] = frozenset()

    __hash__ = None

    def __post_init__(self):
        for k in self.entries:
            if not k or k != k.lower() or not k.strip():
                raise ValueError(f"lexicon keys must be lowercase and non-empty: {k!r}")
        object.__setattr__(self, "informal_markers",
                           frozenset(m.lower() for m in self.informal_markers))

    @classmethod
    def from_json(cls, d: dict) -> "Lexicon":
        return cls(dict(d.get("entries", {})), frozenset(d.get("informal_markers", [])))


def load_json_file(path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


@dataclass
class Context:
    """Named resources that constraints refer to."""

    grammars: dict = field(default_factory=dict)
    ontologies: dict = field(default_factory=dict)
    lexicons: dict = field(default_factory=dict)
    schemas: dict = field(default_factory=dict)
    oracles: dict = field(default_factory=dict)
    scorers: dict = field(default_factory=dict)

    def grammar(self, name: str) -> Grammar:
        if name not in self.grammars:
            raise MissingRef("grammar", name)
        g = self.grammars[name]
        if isinstance(g, str):
            g = parse_grammar(g)
            self.grammars[name] = g
        return g

    def ontology(self, name: str) -> Ontology:
        if name not in self.ontologies:
            raise MissingRef("ontology", name)
        o = self.ontologies[name]
        return o if isinstance(o, Ontology) else Ontology.from_json(o)

    def lexicon(self, name: str) -> Lexicon:
        if name not in self.lexicons:
            raise MissingRef("lexicon", name)
        lx = self.lexicons[name]
        return lx if isinstance(lx, Lexicon) else Lexicon.from_json(lx)

    def schema(self, name: str) -> dict:
        if name not in self.schemas:
            raise MissingRef("schema", name)
        return self.schemas[name]

    def oracle(self, name: str) -> Any:
        if name == "dataset":
            return None
        if name not in self.oracles:
            raise MissingRef("oracle", name)
        return self.oracles[name]

    def refs(self, c: Constraint) -> list[tuple[str, str]]:
        """(kind, name) pairs a constraint needs from this context."""
        p = c.params
        out = []
        if c.code in ("C1", "C2") or c.code == "C3" and "grammar" in p:
            out.append(("grammar", p["grammar"]))
        if c.code == "C4" and "schema" in p:
            out.append(("schema", p["schema"]))
        if c.code == "C9":
            out.append(("ontology", p["ontology"]))
        if c.code in ("C10", "C12"):
            out.append(("lexicon", p["lexicon"]))
        if c.code == "C13" and p["oracle"] != "dataset":
            out.append(("oracle", p["oracle"]))
        return out

    def resolve(self, c: Constraint) -> None:
        """Raise MissingRef if any reference of ``c`` is absent."""
        getters = {"grammar": self.grammar, "ontology": self.ontology,
                   "lexicon": self.lexicon, "schema": self.schema, "oracle": self.oracle}
        for kind, name in self.refs(c):
            getters[kind](name)


# -- scorers ------------------------------------------------------------------

_WORD_RE = re.compile(r"[\w']+")


def words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def formality_score(text: str, lexicon: Lexicon) -> float:
    toks = words(text)
    if not toks:
        return 1.0
    informal = sum(1 for t in toks if t in lexicon.informal_markers)
    return 1.0 - informal / len(toks)


def _phrase_hits(tokens: Sequence[str], terms: Iterable[str]) -> int:
    hits = 0
    for term in terms:
        parts = term.split()
        if not parts:
            continue
        n = len(parts)
        hits += sum(1 for i in range(len(tokens) - n + 1) if list(tokens[i:i + n]) == parts)
    return hits


def domain_membership(text: str, o: Ontology) -> float:
    toks = words(text)
    if _phrase_hits(toks, o.excluded_terms):
        return 0.0
    content = [t for t in toks if t not in o.stopwords]
    if not content:
        return 1.0
    return min(1.0, _phrase_hits(toks, o.in_scope_terms) / len(content))


def mental_model_agreement(outputs: Sequence[tuple[Any, Any, Any]], delta: float
                           ) -> tuple[float, bool]:
    """Fraction of (input, actual, expected) triples where actual equals expected."""
    if not outputs:
        raise EmptySample("mental-model agreement needs at least one output")
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    agree = sum(1 for _, actual, expected in outputs
                if canonical_value(actual) == canonical_value(expected))
    rate = agree / len(outputs)
    return rate, rate >= delta


# -- input-side transforms ----------------------------------------------------

DEFAULT_INJECTION_PATTERNS = (
    "ignore previous instructions",
    "ignore all previous instructions",
    "disregard the above",
    "disregard previous instructions",
)
DEFAULT_RULES = ("control", "whitespace", "injection")


def _strip_control(text: str) -> str:
    return "".join(ch for ch in text
                   if ch in "\t\n\r" or unicodedata.category(ch) != "Cc")


def _collapse_whitespace(text: str) -> str:
    return re.sub(r"\s+", " ", text)


def _remove_injections(text: str, patterns: Sequence[str]) -> str:
    for pat in patterns:
        text = re.sub(re.escape(pat), "", text, flags=re.IGNORECASE)
    return text


def sanitize(text: str, rules: Sequence[str] = DEFAULT_RULES,
             patterns: Sequence[str] = DEFAULT_INJECTION_PATTERNS) -> str:
    steps: list[Callable[[str], str]] = []
    for rule in rules:
        if rule == "control":
            steps.append(_strip_control)
        elif rule == "whitespace":
            steps.append(_collapse_whitespace)
        elif rule == "injection":
            steps.append(lambda s: _remove_injections(s, patterns))
        else:
            raise ValueError(f"unknown sanitation rule {rule!r}")
    # every step only shortens the text, so iterating to a fixpoint terminates
    # and makes the whole pass idempotent
    while True:
        before = text
        for step in steps:
            text = step(text)
        if text == before:
            return text


def encode(text: str, lex: Lexicon) -> str:
    """Left-to-right, longest-match replacement of lexicon entries."""
    keys: dict[tuple[str, ...], str] = {tuple(k.split()): v for k, v in lex.entries.items()}
    if not keys:
        return text
    longest = max(len(k) for k in keys)
    spans = [(m.start(), m.end(), m.group().lower()) for m in _WORD_RE.finditer(text)]
    out = []
    cursor = 0
    i = 0
    while i < len(spans):
        match_len = 0
        for n in range(min(longest, len(spans) - i), 0, -1):
            if tuple(s[2] for s in spans[i:i + n]) in keys:
                match_len = n
                break
        if match_len:
            key = tuple(s[2] for s in spans[i:i + match_len])
            out.append(text[cursor:spans[i][0]])
            out.append(keys[key])
            cursor = spans[i + match_len - 1][1]
            i += match_len
        else:
            i += 1
    out.append(text[cursor:])
    return "".join(out)


# -- individual checks --------------------------------------------------------

BUILTIN_PATTERNS = {
    "email": r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}",
    "phone": r"\+?\d[\d ().-]{7,}\d",
    "html": r"</?[A-Za-z][^<>]*>",
    "url": r"https?://\S+",
}

_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
        "==": operator.eq}


def token_units(text: str) -> int:
    return math.ceil(len(text) / 4)


def count_length(text: str, unit: str) -> int:
    if unit == "words":
        return len(re.findall(r"\S+", text))
    if unit == "tokens":
        return token_units(text)
    raise ValueError(f"unknown length unit {unit!r}")


def compile_pattern(pat: dict) -> re.Pattern:
    kind, body = pat["kind"], pat["pattern"]
    if kind == "builtin":
        if body not in BUILTIN_PATTERNS:
            raise ValueError(f"unknown builtin pattern {body!r}")
        return re.compile(BUILTIN_PATTERNS[body])
    if kind == "regex":
        return re.compile(body)
    if kind == "literal":
        return re.compile(re.escape(body), re.IGNORECASE)
    raise ValueError(f"unknown pattern kind {kind!r}")


def grammar_check(text: str, grammar_ref: str, ctx: Context, code: str = "C1") -> SatResult:
    g = ctx.grammar(grammar_ref)
    if g.accepts(text):
        return OK
    return _fail(code, f"text not derivable from grammar {grammar_ref!r}")


def _as_text(value: Any) -> str:
    return value if isinstance(value, str) else canonical_value(value)


def _as_json(value: Any, parsed: bool) -> tuple[bool, Any]:
    if parsed or not isinstance(value, str):
        return True, value
    try:
        return True, json.loads(value)
    except json.JSONDecodeError:
        return False, None


def _threshold(code: str, name: str, score: float, op: str, threshold: float) -> SatResult:
    if _OPS[op](score, threshold):
        return SatResult((), score)
    return _fail(code, f"{name} {score:.4g} violates {op} {threshold:g}", score=score)


def check(c: Constraint, value: Any, ctx: Optional[Context] = None, *, base=None,
          raw: Optional[str] = None) -> SatResult:
    """Check one constraint against a value.

    ``raw`` is the text the value was read from (used by text-level checks
    when the value itself is structured). Without ``raw`` a string value is
    taken as unparsed model text; ``base`` is the declared base type,
    needed by type-derived checks (C4 ``schema``, C5 ``label_range``).
    """
    ctx = ctx or Context()
    p = c.params
    text = raw if raw is not None else _as_text(value)
    match c.code:
        case "C1" | "C2":
            return grammar_check(text, p["grammar"], ctx, c.code)
        case "C3":
            if "labels" in p:
                if text.strip() in p["labels"]:
                    return OK
                return _fail("C3", f"{text.strip()!r} rejected by decoding label set")
            return grammar_check(text, p["grammar"], ctx, "C3")
        case "C4":
            if p.get("needs_schema"):
                raise ValueError("NeedsSchema is discharged statically, not per value")
            ok, data = _as_json(value, raw is not None)
            if not ok:
                return _fail("C4", "output is not valid JSON")
            if "schema" in p:
                errs = schema_errors(data, ctx.schema(p["schema"]))
            else:
                if base is None:
                    raise ValueError("type-derived schema check needs the base type")
                errs = conformance_errors(data, base)
            if errs:
                return SatResult(tuple(Violation("C4", e) for e in errs))
            return OK
        case "C5":
            labels = p.get("labels")
            if labels is None:
                if not isinstance(base, Enum):
                    raise ValueError("label_range without labels needs an Enum base")
                labels = base.labels
            if isinstance(value, str) and value in labels:
                return OK
            return _fail("C5", f"{value!r} is not one of {list(labels)}")
        case "C6":
            n = count_length(text, p["unit"])
            if _OPS[p["op"]](n, p["bound"]):
                return OK
            return _fail("C6", f"{n} {p['unit']} violates {p['op']} {p['bound']}")
        case "C7":
            violations = []
            for pat in p["patterns"]:
                for m in compile_pattern(pat).finditer(text):
                    violations.append(Violation(
                        "C7", f"excluded {pat['kind']} pattern {pat['pattern']!r} matched",
                        (m.start(), m.end())))
            return SatResult(tuple(violations))
        case "C8":
            lower = text.lower()
            missing = [m for m in p["mentions"]
                       if not re.search(r"(?<!\w)" + re.escape(m.lower()) + r"(?!\w)", lower)]
            return SatResult(tuple(Violation("C8", f"missing required mention {m!r}")
                                   for m in missing))
        case "C9":
            o = ctx.ontology(p["ontology"])
            scorer = ctx.scorers.get("domain", domain_membership)
            return _threshold("C9", "domain membership", scorer(text, o), ">=",
                              p["min_score"])
        case "C10":
            lx = ctx.lexicon(p["lexicon"])
            scorer = ctx.scorers.get(p.get("scorer", "formality"), formality_score)
            return _threshold("C10", p.get("scorer", "formality"), scorer(text, lx),
                              p.get("comparator", ">="), p["threshold"])
        case "C11":
            clean = sanitize(text, p.get("rules", DEFAULT_RULES),
                             p.get("patterns", DEFAULT_INJECTION_PATTERNS))
            if clean == text:
                return OK
            return _fail("C11", "input is not sanitized")
        case "C12":
            lx = ctx.lexicon(p["lexicon"])
            if encode(text, lx) == text:
                return OK
            return _fail("C12", "input contains unencoded lexicon entries")
        case "C13":
            ctx.oracle(p["oracle"])
            rate, ok = mental_model_agreement(value, p["delta"])
            if ok:
                return SatResult((), rate)
            return _fail("C13", f"agreement {rate:.4g} below delta {p['delta']:g}", score=rate)
    raise ValueError(f"unknown constraint code {c.code!r}")


def decoding_accepts(filt: dict, text: str, ctx: Optional[Context] = None) -> bool:
    """Decoding filters are ``{"labels": [...]}`` or ``{"grammar": ref}``."""
    if "labels" in filt:
        return text.strip() in filt["labels"]
    return (ctx or Context()).grammar(filt["grammar"]).accepts(text)


__all__ = [
    "Context", "EmptySample", "GrammarIllFormed", "Lexicon", "MissingRef", "Ontology",
    "SatResult", "Violation", "check", "count_length", "domain_membership", "encode",
    "formality_score", "grammar_check", "mental_model_agreement", "sanitize", "token_units",
]
