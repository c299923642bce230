"""Parser and canonical renderer for ``.lpt`` prompt-program files.

A file has a declaration header and a template, separated by a line ``---``::

    program classify
    input text: Text where sanitize
    output label: Enum("Positive", "Negative", "Neutral") where label_range
    constraint length(words, output) < 40
    ---
    Classify the sentiment of the following text.
    {{schema:k1}}
    Text: {{text}}

Template tags: ``{{name}}`` holes, ``{{schema:ID}}`` open schema slots,
``{{#schema ID}}...{{/schema}}`` filled slots and
``{{#block ID [reorderable]}}...{{/block}}`` instruction blocks. One trailing
newline of the file is not part of the template.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Optional

from .core import (IDENT_RE, Boolean, Constraint, Enum, Hole, InstructionBlock, Integer,
                   JsonValue, ListOf, Literal, PromptProgram, Real, Record,
                   RefinedType, SchemaSlot, Syntactic, Text, constraint_to_probabilistic)


class ParseError(Exception):
    def __init__(self, line: int, column: int, message: str, expected: Optional[str] = None):
        self.line = line
        self.column = column
        self.message = message
        self.expected = expected
        detail = f"{line}:{column}: {message}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)

    def to_json(self) -> dict:
        return {"kind": type(self).__name__, "location": f"{self.line}:{self.column}",
                "detail": self.message}


class BindingError(ParseError):
    """A template hole names an input that is not declared."""


@dataclass(frozen=True)
class SourceProgram:
    raw_text: str
    origin: str = "<memory>"


# -- header tokens ------------------------------------------------------------

@dataclass
class Tok:
    kind: str  # ident | string | regex | number | op | end
    value: object
    line: int
    col: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t]+)
  | (?P<regex>re"(?:[^"\\]|\\.)*")
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<number>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|==|[<>(){}\[\],:@])
""", re.VERBOSE)


def _tokenize(line: str, lineno: int) -> list[Tok]:
    toks = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if not m:
            raise ParseError(lineno, pos + 1, f"unexpected character {line[pos]!r}")
        kind = m.lastgroup
        text = m.group()
        if kind == "string" or kind == "regex":
            try:
                value = json.loads(text[2:] if kind == "regex" else text)
            except json.JSONDecodeError:
                raise ParseError(lineno, pos + 1, "malformed string literal") from None
            toks.append(Tok(kind, value, lineno, pos + 1))
        elif kind == "number":
            toks.append(Tok(kind, json.loads(text), lineno, pos + 1))
        elif kind != "ws":
            toks.append(Tok(kind, text, lineno, pos + 1))
        pos = m.end()
    toks.append(Tok("end", None, lineno, len(line) + 1))
    return toks


class _Cursor:
    def __init__(self, toks: list[Tok]):
        self.toks = toks
        self.i = 0

    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def at(self, kind: str, value=None) -> bool:
        t = self.tok
        return t.kind == kind and (value is None or t.value == value)

    def next(self) -> Tok:
        t = self.tok
        if t.kind != "end":
            self.i += 1
        return t

    def expect(self, kind: str, value=None, what: Optional[str] = None) -> Tok:
        if not self.at(kind, value):
            t = self.tok
            found = "end of line" if t.kind == "end" else repr(t.value)
            raise ParseError(t.line, t.col, f"unexpected {found}",
                             what or (repr(value) if value is not None else kind))
        return self.next()

    def fail(self, message: str, expected: Optional[str] = None):
        raise ParseError(self.tok.line, self.tok.col, message, expected)


# -- types --------------------------------------------------------------------

_SIMPLE_TYPES = {"Text": Text, "Integer": Integer, "Boolean": Boolean, "Real": Real,
                 "JsonValue": JsonValue}


def _parse_type(cur: _Cursor):
    t = cur.expect("ident", what="type")
    name = t.value
    if name in _SIMPLE_TYPES:
        return _SIMPLE_TYPES[name]()
    if name == "Enum":
        cur.expect("op", "(")
        labels = [cur.expect("string", what="label string").value]
        while cur.at("op", ","):
            cur.next()
            labels.append(cur.expect("string", what="label string").value)
        cur.expect("op", ")")
        return Enum(tuple(labels))
    if name == "List":
        cur.expect("op", "[")
        elem = _parse_type(cur)
        cur.expect("op", "]")
        return ListOf(elem)
    if name == "Record":
        cur.expect("op", "{")
        fields = []
        if not cur.at("op", "}"):
            while True:
                if cur.at("ident") or cur.at("string"):
                    fname = cur.next().value
                else:
                    cur.fail("bad record field", "field name")
                cur.expect("op", ":")
                fields.append((fname, _parse_type(cur)))
                if not cur.at("op", ","):
                    break
                cur.next()
        cur.expect("op", "}")
        return Record(tuple(fields))
    raise ParseError(t.line, t.col, f"unknown type {name!r}", "type")


def render_type(b) -> str:
    match b:
        case Enum(labels):
            return "Enum(" + ", ".join(_str(x) for x in labels) + ")"
        case ListOf(element):
            return f"List[{render_type(element)}]"
        case Record(fields):
            return "Record{" + ", ".join(f"{_ref(n)}: {render_type(t)}" for n, t in fields) + "}"
        case _:
            return type(b).__name__


def _str(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def _ref(s: str) -> str:
    return s if IDENT_RE.match(s) else _str(s)


def _num(x) -> str:
    return repr(x) if isinstance(x, float) else str(x)


# -- constraint items ---------------------------------------------------------

@dataclass
class _Item:
    name: str
    args: Optional[list[Tok]]
    op: Optional[str]
    number: object
    delta: object
    tok: Tok


_COMPARATORS = ("<", "<=", ">", ">=", "==")


def _parse_item(cur: _Cursor) -> _Item:
    head = cur.expect("ident", what="constraint")
    args = None
    if cur.at("op", "("):
        cur.next()
        args = []
        if not cur.at("op", ")"):
            while True:
                if cur.tok.kind in ("ident", "string", "regex", "number"):
                    args.append(cur.next())
                else:
                    cur.fail("bad constraint argument", "argument")
                if not cur.at("op", ","):
                    break
                cur.next()
        cur.expect("op", ")")
    op = number = delta = None
    if cur.tok.kind == "op" and cur.tok.value in _COMPARATORS:
        op = cur.next().value
        number = cur.expect("number").value
    if cur.at("op", "@"):
        cur.next()
        delta = cur.expect("number").value
    return _Item(head.value, args, op, number, delta, head)


def _arg_ref(item: _Item, tok: Tok) -> str:
    if tok.kind not in ("ident", "string"):
        raise ParseError(tok.line, tok.col, f"{item.name}: expected a reference name", "name")
    return tok.value


def _arity(item: _Item, lo: int, hi: Optional[int] = None):
    n = len(item.args or [])
    hi = lo if hi is None else hi
    if item.args is None and lo > 0 or not lo <= n <= hi:
        raise ParseError(item.tok.line, item.tok.col,
                         f"{item.name} takes {lo}{'' if hi == lo else f'..{hi}'} argument(s)")


def _no_compare(item: _Item):
    if item.op is not None or item.delta is not None:
        raise ParseError(item.tok.line, item.tok.col, f"{item.name} takes no comparison")


def _strings(item: _Item) -> list[str]:
    out = []
    for t in item.args or []:
        if t.kind != "string":
            raise ParseError(t.line, t.col, f"{item.name}: expected a string", "string")
        out.append(t.value)
    return out


def _item_to_constraint(item: _Item, target: Optional[str]) -> tuple[Constraint, Optional[str]]:
    """Map a parsed item to a constraint. Returns (constraint, explicit_target)."""
    name = item.name
    explicit = None
    if name in ("grammar", "structure", "decode", "schema", "encode") and item.args:
        _arity(item, 1)
        _no_compare(item)
        ref = _arg_ref(item, item.args[0])
        code, key = {"grammar": ("C1", "grammar"), "structure": ("C2", "grammar"),
                     "decode": ("C3", "grammar"), "schema": ("C4", "schema"),
                     "encode": ("C12", "lexicon")}[name]
        return Constraint(code, {key: ref}, target), None
    if name == "schema":
        _no_compare(item)
        return Constraint("C4", {"derived": True}, target), None
    if name == "needs_schema":
        _no_compare(item)
        _arity(item, 0)
        return Constraint("C4", {"needs_schema": True}, None), None
    if name == "decode_labels":
        _no_compare(item)
        return Constraint("C3", {"labels": _strings(item)}, target), None
    if name == "label_range":
        _no_compare(item)
        labels = _strings(item) if item.args else None
        return Constraint("C5", {"labels": labels}, target), None
    if name == "length":
        _arity(item, 1, 2)
        if item.op is None or item.delta is not None:
            raise ParseError(item.tok.line, item.tok.col, "length needs a comparison",
                             "comparison")
        unit = item.args[0]
        if unit.kind != "ident" or unit.value not in ("words", "tokens"):
            raise ParseError(unit.line, unit.col, "length unit must be words or tokens",
                             "words or tokens")
        if len(item.args) == 2:
            explicit = _arg_ref(item, item.args[1])
        if not isinstance(item.number, int) or item.number < 0:
            raise ParseError(item.tok.line, item.tok.col, "length bound must be a natural number")
        c = Constraint("C6", {"unit": unit.value, "op": item.op, "bound": item.number},
                       explicit or target)
        return c, explicit
    if name == "exclude":
        _no_compare(item)
        pats = []
        for t in item.args or []:
            if t.kind == "ident":
                pats.append({"kind": "builtin", "pattern": t.value})
            elif t.kind == "string":
                pats.append({"kind": "literal", "pattern": t.value})
            elif t.kind == "regex":
                pats.append({"kind": "regex", "pattern": t.value})
            else:
                raise ParseError(t.line, t.col, "bad exclusion pattern", "pattern")
        return Constraint("C7", {"patterns": pats}, target), None
    if name == "include":
        _no_compare(item)
        return Constraint("C8", {"mentions": _strings(item)}, target), None
    if name in ("domain", "formality"):
        _arity(item, 1)
        if item.op not in (">=", "<=") or (name == "domain" and item.op != ">="):
            raise ParseError(item.tok.line, item.tok.col, f"{name} needs a threshold", ">= X")
        ref = _arg_ref(item, item.args[0])
        delta = 1.0 if item.delta is None else float(item.delta)
        if name == "domain":
            return Constraint("C9", {"ontology": ref, "min_score": float(item.number),
                                     "delta": delta}, target), None
        return Constraint("C10", {"scorer": "formality", "lexicon": ref, "comparator": item.op,
                                  "threshold": float(item.number), "delta": delta},
                          target), None
    if name == "sanitize":
        _no_compare(item)
        rules = ["control", "whitespace", "injection"]
        if item.args:
            rules = []
            for t in item.args:
                if t.kind != "ident":
                    raise ParseError(t.line, t.col, "sanitize rules are names", "rule name")
                rules.append(t.value)
        return Constraint("C11", {"rules": rules}, target), None
    if name == "mental_model":
        _arity(item, 1)
        if item.op is not None:
            raise ParseError(item.tok.line, item.tok.col, "mental_model takes only @ delta")
        delta = 1.0 if item.delta is None else float(item.delta)
        return Constraint("C13", {"oracle": _arg_ref(item, item.args[0]), "delta": delta},
                          None), None
    raise ParseError(item.tok.line, item.tok.col, f"unknown constraint {name!r}", "constraint")


_PROGRAM_LEVEL = ("needs_schema", "mental_model")


def parse_constraint(text: str, target: Optional[str] = "output") -> Constraint:
    """Parse a single constraint item such as ``formality(lex) >= 0.7``."""
    cur = _Cursor(_tokenize(text, 1))
    item = _parse_item(cur)
    c, _ = _item_to_constraint(item, target)
    cur.expect("end", what="end of constraint")
    return c


_SANITIZE_DEFAULT = ["control", "whitespace", "injection"]


def render_constraint(c: Constraint, where: bool = False) -> str:
    p = c.params
    match c.code:
        case "C1" | "C2":
            return f"{'grammar' if c.code == 'C1' else 'structure'}({_ref(p['grammar'])})"
        case "C3":
            if "labels" in p:
                return "decode_labels(" + ", ".join(_str(x) for x in p["labels"]) + ")"
            return f"decode({_ref(p['grammar'])})"
        case "C4":
            if p.get("needs_schema"):
                return "needs_schema"
            if "schema" in p:
                return f"schema({_ref(p['schema'])})"
            return "schema"
        case "C5":
            if p.get("labels") is None:
                return "label_range"
            return "label_range(" + ", ".join(_str(x) for x in p["labels"]) + ")"
        case "C6":
            args = p["unit"] if where else f"{p['unit']}, {_ref(c.target or 'output')}"
            return f"length({args}) {p['op']} {_num(p['bound'])}"
        case "C7":
            parts = []
            for pat in p["patterns"]:
                if pat["kind"] == "builtin":
                    parts.append(pat["pattern"])
                elif pat["kind"] == "regex":
                    parts.append("re" + _str(pat["pattern"]))
                else:
                    parts.append(_str(pat["pattern"]))
            return "exclude(" + ", ".join(parts) + ")"
        case "C8":
            return "include(" + ", ".join(_str(x) for x in p["mentions"]) + ")"
        case "C9":
            return f"domain({_ref(p['ontology'])}) >= {_num(p['min_score'])} @ {_num(p['delta'])}"
        case "C10":
            return (f"formality({_ref(p['lexicon'])}) {p.get('comparator', '>=')} "
                    f"{_num(p['threshold'])} @ {_num(p['delta'])}")
        case "C11":
            if p["rules"] == _SANITIZE_DEFAULT:
                return "sanitize"
            return "sanitize(" + ", ".join(p["rules"]) + ")"
        case "C12":
            return f"encode({_ref(p['lexicon'])})"
        case "C13":
            return f"mental_model({_ref(p['oracle'])}) @ {_num(p['delta'])}"
    raise ValueError(c.code)


# -- header -------------------------------------------------------------------

def _parse_where(cur: _Cursor, decl: str) -> list:
    refs = []
    if not cur.at("ident", "where"):
        return refs
    cur.next()
    while True:
        item = _parse_item(cur)
        if item.name in _PROGRAM_LEVEL:
            raise ParseError(item.tok.line, item.tok.col,
                             f"{item.name} is program-level; use a constraint line")
        c, explicit = _item_to_constraint(item, decl)
        if explicit is not None:
            raise ParseError(item.tok.line, item.tok.col,
                             "where-clause length takes only the unit")
        if c.code in ("C9", "C10"):
            refs.append(constraint_to_probabilistic(c))
        else:
            refs.append(Syntactic(c))
        if not cur.at("op", ","):
            break
        cur.next()
    return refs


def _split_source(text: str) -> tuple[list[str], Optional[int], int]:
    """Header lines, the index of the ``---`` line, and the template offset."""
    lines = text.split("\n")
    offset = 0
    for i, line in enumerate(lines):
        if line.rstrip("\r") == "---":
            return lines[:i], i, offset + len(line) + 1
        offset += len(line) + 1
    return lines, None, len(text)


def parse_program(src) -> PromptProgram:
    """Parse program text (or a :class:`SourceProgram`) into a PromptProgram."""
    text = src.raw_text if isinstance(src, SourceProgram) else src
    header, sep_index, tmpl_offset = _split_source(text)

    name = None
    output = None
    output_name = None
    inputs: list[tuple[str, RefinedType]] = []
    pending: list[tuple[_Item, Optional[str], Tok]] = []
    last_line, last_col = 1, 1

    for lineno, raw in enumerate(header, start=1):
        line = raw.rstrip("\r")
        last_line, last_col = lineno, len(line) + 1
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        cur = _Cursor(_tokenize(line, lineno))
        kw = cur.expect("ident", what="declaration keyword")
        if name is None and kw.value != "program":
            raise ParseError(kw.line, kw.col, f"unexpected {kw.value!r}", "'program'")
        if kw.value == "program":
            if name is not None:
                raise ParseError(kw.line, kw.col, "duplicate program declaration")
            name = cur.expect("ident", what="program name").value
        elif kw.value in ("input", "output"):
            n = cur.expect("ident", what="name")
            cur.expect("op", ":")
            base = _parse_type(cur)
            refs = _parse_where(cur, n.value)
            t = RefinedType(base, tuple(refs))
            if kw.value == "input":
                if any(k == n.value for k, _ in inputs) or n.value == output_name:
                    raise ParseError(n.line, n.col, f"duplicate declaration {n.value!r}")
                inputs.append((n.value, t))
            else:
                if output is not None:
                    raise ParseError(kw.line, kw.col, "duplicate output declaration")
                if any(k == n.value for k, _ in inputs):
                    raise ParseError(n.line, n.col, f"duplicate declaration {n.value!r}")
                output, output_name = t, n.value
        elif kw.value == "constraint":
            item = _parse_item(cur)
            target = None
            if cur.at("ident", "on"):
                cur.next()
                target = cur.expect("ident", what="declaration name").value
            pending.append((item, target, kw))
        else:
            raise ParseError(kw.line, kw.col, f"unknown declaration {kw.value!r}",
                             "program, input, output or constraint")
        cur.expect("end", what="end of line")

    if name is None:
        raise ParseError(last_line if header and text else 1,
                         last_col if text.strip() else 1, "missing program declaration",
                         "'program'")
    if sep_index is None:
        raise ParseError(last_line, last_col, "missing template separator", "'---'")
    if output is None:
        raise ParseError(sep_index + 1, 1, "missing output declaration", "'output'")

    constraints = []
    declared = {k for k, _ in inputs}
    for item, on, kw in pending:
        default = None if item.name in _PROGRAM_LEVEL else output_name
        if on == "output" and "output" not in declared:
            on = output_name
        c, explicit = _item_to_constraint(item, on or default)
        if explicit == "output" and "output" not in declared:
            explicit = output_name
            c = Constraint(c.code, c.params, output_name)
        if explicit is not None and on is not None:
            raise ParseError(kw.line, kw.col, "target given twice")
        if c.code in ("C4", "C13") and c.target is None and on is not None:
            c = Constraint(c.code, c.params, on)
        constraints.append(c)

    body = _parse_template(text, tmpl_offset, sep_index + 2, declared)
    return PromptProgram(name=name, inputs=tuple(inputs), output=output, body=tuple(body),
                         constraints=tuple(constraints), output_name=output_name)


# -- template -----------------------------------------------------------------

_TAG_RE = re.compile(r"\{\{(.*?)\}\}", re.DOTALL)


def _position(text: str, offset: int) -> tuple[int, int]:
    line = text.count("\n", 0, offset) + 1
    col = offset - (text.rfind("\n", 0, offset) + 1) + 1
    return line, col


def _parse_template(text: str, start: int, first_line: int, declared: set[str]) -> list:
    end = len(text)
    if end > start and text.endswith("\n"):
        end -= 1
    body: list = []
    pos = start

    def err(cls, offset, msg, expected=None):
        line, col = _position(text, offset)
        raise cls(line, col, msg, expected)

    def add_literal(s: str):
        if not s:
            return
        if body and isinstance(body[-1], Literal):
            body[-1] = Literal(body[-1].text + s)
        else:
            body.append(Literal(s))

    while pos < end:
        open_at = text.find("{{", pos, end)
        if open_at < 0:
            add_literal(text[pos:end])
            break
        add_literal(text[pos:open_at])
        close_at = text.find("}}", open_at + 2, end)
        if close_at < 0:
            err(ParseError, open_at, "unterminated tag", "'}}'")
        inner = text[open_at + 2:close_at]
        after = close_at + 2
        if IDENT_RE.match(inner):
            if inner not in declared:
                err(BindingError, open_at + 2, f"hole references undeclared input {inner!r}")
            body.append(Hole(inner))
            pos = after
        elif inner.startswith("schema:"):
            slot = inner[len("schema:"):]
            if not IDENT_RE.match(slot):
                err(ParseError, open_at + 2 + 7, "bad slot id", "identifier")
            body.append(SchemaSlot(slot))
            pos = after
        elif inner.startswith("#"):
            parts = inner[1:].split(" ")
            kind = parts[0]
            if kind not in ("schema", "block"):
                err(ParseError, open_at + 3, f"unknown section {kind!r}", "'#schema' or '#block'")
            if len(parts) < 2 or not IDENT_RE.match(parts[1]):
                err(ParseError, open_at + 3 + len(kind), "bad section id", "identifier")
            flags = parts[2:]
            if kind == "schema" and flags or kind == "block" and flags not in ([], ["reorderable"]):
                err(ParseError, open_at + 2, "bad section flags")
            closing = "{{/" + kind + "}}"
            close_sec = text.find(closing, after, end)
            if close_sec < 0:
                err(ParseError, end, f"unterminated {kind} section", repr(closing))
            content = text[after:close_sec]
            nested = content.find("{{")
            if nested >= 0:
                err(ParseError, after + nested, f"tag inside {kind} section")
            if kind == "schema":
                body.append(SchemaSlot(parts[1], content))
            else:
                body.append(InstructionBlock(parts[1], content, bool(flags)))
            pos = close_sec + len(closing)
        else:
            err(ParseError, open_at + 2, f"malformed tag {inner!r}", "hole, slot or section")

    seen: set[str] = set()
    for seg in body:
        sid = getattr(seg, "slot_id", None) or getattr(seg, "block_id", None)
        if sid is not None:
            if sid in seen:
                raise ParseError(first_line, 1, f"duplicate slot/block id {sid!r}")
            seen.add(sid)
    return body


# -- rendering ----------------------------------------------------------------

def _render_decl(kw: str, name: str, t: RefinedType) -> str:
    line = f"{kw} {name}: {render_type(t.base)}"
    items = []
    for r in t.refinements:
        if isinstance(r, Syntactic):
            items.append(render_constraint(r.constraint, where=True))
        else:
            kind, _, ref = r.scorer.partition(":")
            if kind == "domain":
                items.append(f"domain({_ref(ref)}) >= {_num(r.threshold)} "
                             f"@ {_num(r.confidence_delta)}")
            else:
                items.append(f"formality({_ref(ref)}) {r.comparator} {_num(r.threshold)} "
                             f"@ {_num(r.confidence_delta)}")
    if items:
        line += " where " + ", ".join(items)
    return line


def render_segment(s) -> str:
    match s:
        case Literal(text):
            return text
        case Hole(name):
            return "{{" + name + "}}"
        case SchemaSlot(slot_id, None):
            return "{{schema:" + slot_id + "}}"
        case SchemaSlot(slot_id, filled):
            return "{{#schema " + slot_id + "}}" + filled + "{{/schema}}"
        case InstructionBlock(block_id, text, reorderable):
            flag = " reorderable" if reorderable else ""
            return "{{#block " + block_id + flag + "}}" + text + "{{/block}}"
    raise TypeError(s)


def render_program(p: PromptProgram) -> str:
    lines = [f"program {p.name}"]
    lines += [_render_decl("input", n, t) for n, t in p.inputs]
    lines.append(_render_decl("output", p.output_name, p.output))
    for c in p.constraints:
        line = "constraint " + render_constraint(c)
        default = None if c.code == "C13" or c.is_needs_schema else p.output_name
        if c.code != "C6" and c.target != default and c.target is not None:
            line += f" on {c.target}"
        lines.append(line)
    lines.append("---")
    return "\n".join(lines) + "\n" + "".join(render_segment(s) for s in p.body) + "\n"


def load_program(path) -> PromptProgram:
    with open(path, encoding="utf-8") as fh:
        return parse_program(SourceProgram(fh.read(), str(path)))
