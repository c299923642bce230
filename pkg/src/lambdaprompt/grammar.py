"""EBNF-like context-free grammars and a character-level Earley recognizer.

Grammar files hold one rule per line::

    # a two-level markdown outline
    start ::= item+
    item  ::= "- " words "\\n" sub*
    sub   ::= "  - " words "\\n"
    words ::= [a-zA-Z0-9 ]+

Operators: ``|`` alternation, juxtaposition, postfix ``* + ?``, grouping
``( )``. Terminals are quoted strings, character classes ``[a-z]`` /
``[^"]`` and ``.`` (any character). ``""`` is the empty string. A ``start``
rule is mandatory; matching is exact, with no implicit whitespace.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Union


class GrammarIllFormed(ValueError):
    pass


@dataclass(frozen=True)
class CharSet:
    ranges: tuple[tuple[str, str], ...]
    negated: bool = False

    def matches(self, ch: str) -> bool:
        inside = any(lo <= ch <= hi for lo, hi in self.ranges)
        return inside != self.negated


ANY = CharSet((), negated=True)

Symbol = Union[str, CharSet]  # str = nonterminal


@dataclass
class Grammar:
    rules: dict[str, list[tuple[Symbol, ...]]]
    start: str = "start"
    source_rules: list[str] = field(default_factory=list)

    def nullable(self) -> set[str]:
        null: set[str] = set()
        changed = True
        while changed:
            changed = False
            for lhs, alts in self.rules.items():
                if lhs in null:
                    continue
                if any(all(isinstance(s, str) and s in null for s in alt) for alt in alts):
                    null.add(lhs)
                    changed = True
        return null

    def accepts(self, text: str) -> bool:
        return earley_recognize(self, text)


# -- parsing the grammar file -------------------------------------------------

_LEX = re.compile(r"""
    (?P<ws>\s+)
  | (?P<string>"(?:[^"\\]|\\.)*"|'(?:[^'\\]|\\.)*')
  | (?P<cls>\[(?:[^\]\\]|\\.)+\])
  | (?P<name>[A-Za-z_][A-Za-z0-9_\-]*)
  | (?P<op>[|()*+?.])
""", re.VERBOSE)


def _lex(expr: str, lineno: int) -> list[tuple[str, str]]:
    toks = []
    pos = 0
    while pos < len(expr):
        m = _LEX.match(expr, pos)
        if not m:
            raise GrammarIllFormed(f"line {lineno}: unexpected {expr[pos]!r}")
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group()))
        pos = m.end()
    return toks


def _string_value(tok: str) -> str:
    if tok[0] == '"':
        return json.loads(tok)
    inner = tok[1:-1].replace("\\'", "'")
    return json.loads('"' + inner.replace('"', '\\"') + '"')


def _charset(tok: str) -> CharSet:
    body = tok[1:-1]
    negated = body.startswith("^")
    if negated:
        body = body[1:]
    chars = []
    i = 0
    while i < len(body):
        if body[i] == "\\" and i + 1 < len(body):
            esc = body[i + 1]
            chars.append({"n": "\n", "t": "\t", "r": "\r"}.get(esc, esc))
            i += 2
        else:
            chars.append(body[i])
            i += 1
    ranges = []
    j = 0
    while j < len(chars):
        if j + 2 < len(chars) and chars[j + 1] == "-":
            ranges.append((chars[j], chars[j + 2]))
            j += 3
        else:
            ranges.append((chars[j], chars[j]))
            j += 1
    return CharSet(tuple(ranges), negated)


class _Builder:
    def __init__(self):
        self.rules: dict[str, list[tuple[Symbol, ...]]] = {}
        self.fresh = 0
        self.referenced: list[tuple[str, int]] = []

    def new_name(self, hint: str) -> str:
        self.fresh += 1
        return f"{hint}#{self.fresh}"

    def parse_expr(self, toks, i, lineno, owner):
        alts = []
        seq, i = self.parse_seq(toks, i, lineno, owner)
        alts.append(seq)
        while i < len(toks) and toks[i] == ("op", "|"):
            seq, i = self.parse_seq(toks, i + 1, lineno, owner)
            alts.append(seq)
        return alts, i

    def parse_seq(self, toks, i, lineno, owner):
        seq: list[Symbol] = []
        if i >= len(toks) or toks[i] in (("op", "|"), ("op", ")")):
            raise GrammarIllFormed(f'line {lineno}: empty alternative (write "" for epsilon)')
        while i < len(toks) and toks[i] not in (("op", "|"), ("op", ")")):
            kind, text = toks[i]
            i += 1
            if kind == "string":
                atom = [CharSet(((c, c),)) for c in _string_value(text)]
            elif kind == "cls":
                atom = [_charset(text)]
            elif kind == "name":
                self.referenced.append((text, lineno))
                atom = [text]
            elif text == ".":
                atom = [ANY]
            elif text == "(":
                alts, i = self.parse_expr(toks, i, lineno, owner)
                if i >= len(toks) or toks[i] != ("op", ")"):
                    raise GrammarIllFormed(f"line {lineno}: missing ')'")
                i += 1
                name = self.new_name(owner)
                self.rules[name] = [tuple(a) for a in alts]
                atom = [name]
            else:
                raise GrammarIllFormed(f"line {lineno}: unexpected {text!r}")
            while i < len(toks) and toks[i][1] in ("*", "+", "?") and toks[i][0] == "op":
                op = toks[i][1]
                i += 1
                inner = self.new_name(owner)
                self.rules[inner] = [tuple(atom)]
                rep = self.new_name(owner)
                if op == "?":
                    self.rules[rep] = [(inner,), ()]
                elif op == "*":
                    self.rules[rep] = [(inner, rep), ()]
                else:
                    star = self.new_name(owner)
                    self.rules[star] = [(inner, star), ()]
                    self.rules[rep] = [(inner, star)]
                atom = [rep]
            seq.extend(atom)
        return seq, i


_RULE_RE = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_\-]*)\s*::=(.*)\Z")


def parse_grammar(text: str) -> Grammar:
    b = _Builder()
    declared: list[str] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        m = _RULE_RE.match(line)
        if not m:
            raise GrammarIllFormed(f"line {lineno}: expected 'name ::= expression'")
        lhs, expr = m.group(1), m.group(2)
        toks = _lex(expr, lineno)
        alts, i = b.parse_expr(toks, 0, lineno, lhs)
        if i != len(toks):
            raise GrammarIllFormed(f"line {lineno}: unexpected {toks[i][1]!r}")
        b.rules.setdefault(lhs, []).extend(tuple(a) for a in alts)
        declared.append(lhs)
    if "start" not in b.rules:
        raise GrammarIllFormed("missing start rule")
    for name, lineno in b.referenced:
        if name not in b.rules:
            raise GrammarIllFormed(f"line {lineno}: undefined nonterminal {name!r}")
    return Grammar(b.rules, "start", declared)


def load_grammar(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())


# -- recognition --------------------------------------------------------------

def earley_recognize(g: Grammar, text: str) -> bool:
    """True iff ``text`` is derivable from the start symbol."""
    prods = [(lhs, alt) for lhs, alts in g.rules.items() for alt in alts]
    by_lhs: dict[str, list[int]] = {}
    for idx, (lhs, _) in enumerate(prods):
        by_lhs.setdefault(lhs, []).append(idx)
    nullable = g.nullable()
    n = len(text)
    charts: list[set[tuple[int, int, int]]] = [set() for _ in range(n + 1)]
    start_items = [(p, 0, 0) for p in by_lhs[g.start]]

    for i in range(n + 1):
        chart = charts[i]
        agenda = list(start_items) if i == 0 else list(chart)
        chart.update(agenda)
        while agenda:
            p, dot, origin = agenda.pop()
            lhs, rhs = prods[p]
            if dot < len(rhs):
                sym = rhs[dot]
                if isinstance(sym, str):
                    for q in by_lhs[sym]:
                        item = (q, 0, i)
                        if item not in chart:
                            chart.add(item)
                            agenda.append(item)
                    if sym in nullable:
                        item = (p, dot + 1, origin)
                        if item not in chart:
                            chart.add(item)
                            agenda.append(item)
                elif i < n and sym.matches(text[i]):
                    charts[i + 1].add((p, dot + 1, origin))
            else:
                for q, qdot, qorigin in list(charts[origin]):
                    qrhs = prods[q][1]
                    if qdot < len(qrhs) and qrhs[qdot] == lhs:
                        item = (q, qdot + 1, qorigin)
                        if item not in chart:
                            chart.add(item)
                            agenda.append(item)
        if i < n and not charts[i + 1]:
            return False
    return any(prods[p][0] == g.start and dot == len(prods[p][1]) and origin == 0
               for p, dot, origin in charts[n])
