"""Seeded random generators for types, values and well-typed programs.

Everything is driven by an explicit ``random.Random`` so failures reproduce
from the seed alone.
"""

from __future__ import annotations

import random
import string

from lambdaprompt.core import (Boolean, Constraint, Enum, Hole, InstructionBlock, Integer,
                               JsonValue, ListOf, Literal, Probabilistic, PromptProgram, Real,
                               Record, RefinedType, SchemaSlot, Syntactic, Text, needs_schema)

WORDS = ("alpha", "beta", "gamma", "delta", "note", "answer", "the", "a", "review", "movie",
         "price", "hello", "world", "résumé", "data", "value", "shall", "gonna", "lol", "per")
LITERAL_CHARS = string.ascii_letters + string.digits + " .,:;!?-'\"()[]#*\n\té"


def ident(rng: random.Random, prefix: str = "") -> str:
    head = rng.choice(string.ascii_lowercase)
    tail = "".join(rng.choice(string.ascii_lowercase + string.digits + "_")
                   for _ in range(rng.randrange(0, 6)))
    return prefix + head + tail


def labels(rng: random.Random, k: int | None = None) -> tuple[str, ...]:
    k = k or rng.randint(1, 4)
    pool = ["Positive", "Negative", "Neutral", "Yes", "No", "Maybe", "red", "green", "blue",
            "high low", "n/a"]
    return tuple(rng.sample(pool, k))


def base_type(rng: random.Random, depth: int = 2, derivable: bool = False):
    """A random base type; ``derivable`` restricts the top level to Record/Enum/List."""
    if derivable:
        kind = rng.choice(["record", "enum", "list"])
    elif depth <= 0:
        kind = rng.choice(["text", "int", "bool", "real", "json", "enum"])
    else:
        kind = rng.choice(["text", "int", "bool", "real", "json", "enum", "list", "record"])
    match kind:
        case "text":
            return Text()
        case "int":
            return Integer()
        case "bool":
            return Boolean()
        case "real":
            return Real()
        case "json":
            return JsonValue()
        case "enum":
            return Enum(labels(rng))
        case "list":
            return ListOf(base_type(rng, max(depth - 1, 0)))
        case _:
            names = []
            while len(names) < rng.randint(1, 3):
                n = ident(rng)
                if n not in names:
                    names.append(n)
            return Record(tuple((n, base_type(rng, max(depth - 1, 0))) for n in names))


def value_of(rng: random.Random, b, depth: int = 3):
    """A value conforming to base type ``b``."""
    match b:
        case Text():
            return " ".join(rng.choice(WORDS) for _ in range(rng.randrange(0, 5)))
        case Integer():
            return rng.randint(-50, 50)
        case Boolean():
            return rng.random() < 0.5
        case Real():
            return rng.choice([rng.uniform(-10, 10), float(rng.randint(-3, 3))])
        case JsonValue():
            return any_value(rng, depth)
        case Enum(ls):
            return rng.choice(ls)
        case ListOf(el):
            return [value_of(rng, el, depth - 1) for _ in range(rng.randrange(0, 4))]
        case Record(fields):
            return {n: value_of(rng, t, depth - 1) for n, t in fields}
    raise TypeError(b)


def any_value(rng: random.Random, depth: int = 3):
    """An arbitrary JSON value of nesting depth at most ``depth``."""
    leaves = [lambda: None, lambda: rng.random() < 0.5, lambda: rng.randint(-9, 9),
              lambda: round(rng.uniform(-5, 5), 3), lambda: rng.choice(WORDS),
              lambda: rng.choice(["Positive", "Negative", "Yes"])]
    if depth <= 0 or rng.random() < 0.4:
        return rng.choice(leaves)()
    if rng.random() < 0.5:
        return [any_value(rng, depth - 1) for _ in range(rng.randrange(0, 4))]
    keys = [ident(rng) for _ in range(rng.randrange(0, 4))]
    return {k: any_value(rng, depth - 1) for k in keys}


def literal_text(rng: random.Random) -> str:
    if rng.random() < 0.5:
        return " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 6))) + rng.choice(
            ["", "\n", ": ", ".\n\n"])
    return "".join(rng.choice(LITERAL_CHARS) for _ in range(rng.randint(1, 30)))


def _threshold(rng: random.Random) -> float:
    return round(rng.random(), 2)


def _delta(rng: random.Random) -> float:
    return rng.choice([1.0, 0.9, 0.8, 0.5, 0.25])


def input_refinements(rng: random.Random, name: str, base) -> tuple:
    if not isinstance(base, Text):
        return ()
    refs = []
    if rng.random() < 0.5:
        rules = rng.choice([["control", "whitespace", "injection"], ["control"],
                            ["whitespace", "injection"]])
        refs.append(Syntactic(Constraint("C11", {"rules": rules}, name)))
    if rng.random() < 0.3:
        refs.append(Syntactic(Constraint("C12", {"lexicon": "lex"}, name)))
    return tuple(refs)


def output_refinements(rng: random.Random, name: str, base) -> tuple:
    refs = []
    if rng.random() < 0.4 and not isinstance(base, (Integer, Real, Boolean)):
        refs.append(Syntactic(Constraint("C6", {"unit": rng.choice(["words", "tokens"]),
                                                "op": rng.choice(["<", "<=", ">=", "=="]),
                                                "bound": rng.randint(1, 60)}, name)))
    match base:
        case Text():
            if rng.random() < 0.3:
                refs.append(Syntactic(Constraint("C7", {"patterns": [
                    {"kind": "builtin", "pattern": rng.choice(["email", "url"])},
                    {"kind": "literal", "pattern": rng.choice(WORDS)}]}, name)))
            if rng.random() < 0.3:
                refs.append(Syntactic(Constraint("C8", {"mentions": [rng.choice(WORDS)]}, name)))
            if rng.random() < 0.3:
                refs.append(Syntactic(Constraint("C1", {"grammar": "g"}, name)))
            if rng.random() < 0.3:
                refs.append(Probabilistic("formality:lex", rng.choice([">=", "<="]),
                                          _threshold(rng), _delta(rng)))
            if rng.random() < 0.3:
                refs.append(Probabilistic("domain:onto", ">=", _threshold(rng), _delta(rng)))
        case Enum(ls):
            if rng.random() < 0.6:
                refs.append(Syntactic(Constraint("C5", {"labels": None}, name)))
            if rng.random() < 0.3:
                refs.append(Syntactic(Constraint(
                    "C3", {"labels": list(rng.sample(ls, rng.randint(1, len(ls))))}, name)))
        case Record() | ListOf() | JsonValue():
            if rng.random() < 0.4:
                refs.append(Syntactic(Constraint("C4", {"derived": True}, name)))
            if rng.random() < 0.2:
                refs.append(Syntactic(Constraint("C7", {"patterns": [
                    {"kind": "regex", "pattern": "[0-9]{3}-[0-9]{4}"}]}, name)))
    return tuple(refs)


def program(rng: random.Random, *, needs: bool = False, derivable: bool | None = None,
            min_slots: int = 0) -> PromptProgram:
    """A well-typed program.

    ``needs`` adds a NeedsSchema constraint (forcing a derivable output and at
    least one open slot).
    """
    if needs:
        derivable = True
        min_slots = max(min_slots, 1)
    inputs = []
    used: set[str] = set()
    for _ in range(rng.randint(1, 3)):
        n = ident(rng)
        if n in used or n in ("where", "on"):
            continue
        used.add(n)
        b = Text() if rng.random() < 0.6 else base_type(rng, 1)
        inputs.append((n, RefinedType(b, input_refinements(rng, n, b))))
    out_name = ident(rng, "o")
    while out_name in used:
        out_name += "x"
    out_base = base_type(rng, 2, derivable=bool(derivable))
    output = RefinedType(out_base, output_refinements(rng, out_name, out_base))

    constraints = []
    if needs:
        constraints.append(needs_schema())
    if rng.random() < 0.3 and not isinstance(out_base, (Integer, Real, Boolean)):
        constraints.append(Constraint("C6", {"unit": "words", "op": "<=",
                                             "bound": rng.randint(1, 99)}, out_name))
    if rng.random() < 0.2:
        constraints.append(Constraint("C13", {"oracle": "dataset", "delta": _delta(rng)}))
    if rng.random() < 0.2 and isinstance(out_base, Text):
        constraints.append(Constraint("C10", {"scorer": "formality", "lexicon": "lex",
                                              "comparator": ">=", "threshold": _threshold(rng),
                                              "delta": _delta(rng)}, out_name))
    rng.shuffle(constraints)

    return PromptProgram(ident(rng, "p"), tuple(inputs), output,
                         tuple(body(rng, [n for n, _ in inputs], min_slots)),
                         tuple(constraints), out_name)


def body(rng: random.Random, holes: list[str], min_slots: int = 0) -> list:
    segs: list = []
    ids: set[str] = set()

    def fresh(prefix):
        while True:
            i = ident(rng, prefix)
            if i not in ids:
                ids.add(i)
                return i

    kinds = ["lit", "lit", "hole", "slot", "block", "rblock"]
    for _ in range(rng.randint(1, 8)):
        kind = rng.choice(kinds)
        if kind == "lit":
            segs.append(Literal(literal_text(rng)))
        elif kind == "hole" and holes:
            segs.append(Hole(rng.choice(holes)))
        elif kind == "slot":
            segs.append(SchemaSlot(fresh("k")))
        elif kind in ("block", "rblock"):
            text = " ".join(rng.choice(WORDS) for _ in range(rng.randint(0, 6)))
            segs.append(InstructionBlock(fresh("b"), text, kind == "rblock"))
    while sum(isinstance(s, SchemaSlot) and s.filled is None for s in segs) < min_slots:
        segs.insert(rng.randint(0, len(segs)), SchemaSlot(fresh("k")))
    return merge_literals(segs)


def merge_literals(segs: list) -> list:
    out: list = []
    for s in segs:
        if isinstance(s, Literal) and out and isinstance(out[-1], Literal):
            out[-1] = Literal(out[-1].text + s.text)
        else:
            out.append(s)
    return out
