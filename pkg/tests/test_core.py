import random

import pytest

import progen
from lambdaprompt.core import (Constraint, Enum, Integer, ListOf, Probabilistic, PromptProgram,
                               Record, RefinedType, Syntactic, Text, all_constraints, erase,
                               needs_schema, output_constraints, program_defects, strip,
                               well_formed)
from lambdaprompt.serialize import (base_from_json, base_to_json, program_from_json,
                                    program_to_json)


def test_erase_drops_refinements():
    t = RefinedType(Text(), (Probabilistic("formality:lex", ">=", 0.7),))
    assert erase(t) == Text()
    e = Enum(("Positive", "Negative", "Neutral"))
    assert erase(RefinedType(e)) == e


def test_erase_inside_record_is_fieldwise():
    for s in range(200):
        rng = random.Random(s)
        fields = tuple((f"f{i}", progen.base_type(rng, 2)) for i in range(rng.randint(1, 4)))
        refined = [RefinedType(b, ()) for _, b in fields]
        rec = Record(tuple((n, erase(r)) for (n, _), r in zip(fields, refined)))
        assert erase(RefinedType(rec)) == Record(fields)


def test_duplicate_enum_label_defect():
    defects = well_formed(RefinedType(Enum(("Positive", "Positive"))))
    assert any("duplicate enum label" in d for d in defects)


def test_label_range_on_integer_is_inapplicable():
    t = RefinedType(Integer(), (Syntactic(Constraint("C5", {"labels": ["a"]}, "x")),))
    assert any("refinement inapplicable to base" in d for d in well_formed(t))


@pytest.mark.parametrize("t,fragment", [
    (RefinedType(Enum(())), "empty enum"),
    (RefinedType(Record((("a", Text()), ("a", Integer())))), "duplicate record field"),
    (RefinedType(Text(), (Probabilistic("formality:l", ">=", 1.5),)), "threshold"),
    (RefinedType(Text(), (Probabilistic("formality:l", ">=", 0.5, 0.0),)), "delta"),
    (RefinedType(ListOf(Enum(("a", "a")))), "$[]"),
])
def test_defects_name_invariant_and_path(t, fragment):
    assert any(fragment in d for d in well_formed(t))


def test_generated_types_are_well_formed():
    for s in range(1000):
        rng = random.Random(s)
        b = progen.base_type(rng, 3)
        t = RefinedType(b, progen.output_refinements(rng, "out", b))
        assert well_formed(t) == []
        assert well_formed(strip(t)) == []


def test_generated_programs_have_no_defects():
    for s in range(300):
        assert program_defects(progen.program(random.Random(s), needs=s % 2 == 0)) == []


def test_constraint_params_are_canonical():
    a = Constraint("C8", {"mentions": ("manager", "office")}, "o")
    b = Constraint("C8", {"mentions": ["manager", "office"]}, "o")
    assert a == b
    with pytest.raises(ValueError):
        Constraint("C14", {})


def test_needs_schema_shape():
    c = needs_schema()
    assert c.is_needs_schema and c.code == "C4" and c.target is None
    assert not Constraint("C4", {"derived": True}, "o").is_needs_schema


def test_all_constraints_order_and_output_view():
    c6 = Constraint("C6", {"unit": "words", "op": "<", "bound": 40}, "label")
    p = PromptProgram(
        "p", (("t", RefinedType(Text(), (Syntactic(Constraint("C11", {"rules": ["control"]},
                                                                  "t")),))),),
        RefinedType(Enum(("a", "b")), (Syntactic(Constraint("C5", {"labels": None}, "label")),)),
        (), (needs_schema(), c6), "label")
    assert [c.code for c in all_constraints(p)] == ["C11", "C5", "C4", "C6"]
    assert [c.code for c in output_constraints(p)] == ["C5", "C6"]


def test_program_json_round_trip():
    for s in range(300):
        p = progen.program(random.Random(s))
        assert program_from_json(program_to_json(p)) == p
    for s in range(300):
        b = progen.base_type(random.Random(s), 3)
        assert base_from_json(base_to_json(b)) == b


def test_structural_equality_is_deterministic():
    a = progen.program(random.Random(7))
    b = progen.program(random.Random(7))
    assert a == b and a is not b
