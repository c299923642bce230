import json
import random

import jsonschema
import pytest

import progen
from lambdaprompt.core import Enum, Integer, ListOf, Record, Text
from lambdaprompt.schema import (Underivable, conforms, derive_schema, example_value,
                                 normalize_schema, schema_accepts, schema_derivable,
                                 schema_matches_type)


def _integer(checker, v):
    return isinstance(v, int) and not isinstance(v, bool)


Validator = jsonschema.validators.extend(
    jsonschema.Draft202012Validator,
    type_checker=jsonschema.Draft202012Validator.TYPE_CHECKER.redefine("integer", _integer))


def test_derivability():
    assert schema_derivable(Record((("a", Text()),)))
    assert schema_derivable(Enum(("x",)))
    assert schema_derivable(ListOf(Integer()))
    assert not schema_derivable(Text())
    with pytest.raises(Underivable):
        derive_schema(Integer())


def test_derived_schema_is_valid_json_schema_and_agrees_with_conformance():
    for s in range(400):
        rng = random.Random(s)
        b = progen.base_type(rng, 2, derivable=True)
        schema = derive_schema(b)
        Validator.check_schema(schema)
        v = Validator(schema)
        for k in range(5):
            value = progen.value_of(rng, b) if k % 2 else progen.any_value(rng, 3)
            assert v.is_valid(value) == conforms(value, b) == schema_accepts(value, schema)


def test_example_value_conforms():
    for s in range(300):
        b = progen.base_type(random.Random(s), 3)
        for pick in range(4):
            assert conforms(example_value(b, pick), b)


def test_schema_matches_type_ignores_presentation():
    b = Record((("label", Enum(("Positive", "Negative", "Neutral"))), ("n", Integer())))
    schema = derive_schema(b)
    shuffled = {"description": "x", **dict(reversed(list(schema.items())))}
    assert schema_matches_type(json.dumps(shuffled, indent=4), b)
    assert normalize_schema(shuffled) == normalize_schema(schema)
    other = Record((("label", Enum(("Positive", "Negative"))), ("n", Integer())))
    assert not schema_matches_type(json.dumps(schema), other)
    assert not schema_matches_type("not json", b)
