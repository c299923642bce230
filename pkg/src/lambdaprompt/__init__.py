"""Typed prompt programs with refinement types, constraint checking and
constraint-guided mutation search."""

from .core import (Boolean, Constraint, EffectfulFn, Enum, Hole, InstructionBlock, Integer,
                   JsonValue, ListOf, Literal, Probabilistic, PromptProgram, Real, Record,
                   RefinedType, SchemaSlot, Syntactic, Text, all_constraints, erase,
                   needs_schema, well_formed)
from .dag import (Banks, ProgramDag, apply_mutation, from_dag, inject_schema, linearize,
                  mutations, sample_schema, schema_slots, to_dag, typed_mutations)
from .dsl import ParseError, load_program, parse_constraint, parse_program, render_program
from .engine import (Context, Lexicon, Ontology, SatResult, Violation, check, domain_membership,
                     encode, formality_score, mental_model_agreement, sanitize)
from .grammar import Grammar, earley_recognize, parse_grammar
from .optimizer import (CostReport, Infeasible, OptimizationResult, OptimizerConfig, cost,
                        expected_cost, optimize, sat_empirical)
from .runtime import (Dataset, Example, ExecutionTrace, MockBackend, ValidationExhausted,
                      constrained_decode, execute, render, run_dataset)
from .typecheck import TypeCheckFailed, TypedProgram, typecheck, validate_output

__version__ = "0.1.0"

__all__ = [
    "all_constraints", "apply_mutation", "Banks", "Boolean", "check", "constrained_decode",
    "Constraint", "Context", "cost", "CostReport", "Dataset", "domain_membership",
    "earley_recognize", "EffectfulFn", "encode", "Enum", "erase", "Example", "execute",
    "ExecutionTrace", "expected_cost", "formality_score", "from_dag", "Grammar", "Hole",
    "Infeasible", "inject_schema", "InstructionBlock", "Integer", "JsonValue", "Lexicon",
    "linearize", "ListOf", "Literal", "load_program", "mental_model_agreement", "MockBackend",
    "mutations", "needs_schema", "Ontology", "OptimizationResult", "optimize", "OptimizerConfig",
    "parse_constraint", "parse_grammar", "parse_program", "ParseError", "Probabilistic",
    "ProgramDag", "PromptProgram", "Real", "Record", "RefinedType", "render", "render_program",
    "run_dataset", "sample_schema", "sanitize", "sat_empirical", "SatResult", "schema_slots",
    "SchemaSlot", "Syntactic", "Text", "to_dag", "typecheck", "TypeCheckFailed", "typed_mutations",
    "TypedProgram", "validate_output", "ValidationExhausted", "Violation", "well_formed",
]
