"""Optimizer fixtures and an exhaustive reference evaluator."""

from __future__ import annotations

import math
import random

from lambdaprompt.dag import Banks, InjectSchema, from_dag, mutations, to_dag
from lambdaprompt.dsl import parse_program
from lambdaprompt.runtime import (Dataset, Example, MockBackend, UnfilledRequiredSlot,
                                  derive_seed, execute)

LABELS = ("Positive", "Negative", "Neutral")


def schema_program(slots: int, needs: bool = True) -> str:
    header = ["program sentiment",
              "input text: Text where sanitize",
              'output label: Enum("Positive", "Negative", "Neutral") where label_range',
              "constraint length(words, output) <= 3"]
    if needs:
        header.append("constraint needs_schema")
    body = "{{#block intro}}Classify the sentiment.{{/block}}\n"
    body += "".join("{{schema:k%d}}\n" % i for i in range(1, slots + 1))
    body += "Text: {{text}}\n"
    return "\n".join(header) + "\n---\n" + body


def backend(poison_examples: bool = True) -> MockBackend:
    entries = []
    if poison_examples:
        entries.append({"pattern": '"examples"', "responses": ["I think it is positive"]})
    entries.append({"pattern": "The answer must match", "responses": ["Positive"]})
    return MockBackend.from_json({"mode": "table", "entries": entries, "default": ["Negative"]})


def dataset(n: int, seed: int) -> Dataset:
    rng = random.Random(seed)
    words = ["good", "bad", "movie", "plot", "fine", "awful"]
    return Dataset(tuple(Example({"text": " ".join(rng.choices(words, k=3))},
                                 rng.choice(LABELS[:2])) for _ in range(n)))


def instance(slots: int, full_size: int, n_seeds: int = 2, examples: int = 8,
             poison: bool = True, seed: int = 0):
    """(program, dataset, backend, banks, seeds) with exactly ``full_size`` mutations."""
    p = parse_program(schema_program(slots))
    para = full_size - slots * n_seeds
    assert para >= 0
    banks = Banks({"intro": [f"Label the sentiment, variant {i}." for i in range(para)]})
    seeds = tuple(range(n_seeds))
    assert len(mutations(to_dag(p), banks, seeds)) == full_size
    return p, dataset(examples, seed), backend(poison), banks, seeds


def exhaustive_best(p, d, be, banks, seeds, *, lam=0.01, opt_seed=0, max_retries=3):
    """Evaluate every schema-injection candidate of the full mutation set.

    Written against the runtime's public execute only: cost arithmetic, the
    sat test and the tie-break are re-derived here.
    """
    full = mutations(to_dag(p), banks, seeds)
    cands = [c for c in full if isinstance(c.provenance[-1], InjectSchema)]
    labels = set(p.output.base.labels)
    best = None
    for idx, cand in enumerate(cands):
        prog = from_dag(cand)
        key = [m.to_json() for m in cand.provenance]
        totals, feasible = [], True
        for i, x in enumerate(d.examples):
            try:
                tr = execute(prog, x.input, be, max_retries=max_retries,
                             seed=derive_seed(opt_seed, i, key), raise_on_failure=False)
            except UnfilledRequiredSlot:
                totals.append(math.inf)
                feasible = False
                continue
            compute = math.ceil(len(tr.rendered_prompt) / 4)
            err = 0.0 if tr.success and tr.final == x.expected else 1.0
            totals.append(err + lam * compute)
            if not (tr.success and tr.final in labels and len(tr.final.split()) <= 3):
                feasible = False
        mean = sum(totals) / len(totals)
        if feasible and (best is None or mean < best[1]):
            best = (key, mean, idx)
    return best
