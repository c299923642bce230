"""Graph form of prompt programs and the mutations the optimizer searches over.

Nodes are template segments. Consecutive reorderable instruction blocks form
an antichain (no edges among them); every other neighbour pair is ordered.
The current linearization of each antichain is kept in ``order``.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Optional, Sequence, Union

from .core import (Constraint, InstructionBlock, PromptProgram, RefinedType, SchemaSlot,
                   needs_schema)
from .schema import Underivable, derive_schema, example_value, schema_derivable
from .serialize import (program_from_json, program_to_json, segment_from_json,
                        segment_to_json)


class CyclicGraph(ValueError):
    pass


class UnknownSlot(KeyError):
    pass


class SlotAlreadyFilled(ValueError):
    pass


class NoOpenSlots(ValueError):
    pass


# -- mutations ----------------------------------------------------------------

@dataclass(frozen=True)
class ParaphraseBlock:
    block_id: str
    index: int

    def to_json(self) -> dict:
        return {"kind": "ParaphraseBlock", "block_id": self.block_id, "index": self.index}


@dataclass(frozen=True)
class ReorderBlocks:
    permutation: tuple[str, ...]

    def to_json(self) -> dict:
        return {"kind": "ReorderBlocks", "permutation": list(self.permutation)}


@dataclass(frozen=True)
class ToggleFewShot:
    block_id: str
    example: int
    subset: tuple[int, ...]

    def to_json(self) -> dict:
        return {"kind": "ToggleFewShot", "block_id": self.block_id, "example": self.example,
                "subset": list(self.subset)}


@dataclass(frozen=True)
class InjectSchema:
    slot_id: str
    seed: int
    schema_text: str

    def to_json(self) -> dict:
        return {"kind": "InjectSchema", "slot_id": self.slot_id, "seed": self.seed,
                "schema_text": self.schema_text}


Mutation = Union[ParaphraseBlock, ReorderBlocks, ToggleFewShot, InjectSchema]


def mutation_from_json(d: dict) -> Mutation:
    kind = d["kind"]
    if kind == "ParaphraseBlock":
        return ParaphraseBlock(d["block_id"], d["index"])
    if kind == "ReorderBlocks":
        return ReorderBlocks(tuple(d["permutation"]))
    if kind == "ToggleFewShot":
        return ToggleFewShot(d["block_id"], d["example"], tuple(d["subset"]))
    if kind == "InjectSchema":
        return InjectSchema(d["slot_id"], d["seed"], d["schema_text"])
    raise ValueError(kind)


@dataclass(frozen=True)
class Banks:
    """Paraphrase alternatives and few-shot examples, keyed by block id."""

    paraphrase: dict = field(default_factory=dict)
    few_shot: dict = field(default_factory=dict)

    __hash__ = None

    @classmethod
    def from_json(cls, d: dict) -> "Banks":
        unknown = set(d) - {"paraphrase", "few_shot"}
        if unknown:
            raise ValueError(f"unknown bank kinds: {sorted(unknown)}")
        return cls({k: list(v) for k, v in d.get("paraphrase", {}).items()},
                   {k: list(v) for k, v in d.get("few_shot", {}).items()})


# -- the graph ----------------------------------------------------------------

@dataclass(frozen=True)
class ProgramDag:
    nodes: tuple[tuple[str, Any], ...]
    edges: tuple[tuple[str, str], ...]
    order: tuple[str, ...]
    meta: PromptProgram
    provenance: tuple[Mutation, ...] = ()

    __hash__ = None

    def node_map(self) -> dict[str, Any]:
        return dict(self.nodes)

    def segments(self) -> list:
        m = self.node_map()
        return [m[n] for n in linearize(self)]

    def with_node(self, node_id: str, segment, mutation: Mutation) -> "ProgramDag":
        nodes = tuple((n, segment if n == node_id else s) for n, s in self.nodes)
        return replace(self, nodes=nodes, provenance=self.provenance + (mutation,))

    def antichains(self) -> list[list[str]]:
        """Groups of mutually unordered nodes, in linearized order."""
        preds: dict[str, set[str]] = {n: set() for n, _ in self.nodes}
        succs: dict[str, set[str]] = {n: set() for n, _ in self.nodes}
        for a, b in self.edges:
            succs[a].add(b)
            preds[b].add(a)
        groups: list[list[str]] = []
        for n in linearize(self):
            if groups and _independent(groups[-1], n, preds, succs) and \
                    preds[n] == preds[groups[-1][0]] and succs[n] == succs[groups[-1][0]]:
                groups[-1].append(n)
            else:
                groups.append([n])
        return [g for g in groups if len(g) > 1]

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": n, "segment": segment_to_json(s)} for n, s in self.nodes],
            "edges": [list(e) for e in self.edges],
            "order": list(self.order),
            "meta": {k: v for k, v in program_to_json(self.meta).items() if k != "body"},
            "provenance": [m.to_json() for m in self.provenance],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ProgramDag":
        meta = program_from_json({**d["meta"], "body": []})
        return cls(tuple((n["id"], segment_from_json(n["segment"])) for n in d["nodes"]),
                   tuple(tuple(e) for e in d["edges"]), tuple(d["order"]), meta,
                   tuple(mutation_from_json(m) for m in d.get("provenance", [])))


def _independent(group: list[str], n: str, preds, succs) -> bool:
    return all(n not in succs[g] and g not in succs[n] for g in group)


def to_dag(p: PromptProgram) -> ProgramDag:
    ids = [f"n{i}" for i in range(len(p.body))]
    units: list[list[str]] = []
    prev_reorderable = False
    for nid, seg in zip(ids, p.body):
        reorderable = isinstance(seg, InstructionBlock) and seg.reorderable
        if reorderable and prev_reorderable:
            units[-1].append(nid)
        else:
            units.append([nid])
        prev_reorderable = reorderable
    edges = [(a, b) for u, v in zip(units, units[1:]) for a in u for b in v]
    return ProgramDag(tuple(zip(ids, p.body)), tuple(edges), tuple(ids), p.replace(body=()))


def linearize(d: ProgramDag) -> list[str]:
    """Topological order of the nodes, preferring the stored ``order``."""
    names = [n for n, _ in d.nodes]
    rank = {n: i for i, n in enumerate(d.order)}
    indeg = {n: 0 for n in names}
    succs: dict[str, list[str]] = {n: [] for n in names}
    for a, b in d.edges:
        succs[a].append(b)
        indeg[b] += 1
    ready = sorted((n for n in names if indeg[n] == 0), key=lambda n: rank.get(n, len(rank)))
    out = []
    while ready:
        n = ready.pop(0)
        out.append(n)
        for m in succs[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                ready.append(m)
        ready.sort(key=lambda x: rank.get(x, len(rank)))
    if len(out) != len(names):
        raise CyclicGraph("program graph has a cycle")
    return out


def from_dag(d: ProgramDag) -> PromptProgram:
    return d.meta.replace(body=tuple(d.segments()))


# -- schema slots and injection ----------------------------------------------

def schema_slots(e: ProgramDag) -> list[str]:
    m = e.node_map()
    return [m[n].slot_id for n in linearize(e)
            if isinstance(m[n], SchemaSlot) and m[n].filled is None]


@dataclass(frozen=True)
class SchemaText:
    text: str
    derived_from: RefinedType
    seed: int

    __hash__ = None


_DESCRIPTIONS = (None, "Schema of the required output.", "The answer must match this schema.")


def _present(schema: Any, rng: random.Random) -> Any:
    # vary key order only; values are preserved, so acceptance is unchanged
    if isinstance(schema, dict):
        keys = list(schema)
        rng.shuffle(keys)
        out = {}
        for k in keys:
            v = schema[k]
            if k == "properties":
                names = list(v)
                rng.shuffle(names)
                v = {n: _present(v[n], rng) for n in names}
            elif k == "required":
                v = list(v)
                rng.shuffle(v)
            else:
                v = _present(v, rng)
            out[k] = v
        return out
    if isinstance(schema, list):
        return [_present(x, rng) for x in schema]
    return schema


def sample_schema(t: RefinedType, seed: int) -> SchemaText:
    """Schema text for the output type; the seed varies presentation only."""
    if not schema_derivable(t.base):
        raise Underivable(f"{type(t.base).__name__} has no structural schema")
    rng = random.Random(seed)
    schema = _present(derive_schema(t.base), rng)
    description = _DESCRIPTIONS[rng.randrange(len(_DESCRIPTIONS))]
    if description:
        schema = {"description": description, **schema}
    if rng.random() < 0.5:
        schema["examples"] = [example_value(t.base, rng.randrange(8))]
    indent = (None, 2, 4)[rng.randrange(3)]
    text = json.dumps(schema, indent=indent, ensure_ascii=False)
    return SchemaText(text, t, seed)


def inject_schema(e: ProgramDag, k: str, sch: Union[SchemaText, str],
                  seed: Optional[int] = None) -> ProgramDag:
    text = sch.text if isinstance(sch, SchemaText) else sch
    seed = sch.seed if isinstance(sch, SchemaText) else (seed or 0)
    for nid, seg in e.nodes:
        if isinstance(seg, SchemaSlot) and seg.slot_id == k:
            if seg.filled is not None:
                raise SlotAlreadyFilled(k)
            return e.with_node(nid, SchemaSlot(k, text), InjectSchema(k, seed, text))
    raise UnknownSlot(k)


def typed_mutations(e: ProgramDag, seeds: Sequence[int] = (0,),
                    c: Optional[Constraint] = None) -> list[ProgramDag]:
    """One candidate per (open slot, seed): the schema-injection subset of M(e)."""
    c = c or needs_schema()
    if not c.is_needs_schema:
        raise ValueError("typed mutations are defined for NeedsSchema")
    slots = schema_slots(e)
    if not slots:
        raise NoOpenSlots("no open schema slot to inject into")
    schemas = [sample_schema(e.meta.output, s) for s in seeds]
    return [inject_schema(e, k, sch) for k in slots for sch in schemas]


# -- the full mutation set ----------------------------------------------------

def _paragraphs(text: str) -> list[str]:
    return [p for p in text.split("\n\n") if p]


def mutations(e: ProgramDag, banks: Optional[Banks] = None,
              seeds: Sequence[int] = (0,)) -> list[ProgramDag]:
    """All single-step mutations of ``e`` in deterministic order.

    Kind order: paraphrase, reorder, few-shot toggle, schema injection; within a
    kind, template order of the block/slot, then bank index or seed.
    """
    banks = banks or Banks()
    m = e.node_map()
    ordered = linearize(e)
    blocks = [(n, m[n]) for n in ordered if isinstance(m[n], InstructionBlock)]
    out: list[ProgramDag] = []

    for nid, blk in blocks:
        for i, alt in enumerate(banks.paraphrase.get(blk.block_id, [])):
            out.append(e.with_node(nid, replace(blk, text=alt),
                                   ParaphraseBlock(blk.block_id, i)))

    for group in e.antichains():
        current = tuple(m[n].block_id for n in group)
        for perm in itertools.permutations(group):
            ids = tuple(m[n].block_id for n in perm)
            if ids == current:
                continue
            order = _reordered(e.order, group, perm)
            out.append(replace(e, order=order, provenance=e.provenance + (ReorderBlocks(ids),)))

    for nid, blk in blocks:
        bank = banks.few_shot.get(blk.block_id, [])
        if not bank:
            continue
        present = set(_paragraphs(blk.text))
        chosen = {i for i, ex in enumerate(bank) if ex in present}
        for i in range(len(bank)):
            subset = tuple(sorted(chosen ^ {i}))
            text = "\n\n".join(bank[j] for j in subset)
            out.append(e.with_node(nid, replace(blk, text=text),
                                   ToggleFewShot(blk.block_id, i, subset)))

    if schema_derivable(e.meta.output.base):
        slots = schema_slots(e)
        schemas = [sample_schema(e.meta.output, s) for s in seeds] if slots else []
        out.extend(inject_schema(e, k, sch) for k in slots for sch in schemas)
    return out


def _reordered(order: tuple[str, ...], group: list[str], perm: Iterable[str]) -> tuple[str, ...]:
    members = set(group)
    it = iter(perm)
    return tuple(next(it) if n in members else n for n in order)


def apply_mutation(e: ProgramDag, mut: Mutation, banks: Optional[Banks] = None) -> ProgramDag:
    """Replay one recorded mutation (used to rebuild a reported best program)."""
    banks = banks or Banks()
    if isinstance(mut, InjectSchema):
        return inject_schema(e, mut.slot_id, mut.schema_text, mut.seed)
    if isinstance(mut, ReorderBlocks):
        by_block = {getattr(s, "block_id", None): n for n, s in e.nodes}
        perm = [by_block[b] for b in mut.permutation]
        group = sorted(perm, key=e.order.index)
        return replace(e, order=_reordered(e.order, group, perm),
                       provenance=e.provenance + (mut,))
    for nid, seg in e.nodes:
        if isinstance(seg, InstructionBlock) and seg.block_id == mut.block_id:
            if isinstance(mut, ParaphraseBlock):
                text = banks.paraphrase[mut.block_id][mut.index]
            else:
                text = "\n\n".join(banks.few_shot[mut.block_id][j] for j in mut.subset)
            return e.with_node(nid, replace(seg, text=text), mut)
    raise UnknownSlot(getattr(mut, "block_id", None))
