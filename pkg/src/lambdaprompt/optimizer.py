"""Constraint-aware search over single-step program mutations.

Each round generates candidates from the incumbent, drops those that fail the
type check or whose executions violate the constraints, and keeps the
cheapest survivor (the incumbent competes and wins ties). With pruning on and
a NeedsSchema constraint present, only schema-injection candidates are
generated.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from .core import PromptProgram, all_constraints
from .dag import Banks, NoOpenSlots, ProgramDag, from_dag, mutations, to_dag, typed_mutations
from .engine import Context, check, mental_model_agreement, token_units
from .runtime import (Backend, BackendFailure, Dataset, EmptyDataset, Example, InputTypeError,
                      MissingInput, UnfilledRequiredSlot, derive_seed, execute, outputs_equal)
from .schema import conformance_errors
from .serialize import canonical_value, program_to_json
from .typecheck import TypeCheckFailed, typecheck

FAILURES = (BackendFailure, MissingInput, InputTypeError, UnfilledRequiredSlot)


class Infeasible(Exception):
    def __init__(self, message: str, result: "OptimizationResult"):
        self.result = result
        super().__init__(message)


def exact_match_error(actual: Any, expected: Any) -> float:
    return 0.0 if outputs_equal(actual, expected) else 1.0


@dataclass(frozen=True)
class CostReport:
    prediction_error: float
    compute_cost: float
    lam: float

    @property
    def total(self) -> float:
        return self.prediction_error + self.lam * self.compute_cost

    def to_json(self) -> dict:
        return {"prediction_error": _finite(self.prediction_error),
                "compute_cost": self.compute_cost, "lambda": self.lam,
                "total": _finite(self.total)}


@dataclass(frozen=True)
class Execution:
    """One run of a candidate on one example, as seen by the sat check."""

    input: dict
    expected: Any
    raw: Optional[str]
    value: Any
    ok: bool
    cost: CostReport

    __hash__ = None


@dataclass
class OptimizerConfig:
    lam: float = 0.01
    seeds: Sequence[int] = (0,)
    budget_rounds: int = 1
    use_pruning: bool = True
    seed: int = 0
    max_retries: int = 3
    jobs: int = 1
    metric: Callable[[Any, Any], float] = exact_match_error


def _finite(x: float) -> Optional[float]:
    return x if math.isfinite(x) else None


def provenance_key(d: ProgramDag) -> list:
    return [m.to_json() for m in d.provenance]


def run_example(program: PromptProgram, x: Example, backend: Backend, *, lam: float, seed: int,
                ctx: Optional[Context] = None, max_retries: int = 3,
                metric: Callable[[Any, Any], float] = exact_match_error) -> Execution:
    try:
        trace = execute(program, x.input, backend, max_retries=max_retries, seed=seed, ctx=ctx,
                        raise_on_failure=False)
    except FAILURES:
        return Execution(x.input, x.expected, None, None, False,
                         CostReport(math.inf, math.inf, lam))
    compute = token_units(trace.rendered_prompt)
    error = metric(trace.final, x.expected) if trace.success else 1.0
    return Execution(x.input, x.expected, trace.attempts[-1].raw, trace.final, trace.success,
                     CostReport(error, compute, lam))


def cost(candidate: PromptProgram, x: Example, backend: Backend, lam: float = 0.01, *,
         seed: int = 0, ctx: Optional[Context] = None, max_retries: int = 3,
         metric: Callable[[Any, Any], float] = exact_match_error) -> CostReport:
    """Prediction error plus ``lam`` times the prompt's token-unit count."""
    return run_example(candidate, x, backend, lam=lam, seed=seed, ctx=ctx,
                       max_retries=max_retries, metric=metric).cost


def mean_total(reports: Sequence[CostReport]) -> float:
    if not reports:
        raise EmptyDataset("no cost reports to average")
    return sum(r.total for r in reports) / len(reports)


def expected_cost(candidate: PromptProgram, d: Dataset, backend: Backend, lam: float = 0.01, *,
                  seed: int = 0, key: Any = None, ctx: Optional[Context] = None,
                  max_retries: int = 3) -> float:
    if not d.examples:
        raise EmptyDataset("dataset has no examples")
    reports = [cost(candidate, x, backend, lam, seed=derive_seed(seed, i, key), ctx=ctx,
                    max_retries=max_retries)
               for i, x in enumerate(d.examples)]
    return mean_total(reports)


# -- empirical satisfiability -------------------------------------------------

@dataclass(frozen=True)
class SatReport:
    satisfied: bool
    rates: tuple[dict, ...]

    __hash__ = None

    def to_json(self) -> dict:
        return {"satisfied": self.satisfied, "rates": list(self.rates)}


def sat_empirical(program: PromptProgram, executions: Sequence[Execution],
                  ctx: Optional[Context] = None) -> SatReport:
    """Syntactic constraints must hold on every execution; probabilistic ones
    need a pass rate of at least their delta."""
    ctx = ctx or Context()
    n = len(executions)
    rates = []
    ok_all = True
    out = program.output
    structural = sum(1 for e in executions if e.ok and not conformance_errors(e.value, out.base))
    rates.append({"code": "type", "target": program.output_name, "rate": structural / n if n
                  else 1.0, "required": 1.0})
    ok_all &= structural == n
    for c in all_constraints(program):
        if c.code in ("C11", "C12") or c.is_needs_schema:
            continue  # enforced at render time / discharged statically
        if c.code == "C13":
            triples = []
            for e in executions:
                expected = e.expected if c.params["oracle"] == "dataset" else \
                    ctx.oracle(c.params["oracle"]).get(canonical_value(e.input))
                triples.append((e.input, e.value if e.ok else None, expected))
            rate, ok = mental_model_agreement(triples, c.params["delta"]) if triples else (1.0, True)
            rates.append({"code": "C13", "target": None, "rate": rate,
                          "required": c.params["delta"]})
            ok_all &= ok
            continue
        if c.target != program.output_name:
            continue
        passed = sum(1 for e in executions
                     if e.ok and check(c, e.value, ctx, base=out.base, raw=e.raw).satisfied)
        rate = passed / n if n else 1.0
        required = c.params.get("delta", 1.0) if c.code in ("C9", "C10") else 1.0
        rates.append({"code": c.code, "target": c.target, "rate": rate, "required": required})
        ok_all &= rate >= required
    return SatReport(ok_all, tuple(rates))


# -- the search ---------------------------------------------------------------

@dataclass
class Evaluation:
    index: int
    dag: ProgramDag
    status: str  # feasible | pruned_by_type | pruned_by_sat
    mean_cost: float = math.inf
    reason: str = ""
    sat: Optional[SatReport] = None

    def log_entry(self, round_no: int) -> dict:
        entry = {"round": round_no, "index": self.index, "provenance": provenance_key(self.dag),
                 "status": self.status, "mean_cost": _finite(self.mean_cost)}
        if self.reason:
            entry["reason"] = self.reason
        return entry


@dataclass
class OptimizationResult:
    best: ProgramDag
    best_cost: float
    feasible: bool
    evaluated: int = 0
    pruned_by_type: int = 0
    pruned_by_sat: int = 0
    candidates: int = 0
    backend_runs: int = 0
    per_candidate_log: list = field(default_factory=list)
    rounds: list = field(default_factory=list)

    @property
    def best_program(self) -> PromptProgram:
        return from_dag(self.best)

    @property
    def provenance(self) -> list:
        return provenance_key(self.best)

    def to_json(self) -> dict:
        return {
            "best": {"provenance": self.provenance,
                     "program": program_to_json(self.best_program)},
            "best_cost": _finite(self.best_cost),
            "feasible": self.feasible,
            "evaluated": self.evaluated,
            "pruned_by_type": self.pruned_by_type,
            "pruned_by_sat": self.pruned_by_sat,
            "candidates": self.candidates,
            "backend_runs": self.backend_runs,
            "rounds": self.rounds,
            "per_candidate_log": self.per_candidate_log,
        }


class _Search:
    def __init__(self, d: Dataset, backend: Backend, config: OptimizerConfig,
                 ctx: Optional[Context]):
        self.d = d
        self.backend = backend
        self.config = config
        self.ctx = ctx

    def executions(self, dag: ProgramDag) -> list[Execution]:
        program = from_dag(dag)
        key = provenance_key(dag)
        cfg = self.config
        return [run_example(program, x, self.backend, lam=cfg.lam,
                            seed=derive_seed(cfg.seed, i, key), ctx=self.ctx,
                            max_retries=cfg.max_retries, metric=cfg.metric)
                for i, x in enumerate(self.d.examples)]

    def evaluate(self, index: int, dag: ProgramDag) -> Evaluation:
        program = from_dag(dag)
        try:
            typecheck(None, program, self.ctx)
        except TypeCheckFailed as e:
            return Evaluation(index, dag, "pruned_by_type", reason=str(e))
        runs = self.executions(dag)
        mean = mean_total([r.cost for r in runs])
        sat = sat_empirical(program, runs, self.ctx)
        if not sat.satisfied:
            failed = [r["code"] for r in sat.rates if r["rate"] < r["required"]]
            return Evaluation(index, dag, "pruned_by_sat", mean, f"violates {failed}", sat)
        return Evaluation(index, dag, "feasible", mean, sat=sat)

    def evaluate_all(self, cands: list[ProgramDag]) -> list[Evaluation]:
        if self.config.jobs > 1 and len(cands) > 1:
            with ThreadPoolExecutor(max_workers=self.config.jobs) as pool:
                return list(pool.map(self.evaluate, range(len(cands)), cands))
        return [self.evaluate(i, c) for i, c in enumerate(cands)]


def _generate(dag: ProgramDag, banks: Optional[Banks], config: OptimizerConfig) -> list:
    program = from_dag(dag)
    if config.use_pruning and any(c.is_needs_schema for c in all_constraints(program)):
        try:
            return typed_mutations(dag, config.seeds)
        except NoOpenSlots:
            return []
    return mutations(dag, banks, config.seeds)


def optimize(e: PromptProgram, d: Dataset, backend: Backend,
             config: Optional[OptimizerConfig] = None, *, banks: Optional[Banks] = None,
             ctx: Optional[Context] = None) -> OptimizationResult:
    """Minimize mean cost over mutations of ``e`` subject to typing and sat.

    Raises Infeasible when neither the incumbent nor any candidate satisfies
    the constraints; EmptyDataset for an empty dataset.
    """
    config = config or OptimizerConfig()
    if not d.examples:
        raise EmptyDataset("dataset has no examples")
    typecheck(None, e, ctx)
    search = _Search(d, backend, config, ctx)

    incumbent = search.evaluate(-1, to_dag(e))
    result = OptimizationResult(incumbent.dag, incumbent.mean_cost,
                                incumbent.status == "feasible")
    result.backend_runs += len(d.examples) if incumbent.status != "pruned_by_type" else 0

    for round_no in range(config.budget_rounds):
        cands = _generate(incumbent.dag, banks, config)
        if not cands:
            break
        evals = search.evaluate_all(cands)
        result.candidates += len(cands)
        for ev in evals:
            if ev.status == "pruned_by_type":
                result.pruned_by_type += 1
            else:
                result.backend_runs += len(d.examples)
                if ev.status == "pruned_by_sat":
                    result.pruned_by_sat += 1
                else:
                    result.evaluated += 1
            result.per_candidate_log.append(ev.log_entry(round_no))

        best = incumbent if incumbent.status == "feasible" else None
        for ev in evals:  # generation order; strict < keeps the earliest on ties
            if ev.status == "feasible" and (best is None or ev.mean_cost < best.mean_cost):
                best = ev
        result.rounds.append({
            "round": round_no,
            "incumbent_cost": _finite(incumbent.mean_cost),
            "incumbent_feasible": incumbent.status == "feasible",
            "candidates": len(cands),
            "winner": None if best is None else
            ("incumbent" if best is incumbent else best.index),
            "best_cost": None if best is None else _finite(best.mean_cost),
        })
        if best is None or best is incumbent:
            break
        incumbent = best

    result.best = incumbent.dag
    result.best_cost = incumbent.mean_cost
    result.feasible = incumbent.status == "feasible"
    if not result.feasible:
        raise Infeasible("no candidate satisfies the constraints", result)
    return result
