"""Command-line front end: check, dag, optimize, run, score.

Exit codes: 0 ok, 1 semantic failure, 2 I/O or reference failure,
3 infeasible optimization. All machine output is JSON.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .core import Text, all_constraints
from .dag import Banks, to_dag
from .dsl import ParseError, load_program, parse_constraint
from .engine import Context, MissingRef, check, load_json_file
from .grammar import GrammarIllFormed, load_grammar
from .optimizer import Infeasible, OptimizerConfig, optimize
from .runtime import (BackendFailure, EmptyDataset, InputTypeError, MissingInput,
                      UnfilledRequiredSlot, load_backend, load_dataset, execute)
from .serialize import dumps
from .typecheck import TypeCheckFailed, typecheck

OK, SEMANTIC, IO, INFEASIBLE = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, code: int, message: str, diagnostics: Optional[list] = None):
        self.code = code
        self.diagnostics = diagnostics or [{"kind": "Error", "detail": message}]
        super().__init__(message)


def _named(spec: str) -> tuple[str, Path]:
    """``name=path`` or a bare path named by its file stem."""
    name, sep, path = spec.partition("=")
    if sep and name and "/" not in name:
        return name, Path(path)
    return Path(spec).stem, Path(spec)


def _context(args) -> Context:
    ctx = Context()
    try:
        for spec in args.ontology or ():
            name, path = _named(spec)
            ctx.ontologies[name] = load_json_file(path)
        for spec in args.lexicon or ():
            name, path = _named(spec)
            ctx.lexicons[name] = load_json_file(path)
        for spec in args.schema or ():
            name, path = _named(spec)
            ctx.schemas[name] = load_json_file(path)
        for spec in args.oracle or ():
            name, path = _named(spec)
            ctx.oracles[name] = load_json_file(path)
        for spec in args.grammar or ():
            name, path = _named(spec)
            ctx.grammars[name] = load_grammar(path)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(IO, f"cannot read resource: {e}")
    except GrammarIllFormed as e:
        raise CliError(IO, f"ill-formed grammar: {e}")
    return ctx


def _read_json(path: str):
    try:
        return load_json_file(path)
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(IO, f"cannot read {path}: {e}")


def _load(path: str):
    try:
        return load_program(path)
    except OSError as e:
        raise CliError(IO, f"cannot read {path}: {e}")
    except ParseError as e:
        raise CliError(SEMANTIC, str(e), [{"kind": "ParseError", **e.to_json()}])


def _typed(p, ctx: Context):
    missing = []
    for c in all_constraints(p):
        try:
            ctx.resolve(c)
        except MissingRef as e:
            missing.append({"kind": "MissingReference", "location": c.code, "detail": str(e)})
    if missing:
        raise CliError(IO, "unresolved references", missing)
    try:
        return typecheck(None, p, ctx)
    except TypeCheckFailed as e:
        raise CliError(SEMANTIC, str(e), [d.to_json() for d in e.errors])


def _write(obj, path: Optional[str], pretty: bool):
    text = dumps(obj, pretty)
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise CliError(IO, f"cannot write {path}: {e}")


# -- subcommands --------------------------------------------------------------

def cmd_check(args) -> int:
    p = _load(args.file)
    typed = _typed(p, _context(args))
    sys.stderr.write(dumps([]))
    _write(typed.to_json(), None, args.pretty)
    return OK


def cmd_dag(args) -> int:
    p = _load(args.file)
    _write(to_dag(p).to_json(), args.output, args.pretty)
    return OK


def cmd_run(args) -> int:
    p = _load(args.file)
    ctx = _context(args)
    _typed(p, ctx)
    inputs = _read_json(args.input)
    backend = load_backend(_read_json(args.backend))
    try:
        trace = execute(p, inputs, backend, max_retries=args.max_retries, seed=args.seed,
                        ctx=ctx, raise_on_failure=False)
    except (MissingInput, InputTypeError, UnfilledRequiredSlot, BackendFailure) as e:
        raise CliError(SEMANTIC, f"{type(e).__name__}: {e}")
    if args.trace:
        _write(trace.to_json(), args.trace, args.pretty)
    _write({"success": trace.success, "final": trace.final if trace.success else None,
            "retries_used": trace.retries_used}, None, args.pretty)
    return OK if trace.success else SEMANTIC


def cmd_optimize(args) -> int:
    p = _load(args.file)
    ctx = _context(args)
    _typed(p, ctx)
    try:
        d = load_dataset(args.data)
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise CliError(IO, f"cannot read dataset {args.data}: {e}")
    backend = load_backend(_read_json(args.backend))
    try:
        banks = Banks.from_json(_read_json(args.banks)) if args.banks else None
    except (ValueError, AttributeError, TypeError) as e:
        raise CliError(IO, f"bad banks file {args.banks}: {e}")
    config = OptimizerConfig(lam=args.lam, seeds=tuple(range(args.seeds)),
                             budget_rounds=args.rounds, use_pruning=not args.no_prune,
                             seed=args.seed, max_retries=args.max_retries, jobs=args.jobs)
    try:
        result = optimize(p, d, backend, config, banks=banks, ctx=ctx)
    except EmptyDataset as e:
        raise CliError(IO, str(e))
    except Infeasible as e:
        _write(e.result.to_json(), args.report, args.pretty)
        sys.stderr.write(dumps([{"kind": "Infeasible", "detail": str(e)}]))
        return INFEASIBLE
    _write(result.to_json(), args.report, args.pretty)
    return OK


def cmd_score(args) -> int:
    ctx = _context(args)
    try:
        c = parse_constraint(args.constraint, "output")
    except ParseError as e:
        raise CliError(IO, str(e), [{"kind": "ParseError", **e.to_json()}])
    try:
        text = Path(args.file).read_text(encoding="utf-8") if args.file else sys.stdin.read()
    except OSError as e:
        raise CliError(IO, f"cannot read {args.file}: {e}")
    try:
        ctx.resolve(c)
        result = check(c, text, ctx, base=Text())
    except MissingRef as e:
        raise CliError(IO, str(e), [{"kind": "MissingReference", "detail": str(e)}])
    _write(result.to_json(), None, args.pretty)
    return OK if result.satisfied else SEMANTIC


# -- argument parsing ---------------------------------------------------------

def _resources(sp: argparse.ArgumentParser):
    for flag, what in (("ontology", "ontology JSON"), ("lexicon", "lexicon JSON"),
                       ("grammar", "EBNF grammar"), ("schema", "JSON schema"),
                       ("oracle", "mental-model oracle JSON")):
        sp.add_argument(f"--{flag}", action="append", metavar="[NAME=]PATH",
                        help=f"{what}; named by file stem unless NAME= is given")
    sp.add_argument("--pretty", action="store_true", help="indent JSON output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lambdaprompt",
                                     description="Typed prompt programs: check, optimize, run.")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("check", help="parse and typecheck a program")
    sp.add_argument("file")
    _resources(sp)
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("dag", help="emit the program's DAG as JSON")
    sp.add_argument("file")
    sp.add_argument("-o", "--output", help="output path (default stdout)")
    sp.add_argument("--pretty", action="store_true")
    sp.set_defaults(fn=cmd_dag)

    sp = sub.add_parser("optimize", help="search mutations for the cheapest feasible program")
    sp.add_argument("file")
    sp.add_argument("--data", required=True, help="JSON-lines dataset")
    sp.add_argument("--backend", required=True, help="mock backend config JSON")
    sp.add_argument("--banks", help="paraphrase/few-shot banks JSON")
    sp.add_argument("--lambda", dest="lam", type=float, default=0.01)
    sp.add_argument("--seeds", type=int, default=1, help="number of schema seeds (0..N-1)")
    sp.add_argument("--rounds", type=int, default=1)
    sp.add_argument("--no-prune", action="store_true")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-retries", type=int, default=3)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--report", help="report path (default stdout)")
    _resources(sp)
    sp.set_defaults(fn=cmd_optimize)

    sp = sub.add_parser("run", help="execute a program on one input")
    sp.add_argument("file")
    sp.add_argument("--input", required=True)
    sp.add_argument("--backend", required=True)
    sp.add_argument("--max-retries", type=int, default=3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--trace")
    _resources(sp)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("score", help="check one constraint against a text")
    sp.add_argument("file", nargs="?", help="text file (default stdin)")
    sp.add_argument("--constraint", required=True, help='e.g. "formality(lex) >= 0.7"')
    _resources(sp)
    sp.set_defaults(fn=cmd_score)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliError as e:
        sys.stderr.write(dumps(e.diagnostics))
        return e.code


if __name__ == "__main__":
    sys.exit(main())
