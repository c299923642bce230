"""Executing prompt programs: sanitize -> encode -> render -> decode -> validate.

Failed validation triggers a repair attempt: the original prompt plus a
summary of the violations is sent again with the next seed.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Protocol, Sequence

from .core import (Enum, Hole, InstructionBlock, Literal, PromptProgram, SchemaSlot, Text,
                   all_constraints)
from .engine import (DEFAULT_INJECTION_PATTERNS, DEFAULT_RULES, Context, SatResult, encode,
                     sanitize, token_units)
from .grammar import Grammar
from .schema import conformance_errors
from .serialize import canonical_value
from .typecheck import validate_output

REPAIR_TEMPLATE = ("Your previous output violated: [{items}]. "
                   "Respond again conforming to the required type.")


class MissingInput(KeyError):
    pass


class InputTypeError(ValueError):
    pass


class UnfilledRequiredSlot(ValueError):
    pass


class BackendFailure(RuntimeError):
    pass


class EmptyDataset(ValueError):
    pass


def derive_seed(*parts: Any) -> int:
    """Stable 31-bit seed from arbitrary JSON-able parts."""
    digest = hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).digest()
    return int.from_bytes(digest[:4], "big") & 0x7FFFFFFF


# -- decoding filters ---------------------------------------------------------

@dataclass(frozen=True)
class DecodingFilter:
    labels: Optional[tuple[str, ...]] = None
    grammar: Optional[Grammar] = None

    def accepts(self, text: str) -> bool:
        if self.labels is not None and text.strip() not in self.labels:
            return False
        if self.grammar is not None and not self.grammar.accepts(text):
            return False
        return True


def constrained_decode(raw_candidates: Sequence[str], filt: DecodingFilter) -> Optional[str]:
    """First candidate the filter accepts, in list order."""
    for text in raw_candidates:
        if filt.accepts(text):
            return text
    return None


def decoding_filters(p: PromptProgram, ctx: Optional[Context] = None) -> list[DecodingFilter]:
    ctx = ctx or Context()
    out = []
    for c in all_constraints(p):
        if c.target != p.output_name:
            continue
        if c.code == "C3":
            if "labels" in c.params:
                out.append(DecodingFilter(labels=tuple(c.params["labels"])))
            else:
                out.append(DecodingFilter(grammar=ctx.grammar(c.params["grammar"])))
        elif c.code == "C5":
            labels = c.params.get("labels")
            if labels is None and isinstance(p.output.base, Enum):
                labels = p.output.base.labels
            if labels is not None:
                out.append(DecodingFilter(labels=tuple(labels)))
    return out


# -- backends -----------------------------------------------------------------

@dataclass(frozen=True)
class Generation:
    text: str
    token_units: int


@dataclass(frozen=True)
class GenerationContext:
    inputs: Mapping[str, Any] = field(default_factory=dict)
    attempt: int = 0


class Backend(Protocol):
    def generate(self, prompt: str, decoding: Optional[Sequence[DecodingFilter]] = None,
                 seed: int = 0, *, context: Optional[GenerationContext] = None
                 ) -> Generation: ...


@dataclass(frozen=True)
class MockBackendConfig:
    """Hermetic stand-in for a model.

    Modes: ``echo`` reflects input ``field`` (optionally wrapped as
    ``{wrap: value}``); ``table`` picks the first entry whose pattern occurs in
    the prompt and returns its response for the current attempt; ``scripted``
    returns ``responses[attempt]`` after ``fail_first`` invalid answers. A
    response may be a list of candidates, which decoding filters choose from.
    """

    mode: str
    field: Optional[str] = None
    wrap: Optional[str] = None
    entries: tuple = ()
    default: tuple = ()
    responses: tuple = ()
    fail_first: int = 0
    invalid_response: str = "<invalid>"
    noise: float = 0.0

    __hash__ = None

    def __post_init__(self):
        if self.mode not in ("echo", "table", "scripted"):
            raise ValueError(f"unknown mock mode {self.mode!r}")
        if self.mode == "echo" and not self.field:
            raise ValueError("echo mode needs a field")
        if self.mode == "scripted" and not self.responses:
            raise ValueError("scripted mode needs a non-empty response list")
        pats = [e["pattern"] for e in self.entries]
        for i, a in enumerate(pats):
            for j, b in enumerate(pats):
                if i != j and a in b:
                    raise ValueError(f"table patterns overlap: {a!r} / {b!r}")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise rate must lie in [0, 1]")

    @classmethod
    def from_json(cls, d: dict) -> "MockBackendConfig":
        return cls(mode=d["mode"], field=d.get("field"), wrap=d.get("wrap"),
                   entries=tuple(d.get("entries", ())), default=tuple(d.get("default", ())),
                   responses=tuple(d.get("responses", ())), fail_first=d.get("fail_first", 0),
                   invalid_response=d.get("invalid_response", "<invalid>"),
                   noise=d.get("noise", 0.0))


class MockBackend:
    def __init__(self, config: MockBackendConfig):
        self.config = config

    @classmethod
    def from_json(cls, d: dict) -> "MockBackend":
        return cls(MockBackendConfig.from_json(d))

    def _response(self, prompt: str, ctx: GenerationContext):
        cfg = self.config
        attempt = ctx.attempt
        if cfg.mode == "echo":
            if cfg.field not in ctx.inputs:
                raise BackendFailure(f"echo field {cfg.field!r} not in inputs")
            value = ctx.inputs[cfg.field]
            if cfg.wrap:
                return json.dumps({cfg.wrap: value}, ensure_ascii=False)
            return value if isinstance(value, str) else canonical_value(value)
        if cfg.mode == "table":
            for entry in cfg.entries:
                if entry["pattern"] in prompt:
                    responses = entry["responses"]
                    break
            else:
                responses = cfg.default
            if not responses:
                raise BackendFailure("no table entry matches the prompt")
            return responses[min(attempt, len(responses) - 1)]
        if attempt < cfg.fail_first:
            return cfg.invalid_response
        k = attempt - cfg.fail_first
        return cfg.responses[min(k, len(cfg.responses) - 1)]

    def generate(self, prompt: str, decoding: Optional[Sequence[DecodingFilter]] = None,
                 seed: int = 0, *, context: Optional[GenerationContext] = None) -> Generation:
        response = self._response(prompt, context or GenerationContext())
        candidates = list(response) if isinstance(response, list) else [response]
        text = candidates[0]
        if decoding:
            joint = _Conjunction(tuple(decoding))
            chosen = constrained_decode(candidates, joint)
            if chosen is not None:
                text = chosen
        if self.config.noise:
            text = perturb(text, self.config.noise, derive_seed("noise", prompt, seed))
        return Generation(text, token_units(text))


@dataclass(frozen=True)
class _Conjunction:
    filters: tuple[DecodingFilter, ...]

    def accepts(self, text: str) -> bool:
        return all(f.accepts(text) for f in self.filters)


def perturb(text: str, rate: float, seed: int) -> str:
    """Seeded fault injection touching string values only, never JSON keys."""
    rng = random.Random(seed)
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        words = text.split(" ")
        return " ".join(w + "~" if w and rng.random() < rate else w for w in words)

    def walk(v):
        if isinstance(v, str):
            return v + "~" if rng.random() < rate else v
        if isinstance(v, list):
            return [walk(x) for x in v]
        if isinstance(v, dict):
            return {k: walk(x) for k, x in v.items()}
        return v

    return json.dumps(walk(data), ensure_ascii=False)


def load_backend(d: dict) -> MockBackend:
    return MockBackend.from_json(d)


# -- rendering ----------------------------------------------------------------

def _input_rules(p: PromptProgram, name: str):
    sanit, enc = [], []
    for c in all_constraints(p):
        if c.target != name:
            continue
        if c.code == "C11":
            sanit.append(c)
        elif c.code == "C12":
            enc.append(c)
    return sanit, enc


def render(p: PromptProgram, inputs: Mapping[str, Any], ctx: Optional[Context] = None) -> str:
    """Assemble the prompt; Text inputs are sanitized, then encoded, then spliced."""
    ctx = ctx or Context()
    declared = p.input_map()
    values = {}
    for name, t in p.inputs:
        if name not in inputs:
            raise MissingInput(name)
        v = inputs[name]
        errs = conformance_errors(v, t.base)
        if errs:
            raise InputTypeError(f"input {name!r}: {errs[0]}")
        if isinstance(t.base, Text):
            sanit, enc = _input_rules(p, name)
            for c in sanit:
                v = sanitize(v, c.params.get("rules", DEFAULT_RULES),
                             c.params.get("patterns", DEFAULT_INJECTION_PATTERNS))
            for c in enc:
                v = encode(v, ctx.lexicon(c.params["lexicon"]))
            values[name] = v
        else:
            values[name] = canonical_value(v)
    if any(c.is_needs_schema for c in all_constraints(p)):
        if not any(isinstance(s, SchemaSlot) and s.filled is not None for s in p.body):
            raise UnfilledRequiredSlot("NeedsSchema requires an injected schema")
    parts = []
    for seg in p.body:
        match seg:
            case Literal(text):
                parts.append(text)
            case Hole(name):
                if name not in values:
                    if name in declared or name not in inputs:
                        raise MissingInput(name)
                    values[name] = inputs[name]
                parts.append(values[name])
            case SchemaSlot(_, filled):
                parts.append(filled or "")
            case InstructionBlock(_, text, _):
                parts.append(text)
    return "".join(parts)


# -- execution ----------------------------------------------------------------

@dataclass(frozen=True)
class Attempt:
    prompt: str
    raw: str
    result: SatResult
    repair_message: Optional[str]

    __hash__ = None

    def to_json(self) -> dict:
        return {"prompt": self.prompt, "raw": self.raw, "result": self.result.to_json(),
                "repair_message": self.repair_message}


@dataclass(frozen=True)
class ExecutionTrace:
    rendered_prompt: str
    attempts: tuple[Attempt, ...]
    final: Any
    success: bool
    token_units: int

    __hash__ = None

    @property
    def retries_used(self) -> int:
        return len(self.attempts) - 1

    @property
    def last_result(self) -> SatResult:
        return self.attempts[-1].result

    def to_json(self) -> dict:
        return {"rendered_prompt": self.rendered_prompt,
                "attempts": [a.to_json() for a in self.attempts],
                "final": self.final if self.success else None,
                "success": self.success, "retries_used": self.retries_used,
                "token_units": self.token_units}


class ValidationExhausted(Exception):
    def __init__(self, trace: ExecutionTrace):
        self.trace = trace
        super().__init__(f"no valid output after {len(trace.attempts)} attempts")


def repair_message(result: SatResult) -> str:
    items = "; ".join(f"{v.code}: {v.reason}" for v in result.violations)
    return REPAIR_TEMPLATE.format(items=items)


def _output_extras(p: PromptProgram):
    return [c for c in p.constraints
            if c.target == p.output_name and c.code not in ("C11", "C12", "C13")
            and not c.is_needs_schema]


def execute(p: PromptProgram, inputs: Mapping[str, Any], backend: Backend, *,
            max_retries: int = 3, seed: int = 0, ctx: Optional[Context] = None,
            raise_on_failure: bool = True) -> ExecutionTrace:
    """Run ``p`` on ``inputs`` with the repair loop.

    Raises ValidationExhausted (carrying the trace) when every attempt fails,
    unless ``raise_on_failure`` is false.
    """
    ctx = ctx or Context()
    prompt = render(p, inputs, ctx)
    filters = decoding_filters(p, ctx)
    extras = _output_extras(p)
    attempts: list[Attempt] = []
    units = 0
    current = prompt
    for attempt in range(max_retries + 1):
        gen = backend.generate(current, filters or None, seed + attempt,
                               context=GenerationContext(dict(inputs), attempt))
        units += token_units(current) + gen.token_units
        value, result = validate_output(gen.text, p.output, ctx, extra=extras,
                                        target=p.output_name)
        message = None if result.satisfied else repair_message(result)
        attempts.append(Attempt(current, gen.text, result, message))
        if result.satisfied:
            return ExecutionTrace(prompt, tuple(attempts), value, True, units)
        current = prompt + "\n\n" + message
    trace = ExecutionTrace(prompt, tuple(attempts), None, False, units)
    if raise_on_failure:
        raise ValidationExhausted(trace)
    return trace


# -- datasets -----------------------------------------------------------------

@dataclass(frozen=True)
class Example:
    input: dict
    expected: Any

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    examples: tuple[Example, ...]
    name: str = "dataset"

    __hash__ = None

    def __len__(self) -> int:
        return len(self.examples)


def load_dataset(path) -> Dataset:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                examples.append(Example(d["input"], d["expected"]))
    return Dataset(tuple(examples), str(path))


def outputs_equal(actual: Any, expected: Any) -> bool:
    return canonical_value(actual) == canonical_value(expected)


def run_dataset(p: PromptProgram, d: Dataset, backend: Backend, *, max_retries: int = 3,
                seed: int = 0, ctx: Optional[Context] = None) -> dict:
    """Execute every example; per-example failures are counted, not raised."""
    if not d.examples:
        raise EmptyDataset("dataset has no examples")
    n = len(d.examples)
    matches = retries = units = failures = 0
    codes = {c.code for c in all_constraints(p)
             if c.target == p.output_name and c.code not in ("C11", "C12")}
    if isinstance(p.output.base, Enum):
        codes.add("C5")
    elif not isinstance(p.output.base, Text):
        codes.add("C4")
    codes = sorted(codes, key=lambda c: int(c[1:]))
    passes = {c: 0 for c in codes}
    for i, ex in enumerate(d.examples):
        try:
            trace = execute(p, ex.input, backend, max_retries=max_retries,
                            seed=derive_seed(seed, i), ctx=ctx, raise_on_failure=False)
        except (BackendFailure, MissingInput, InputTypeError, UnfilledRequiredSlot):
            failures += 1
            continue
        retries += trace.retries_used
        units += trace.token_units
        if trace.success and outputs_equal(trace.final, ex.expected):
            matches += 1
        if not trace.success:
            failures += 1
        violated = {v.code for v in trace.last_result.violations}
        for c in codes:
            if c not in violated:
                passes[c] += 1
    return {"examples": n, "exact_match": matches / n, "mean_retries": retries / n,
            "failures": failures, "pass_rates": {c: passes[c] / n for c in codes},
            "total_token_units": units}
