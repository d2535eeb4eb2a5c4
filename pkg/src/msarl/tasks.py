"""Problem ingestion and the synthetic chain-task generator.

Chain tasks take a base list (primes or naturals), optionally map each
element (square/cube) and reduce (sum/product/max).  A brute-force oracle
computes every intermediate value with exact integer arithmetic, so generated
problems ship with a ground-truth chain for step-level reward checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    FileUnreadable,
    MalformedRecord,
    MissingAnswerMarker,
    SpecInvalid,
)
from .normalize import (
    NormalizedValue,
    Number,
    canonical_str,
    normalize_answer,
    parse_canonical,
    values_equal,
)

BASES = ("first_n_primes", "first_n_naturals")
MAP_OPS = ("identity", "square", "cube")
REDUCE_OPS = ("sum", "product", "max")

GOLD_MARKER = "####"


@dataclass(frozen=True)
class Problem:
    id: str
    question: str
    gold_answer: Number
    intermediate_gt: tuple[NormalizedValue, ...] | None = None

    def __post_init__(self):
        if self.intermediate_gt is not None:
            gt = tuple(self.intermediate_gt)
            object.__setattr__(self, "intermediate_gt", gt)
            if gt and not values_equal(gt[-1], self.gold_answer):
                raise SpecInvalid(
                    f"last GT entry {gt[-1]!r} disagrees with gold answer {self.gold_answer!r}"
                )


@dataclass(frozen=True)
class ChainSpec:
    base: str
    n: int
    map_op: str = "identity"
    reduce_op: str = "sum"

    def __post_init__(self):
        if self.base not in BASES:
            raise SpecInvalid(f"unknown base {self.base!r}")
        if self.map_op not in MAP_OPS:
            raise SpecInvalid(f"unknown map op {self.map_op!r}")
        if self.reduce_op not in REDUCE_OPS:
            raise SpecInvalid(f"unknown reduce op {self.reduce_op!r}")
        if not 1 <= self.n <= 50:
            raise SpecInvalid(f"n out of range [1, 50]: {self.n}")
        if self.reduce_op == "product" and self.n > 12:
            raise SpecInvalid(f"product reductions require n <= 12, got {self.n}")


def first_n_primes(n: int) -> list[int]:
    """Trial division, deliberately naive: this is the oracle side."""
    primes: list[int] = []
    num = 2
    while len(primes) < n:
        if all(num % p != 0 for p in primes):
            primes.append(num)
        num += 1
    return primes


_MAP_FUNCS = {
    "identity": lambda v: v,
    "square": lambda v: v * v,
    "cube": lambda v: v * v * v,
}

_REDUCE_FUNCS = {
    "sum": sum,
    "product": math.prod,
    "max": max,
}


def oracle_eval(spec: ChainSpec) -> list[NormalizedValue]:
    """Brute-force the full chain: [base list, mapped list, reduced value]."""
    base = first_n_primes(spec.n) if spec.base == "first_n_primes" else list(range(1, spec.n + 1))
    mapped = [_MAP_FUNCS[spec.map_op](v) for v in base]
    reduced = _REDUCE_FUNCS[spec.reduce_op](mapped)
    return [base, mapped, reduced]


_BASE_PHRASES = {"first_n_primes": "prime numbers", "first_n_naturals": "natural numbers"}
_MAP_PHRASES = {"square": "squares", "cube": "cubes"}
_REDUCE_PHRASES = {"sum": "sum", "product": "product", "max": "maximum"}


def render_question(spec: ChainSpec) -> str:
    base = _BASE_PHRASES[spec.base]
    reduce_word = _REDUCE_PHRASES[spec.reduce_op]
    if spec.map_op == "identity":
        return f"Compute the {reduce_word} of the first {spec.n} {base}."
    return f"Compute the {reduce_word} of the {_MAP_PHRASES[spec.map_op]} of the first {spec.n} {base}."


def parse_chain_question(question: str) -> ChainSpec | None:
    """Recover the spec from a rendered question; None if it is not one."""
    import re

    m = re.fullmatch(
        r"Compute the (sum|product|maximum) of the "
        r"(?:(squares|cubes) of the )?first (\d+) (prime|natural) numbers\.",
        question.strip(),
    )
    if m is None:
        return None
    reduce_word, map_word, n, base_word = m.groups()
    reduce_op = {"sum": "sum", "product": "product", "maximum": "max"}[reduce_word]
    map_op = {None: "identity", "squares": "square", "cubes": "cube"}[map_word]
    base = "first_n_primes" if base_word == "prime" else "first_n_naturals"
    try:
        return ChainSpec(base=base, n=int(n), map_op=map_op, reduce_op=reduce_op)
    except SpecInvalid:
        return None


def generate_synthetic(spec: ChainSpec, seed: int = 0) -> Problem:
    """Render a chain task with its ground-truth chain.

    The GT chain carries one entry per natural decomposition step, so identity
    maps contribute no duplicate entry: [base, reduced] instead of
    [base, base, reduced].
    """
    base, mapped, reduced = oracle_eval(spec)
    if spec.map_op == "identity":
        gt: list[NormalizedValue] = [base, reduced]
    else:
        gt = [base, mapped, reduced]
    return Problem(
        id=f"chain-{spec.base}-{spec.n}-{spec.map_op}-{spec.reduce_op}-s{seed}",
        question=render_question(spec),
        gold_answer=reduced,
        intermediate_gt=tuple(gt),
    )


def default_sweep(n_values=range(1, 13)) -> list[ChainSpec]:
    """Every valid spec combination over the given n values."""
    specs = []
    for base in BASES:
        for n in n_values:
            for map_op in MAP_OPS:
                for reduce_op in REDUCE_OPS:
                    if reduce_op == "product" and n > 12:
                        continue
                    specs.append(ChainSpec(base=base, n=n, map_op=map_op, reduce_op=reduce_op))
    return specs


def parse_gold_answer(answer_text: str) -> Number:
    """Extract and normalize the literal after the final '####' marker."""
    pos = answer_text.rfind(GOLD_MARKER)
    if pos < 0:
        raise MissingAnswerMarker(f"no {GOLD_MARKER!r} marker in answer text")
    return normalize_answer(answer_text[pos + len(GOLD_MARKER) :])


def load_gsm8k(path: str | Path) -> list[Problem]:
    """Load question/answer JSONL in the grade-school math format."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    problems: list[Problem] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(lineno, f"invalid JSON: {exc}") from exc
        if not isinstance(record, dict) or "question" not in record or "answer" not in record:
            raise MalformedRecord(lineno, "record needs 'question' and 'answer' fields")
        gold = parse_gold_answer(record["answer"])
        problems.append(
            Problem(id=f"gsm8k-{lineno:05d}", question=record["question"], gold_answer=gold)
        )
    return problems


def problem_to_record(problem: Problem) -> dict:
    record = {
        "id": problem.id,
        "question": problem.question,
        "gold_answer": canonical_str(problem.gold_answer),
    }
    if problem.intermediate_gt is not None:
        record["intermediate_gt"] = [canonical_str(v) for v in problem.intermediate_gt]
    return record


def problem_from_record(record: dict) -> Problem:
    gt = record.get("intermediate_gt")
    return Problem(
        id=record["id"],
        question=record["question"],
        gold_answer=normalize_answer(record["gold_answer"]),
        intermediate_gt=tuple(parse_canonical(v) for v in gt) if gt is not None else None,
    )


def save_problems(problems: list[Problem], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for problem in problems:
            fh.write(json.dumps(problem_to_record(problem), ensure_ascii=False) + "\n")


def load_problems(path: str | Path) -> list[Problem]:
    """Load problems persisted by save_problems (id/question/gold/GT JSONL)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FileUnreadable(f"cannot read {path}: {exc}") from exc
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            problems.append(problem_from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise MalformedRecord(lineno, str(exc)) from exc
    return problems
