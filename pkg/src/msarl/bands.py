"""Difficulty banding and mode-comparison aggregation.

Problems are banded by a per-problem accuracy (estimated from a large banding
sample) into four tiers partitioning [0, 1] with inclusive upper edges:

    Hard (0, 0.78] / MediumHard (0.78, 0.90] / MediumEasy (0.90, 0.95] / Easy (0.95, 1]

Mode comparison then reports, per band, the mean per-problem correctness rate
of reasoning-only versus reasoning-plus-code sampling, and their gap.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .agents import CompletionRequest, Endpoint, remote_complete
from .errors import (
    JudgeUnparseable,
    MissingBandingAccuracy,
    MissingMode,
    OutOfRange,
)
from .normalize import Number, normalize_text
from .protocol import FINAL_PHRASE
from .rewards import score_final

MODE_REASONING_ONLY = "r_only"
MODE_REASONING_CODE = "r_code"
MODES = (MODE_REASONING_ONLY, MODE_REASONING_CODE)


@dataclass(frozen=True)
class Band:
    label: str
    lower: float  # exclusive
    upper: float  # inclusive


BANDS = (
    Band("Hard", float("-inf"), 0.78),
    Band("MediumHard", 0.78, 0.90),
    Band("MediumEasy", 0.90, 0.95),
    Band("Easy", 0.95, 1.0),
)


@dataclass(frozen=True)
class SampleRecord:
    problem_id: str
    mode: str
    sample_index: int
    correct: bool
    trace: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.sample_index < 0:
            raise ValueError("sample_index must be >= 0")


@dataclass(frozen=True)
class BandRow:
    band: str
    mode: str
    mean_rate: float | None
    n_problems: int


@dataclass(frozen=True)
class ModeReport:
    rows: tuple[BandRow, ...]
    gaps: dict  # band label -> gap (r_only mean - r_code mean) or None

    def to_json(self) -> str:
        return json.dumps(
            {
                "rows": [
                    {
                        "band": r.band,
                        "mode": r.mode,
                        "mean": r.mean_rate,
                        "n_problems": r.n_problems,
                    }
                    for r in self.rows
                ],
                "gaps": self.gaps,
            }
        )

    def to_csv(self) -> str:
        lines = ["band,mode,mean,gap"]
        for row in self.rows:
            gap = self.gaps.get(row.band)
            lines.append(
                f"{row.band},{row.mode},"
                f"{'' if row.mean_rate is None else row.mean_rate},"
                f"{'' if gap is None else gap}"
            )
        return "\n".join(lines) + "\n"


def band_of(accuracy: float) -> Band:
    """The unique band containing an accuracy in [0, 1]."""
    if not 0.0 <= accuracy <= 1.0:
        raise OutOfRange(f"accuracy must lie in [0, 1]: {accuracy}")
    for band in BANDS:
        if band.lower < accuracy <= band.upper:
            return band
    raise OutOfRange(f"no band contains {accuracy}")  # unreachable for [0, 1]


def banding_accuracies(records: list[SampleRecord]) -> dict[str, float]:
    """Per-problem accuracy over a banding sample set (any modes combined)."""
    totals: dict[str, list[int]] = {}
    for record in records:
        seen = totals.setdefault(record.problem_id, [0, 0])
        seen[0] += 1 if record.correct else 0
        seen[1] += 1
    return {pid: hits / count for pid, (hits, count) in totals.items()}


def compare_modes(records: list[SampleRecord], accuracies: dict[str, float]) -> ModeReport:
    """Per-band, per-mode mean of per-problem correctness rates, plus gaps.

    Every problem needs records in both modes and a banding accuracy.  Empty
    bands report None rather than zero.
    """
    per_problem: dict[str, dict[str, list[bool]]] = {}
    for record in records:
        per_problem.setdefault(record.problem_id, {}).setdefault(record.mode, []).append(
            record.correct
        )
    rates: dict[str, dict[str, float]] = {}
    for pid, by_mode in per_problem.items():
        for mode in MODES:
            if mode not in by_mode:
                raise MissingMode(pid, mode)
        if pid not in accuracies:
            raise MissingBandingAccuracy(pid)
        rates[pid] = {
            mode: sum(flags) / len(flags) for mode, flags in by_mode.items()
        }

    grouped: dict[str, list[str]] = {band.label: [] for band in BANDS}
    for pid in rates:
        grouped[band_of(accuracies[pid]).label].append(pid)

    rows: list[BandRow] = []
    gaps: dict[str, float | None] = {}
    for band in BANDS:
        pids = sorted(grouped[band.label])
        means: dict[str, float | None] = {}
        for mode in MODES:
            if pids:
                means[mode] = sum(rates[pid][mode] for pid in pids) / len(pids)
            else:
                means[mode] = None
            rows.append(BandRow(band.label, mode, means[mode], len(pids)))
        if pids:
            gaps[band.label] = means[MODE_REASONING_ONLY] - means[MODE_REASONING_CODE]
        else:
            gaps[band.label] = None
    return ModeReport(tuple(rows), gaps)


# --- critic judging -----------------------------------------------------------


@dataclass(frozen=True)
class ValidityVerdict:
    valid: bool
    detail: str = ""


class ExactMatchJudge:
    """Valid iff the trace's final answer normalizes equal to gold."""

    def judge(self, trace: str, gold: Number) -> ValidityVerdict:
        pos = trace.rfind(FINAL_PHRASE)
        if pos < 0:
            return ValidityVerdict(False, "no final answer in trace")
        tail = trace[pos + len(FINAL_PHRASE) :].split()
        if not tail:
            return ValidityVerdict(False, "empty final answer")
        value = normalize_text(tail[0])
        if not isinstance(value, (int, float)):
            return ValidityVerdict(False, f"non-numeric final answer {tail[0]!r}")
        correct = score_final(value, gold).value == 1.0
        return ValidityVerdict(correct, "exact match" if correct else "wrong final answer")


_CRITIC_SYSTEM = (
    "You are a strict mathematical critic. Given a problem's gold answer and a "
    "candidate reasoning trace, judge whether the solution pathway is logically "
    "sound and would reach the correct answer if carried out flawlessly; ignore "
    "minor arithmetic slips along the way. Reply with VALID or INVALID as the "
    "first word, optionally followed by a short justification."
)


class RemoteJudge:
    """Delegates validity assessment to a text-generation endpoint."""

    def __init__(self, endpoint: Endpoint, model_id: str = "default", *, completer=remote_complete):
        self.endpoint = endpoint
        self.model_id = model_id
        self._completer = completer

    def judge(self, trace: str, gold: Number) -> ValidityVerdict:
        request = CompletionRequest(
            model_id=self.model_id,
            messages=(
                ("system", _CRITIC_SYSTEM),
                ("user", f"Gold answer: {gold}\n\nTrace:\n{trace}"),
            ),
            temperature=0.0,
            max_tokens=64,
        )
        reply = self._completer(request, self.endpoint)
        head = reply.strip().split(None, 1)
        token = head[0].strip(".,:;!").upper() if head else ""
        if token == "VALID":
            return ValidityVerdict(True, reply.strip())
        if token == "INVALID":
            return ValidityVerdict(False, reply.strip())
        raise JudgeUnparseable(f"judge reply does not start with VALID/INVALID: {reply[:80]!r}")


def critic_judge(trace: str, gold: Number, judge) -> ValidityVerdict:
    return judge.judge(trace, gold)


def judge_many(traces: list[tuple[str, Number]], judge, *, parallelism: int = 4) -> list[ValidityVerdict]:
    """Fan judging out over a bounded thread pool, preserving input order."""
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(lambda item: judge.judge(*item), traces))


# --- sampling protocol ----------------------------------------------------------

R_ONLY_PROMPT = (
    "Solve the problem step by step in natural language only. Do not write or "
    "mention any code. Finish with a sentence of the form "
    '"The final answer is <number>".'
)

R_CODE_PROMPT = (
    "Solve the problem step by step. You are encouraged to interleave Python "
    "code blocks for calculations, fenced between [CODE_START] and [CODE_END] "
    "lines, and use their results. Finish with a sentence of the form "
    '"The final answer is <number>".'
)

SAMPLES_PER_MODE = 5
SAMPLING_TOP_P = 0.95
SAMPLING_TEMPERATURE = 0.7


def collect_mode_samples(
    problems,
    endpoint: Endpoint,
    *,
    model_id: str = "default",
    n: int = SAMPLES_PER_MODE,
    judge=None,
    seed: int = 0,
    completer=remote_complete,
) -> list[SampleRecord]:
    """Draw n samples per mode per problem and judge each trace.

    Sampling parameters follow the default protocol (nucleus 0.95 at
    temperature 0.7); the judge defaults to exact final-answer matching.
    """
    judge = judge or ExactMatchJudge()
    rng = random.Random(seed)
    records: list[SampleRecord] = []
    for problem in problems:
        for mode in MODES:
            system = R_ONLY_PROMPT if mode == MODE_REASONING_ONLY else R_CODE_PROMPT
            for index in range(n):
                request = CompletionRequest(
                    model_id=model_id,
                    messages=(
                        ("system", system),
                        ("user", f"{problem.question}\n(sample {rng.randrange(10**9)})"),
                    ),
                    temperature=SAMPLING_TEMPERATURE,
                    top_p=SAMPLING_TOP_P,
                    max_tokens=1024,
                )
                trace = completer(request, endpoint)
                verdict = judge.judge(trace, problem.gold_answer)
                records.append(
                    SampleRecord(
                        problem_id=problem.id,
                        mode=mode,
                        sample_index=index,
                        correct=verdict.valid,
                        trace=trace,
                    )
                )
    return records


# --- persistence ------------------------------------------------------------------


def save_sample_records(records: list[SampleRecord], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "problem_id": r.problem_id,
                        "mode": r.mode,
                        "sample_index": r.sample_index,
                        "correct": r.correct,
                        "trace": r.trace,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_sample_records(path: str | Path) -> list[SampleRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        data = json.loads(line)
        records.append(
            SampleRecord(
                problem_id=data["problem_id"],
                mode=data["mode"],
                sample_index=data["sample_index"],
                correct=data["correct"],
                trace=data.get("trace", ""),
            )
        )
    return records
