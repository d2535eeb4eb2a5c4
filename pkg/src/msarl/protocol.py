"""Rollout transcript grammar: parsing, validation, canonical rendering.

A transcript is line-oriented text alternating reasoning turns, fenced code
blocks and sandbox result lines:

    Reasoning Agent: We first get the first 5 prime numbers.
    [CODE_START]
    Code Agent:
    primes = first_n_primes(5)
    print(primes)
    [CODE_END]
    Sandbox execution result: [2, 3, 5, 7, 11]
    Reasoning Agent: The final answer is 208.

Markers are case-sensitive and must occupy their own lines.  Reward
annotation lines ("Strong reward ...") sometimes appear in logged rollouts;
the parser skips them so result texts stay comparable to raw sandbox output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .errors import (
    DanglingCodeRequest,
    InvalidTranscript,
    MalformedAnswerLiteral,
    OrphanExecutionResult,
    TrailingContentAfterFinal,
    UnmarkedContent,
    UnterminatedCodeBlock,
)
from .normalize import Number, normalize_answer

REASONING = "reasoning"
CODE_REQUEST = "code_request"
EXECUTION_RESULT = "execution_result"
FINAL_ANSWER = "final_answer"

SEGMENT_KINDS = (REASONING, CODE_REQUEST, EXECUTION_RESULT, FINAL_ANSWER)

CODE_START = "[CODE_START]"
CODE_END = "[CODE_END]"
REASONING_PREFIX = "Reasoning Agent:"
RESULT_PREFIX = "Sandbox execution result:"
FINAL_PHRASE = "The final answer is "

# Presentation-only lines found in annotated rollout logs; never content.
_ANNOTATION_PREFIXES = ("Strong reward", "Weak reward", "Penalty")

# Failed executions surface in the transcript as "<error: STATUS>" result text
# so the reasoning side can react to them.
ERROR_SENTINEL_RE = re.compile(
    r"<error: (syntax_error|runtime_error|timeout|forbidden_import|resource_limit)>"
)


def error_sentinel(status: str) -> str:
    return f"<error: {status}>"


def parse_result_sentinel(result_text: str) -> str | None:
    """Status named by an error sentinel, or None for ordinary output."""
    m = ERROR_SENTINEL_RE.fullmatch(result_text.strip())
    return m.group(1) if m else None


@dataclass(frozen=True)
class Segment:
    kind: str
    text: str
    index: int


@dataclass(frozen=True)
class Transcript:
    segments: tuple[Segment, ...] = ()
    truncated: bool = False

    @property
    def terminated(self) -> bool:
        return any(s.kind == FINAL_ANSWER for s in self.segments)

    def count(self, kind: str) -> int:
        return sum(1 for s in self.segments if s.kind == kind)

    def code_steps(self) -> list[tuple[Segment, Segment]]:
        """(CodeRequest, ExecutionResult) pairs in order; excludes a trailing
        unanswered request on truncated transcripts."""
        pairs = []
        for i, seg in enumerate(self.segments):
            if seg.kind == CODE_REQUEST and i + 1 < len(self.segments):
                nxt = self.segments[i + 1]
                if nxt.kind == EXECUTION_RESULT:
                    pairs.append((seg, nxt))
        return pairs


def _is_annotation(line: str) -> bool:
    return line.startswith(_ANNOTATION_PREFIXES)


def _final_token(reasoning_text: str) -> str | None:
    """First final-answer token in a reasoning text, if any."""
    pos = reasoning_text.find(FINAL_PHRASE)
    if pos < 0:
        return None
    tail = reasoning_text[pos + len(FINAL_PHRASE) :]
    token = tail.split(None, 1)[0] if tail.split() else ""
    return token or None


def _strip_blank_edges(lines: list[str]) -> list[str]:
    start, end = 0, len(lines)
    while start < end and not lines[start].strip():
        start += 1
    while end > start and not lines[end - 1].strip():
        end -= 1
    return lines[start:end]


def parse_transcript(text: str, truncated: bool = False) -> Transcript:
    """Parse transcript text into segments.

    ``truncated`` marks a rollout cut off mid-generation: a trailing code
    request with no result is then kept instead of raising
    DanglingCodeRequest.
    """
    lines = text.split("\n")
    segments: list[Segment] = []
    # The open segment being accumulated: (kind, [lines]) or None.
    open_kind: str | None = None
    open_lines: list[str] = []

    def close_open() -> None:
        nonlocal open_kind, open_lines
        if open_kind is None:
            return
        body = _strip_blank_edges([ln.rstrip() for ln in open_lines])
        segments.append(Segment(open_kind, "\n".join(body), len(segments)))
        open_kind = None
        open_lines = []

    i = 0
    n = len(lines)
    while i < n:
        line = lines[i]
        stripped = line.strip()
        if stripped == CODE_START:
            close_open()
            if segments and segments[-1].kind == CODE_REQUEST:
                raise DanglingCodeRequest(f"code request at segment {segments[-1].index} has no result")
            # Collect verbatim lines up to the matching end marker.
            j = i + 1
            block: list[str] = []
            while j < n and lines[j].strip() != CODE_END:
                block.append(lines[j])
                j += 1
            if j >= n:
                raise UnterminatedCodeBlock(f"{CODE_START} at line {i + 1} has no {CODE_END}")
            if block and block[0].strip().lower() == "code agent:":
                block = block[1:]
            source = "\n".join(block)
            if not source.strip():
                raise InvalidTranscript(f"empty code block at line {i + 1}")
            segments.append(Segment(CODE_REQUEST, source, len(segments)))
            i = j + 1
            continue
        if stripped == CODE_END:
            raise UnterminatedCodeBlock(f"{CODE_END} at line {i + 1} without {CODE_START}")
        if line.startswith(RESULT_PREFIX):
            close_open()
            if not segments or segments[-1].kind != CODE_REQUEST:
                raise OrphanExecutionResult(f"result at line {i + 1} follows no code request")
            open_kind = EXECUTION_RESULT
            open_lines = [line[len(RESULT_PREFIX) :].lstrip(" ")]
            i += 1
            continue
        if line.startswith(REASONING_PREFIX):
            close_open()
            if segments and segments[-1].kind == CODE_REQUEST:
                raise DanglingCodeRequest(f"code request at segment {segments[-1].index} has no result")
            open_kind = REASONING
            open_lines = [line[len(REASONING_PREFIX) :].lstrip(" ")]
            i += 1
            continue
        if _is_annotation(line):
            i += 1
            continue
        if open_kind is not None:
            open_lines.append(line)
            i += 1
            continue
        if stripped:
            raise UnmarkedContent(f"line {i + 1} precedes any segment marker: {stripped[:60]!r}")
        i += 1
    close_open()

    if segments and segments[-1].kind == CODE_REQUEST and not truncated:
        raise DanglingCodeRequest(f"code request at segment {segments[-1].index} has no result")

    # A final answer derives from the last reasoning segment.
    last_reasoning = next((s for s in reversed(segments) if s.kind == REASONING), None)
    if last_reasoning is not None:
        token = _final_token(last_reasoning.text)
        if token is not None:
            if segments[-1] is not last_reasoning:
                raise TrailingContentAfterFinal(
                    f"segments follow the final answer at segment {last_reasoning.index}"
                )
            try:
                normalize_answer(token)
            except MalformedAnswerLiteral:
                raise MalformedAnswerLiteral(f"final answer token {token!r} is not numeric") from None
            segments.append(Segment(FINAL_ANSWER, token, len(segments)))

    return Transcript(tuple(segments), truncated=truncated)


def validate_transcript(t: Transcript) -> None:
    """Raise InvalidTranscript unless t is structurally sound and serializable."""
    segs = t.segments
    for i, seg in enumerate(segs):
        if seg.kind not in SEGMENT_KINDS:
            raise InvalidTranscript(f"segment {i} has unknown kind {seg.kind!r}")
        if seg.index != i:
            raise InvalidTranscript(f"segment {i} carries index {seg.index}")
    finals = [s for s in segs if s.kind == FINAL_ANSWER]
    if len(finals) > 1:
        raise InvalidTranscript("more than one final answer")
    if finals and segs[-1].kind != FINAL_ANSWER:
        raise InvalidTranscript("final answer is not the last segment")
    for i, seg in enumerate(segs):
        if seg.kind == CODE_REQUEST:
            if not seg.text.strip():
                raise InvalidTranscript(f"segment {i}: empty code request")
            followed = i + 1 < len(segs) and segs[i + 1].kind == EXECUTION_RESULT
            if not followed and not (t.truncated and i == len(segs) - 1):
                raise InvalidTranscript(f"segment {i}: code request has no result")
        if seg.kind == EXECUTION_RESULT and (i == 0 or segs[i - 1].kind != CODE_REQUEST):
            raise InvalidTranscript(f"segment {i}: result follows no code request")
        if seg.kind == FINAL_ANSWER:
            try:
                normalize_answer(seg.text)
            except MalformedAnswerLiteral as exc:
                raise InvalidTranscript(str(exc)) from None
            if i == 0 or segs[i - 1].kind != REASONING:
                raise InvalidTranscript("final answer does not follow a reasoning segment")
            if _final_token(segs[i - 1].text) != seg.text:
                raise InvalidTranscript("final answer disagrees with its reasoning segment")
    # Serializability: segment text must not smuggle grammar markers.
    for i, seg in enumerate(segs):
        lines = seg.text.split("\n") if seg.text else []
        if seg.kind == CODE_REQUEST:
            if any(ln.strip() in (CODE_START, CODE_END) for ln in lines):
                raise InvalidTranscript(f"segment {i}: code contains a block marker")
            continue
        if seg.kind == FINAL_ANSWER:
            continue
        for ln in lines:
            if (
                ln.strip() in (CODE_START, CODE_END)
                or ln.startswith((REASONING_PREFIX, RESULT_PREFIX))
                or _is_annotation(ln)
            ):
                raise InvalidTranscript(f"segment {i}: text line collides with a marker: {ln!r}")
            if ln != ln.rstrip():
                raise InvalidTranscript(f"segment {i}: line carries trailing whitespace")
        if len(lines) > 1 and (not lines[0] or not lines[-1]):
            raise InvalidTranscript(f"segment {i}: blank edge line")
        # A reasoning segment other than the one feeding the final answer must
        # not contain the final phrase, or re-parsing would misplace it.
        if seg.kind == REASONING:
            is_final_feeder = i + 1 < len(segs) and segs[i + 1].kind == FINAL_ANSWER
            is_last_reasoning = all(s.kind != REASONING for s in segs[i + 1 :])
            if _final_token(seg.text) is not None and is_last_reasoning and not is_final_feeder:
                raise InvalidTranscript(f"segment {i}: stray final-answer phrase")


def render_transcript(t: Transcript) -> str:
    """Emit canonical text; parse_transcript(render_transcript(t)) == t."""
    validate_transcript(t)
    blocks: list[str] = []
    for seg in t.segments:
        if seg.kind == REASONING:
            first, *rest = seg.text.split("\n") if seg.text else [""]
            head = f"{REASONING_PREFIX} {first}" if first else REASONING_PREFIX
            blocks.append("\n".join([head, *rest]))
        elif seg.kind == CODE_REQUEST:
            blocks.append(f"{CODE_START}\nCode Agent:\n{seg.text}\n{CODE_END}")
        elif seg.kind == EXECUTION_RESULT:
            first, *rest = seg.text.split("\n") if seg.text else [""]
            head = f"{RESULT_PREFIX} {first}" if first else RESULT_PREFIX
            blocks.append("\n".join([head, *rest]))
        # FINAL_ANSWER is derived from its reasoning segment; nothing to emit.
    return "\n".join(blocks)


def extract_final_answer(t: Transcript) -> Number | None:
    """Normalized final answer, or None when the transcript never terminated."""
    for seg in reversed(t.segments):
        if seg.kind == FINAL_ANSWER:
            return normalize_answer(seg.text)
    return None


def append_segment(t: Transcript, kind: str, text: str) -> Transcript:
    """Functional append preserving index numbering."""
    seg = Segment(kind, text, len(t.segments))
    return replace(t, segments=(*t.segments, seg))
