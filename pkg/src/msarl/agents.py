"""Agent backends: scripted oracles, a trainable template policy, remote models.

The reasoning side decides between invoking the code tool with a subtask
description and emitting a final answer; the code side turns a subtask into a
program.  Scripted backends are deterministic functions of the context and
always produce the correct plan/program.  The template policy samples from
small categorical distributions (decomposition choice, program-template
choice) and is the trainable stand-in for a language model.  Remote backends
delegate both roles to an HTTP text-generation endpoint.
"""

from __future__ import annotations

import os
import random
import re
import time
from dataclasses import dataclass, field

import numpy as np
import requests

from .errors import (
    AuthError,
    BackendFailure,
    MalformedResponse,
    PolicyUndefined,
    TransientExhausted,
)
from .normalize import Number, canonical_str, normalize_text
from .protocol import (
    CODE_END,
    CODE_START,
    ERROR_SENTINEL_RE,
    EXECUTION_RESULT,
    FINAL_PHRASE,
    REASONING_PREFIX,
    RESULT_PREFIX,
    Transcript,
    render_transcript,
)
from .tasks import ChainSpec, Problem, parse_chain_question

INVOKE_TOOL = "invoke_tool"
EMIT_FINAL = "emit_final"

DECOMPOSITIONS = ("three_step", "one_shot", "premature_answer")
TEMPLATE_VARIANTS = ("correct", "off_by_one", "syntax_error")

SUBTASK_KINDS = (
    "base_primes",
    "base_naturals",
    "map_square",
    "map_cube",
    "reduce_sum",
    "reduce_product",
    "reduce_max",
    "one_shot",
)

CHAIN_FAMILY = "chain"

API_URL_ENV = "MSARL_API_URL"
API_KEY_ENV = "MSARL_API_KEY"


@dataclass(frozen=True)
class ReasoningAction:
    kind: str
    narration: str
    subtask: str | None = None
    answer: Number | None = None

    def __post_init__(self):
        if self.kind == INVOKE_TOOL:
            if not self.subtask or self.answer is not None:
                raise ValueError("invoke_tool actions carry a subtask and no answer")
        elif self.kind == EMIT_FINAL:
            if self.answer is None or self.subtask is not None:
                raise ValueError("emit_final actions carry an answer and no subtask")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")


@dataclass(frozen=True)
class AgentContext:
    question: str
    transcript: Transcript
    steps_remaining: int | None = None


@dataclass(frozen=True)
class SampledChoice:
    """One categorical draw made during an episode, for the policy update."""

    space: str
    choice: int


# --- program library --------------------------------------------------------
#
# Scripted agents always emit the "correct" variant; the template policy
# samples among all three.  Programs chain through a `values` variable so that
# prefixing prior sources provides cross-step state.

_PRIMES_FUNC = """\
def first_n_primes(n):
    primes = []
    num = 2
    while len(primes) < n:
        if all(num % p != 0 for p in primes):
            primes.append(num)
        num += 1
    return primes
"""

_SYNTAX_ERROR_PROGRAM = "def broken(:\n    pass"


@dataclass(frozen=True)
class Subtask:
    kind: str
    n: int | None = None
    spec: ChainSpec | None = None


def base_subtask(spec: ChainSpec) -> str:
    noun = "prime numbers" if spec.base == "first_n_primes" else "natural numbers"
    return f"first {spec.n} {noun}"


def map_subtask(spec: ChainSpec) -> str:
    return f"{spec.map_op} each number in the current list"


def reduce_subtask(spec: ChainSpec) -> str:
    return {
        "sum": "sum the current list",
        "product": "multiply the current list together",
        "max": "take the maximum of the current list",
    }[spec.reduce_op]


def one_shot_subtask(question: str) -> str:
    return f"compute directly: {question}"


def parse_subtask(subtask: str) -> Subtask:
    """Classify a subtask description; raises PolicyUndefined when unknown."""
    s = subtask.strip()
    m = re.fullmatch(r"first (\d+) (prime|natural) numbers", s)
    if m:
        kind = "base_primes" if m.group(2) == "prime" else "base_naturals"
        return Subtask(kind=kind, n=int(m.group(1)))
    m = re.fullmatch(r"(square|cube) each number in the current list", s)
    if m:
        return Subtask(kind=f"map_{m.group(1)}")
    if s == "sum the current list":
        return Subtask(kind="reduce_sum")
    if s == "multiply the current list together":
        return Subtask(kind="reduce_product")
    if s == "take the maximum of the current list":
        return Subtask(kind="reduce_max")
    if s.startswith("compute directly: "):
        spec = parse_chain_question(s[len("compute directly: ") :])
        if spec is not None:
            return Subtask(kind="one_shot", spec=spec)
    raise PolicyUndefined(f"no program rule for subtask {subtask!r}")


def _one_shot_source(spec: ChainSpec, off_by_one: bool) -> str:
    lines = []
    if spec.base == "first_n_primes":
        lines.append(_PRIMES_FUNC)
        lines.append(f"values = first_n_primes({spec.n})")
    else:
        lines.append(f"values = list(range(1, {spec.n} + 1))")
    if spec.map_op == "square":
        lines.append("values = [v ** 2 for v in values]")
    elif spec.map_op == "cube":
        lines.append("values = [v ** 3 for v in values]")
    bump = " + 1" if off_by_one else ""
    if spec.reduce_op == "sum":
        lines.append(f"print(sum(values){bump})")
    elif spec.reduce_op == "product":
        lines.append("import math")
        lines.append(f"print(math.prod(values){bump})")
    else:
        lines.append(f"print(max(values){bump})")
    return "\n".join(lines)


def build_program(subtask: str, variant: str = "correct") -> str:
    """Render the program for a subtask in the requested variant."""
    if variant not in TEMPLATE_VARIANTS:
        raise ValueError(f"unknown template variant {variant!r}")
    if variant == "syntax_error":
        return _SYNTAX_ERROR_PROGRAM
    parsed = parse_subtask(subtask)
    off = variant == "off_by_one"
    if parsed.kind == "base_primes":
        n = f"{parsed.n} - 1" if off else str(parsed.n)
        return f"{_PRIMES_FUNC}\nvalues = first_n_primes({n})\nprint(values)"
    if parsed.kind == "base_naturals":
        stop = f"{parsed.n}" if off else f"{parsed.n} + 1"
        return f"values = list(range(1, {stop}))\nprint(values)"
    if parsed.kind == "map_square":
        expr = "v ** 2 + 1" if off else "v ** 2"
        return f"values = [{expr} for v in values]\nprint(values)"
    if parsed.kind == "map_cube":
        expr = "v ** 3 + 1" if off else "v ** 3"
        return f"values = [{expr} for v in values]\nprint(values)"
    if parsed.kind == "reduce_sum":
        return "print(sum(values) + 1)" if off else "print(sum(values))"
    if parsed.kind == "reduce_product":
        body = "math.prod(values) + 1" if off else "math.prod(values)"
        return f"import math\nprint({body})"
    if parsed.kind == "reduce_max":
        return "print(max(values) - 1)" if off else "print(max(values))"
    return _one_shot_source(parsed.spec, off)


def program_variant(subtask: str, source: str) -> str | None:
    """Which template variant produced this source, if any."""
    for variant in TEMPLATE_VARIANTS:
        try:
            if build_program(subtask, variant).strip() == source.strip():
                return variant
        except PolicyUndefined:
            return None
    return None


# --- plans ------------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    narration: str
    subtask: str


def chain_plan(spec: ChainSpec) -> list[PlanStep]:
    """The stepwise decomposition of a chain task."""
    noun = "prime numbers" if spec.base == "first_n_primes" else "natural numbers"
    steps: list[PlanStep] = []
    if spec.map_op == "identity":
        steps.append(
            PlanStep(f"We first need to get the first {spec.n} {noun}.", base_subtask(spec))
        )
        verb = {"sum": "sum", "product": "product", "max": "maximum"}[spec.reduce_op]
        steps.append(PlanStep(f"Then we need to calculate the {verb} of it.", reduce_subtask(spec)))
    else:
        steps.append(PlanStep(f"We first get the first {spec.n} {noun}.", base_subtask(spec)))
        plural = "squares" if spec.map_op == "square" else "cubes"
        steps.append(PlanStep(f"Now compute their {plural}.", map_subtask(spec)))
        closing = {
            "sum": "Finally, sum them up.",
            "product": "Finally, multiply them together.",
            "max": "Finally, take the maximum.",
        }[spec.reduce_op]
        steps.append(PlanStep(closing, reduce_subtask(spec)))
    return steps


def _completed_results(transcript: Transcript) -> list[str]:
    """Texts of ok execution results (error sentinels excluded)."""
    return [
        seg.text
        for seg in transcript.segments
        if seg.kind == EXECUTION_RESULT and not ERROR_SENTINEL_RE.fullmatch(seg.text.strip())
    ]


def _last_numeric_result(transcript: Transcript) -> Number | None:
    for text in reversed(_completed_results(transcript)):
        value = normalize_text(text)
        if isinstance(value, (int, float)):
            return value
    return None


def final_action(answer: Number) -> ReasoningAction:
    literal = canonical_str(answer)
    return ReasoningAction(
        kind=EMIT_FINAL, narration=f"{FINAL_PHRASE}{literal}", answer=answer
    )


# --- backend protocol and wrappers ------------------------------------------


def next_reasoning_action(ctx: AgentContext, session) -> ReasoningAction:
    """Ask a reasoning session for its next move, enforcing the step budget.

    With one step remaining the contract requires a final answer, so the
    session is not even consulted: the best available value (the most recent
    numeric execution result, else 0) is emitted.
    """
    if ctx.steps_remaining is not None and ctx.steps_remaining <= 1:
        answer = _last_numeric_result(ctx.transcript)
        return final_action(answer if answer is not None else 0)
    return session.next_action(ctx)


def generate_program(subtask: str, session) -> str:
    """Ask a code session for a program; the result must be non-empty."""
    if not subtask or not subtask.strip():
        raise ValueError("subtask must be non-empty")
    source = session.generate(subtask)
    if not source or not source.strip():
        raise BackendFailure(f"code backend produced an empty program for {subtask!r}")
    return source


class _SessionBase:
    """Shared bookkeeping: sampled categorical choices made this episode."""

    def __init__(self) -> None:
        self.choices: list[SampledChoice] = []


# --- scripted backends --------------------------------------------------------


class ScriptedReasonerSession(_SessionBase):
    def __init__(self, problem: Problem):
        super().__init__()
        spec = parse_chain_question(problem.question)
        if spec is None:
            raise PolicyUndefined(f"scripted reasoner cannot plan: {problem.question!r}")
        self.plan = chain_plan(spec)

    def next_action(self, ctx: AgentContext) -> ReasoningAction:
        done = len(_completed_results(ctx.transcript))
        if done < len(self.plan):
            step = self.plan[done]
            return ReasoningAction(kind=INVOKE_TOOL, narration=step.narration, subtask=step.subtask)
        answer = _last_numeric_result(ctx.transcript)
        if answer is None:
            raise PolicyUndefined("no numeric result to conclude from")
        return final_action(answer)


class ScriptedReasoner:
    """Deterministic planner for chain tasks; retries a failed step verbatim."""

    def session(self, problem: Problem, rng: random.Random | None = None) -> ScriptedReasonerSession:
        return ScriptedReasonerSession(problem)


class ScriptedCoderSession(_SessionBase):
    def generate(self, subtask: str) -> str:
        return build_program(subtask, "correct")


class ScriptedCoder:
    """Always emits the correct program template."""

    def session(self, problem: Problem, rng: random.Random | None = None) -> ScriptedCoderSession:
        return ScriptedCoderSession()


# --- template policy ----------------------------------------------------------


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sample_index(probs: np.ndarray, rng: random.Random) -> int:
    r = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if r < acc:
            return i
    return len(probs) - 1


@dataclass
class TemplatePolicy:
    """Categorical policy over decomposition and program-template choices."""

    decomposition_logits: dict[str, np.ndarray] = field(default_factory=dict)
    template_logits: dict[str, np.ndarray] = field(default_factory=dict)
    temperature: float = 1.0

    @classmethod
    def uniform(cls) -> "TemplatePolicy":
        return cls(
            decomposition_logits={CHAIN_FAMILY: np.zeros(len(DECOMPOSITIONS))},
            template_logits={kind: np.zeros(len(TEMPLATE_VARIANTS)) for kind in SUBTASK_KINDS},
        )

    def decomposition_probs(self, family: str = CHAIN_FAMILY) -> np.ndarray:
        return softmax(self.decomposition_logits[family], self.temperature)

    def template_probs(self, kind: str) -> np.ndarray:
        return softmax(self.template_logits[kind], self.temperature)

    def sample_decomposition(self, rng: random.Random, family: str = CHAIN_FAMILY) -> int:
        return sample_index(self.decomposition_probs(family), rng)

    def sample_template(self, kind: str, rng: random.Random) -> int:
        return sample_index(self.template_probs(kind), rng)

    def snapshot(self) -> dict:
        return {
            "decomposition_logits": {k: list(map(float, v)) for k, v in self.decomposition_logits.items()},
            "template_logits": {k: list(map(float, v)) for k, v in self.template_logits.items()},
            "temperature": self.temperature,
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "TemplatePolicy":
        return cls(
            decomposition_logits={
                k: np.array(v, dtype=np.float64) for k, v in data["decomposition_logits"].items()
            },
            template_logits={
                k: np.array(v, dtype=np.float64) for k, v in data["template_logits"].items()
            },
            temperature=data.get("temperature", 1.0),
        )


class TemplateReasonerSession(_SessionBase):
    def __init__(self, problem: Problem, policy: TemplatePolicy, rng: random.Random):
        super().__init__()
        self.spec = parse_chain_question(problem.question)
        if self.spec is None:
            raise PolicyUndefined(f"template reasoner cannot plan: {problem.question!r}")
        self.question = problem.question
        choice = policy.sample_decomposition(rng)
        self.choices.append(SampledChoice(space=f"decomposition:{CHAIN_FAMILY}", choice=choice))
        self.decomposition = DECOMPOSITIONS[choice]
        if self.decomposition == "three_step":
            self.plan = chain_plan(self.spec)
        elif self.decomposition == "one_shot":
            self.plan = [
                PlanStep(
                    "We compute the whole expression in one program.",
                    one_shot_subtask(self.question),
                )
            ]
        else:
            self.plan = []

    def next_action(self, ctx: AgentContext) -> ReasoningAction:
        if self.decomposition == "premature_answer":
            return final_action(0)
        done = len(_completed_results(ctx.transcript))
        if done < len(self.plan):
            step = self.plan[done]
            return ReasoningAction(kind=INVOKE_TOOL, narration=step.narration, subtask=step.subtask)
        answer = _last_numeric_result(ctx.transcript)
        return final_action(answer if answer is not None else 0)


class TemplateReasoner:
    def __init__(self, policy: TemplatePolicy):
        self.policy = policy

    def session(self, problem: Problem, rng: random.Random) -> TemplateReasonerSession:
        return TemplateReasonerSession(problem, self.policy, rng)


class TemplateCoderSession(_SessionBase):
    def __init__(self, policy: TemplatePolicy, rng: random.Random):
        super().__init__()
        self.policy = policy
        self.rng = rng

    def generate(self, subtask: str) -> str:
        kind = parse_subtask(subtask).kind
        choice = self.policy.sample_template(kind, self.rng)
        self.choices.append(SampledChoice(space=f"template:{kind}", choice=choice))
        return build_program(subtask, TEMPLATE_VARIANTS[choice])


class TemplateCoder:
    def __init__(self, policy: TemplatePolicy):
        self.policy = policy

    def session(self, problem: Problem, rng: random.Random) -> TemplateCoderSession:
        return TemplateCoderSession(self.policy, rng)


# --- remote completion client ---------------------------------------------------


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.7
    top_p: float = 0.95
    max_tokens: int = 512
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self):
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must lie in (0, 1]: {self.top_p}")
        if self.temperature < 0.0:
            raise ValueError(f"temperature must be >= 0: {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be positive: {self.max_tokens}")
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))


@dataclass(frozen=True)
class Endpoint:
    """Where and how to reach a text-generation HTTP API.

    reply_path walks the response JSON to the generated text; the default
    matches the common chat-completions layout.
    """

    url: str
    api_key: str = ""
    reply_path: tuple = ("choices", 0, "message", "content")
    timeout_s: float = 60.0

    @classmethod
    def from_env(cls) -> "Endpoint":
        url = os.environ.get(API_URL_ENV, "")
        if not url:
            raise BackendFailure(f"{API_URL_ENV} is not set")
        return cls(url=url, api_key=os.environ.get(API_KEY_ENV, ""))


def _walk_reply(body, path):
    node = body
    for key in path:
        try:
            node = node[key]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"reply field {path!r} missing: {exc}") from exc
    if not isinstance(node, str):
        raise MalformedResponse(f"reply field {path!r} is not text")
    return node


def truncate_at_stop(text: str, stop_sequences: tuple[str, ...]) -> str:
    cut = len(text)
    for stop in stop_sequences:
        pos = text.find(stop)
        if pos >= 0:
            cut = min(cut, pos)
    return text[:cut]


def remote_complete(
    request: CompletionRequest,
    endpoint: Endpoint,
    *,
    max_retries: int = 3,
    backoff_base_s: float = 1.0,
    backoff_factor: float = 2.0,
    sleep=time.sleep,
) -> str:
    """POST a completion request, retrying transient failures with backoff.

    At most max_retries + 1 attempts.  Auth rejections never retry.
    """
    body = {
        "model": request.model_id,
        "messages": [{"role": role, "content": content} for role, content in request.messages],
        "temperature": request.temperature,
        "top_p": request.top_p,
        "max_tokens": request.max_tokens,
        "stop": list(request.stop_sequences),
    }
    headers = {"Content-Type": "application/json"}
    if endpoint.api_key:
        headers["Authorization"] = f"Bearer {endpoint.api_key}"
    last_error = None
    for attempt in range(max_retries + 1):
        if attempt > 0:
            sleep(backoff_base_s * backoff_factor ** (attempt - 1))
        try:
            response = requests.post(
                endpoint.url, json=body, headers=headers, timeout=endpoint.timeout_s
            )
        except requests.RequestException as exc:
            last_error = f"connection failure: {exc}"
            continue
        if response.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {response.status_code})")
        if response.status_code >= 400:
            last_error = f"HTTP {response.status_code}"
            continue
        try:
            payload = response.json()
        except ValueError as exc:
            raise MalformedResponse(f"reply is not JSON: {exc}") from exc
        text = _walk_reply(payload, endpoint.reply_path)
        return truncate_at_stop(text, request.stop_sequences)
    raise TransientExhausted(f"gave up after {max_retries + 1} attempts: {last_error}")


# --- remote backends -------------------------------------------------------------


_REASONER_SYSTEM = (
    "You are the reasoning half of a two-agent math solver. Work step by step. "
    "When a computation is needed, describe the single next computational subtask "
    "in one short sentence and stop. When the answer is known, reply with a "
    'sentence containing "The final answer is <number>".'
)

_CODER_SYSTEM = (
    "You are the coding half of a two-agent math solver. Write a short, "
    "self-contained Python program that performs the requested subtask and prints "
    "the result. Reply with code only."
)


def _sanitize_lines(text: str) -> str:
    kept = []
    for line in text.split("\n"):
        s = line.strip()
        if s in (CODE_START, CODE_END):
            continue
        if line.startswith((REASONING_PREFIX, RESULT_PREFIX)):
            line = line.split(":", 1)[1].lstrip()
        kept.append(line.rstrip())
    return "\n".join(kept).strip()


class RemoteReasonerSession(_SessionBase):
    def __init__(self, problem: Problem, backend: "RemoteReasoner"):
        super().__init__()
        self.problem = problem
        self.backend = backend

    def next_action(self, ctx: AgentContext) -> ReasoningAction:
        history = render_transcript(ctx.transcript)
        user = f"Problem: {ctx.question}"
        if history:
            user += f"\n\nTranscript so far:\n{history}\n\nNext step?"
        request = CompletionRequest(
            model_id=self.backend.model_id,
            messages=(("system", _REASONER_SYSTEM), ("user", user)),
            temperature=self.backend.temperature,
            top_p=self.backend.top_p,
            max_tokens=self.backend.max_tokens,
            stop_sequences=(CODE_START,),
        )
        text = _sanitize_lines(self.backend.complete(request))
        if not text:
            raise BackendFailure("remote reasoner returned empty text")
        pos = text.find(FINAL_PHRASE)
        if pos >= 0:
            tail = text[pos + len(FINAL_PHRASE) :].split()
            if tail:
                value = normalize_text(tail[0])
                if isinstance(value, (int, float)):
                    return ReasoningAction(kind=EMIT_FINAL, narration=text, answer=value)
            # Malformed final literal: fall through and treat as one more step.
        return ReasoningAction(kind=INVOKE_TOOL, narration=text, subtask=text)


class RemoteReasoner:
    def __init__(
        self,
        endpoint: Endpoint,
        model_id: str = "default",
        *,
        temperature: float = 0.7,
        top_p: float = 0.95,
        max_tokens: int = 512,
        completer=remote_complete,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self._completer = completer

    def complete(self, request: CompletionRequest) -> str:
        return self._completer(request, self.endpoint)

    def session(self, problem: Problem, rng: random.Random | None = None) -> RemoteReasonerSession:
        return RemoteReasonerSession(problem, self)


class RemoteCoderSession(_SessionBase):
    def __init__(self, problem: Problem, backend: "RemoteCoder"):
        super().__init__()
        self.problem = problem
        self.backend = backend

    def generate(self, subtask: str) -> str:
        user = f"Problem: {self.problem.question}\nSubtask: {subtask}\nProgram:"
        request = CompletionRequest(
            model_id=self.backend.model_id,
            messages=(("system", _CODER_SYSTEM), ("user", user)),
            temperature=self.backend.temperature,
            top_p=self.backend.top_p,
            max_tokens=self.backend.max_tokens,
            stop_sequences=(CODE_END,),
        )
        text = self.backend.complete(request)
        lines = [ln for ln in text.split("\n") if ln.strip() not in (CODE_START, CODE_END)]
        if lines and lines[0].strip().lower() == "code agent:":
            lines = lines[1:]
        source = "\n".join(lines).strip("\n")
        if not source.strip():
            raise BackendFailure("remote coder returned an empty program")
        return source


class RemoteCoder:
    def __init__(
        self,
        endpoint: Endpoint,
        model_id: str = "default",
        *,
        temperature: float = 0.7,
        top_p: float = 0.95,
        max_tokens: int = 512,
        completer=remote_complete,
    ):
        self.endpoint = endpoint
        self.model_id = model_id
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self._completer = completer

    def complete(self, request: CompletionRequest) -> str:
        return self._completer(request, self.endpoint)

    def session(self, problem: Problem, rng: random.Random | None = None) -> RemoteCoderSession:
        return RemoteCoderSession(problem, self)
