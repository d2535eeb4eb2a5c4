"""Episode and group rollout engine.

One episode alternates reasoning turns with code generation and execution
until the reasoning side emits a final answer or the tool-call budget runs
out.  Executions are isolated: cross-step state is provided by prefixing each
program with every previously successful program, and the step's visible
output is the stdout suffix beyond what that prefix already printed (sound
because executions are deterministic).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from .agents import (
    EMIT_FINAL,
    AgentContext,
    ReasoningAction,
    SampledChoice,
    generate_program,
    next_reasoning_action,
)
from .errors import BackendFailure, MalformedAnswerLiteral
from .normalize import canonical_str, normalize_answer, numbers_equal
from .protocol import (
    CODE_REQUEST,
    EXECUTION_RESULT,
    FINAL_ANSWER,
    FINAL_PHRASE,
    REASONING,
    Transcript,
    append_segment,
    error_sentinel,
)
from .rewards import (
    DEFAULT_REWARDS,
    GroupCredit,
    RewardConfig,
    RewardRecord,
    broadcast_credit,
    group_advantages,
    score_code_step,
    score_final,
)
from .sandbox import ExecLimits, ExecutionOutcome, execute_program
from .tasks import Problem


@dataclass(frozen=True)
class EpisodeConfig:
    max_tool_calls: int = 8
    limits: ExecLimits = field(default_factory=ExecLimits)
    group_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.max_tool_calls < 1:
            raise ValueError("max_tool_calls must be >= 1")
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")


@dataclass(frozen=True)
class Trajectory:
    problem_id: str
    transcript: Transcript
    rewards: tuple[RewardRecord, ...]
    final_correct: bool
    truncated: bool
    seed: int
    credits: tuple[float, ...] | None = None
    actions: tuple[ReasoningAction, ...] = ()
    sampled_choices: tuple[SampledChoice, ...] = ()

    def final_reward(self) -> float:
        for record in self.rewards:
            if record.channel == "final":
                return record.value
        return 0.0


def _derive_rng(seed: int, role: str) -> random.Random:
    return random.Random(f"{seed}:{role}")


def run_episode(
    problem: Problem,
    reasoning_backend,
    code_backend,
    config: EpisodeConfig | None = None,
    *,
    seed: int | None = None,
    executor=execute_program,
    reward_config: RewardConfig = DEFAULT_REWARDS,
) -> Trajectory:
    """Roll out one episode and score it.

    The reasoning session is consulted only while tool budget remains; an
    episode whose budget runs out before a final answer is truncated and gets
    no final-channel record.
    """
    config = config or EpisodeConfig()
    episode_seed = config.seed if seed is None else seed
    rsession = reasoning_backend.session(problem, _derive_rng(episode_seed, "reasoning"))
    csession = code_backend.session(problem, _derive_rng(episode_seed, "code"))

    transcript = Transcript()
    rewards: list[RewardRecord] = []
    actions: list[ReasoningAction] = []
    gt = list(problem.intermediate_gt) if problem.intermediate_gt else []
    prefix_sources: list[str] = []
    prefix_stdout = ""
    used = 0
    truncated = True
    final_correct = False

    def fail(exc: BackendFailure) -> BackendFailure:
        exc.partial_trajectory = _assemble(
            problem, transcript, rewards, final_correct, True, episode_seed,
            actions, rsession, csession,
        )
        return exc

    while used < config.max_tool_calls:
        ctx = AgentContext(
            question=problem.question,
            transcript=transcript,
            steps_remaining=config.max_tool_calls - used + 1,
        )
        try:
            action = next_reasoning_action(ctx, rsession)
        except BackendFailure as exc:
            raise fail(exc)
        actions.append(action)

        if action.kind == EMIT_FINAL:
            narration = action.narration
            tail = (
                narration.split(FINAL_PHRASE, 1)[1].split() if FINAL_PHRASE in narration else []
            )
            if not tail:
                suffix = f"{FINAL_PHRASE}{canonical_str(action.answer)}"
                narration = f"{narration} {suffix}" if narration.strip() else suffix
            token = narration.split(FINAL_PHRASE, 1)[1].split()[0]
            try:
                normalize_answer(token)
            except MalformedAnswerLiteral:
                raise fail(
                    BackendFailure(f"final narration carries a malformed answer token {token!r}")
                ) from None
            transcript = append_segment(transcript, REASONING, narration)
            transcript = append_segment(transcript, FINAL_ANSWER, token)
            final_record = score_final(
                token,
                problem.gold_answer,
                step_index=transcript.segments[-1].index,
                config=reward_config,
            )
            rewards.append(final_record)
            final_correct = numbers_equal(final_record.value, reward_config.final_correct)
            truncated = False
            break

        transcript = append_segment(transcript, REASONING, action.narration)
        try:
            source = generate_program(action.subtask, csession)
        except BackendFailure as exc:
            raise fail(exc)
        combined = "\n".join([*prefix_sources, source]) if prefix_sources else source
        raw = executor(combined, config.limits)
        if raw.ok and raw.stdout.startswith(prefix_stdout):
            step_stdout = raw.stdout[len(prefix_stdout) :]
        else:
            step_stdout = raw.stdout
        outcome = ExecutionOutcome(raw.status, step_stdout, raw.stderr, raw.wall_time_ms)

        transcript = append_segment(transcript, CODE_REQUEST, source)
        result_text = (
            step_stdout.strip() if outcome.ok else error_sentinel(outcome.status)
        )
        transcript = append_segment(transcript, EXECUTION_RESULT, result_text)

        expected = gt[used] if used < len(gt) else None
        rewards.append(
            score_code_step(
                outcome,
                expected,
                step_index=transcript.segments[-2].index,
                config=reward_config,
            )
        )
        if outcome.ok:
            prefix_sources.append(source)
            prefix_stdout = raw.stdout
        used += 1

    return _assemble(
        problem, transcript, rewards, final_correct, truncated, episode_seed,
        actions, rsession, csession,
    )


def _assemble(problem, transcript, rewards, final_correct, truncated,
              seed, actions, rsession, csession) -> Trajectory:
    transcript = replace(transcript, truncated=truncated)
    return Trajectory(
        problem_id=problem.id,
        transcript=transcript,
        rewards=tuple(rewards),
        final_correct=final_correct,
        truncated=truncated,
        seed=seed,
        actions=tuple(actions),
        sampled_choices=tuple([*rsession.choices, *csession.choices]),
    )


def run_group(
    problem: Problem,
    reasoning_backend,
    code_backend,
    config: EpisodeConfig | None = None,
    *,
    executor=execute_program,
    reward_config: RewardConfig = DEFAULT_REWARDS,
    normalize_std: bool = False,
) -> tuple[list[Trajectory], GroupCredit]:
    """Run k independent episodes with derived seeds and attach group credit.

    Atomic: any episode failure fails the whole group.  Truncated episodes
    contribute a final reward of 0.
    """
    config = config or EpisodeConfig()
    if config.group_size < 2:
        raise ValueError("advantage groups need group_size >= 2")
    trajectories = []
    for i in range(config.group_size):
        trajectories.append(
            run_episode(
                problem,
                reasoning_backend,
                code_backend,
                config,
                seed=config.seed + i,
                executor=executor,
                reward_config=reward_config,
            )
        )
    credit = group_advantages([t.final_reward() for t in trajectories], normalize_std)
    credited = [
        replace(t, credits=tuple(broadcast_credit(t, adv)))
        for t, adv in zip(trajectories, credit.advantages)
    ]
    return credited, credit
