"""Dual-channel reward engine and group-relative credit assignment.

Code steps earn a strong reward when their output matches intermediate ground
truth, a weak reward when they merely execute with no ground truth to check
against, and a penalty on any failure or mismatch.  Final answers earn the
reasoning side a 0/1 reward, and per-group mean-centered advantages carry that
signal back onto every reasoning decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import GroupTooSmall
from .normalize import NormalizedValue, Number, normalize_answer, numbers_equal, values_equal
from .sandbox import ExecutionOutcome, normalize_stdout

REASONING_AGENT = "reasoning_agent"
CODE_AGENT = "code_agent"

CH_STRONG = "strong"
CH_WEAK = "weak"
CH_PENALTY = "penalty"
CH_FINAL = "final"

CODE_CHANNELS = (CH_STRONG, CH_WEAK, CH_PENALTY)


@dataclass(frozen=True)
class RewardConfig:
    """Reward magnitudes; the canonical defaults are +1.0 / +0.1 / -0.2 / 0|1."""

    strong: float = 1.0
    weak: float = 0.1
    penalty: float = -0.2
    final_correct: float = 1.0
    final_incorrect: float = 0.0


DEFAULT_REWARDS = RewardConfig()


@dataclass(frozen=True)
class RewardRecord:
    recipient: str
    channel: str
    value: float
    step_index: int


@dataclass(frozen=True)
class GroupCredit:
    group_size: int
    final_rewards: tuple[float, ...]
    pass_rate: float
    advantages: tuple[float, ...]


def score_code_step(
    outcome: ExecutionOutcome,
    expected: NormalizedValue | None = None,
    *,
    step_index: int = 0,
    config: RewardConfig = DEFAULT_REWARDS,
) -> RewardRecord:
    """Score one executed code step against optional intermediate ground truth.

    Any non-ok status is a penalty.  An ok run with ground truth present is
    strong on a match and a penalty on a mismatch (a wrong intermediate is
    worse than an unverifiable one); with no ground truth it is weak.
    """
    if not outcome.ok:
        channel, value = CH_PENALTY, config.penalty
    elif expected is None:
        channel, value = CH_WEAK, config.weak
    elif values_equal(normalize_stdout(outcome.stdout), expected):
        channel, value = CH_STRONG, config.strong
    else:
        channel, value = CH_PENALTY, config.penalty
    return RewardRecord(CODE_AGENT, channel, value, step_index)


def score_final(
    answer: Number | str,
    gold: Number | str,
    *,
    step_index: int = 0,
    config: RewardConfig = DEFAULT_REWARDS,
) -> RewardRecord:
    """Score the final answer against gold under numeric tolerance."""
    a = normalize_answer(answer) if isinstance(answer, str) else answer
    g = normalize_answer(gold) if isinstance(gold, str) else gold
    value = config.final_correct if numbers_equal(a, g) else config.final_incorrect
    return RewardRecord(REASONING_AGENT, CH_FINAL, value, step_index)


def group_advantages(final_rewards: list[float], normalize_std: bool = False) -> GroupCredit:
    """Mean-center a group's final rewards; optionally scale by the std dev.

    pass_rate is the mean, which for 0/1 rewards is the fraction correct.
    """
    k = len(final_rewards)
    if k < 2:
        raise GroupTooSmall(f"need at least 2 rollouts, got {k}")
    mean = sum(final_rewards) / k
    advantages = [r - mean for r in final_rewards]
    if normalize_std:
        std = math.sqrt(sum(a * a for a in advantages) / k)
        if std > 1e-8:
            advantages = [a / std for a in advantages]
    return GroupCredit(
        group_size=k,
        final_rewards=tuple(final_rewards),
        pass_rate=mean,
        advantages=tuple(advantages),
    )


def broadcast_credit(trajectory, advantage: float) -> list[float]:
    """Uniform credit: every reasoning decision point gets the rollout's
    advantage; code steps keep their own channel rewards."""
    from .protocol import REASONING  # local import to avoid a cycle at import time

    n = sum(1 for seg in trajectory.transcript.segments if seg.kind == REASONING)
    return [advantage] * n


def score_transcript(transcript, problem, config: RewardConfig = DEFAULT_REWARDS) -> list[RewardRecord]:
    """Re-score a parsed transcript against a problem's gold and GT chain.

    Execution results recorded as ``<error: STATUS>`` sentinels are treated as
    failed steps; everything else is an ok run whose stdout is the recorded
    text.  Used for replay verification and golden-fixture checks.
    """
    from .protocol import FINAL_ANSWER, parse_result_sentinel

    records: list[RewardRecord] = []
    gt = problem.intermediate_gt or []
    for pos, (req, res) in enumerate(transcript.code_steps()):
        status = parse_result_sentinel(res.text)
        if status is None:
            outcome = ExecutionOutcome("ok", res.text, "", 0)
        else:
            outcome = ExecutionOutcome(status, "", res.text, 0)
        expected = gt[pos] if pos < len(gt) else None
        records.append(score_code_step(outcome, expected, step_index=req.index, config=config))
    for seg in transcript.segments:
        if seg.kind == FINAL_ANSWER:
            records.append(
                score_final(seg.text, problem.gold_answer, step_index=seg.index, config=config)
            )
    return records
