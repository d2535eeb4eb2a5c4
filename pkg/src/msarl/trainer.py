"""Imitation-learning dataset construction and the toy policy-gradient loop.

The trainable policy is a handful of categoricals (decomposition choice plus
one program-template choice per subtask kind).  Imitation learning counts the
choices observed in correct trajectories and initializes logits from
Laplace-smoothed frequencies; reinforcement learning then applies the plain
score-function rule with group-relative advantages as reasoning credit and
advantage-plus-channel-reward as code credit.
"""

from __future__ import annotations

import csv
import hashlib
import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import (
    CHAIN_FAMILY,
    DECOMPOSITIONS,
    EMIT_FINAL,
    SUBTASK_KINDS,
    TEMPLATE_VARIANTS,
    ReasoningAction,
    ScriptedCoder,
    ScriptedReasoner,
    TemplateCoder,
    TemplatePolicy,
    TemplateReasoner,
    parse_subtask,
    program_variant,
    softmax,
)
from .errors import EmptyDataset, PolicyUndefined
from .protocol import CODE_REQUEST, REASONING, Transcript, render_transcript
from .rewards import CODE_AGENT
from .rollout import EpisodeConfig, Trajectory, run_episode, run_group
from .sandbox import execute_inline
from .tasks import Problem


@dataclass(frozen=True)
class ILDataset:
    reasoning_pairs: tuple[tuple[str, ReasoningAction], ...]
    code_pairs: tuple[tuple[str, str], ...]


@dataclass
class TrainConfig:
    iters: int = 500
    lr: float = 0.1
    group_size: int = 8
    seed: int = 42
    max_tool_calls: int = 8


@dataclass
class TrainReport:
    iterations: int
    pass_rate_curve: list[float]
    final_policy: dict
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "iterations": self.iterations,
                "pass_rate_curve": self.pass_rate_curve,
                "final_policy": self.final_policy,
                "seed": self.seed,
            }
        )

    def save(self, path: str | Path) -> None:
        """Write the report JSON plus a sibling CSV of the pass-rate curve."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        with path.with_suffix(".csv").open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "pass_rate"])
            for i, rate in enumerate(self.pass_rate_curve):
                writer.writerow([i, rate])


def _context_digest(transcript: Transcript) -> str:
    return hashlib.sha256(render_transcript(transcript).encode("utf-8")).hexdigest()[:16]


EMPTY_CONTEXT_DIGEST = _context_digest(Transcript())


def build_imitation_dataset(trajectories: list[Trajectory]) -> ILDataset:
    """Pairs from correct trajectories only; duplicates are kept on purpose
    since frequency drives the count-based initialization."""
    reasoning_pairs: list[tuple[str, ReasoningAction]] = []
    code_pairs: list[tuple[str, str]] = []
    kept = 0
    for traj in trajectories:
        if not traj.final_correct:
            continue
        kept += 1
        segments = traj.transcript.segments
        cursor = 0
        for action in traj.actions:
            while cursor < len(segments) and segments[cursor].kind != REASONING:
                cursor += 1
            prefix = Transcript(tuple(segments[:cursor]))
            reasoning_pairs.append((_context_digest(prefix), action))
            if cursor + 1 < len(segments) and segments[cursor + 1].kind == CODE_REQUEST:
                code_pairs.append((action.subtask, segments[cursor + 1].text))
            cursor += 1
    if kept == 0:
        raise EmptyDataset("no trajectory with a correct final answer")
    return ILDataset(tuple(reasoning_pairs), tuple(code_pairs))


def classify_decomposition(action: ReasoningAction) -> int | None:
    """Map an episode-opening action onto a decomposition choice index."""
    if action.kind == EMIT_FINAL:
        return DECOMPOSITIONS.index("premature_answer")
    try:
        kind = parse_subtask(action.subtask).kind
    except PolicyUndefined:
        return None
    if kind == "one_shot":
        return DECOMPOSITIONS.index("one_shot")
    if kind in ("base_primes", "base_naturals"):
        return DECOMPOSITIONS.index("three_step")
    return None


def init_policy_from_il(dataset: ILDataset) -> TemplatePolicy:
    """Logits = log of add-1-smoothed observed frequencies per decision point."""
    if not dataset.reasoning_pairs and not dataset.code_pairs:
        raise EmptyDataset("imitation dataset is empty")
    decomposition_counts = np.zeros(len(DECOMPOSITIONS))
    for digest, action in dataset.reasoning_pairs:
        if digest != EMPTY_CONTEXT_DIGEST:
            continue  # only the opening decision picks the decomposition
        choice = classify_decomposition(action)
        if choice is not None:
            decomposition_counts[choice] += 1
    template_counts = {kind: np.zeros(len(TEMPLATE_VARIANTS)) for kind in SUBTASK_KINDS}
    for subtask, source in dataset.code_pairs:
        try:
            kind = parse_subtask(subtask).kind
        except PolicyUndefined:
            continue
        variant = program_variant(subtask, source)
        if variant is not None:
            template_counts[kind][TEMPLATE_VARIANTS.index(variant)] += 1

    def smoothed_logits(counts: np.ndarray) -> np.ndarray:
        probs = (counts + 1.0) / (counts.sum() + len(counts))
        return np.log(probs)

    return TemplatePolicy(
        decomposition_logits={CHAIN_FAMILY: smoothed_logits(decomposition_counts)},
        template_logits={k: smoothed_logits(v) for k, v in template_counts.items()},
    )


# --- score-function machinery -------------------------------------------------


@dataclass(frozen=True)
class CreditedChoice:
    space: str
    choice: int
    credit: float


def _space_logits(policy: TemplatePolicy, space: str) -> np.ndarray:
    group, _, name = space.partition(":")
    if group == "decomposition":
        return policy.decomposition_logits[name]
    if group == "template":
        return policy.template_logits[name]
    raise KeyError(f"unknown decision space {space!r}")


def batch_objective(policy: TemplatePolicy, batch: list[CreditedChoice]) -> float:
    """Sum of credit-weighted log-probabilities of the sampled choices."""
    total = 0.0
    for item in batch:
        probs = softmax(_space_logits(policy, item.space), policy.temperature)
        total += item.credit * float(np.log(probs[item.choice]))
    return total


def batch_gradient(policy: TemplatePolicy, batch: list[CreditedChoice]) -> dict[str, np.ndarray]:
    """Analytic gradient of batch_objective with respect to each logit vector."""
    grads: dict[str, np.ndarray] = {}
    for item in batch:
        logits = _space_logits(policy, item.space)
        probs = softmax(logits, policy.temperature)
        onehot = np.zeros_like(probs)
        onehot[item.choice] = 1.0
        grad = item.credit * (onehot - probs) / policy.temperature
        grads[item.space] = grads.get(item.space, np.zeros_like(probs)) + grad
    return grads


def credited_batch(trajectories: list[Trajectory], advantages) -> list[CreditedChoice]:
    """Attach learning credit to every sampled choice in a group.

    Reasoning decisions carry the rollout advantage; code decisions carry the
    advantage plus their own channel reward (the j-th template choice pairs
    with the j-th code-channel record).
    """
    batch: list[CreditedChoice] = []
    for traj, advantage in zip(trajectories, advantages):
        code_values = [r.value for r in traj.rewards if r.recipient == CODE_AGENT]
        code_seen = 0
        for choice in traj.sampled_choices:
            if choice.space.startswith("decomposition:"):
                batch.append(CreditedChoice(choice.space, choice.choice, advantage))
            else:
                credit = advantage + code_values[code_seen]
                batch.append(CreditedChoice(choice.space, choice.choice, credit))
                code_seen += 1
    return batch


def apply_gradient(policy: TemplatePolicy, grads: dict[str, np.ndarray], lr: float) -> None:
    for space, grad in grads.items():
        _space_logits(policy, space)[:] += lr * grad


def train_toy(
    policy: TemplatePolicy,
    tasks: list[Problem],
    config: TrainConfig | None = None,
    *,
    executor=execute_inline,
) -> TrainReport:
    """Policy-gradient training over chain tasks; deterministic under seed.

    Each iteration samples one task, rolls out a group with the current
    policy, applies one accumulated score-function update, and records the
    group pass rate.
    """
    config = config or TrainConfig()
    if not tasks:
        raise EmptyDataset("no training tasks")
    if any(p.intermediate_gt is None for p in tasks):
        raise ValueError("training tasks must carry intermediate ground truth")
    rng = random.Random(config.seed)
    curve: list[float] = []
    for it in range(config.iters):
        problem = tasks[rng.randrange(len(tasks))]
        episode_config = EpisodeConfig(
            max_tool_calls=config.max_tool_calls,
            group_size=config.group_size,
            seed=config.seed + 1 + it * config.group_size,
        )
        trajectories, credit = run_group(
            problem,
            TemplateReasoner(policy),
            TemplateCoder(policy),
            episode_config,
            executor=executor,
        )
        batch = credited_batch(trajectories, credit.advantages)
        apply_gradient(policy, batch_gradient(policy, batch), config.lr)
        curve.append(credit.pass_rate)
    return TrainReport(
        iterations=config.iters,
        pass_rate_curve=curve,
        final_policy=policy.snapshot(),
        seed=config.seed,
    )


def scripted_trajectories(
    problems: list[Problem],
    *,
    repeats: int = 1,
    max_tool_calls: int = 8,
    seed: int = 0,
    executor=execute_inline,
) -> list[Trajectory]:
    """Roll the always-correct scripted agents over problems, for IL corpora."""
    out = []
    for r in range(repeats):
        for i, problem in enumerate(problems):
            out.append(
                run_episode(
                    problem,
                    ScriptedReasoner(),
                    ScriptedCoder(),
                    EpisodeConfig(max_tool_calls=max_tool_calls, seed=seed + r * len(problems) + i),
                    executor=executor,
                )
            )
    return out


def evaluate_policy(
    policy: TemplatePolicy,
    tasks: list[Problem],
    *,
    group_size: int = 8,
    seed: int = 0,
    max_tool_calls: int = 8,
    executor=execute_inline,
) -> float:
    """Mean group pass rate of the policy across tasks, without updates."""
    if not tasks:
        raise EmptyDataset("no evaluation tasks")
    rates = []
    for i, problem in enumerate(tasks):
        _, credit = run_group(
            problem,
            TemplateReasoner(policy),
            TemplateCoder(policy),
            EpisodeConfig(
                max_tool_calls=max_tool_calls,
                group_size=group_size,
                seed=seed + 1 + i * group_size,
            ),
            executor=executor,
        )
        rates.append(credit.pass_rate)
    return sum(rates) / len(rates)
