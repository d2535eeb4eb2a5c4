"""Run persistence: manifests plus append-only trajectory JSONL files.

A run directory holds manifest.json, trajectories.jsonl and (when the caller
provides them) a problems.jsonl copy so stored transcripts can be re-scored
later without external context.  Trajectory records embed the canonical
transcript text verbatim.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from .agents import ReasoningAction, SampledChoice
from .errors import CorruptRecord, StoreUnwritable, UnknownRun
from .protocol import parse_transcript, render_transcript
from .rewards import DEFAULT_REWARDS, RewardConfig, RewardRecord, score_transcript
from .rollout import Trajectory
from .tasks import Problem, load_problems, save_problems

MANIFEST_NAME = "manifest.json"
TRAJECTORIES_NAME = "trajectories.jsonl"
PROBLEMS_NAME = "problems.jsonl"


@dataclass(frozen=True)
class RunManifest:
    run_id: str
    created_at: str
    config: dict
    seed: int
    model_id: str | None = None

    @classmethod
    def new(cls, run_id: str, config: dict, seed: int, model_id: str | None = None) -> "RunManifest":
        return cls(
            run_id=run_id,
            created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            config=config,
            seed=seed,
            model_id=model_id,
        )


def trajectory_to_record(trajectory: Trajectory) -> dict:
    return {
        "problem_id": trajectory.problem_id,
        "seed": trajectory.seed,
        "truncated": trajectory.truncated,
        "final_correct": trajectory.final_correct,
        "transcript": render_transcript(trajectory.transcript),
        "rewards": [
            {
                "recipient": r.recipient,
                "channel": r.channel,
                "value": r.value,
                "step_index": r.step_index,
            }
            for r in trajectory.rewards
        ],
        "credits": list(trajectory.credits) if trajectory.credits is not None else None,
        "actions": [
            {
                "kind": a.kind,
                "narration": a.narration,
                "subtask": a.subtask,
                "answer": a.answer,
            }
            for a in trajectory.actions
        ],
        "sampled_choices": [
            {"space": c.space, "choice": c.choice} for c in trajectory.sampled_choices
        ],
    }


def trajectory_from_record(record: dict) -> Trajectory:
    return Trajectory(
        problem_id=record["problem_id"],
        transcript=parse_transcript(record["transcript"], truncated=record["truncated"]),
        rewards=tuple(
            RewardRecord(r["recipient"], r["channel"], r["value"], r["step_index"])
            for r in record["rewards"]
        ),
        final_correct=record["final_correct"],
        truncated=record["truncated"],
        seed=record["seed"],
        credits=tuple(record["credits"]) if record["credits"] is not None else None,
        actions=tuple(
            ReasoningAction(
                kind=a["kind"],
                narration=a["narration"],
                subtask=a["subtask"],
                answer=a["answer"],
            )
            for a in record["actions"]
        ),
        sampled_choices=tuple(
            SampledChoice(c["space"], c["choice"]) for c in record["sampled_choices"]
        ),
    )


class RunStore:
    """One directory of runs; appends are serialized through a single lock."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._append_lock = threading.Lock()

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def create_run(
        self,
        manifest: RunManifest,
        problems: list[Problem] | None = None,
    ) -> Path:
        run_dir = self.run_dir(manifest.run_id)
        if run_dir.exists():
            raise StoreUnwritable(f"run {manifest.run_id!r} already exists in {self.root}")
        try:
            run_dir.mkdir(parents=True)
            (run_dir / MANIFEST_NAME).write_text(
                json.dumps(manifest.__dict__, ensure_ascii=False, indent=2) + "\n",
                encoding="utf-8",
            )
            (run_dir / TRAJECTORIES_NAME).touch()
        except OSError as exc:
            raise StoreUnwritable(f"cannot create run directory {run_dir}: {exc}") from exc
        if problems is not None:
            save_problems(problems, run_dir / PROBLEMS_NAME)
        return run_dir

    def manifest(self, run_id: str) -> RunManifest:
        path = self.run_dir(run_id) / MANIFEST_NAME
        if not path.exists():
            raise UnknownRun(f"no run {run_id!r} under {self.root}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return RunManifest(**data)

    def problems(self, run_id: str) -> list[Problem]:
        self.manifest(run_id)
        return load_problems(self.run_dir(run_id) / PROBLEMS_NAME)

    def list_runs(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / MANIFEST_NAME).exists())


def append_trajectory(store: RunStore, run_id: str, trajectory: Trajectory) -> None:
    """Append one record; existing bytes are never rewritten."""
    store.manifest(run_id)
    line = json.dumps(trajectory_to_record(trajectory), ensure_ascii=False)
    path = store.run_dir(run_id) / TRAJECTORIES_NAME
    with store._append_lock:
        try:
            with path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        except OSError as exc:
            raise StoreUnwritable(f"cannot append to {path}: {exc}") from exc


def load_run(store: RunStore, run_id: str) -> list[Trajectory]:
    """All trajectories in append order; a corrupt line aborts with its number."""
    store.manifest(run_id)
    path = store.run_dir(run_id) / TRAJECTORIES_NAME
    trajectories: list[Trajectory] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            trajectories.append(trajectory_from_record(json.loads(line)))
        except Exception as exc:
            raise CorruptRecord(lineno, str(exc)) from exc
    return trajectories


def verify_run(
    store: RunStore,
    run_id: str,
    config: RewardConfig = DEFAULT_REWARDS,
) -> list[str]:
    """Re-score every stored transcript; returns mismatch descriptions."""
    problems = {p.id: p for p in store.problems(run_id)}
    mismatches: list[str] = []
    for i, trajectory in enumerate(load_run(store, run_id)):
        problem = problems.get(trajectory.problem_id)
        if problem is None:
            mismatches.append(f"trajectory {i}: unknown problem {trajectory.problem_id!r}")
            continue
        replayed = score_transcript(trajectory.transcript, problem, config)
        stored = list(trajectory.rewards)
        if replayed != stored:
            mismatches.append(
                f"trajectory {i}: replayed rewards {replayed!r} != stored {stored!r}"
            )
    return mismatches
