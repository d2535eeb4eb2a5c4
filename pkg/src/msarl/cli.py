"""Command-line surface tying the harness together.

Subcommands: synth, rollout, train-toy, bands, eval-modes, replay.
Exit codes: 0 success, 2 usage error, 3 data error, 4 backend/deployment
error.  A JSON file passed via the global --config flag supplies defaults for
any flag not given on the command line (flat keys or per-subcommand sections,
flag names with underscores).
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import bands as bands_mod
from .agents import (
    Endpoint,
    RemoteCoder,
    RemoteReasoner,
    ScriptedCoder,
    ScriptedReasoner,
    TemplateCoder,
    TemplatePolicy,
    TemplateReasoner,
)
from .errors import BackendFailure, MsarlError, RunnerUnavailable
from .rollout import EpisodeConfig, run_group
from .sandbox import execute_inline, execute_program
from .store import RunManifest, RunStore, append_trajectory, load_run, verify_run
from .tasks import default_sweep, generate_synthetic, load_problems, save_problems
from .trainer import TrainConfig, train_toy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_BACKEND = 4

_BACKEND_ERRORS = (BackendFailure, RunnerUnavailable)


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msarl", description="Dual-agent tool-use RL harness."
    )
    parser.add_argument("--config", metavar="PATH", help="JSON config mirroring all flags")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate synthetic chain problems")
    synth.add_argument("--count", type=int, default=None)
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--out", default=None)

    rollout = sub.add_parser("rollout", help="run rollout groups over problems")
    rollout.add_argument("--problems", default=None)
    rollout.add_argument("--backend", choices=["scripted", "template", "remote"], default=None)
    rollout.add_argument("--group-size", type=int, default=None)
    rollout.add_argument("--max-tool-calls", type=int, default=None)
    rollout.add_argument("--seed", type=int, default=None)
    rollout.add_argument("--out-dir", default=None)

    train = sub.add_parser("train-toy", help="policy-gradient training of the template policy")
    train.add_argument("--tasks", default=None)
    train.add_argument("--iters", type=int, default=None)
    train.add_argument("--lr", type=float, default=None)
    train.add_argument("--group-size", type=int, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--report", default=None)

    bands = sub.add_parser("bands", help="compute banding accuracies and band assignments")
    bands.add_argument("--samples", default=None)
    bands.add_argument("--banding", default=None)
    bands.add_argument("--out", default=None)

    modes = sub.add_parser("eval-modes", help="aggregate the mode-comparison report")
    modes.add_argument("--records", default=None)
    modes.add_argument("--banding", default=None)
    modes.add_argument("--out", default=None)

    replay = sub.add_parser("replay", help="summarize or verify a stored run")
    replay.add_argument("--run-dir", default=None)
    replay.add_argument("--id", dest="run_id", default=None)
    replay.add_argument("--verify", action="store_true", default=None)

    return parser


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def resolve(args: argparse.Namespace, config: dict, key: str, default=None, required=False):
    """CLI flag, else per-command config section, else flat config, else default."""
    value = getattr(args, key, None)
    if value is None:
        section = config.get(args.command)
        if isinstance(section, dict) and key in section:
            value = section[key]
        elif key in config:
            value = config[key]
    if value is None:
        value = default
    if value is None and required:
        raise UsageError(f"missing required flag --{key.replace('_', '-')}")
    return value


def cmd_synth(args, config) -> int:
    count = int(resolve(args, config, "count", required=True))
    seed = int(resolve(args, config, "seed", 0))
    out = resolve(args, config, "out", required=True)
    if count < 1:
        raise UsageError("--count must be >= 1")
    import random

    sweep = default_sweep(range(2, 13))
    rng = random.Random(seed)
    order = list(sweep)
    rng.shuffle(order)
    problems = []
    for i in range(count):
        spec = order[i % len(order)]
        problems.append(generate_synthetic(spec, seed=seed + i // len(order)))
    save_problems(problems, out)
    print(f"wrote {len(problems)} problems to {out}")
    return EXIT_OK


def _make_backends(kind: str):
    if kind == "scripted":
        return ScriptedReasoner(), ScriptedCoder(), execute_program
    if kind == "template":
        policy = TemplatePolicy.uniform()
        return TemplateReasoner(policy), TemplateCoder(policy), execute_program
    endpoint = Endpoint.from_env()
    return RemoteReasoner(endpoint), RemoteCoder(endpoint), execute_program


def cmd_rollout(args, config) -> int:
    problems_path = resolve(args, config, "problems", required=True)
    backend = resolve(args, config, "backend", "scripted")
    group_size = int(resolve(args, config, "group_size", 8))
    max_tool_calls = int(resolve(args, config, "max_tool_calls", 8))
    seed = int(resolve(args, config, "seed", 0))
    out_dir = resolve(args, config, "out_dir", required=True)
    if group_size < 2:
        raise UsageError("--group-size must be >= 2 for advantage estimation")

    problems = load_problems(problems_path)
    store = RunStore(out_dir)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    run_id = f"run-{stamp}-s{seed}"
    manifest = RunManifest.new(
        run_id=run_id,
        config={
            "backend": backend,
            "group_size": group_size,
            "max_tool_calls": max_tool_calls,
            "problems": str(problems_path),
        },
        seed=seed,
        model_id=backend,
    )
    store.create_run(manifest, problems=problems)
    reasoner, coder, executor = _make_backends(backend)
    pass_rates = []
    for i, problem in enumerate(problems):
        episode_config = EpisodeConfig(
            max_tool_calls=max_tool_calls,
            group_size=group_size,
            seed=seed + i * group_size,
        )
        trajectories, credit = run_group(
            problem, reasoner, coder, episode_config, executor=executor
        )
        for trajectory in trajectories:
            append_trajectory(store, run_id, trajectory)
        pass_rates.append(credit.pass_rate)
        print(f"{problem.id}: pass_rate={credit.pass_rate:.3f}")
    overall = sum(pass_rates) / len(pass_rates) if pass_rates else 0.0
    print(f"run_id={run_id} problems={len(problems)} mean_pass_rate={overall:.3f}")
    return EXIT_OK


def cmd_train_toy(args, config) -> int:
    tasks_path = resolve(args, config, "tasks", required=True)
    iters = int(resolve(args, config, "iters", 500))
    lr = float(resolve(args, config, "lr", 0.1))
    group_size = int(resolve(args, config, "group_size", 8))
    seed = int(resolve(args, config, "seed", 42))
    report_path = resolve(args, config, "report", required=True)
    if group_size < 2:
        raise UsageError("--group-size must be >= 2")

    tasks = load_problems(tasks_path)
    missing_gt = [p.id for p in tasks if p.intermediate_gt is None]
    if missing_gt:
        raise MsarlError(f"tasks without intermediate ground truth: {missing_gt[:5]}")
    policy = TemplatePolicy.uniform()
    report = train_toy(
        policy,
        tasks,
        TrainConfig(iters=iters, lr=lr, group_size=group_size, seed=seed),
        executor=execute_inline,
    )
    report.save(report_path)
    tail = report.pass_rate_curve[-50:] if report.pass_rate_curve else [0.0]
    print(
        f"trained {iters} iterations; trailing-{len(tail)} mean pass rate "
        f"{sum(tail) / len(tail):.3f}; report at {report_path}"
    )
    return EXIT_OK


def cmd_bands(args, config) -> int:
    samples_path = resolve(args, config, "samples", required=True)
    banding_path = resolve(args, config, "banding", required=True)
    out_path = resolve(args, config, "out", required=True)
    records = bands_mod.load_sample_records(samples_path)
    accuracies = bands_mod.banding_accuracies(records)
    Path(banding_path).parent.mkdir(parents=True, exist_ok=True)
    Path(banding_path).write_text(
        json.dumps(accuracies, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    assignment = {
        pid: {"accuracy": acc, "band": bands_mod.band_of(acc).label}
        for pid, acc in sorted(accuracies.items())
    }
    counts: dict[str, int] = {band.label: 0 for band in bands_mod.BANDS}
    for info in assignment.values():
        counts[info["band"]] += 1
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(
        json.dumps({"problems": assignment, "counts": counts}, ensure_ascii=False, indent=2)
        + "\n",
        encoding="utf-8",
    )
    print(f"banded {len(assignment)} problems: {counts}")
    return EXIT_OK


def cmd_eval_modes(args, config) -> int:
    records_path = resolve(args, config, "records", required=True)
    banding_path = resolve(args, config, "banding", required=True)
    out_path = resolve(args, config, "out", required=True)
    records = bands_mod.load_sample_records(records_path)
    try:
        accuracies = json.loads(Path(banding_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise MsarlError(f"cannot read banding accuracies {banding_path}: {exc}") from exc
    report = bands_mod.compare_modes(records, accuracies)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json() + "\n", encoding="utf-8")
    out.with_suffix(".csv").write_text(report.to_csv(), encoding="utf-8")
    shown = {label: gap for label, gap in report.gaps.items() if gap is not None}
    print(f"per-band gaps (r_only - r_code): {shown}")
    return EXIT_OK


def cmd_replay(args, config) -> int:
    run_dir = resolve(args, config, "run_dir", required=True)
    run_id = resolve(args, config, "run_id", required=True)
    verify = bool(resolve(args, config, "verify", False))
    store = RunStore(run_dir)
    manifest = store.manifest(run_id)
    trajectories = load_run(store, run_id)
    correct = sum(1 for t in trajectories if t.final_correct)
    print(
        f"run {manifest.run_id}: {len(trajectories)} trajectories, "
        f"{correct} correct finals, seed={manifest.seed}, created={manifest.created_at}"
    )
    if verify:
        mismatches = verify_run(store, run_id)
        if mismatches:
            for line in mismatches:
                print(f"MISMATCH {line}", file=sys.stderr)
            raise MsarlError(f"{len(mismatches)} trajectories failed replay verification")
        print("replay verification: all stored rewards reproduced")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "rollout": cmd_rollout,
    "train-toy": cmd_train_toy,
    "bands": cmd_bands,
    "eval-modes": cmd_eval_modes,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return _COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _BACKEND_ERRORS as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except MsarlError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
