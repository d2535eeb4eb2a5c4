"""Acceptance gate: one test per release criterion, each printing a PASS/FAIL
line with its runtime.

The whole module is self-contained: execution goes through the in-repo stub
runner (real child processes, no installed runner package) or the in-process
executor, and nothing here talks to a network endpoint.  Run with

    pytest tests/test_acceptance.py -v -s
"""

from __future__ import annotations

import json
import random
import time
from contextlib import contextmanager

import pytest

from msarl.agents import ScriptedCoder, ScriptedReasoner, TemplatePolicy
from msarl.bands import BANDS, band_of, compare_modes
from msarl.normalize import canonical_str
from msarl.protocol import (
    EXECUTION_RESULT,
    extract_final_answer,
    parse_transcript,
    render_transcript,
)
from msarl.rewards import (
    CH_FINAL,
    CH_STRONG,
    CODE_AGENT,
    group_advantages,
    score_code_step,
    score_final,
    score_transcript,
)
from msarl.rollout import EpisodeConfig, run_episode
from msarl.sandbox import ExecutionOutcome, make_sandbox_executor
from msarl.tasks import ChainSpec, default_sweep, generate_synthetic, oracle_eval
from msarl.trainer import (
    TrainConfig,
    build_imitation_dataset,
    evaluate_policy,
    init_policy_from_il,
    scripted_trajectories,
    train_toy,
)

from test_bands import build_gap_fixture
from test_protocol import random_transcript


@contextmanager
def criterion(name: str):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE FAIL: {name} ({time.perf_counter() - start:.2f}s)")
        raise
    print(f"ACCEPTANCE PASS: {name} ({time.perf_counter() - start:.2f}s)")


def test_golden_replay(fixture_sum_primes_text, fixture_sum_squares_text):
    with criterion("golden replay"):
        # Sum of the first 10 primes: 2 strong code rewards, final +1.0, 129.
        primes_problem = generate_synthetic(ChainSpec("first_n_primes", 10, "identity", "sum"))
        transcript = parse_transcript(fixture_sum_primes_text)
        records = score_transcript(transcript, primes_problem)
        code = [r for r in records if r.recipient == CODE_AGENT]
        assert [(r.channel, r.value) for r in code] == [(CH_STRONG, 1.0)] * 2
        finals = [r for r in records if r.channel == CH_FINAL]
        assert [(r.value,) for r in finals] == [(1.0,)]
        assert extract_final_answer(transcript) == 129

        # Sum of squares of the first 5 primes: 3 strong, final +1.0, 208.
        squares_problem = generate_synthetic(ChainSpec("first_n_primes", 5, "square", "sum"))
        transcript = parse_transcript(fixture_sum_squares_text)
        records = score_transcript(transcript, squares_problem)
        code = [r for r in records if r.recipient == CODE_AGENT]
        assert [(r.channel, r.value) for r in code] == [(CH_STRONG, 1.0)] * 3
        finals = [r for r in records if r.channel == CH_FINAL]
        assert [(r.value,) for r in finals] == [(1.0,)]
        assert extract_final_answer(transcript) == 208


def test_reward_table_exactness():
    with criterion("reward-table exactness"):
        ok = lambda out: ExecutionOutcome("ok", out, "", 1)
        rows = [
            score_code_step(ok("129"), 129).value,              # ok + match
            score_code_step(ok("130"), 129).value,              # ok + mismatch
            score_code_step(ok("42"), None).value,              # ok + no GT
        ]
        error_values = {
            score_code_step(ExecutionOutcome(status, "", "x", 1), None).value
            for status in ("syntax_error", "runtime_error", "timeout",
                           "forbidden_import", "resource_limit")
        }
        assert error_values == {-0.2}
        rows.append(-0.2)
        rows.append(score_final(129, 129).value)                # final correct
        rows.append(score_final(130, 129).value)                # final incorrect
        assert rows == [1.0, -0.2, 0.1, -0.2, 1.0, 0.0]


def test_advantage_math():
    with criterion("advantage math (1000 groups, < 1 s)"):
        rng = random.Random(4242)
        start = time.perf_counter()
        for _ in range(1000):
            k = rng.randrange(2, 17)
            rewards = [float(rng.random() < 0.5) for _ in range(k)]
            credit = group_advantages(rewards, normalize_std=rng.random() < 0.5)
            raw = group_advantages(rewards, normalize_std=False)
            assert abs(sum(raw.advantages)) <= 1e-9
            assert credit.pass_rate == pytest.approx(sum(rewards) / k)
            best = max(range(k), key=lambda i: rewards[i])
            assert credit.advantages[best] == max(credit.advantages)
        assert time.perf_counter() - start < 1.0


def test_oracle_agreement(stub_shim_cmd):
    with criterion("oracle agreement (full sweep, real child processes, < 2 min)"):
        start = time.perf_counter()
        executor = make_sandbox_executor(stub_shim_cmd)
        reasoner, coder = ScriptedReasoner(), ScriptedCoder()
        for spec in default_sweep(range(1, 13)):
            problem = generate_synthetic(spec)
            trajectory = run_episode(
                problem, reasoner, coder, EpisodeConfig(seed=0), executor=executor
            )
            base, mapped, reduced = oracle_eval(spec)
            expected_chain = (
                [base, reduced] if spec.map_op == "identity" else [base, mapped, reduced]
            )
            results = [
                s.text for s in trajectory.transcript.segments if s.kind == EXECUTION_RESULT
            ]
            assert results == [canonical_str(v) for v in expected_chain], spec
            code = [r for r in trajectory.rewards if r.recipient == CODE_AGENT]
            assert all(r.channel == CH_STRONG for r in code), spec
            assert trajectory.final_correct, spec
        assert time.perf_counter() - start < 120.0


TRAIN_TASKS = [generate_synthetic(s) for s in default_sweep(range(2, 7))]


def test_toy_learning():
    with criterion("toy learning (500 iters, trailing-50 >= 0.9, reproducible, < 5 min)"):
        start = time.perf_counter()

        def one_run() -> bytes:
            policy = TemplatePolicy.uniform()
            report = train_toy(
                policy,
                TRAIN_TASKS,
                TrainConfig(iters=500, lr=0.1, group_size=8, seed=42),
            )
            return json.dumps(report.pass_rate_curve).encode("utf-8"), report

        first_bytes, report = one_run()
        trailing = report.pass_rate_curve[-50:]
        assert sum(trailing) / len(trailing) >= 0.9
        second_bytes, _ = one_run()
        assert first_bytes == second_bytes
        assert time.perf_counter() - start < 300.0


def test_il_only_initialization():
    with criterion("IL-only initialization reaches >= 0.9 with zero RL iterations"):
        dataset = build_imitation_dataset(scripted_trajectories(TRAIN_TASKS, repeats=2))
        policy = init_policy_from_il(dataset)
        rate = evaluate_policy(policy, TRAIN_TASKS, group_size=8, seed=7)
        assert rate >= 0.9


def test_gradient_check():
    with criterion("score-function gradient vs central differences (1e-5 relative)"):
        from msarl.trainer import CreditedChoice, _space_logits, batch_gradient, batch_objective

        policy = TemplatePolicy.uniform()
        rng = random.Random(99)
        for space in ["decomposition:chain", "template:reduce_sum", "template:map_cube"]:
            _space_logits(policy, space)[:] = [rng.uniform(-1, 1) for _ in range(3)]
        batch = [
            CreditedChoice(space, rng.randrange(3), rng.uniform(-1.5, 1.5))
            for space in [
                "decomposition:chain",
                "template:reduce_sum",
                "template:reduce_sum",
                "template:map_cube",
            ]
        ]
        grads = batch_gradient(policy, batch)
        eps = 1e-6
        for space, grad in grads.items():
            vec = _space_logits(policy, space)
            for i in range(len(vec)):
                orig = vec[i]
                vec[i] = orig + eps
                up = batch_objective(policy, batch)
                vec[i] = orig - eps
                down = batch_objective(policy, batch)
                vec[i] = orig
                fd = (up - down) / (2 * eps)
                assert abs(fd - grad[i]) <= 1e-5 * max(1.0, abs(fd))


def test_banding_and_aggregation():
    with criterion("banding thresholds on 1e-3 grid + mode-gap fixture to 4 dp"):
        for i in range(1001):
            accuracy = i / 1000
            band = band_of(accuracy)
            if accuracy <= 0.78:
                assert band.label == "Hard"
            elif accuracy <= 0.90:
                assert band.label == "MediumHard"
            elif accuracy <= 0.95:
                assert band.label == "MediumEasy"
            else:
                assert band.label == "Easy"
            assert sum(1 for b in BANDS if b.lower < accuracy <= b.upper) == 1

        records, accuracies = build_gap_fixture()
        report = compare_modes(records, accuracies)
        for label, target in [("Hard", 0.15), ("MediumHard", 0.12), ("Easy", 0.06)]:
            assert abs(report.gaps[label] - target) < 1e-4


def test_transcript_property_suite():
    with criterion("10^4 transcripts round-trip through render/parse"):
        rng = random.Random(31337)
        failures = 0
        for _ in range(10_000):
            t = random_transcript(rng)
            if parse_transcript(render_transcript(t)) != t:
                failures += 1
        assert failures == 0


def test_runs_without_secondary_or_network(monkeypatch):
    with criterion("suite independent of installed runner package and network"):
        # Every execution above went through the stub runner command or the
        # in-process executor, and no remote endpoint was configured.
        monkeypatch.delenv("MSARL_API_URL", raising=False)
        monkeypatch.delenv("MSARL_API_KEY", raising=False)
        from msarl.agents import Endpoint
        from msarl.errors import BackendFailure

        with pytest.raises(BackendFailure):
            Endpoint.from_env()
