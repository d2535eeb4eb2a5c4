"""End-to-end checks against the real runner package, when installed.

The primary suite never requires the runner: these tests skip cleanly in a
primary-only checkout.  Everything crosses the process boundary through the
default shim resolution, exactly as production rollouts do.
"""

from __future__ import annotations

import importlib.util

import pytest

from msarl.agents import ScriptedCoder, ScriptedReasoner
from msarl.rollout import EpisodeConfig, run_episode
from msarl.sandbox import ExecLimits, execute_program
from msarl.tasks import ChainSpec, generate_synthetic

pytestmark = pytest.mark.skipif(
    importlib.util.find_spec("msarl_shim") is None,
    reason="runner package not installed",
)


@pytest.fixture(autouse=True)
def default_resolution(monkeypatch):
    monkeypatch.delenv("MSARL_SHIM_CMD", raising=False)


def test_ok_program_through_real_runner():
    outcome = execute_program("print(2 + 2)")
    assert outcome.status == "ok"
    assert outcome.stdout == "4\n"


def test_forbidden_import_through_real_runner():
    outcome = execute_program("import os\nprint(1)")
    assert outcome.status == "forbidden_import"
    assert outcome.stdout == ""


def test_timeout_through_real_runner():
    outcome = execute_program("while True: pass", ExecLimits(timeout_ms=500))
    assert outcome.status == "timeout"
    assert outcome.wall_time_ms <= 1000


def test_scripted_episode_through_real_runner():
    problem = generate_synthetic(ChainSpec("first_n_primes", 5, "square", "sum"))
    trajectory = run_episode(
        problem, ScriptedReasoner(), ScriptedCoder(), EpisodeConfig(seed=0)
    )
    assert trajectory.final_correct
    assert [r.value for r in trajectory.rewards] == [1.0, 1.0, 1.0, 1.0]
