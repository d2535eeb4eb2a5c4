"""Desk-scale dual-agent tool-use RL harness.

A reasoning policy decomposes math problems and delegates computation to a
code policy whose programs run in a restricted sandbox; dual-channel rewards
score code steps against intermediate ground truth while group-relative
advantages carry final-answer credit back to reasoning decisions.
"""

from .agents import (
    AgentContext,
    CompletionRequest,
    Endpoint,
    ReasoningAction,
    RemoteCoder,
    RemoteReasoner,
    ScriptedCoder,
    ScriptedReasoner,
    TemplateCoder,
    TemplatePolicy,
    TemplateReasoner,
    generate_program,
    next_reasoning_action,
    remote_complete,
)
from .bands import (
    Band,
    ExactMatchJudge,
    ModeReport,
    RemoteJudge,
    SampleRecord,
    band_of,
    compare_modes,
    critic_judge,
)
from .normalize import normalize_answer, normalize_text, numbers_equal, values_equal
from .protocol import (
    Segment,
    Transcript,
    extract_final_answer,
    parse_transcript,
    render_transcript,
)
from .rewards import (
    GroupCredit,
    RewardConfig,
    RewardRecord,
    broadcast_credit,
    group_advantages,
    score_code_step,
    score_final,
    score_transcript,
)
from .rollout import EpisodeConfig, Trajectory, run_episode, run_group
from .sandbox import (
    ExecLimits,
    ExecutionOutcome,
    execute_inline,
    execute_program,
    normalize_stdout,
)
from .store import RunManifest, RunStore, append_trajectory, load_run, verify_run
from .tasks import (
    ChainSpec,
    Problem,
    generate_synthetic,
    load_gsm8k,
    oracle_eval,
    parse_gold_answer,
)
from .trainer import (
    ILDataset,
    TrainConfig,
    TrainReport,
    build_imitation_dataset,
    evaluate_policy,
    init_policy_from_il,
    train_toy,
)

__version__ = "0.1.0"
