"""Goal tuples, the verifier catalog, first-achievement intrinsic rewards and
threshold monitoring.

A goal awards its intrinsic reward the first time its verifier becomes true
within an episode and never again until the next reset, so the per-episode
intrinsic total for goal l is either 0 or exactly its reward value.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import BadArity, EmptyWindow, UnknownVerifier
from .gridworld import Color, DoorState, GridEnv, Kind

# fn name -> (catalog id, number of color args)
VERIFIER_CATALOG = {
    "carrying_key": (0, 1),
    "door_open": (1, 1),
    "at_goal": (2, 0),
}

DEFAULT_WINDOW = 50
DEFAULT_TAU = 0.8
MAX_GOALS = 8
REWARD_BUDGET = 1.0


@dataclass(frozen=True)
class VerifierCall:
    """A call into the verifier catalog, e.g. carrying_key(yellow)."""

    fn: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        if self.fn not in VERIFIER_CATALOG:
            raise UnknownVerifier(f"unknown verifier: {self.fn!r}")
        _, arity = VERIFIER_CATALOG[self.fn]
        if len(self.args) != arity:
            raise BadArity(f"{self.fn} takes {arity} argument(s), got {len(self.args)}")
        for a in self.args:
            if a.upper() not in Color.__members__:
                raise BadArity(f"{self.fn}: unknown color {a!r}")

    @property
    def fn_id(self) -> int:
        return VERIFIER_CATALOG[self.fn][0]

    @property
    def color(self) -> int:
        return Color[self.args[0].upper()] if self.args else 0

    def __str__(self) -> str:
        return f"{self.fn}({', '.join(self.args)})"


@dataclass(frozen=True)
class Goal:
    """One goal tuple: text description, verifier, intrinsic reward."""

    description: str
    check: VerifierCall
    reward: float

    def __post_init__(self):
        if not self.reward > 0:
            raise ValueError(f"goal reward must be positive, got {self.reward}")


@dataclass(frozen=True)
class GoalSequence:
    goals: tuple[Goal, ...]

    def __post_init__(self):
        if not 1 <= len(self.goals) <= MAX_GOALS:
            raise ValueError(f"goal count must be in [1, {MAX_GOALS}], got {len(self.goals)}")
        if self.total_reward > REWARD_BUDGET:
            raise ValueError(f"total intrinsic reward {self.total_reward} exceeds {REWARD_BUDGET}")

    def __len__(self) -> int:
        return len(self.goals)

    @property
    def total_reward(self) -> float:
        return float(sum(g.reward for g in self.goals))

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(fn ids, color args, rewards) in the layout the kernels consume."""
        fn = np.array([g.check.fn_id for g in self.goals], dtype=np.int8)
        col = np.array([g.check.color for g in self.goals], dtype=np.int8)
        rew = np.array([g.reward for g in self.goals], dtype=np.float64)
        return fn, col, rew


_EMPTY_GOAL_ARRAYS = (
    np.zeros(0, dtype=np.int8),
    np.zeros(0, dtype=np.int8),
    np.zeros(0, dtype=np.float64),
)


def empty_goal_arrays() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _EMPTY_GOAL_ARRAYS


class GoalProgress:
    """Per-run mutable achievement state for one goal sequence.

    ``achieved`` is the live per-episode flag array (shared with the rollout
    kernels); completed episodes push a copy into a bounded history window.
    """

    def __init__(self, seq: GoalSequence, window: int = DEFAULT_WINDOW):
        self.seq = seq
        self.window = window
        self.achieved = np.zeros(len(seq), dtype=np.uint8)
        self.episode_history: deque[np.ndarray] = deque(maxlen=window)

    def end_episode(self) -> None:
        self.episode_history.append(self.achieved.copy())
        self.achieved[:] = 0

    def reset_episode_flags(self) -> None:
        self.achieved[:] = 0


@dataclass(frozen=True)
class AchievementStats:
    """Windowed per-goal rates and the aggregate achieved-intrinsic fraction."""

    checks: tuple[str, ...]
    achieved_counts: tuple[int, ...]
    episodes: int
    rates: tuple[float, ...]
    fraction: float


def eval_verifier(call: VerifierCall, env: GridEnv) -> bool:
    """Evaluate one catalog verifier against the current environment state."""
    if call.fn == "carrying_key":
        held = env.carrying
        return held is not None and held[0] == Kind.KEY and held[1] == call.color
    if call.fn == "door_open":
        dx, dy = env.door_xy[call.color]
        return dx >= 0 and env.door[dy, dx] == DoorState.OPEN
    if call.fn == "at_goal":
        return env.agent_pos == (env.goal_x, env.goal_y)
    raise UnknownVerifier(call.fn)


def goal_step_rewards(seq: GoalSequence, progress: GoalProgress,
                      env_after_step: GridEnv) -> np.ndarray:
    """Per-goal rewards for the state just reached; marks first achievements."""
    out = np.zeros(len(seq), dtype=np.float64)
    for l, g in enumerate(seq.goals):
        if not progress.achieved[l] and eval_verifier(g.check, env_after_step):
            progress.achieved[l] = 1
            out[l] = g.reward
    return out


def total_intrinsic(per_goal: np.ndarray) -> float:
    return float(np.sum(per_goal))


def achievement_stats(progress: GoalProgress) -> AchievementStats:
    n = len(progress.episode_history)
    if n == 0:
        raise EmptyWindow("no completed episode in the monitoring window")
    rewards = np.array([g.reward for g in progress.seq.goals])
    hist = np.stack(list(progress.episode_history))  # (episodes, goals)
    counts = hist.sum(axis=0)
    rates = counts / n
    fraction = float(np.mean(hist @ rewards) / rewards.sum())
    return AchievementStats(
        checks=tuple(str(g.check) for g in progress.seq.goals),
        achieved_counts=tuple(int(c) for c in counts),
        episodes=n,
        rates=tuple(float(r) for r in rates),
        fraction=fraction,
    )


def threshold_met(stats: AchievementStats, tau: float) -> bool:
    if not 0 < tau <= 1:
        raise ValueError(f"tau must be in (0, 1], got {tau}")
    return stats.fraction >= tau
