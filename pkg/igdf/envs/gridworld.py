# igdf/envs/gridworld.py
import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from igdf.mdp_core import StateKind, TabularMDP

logger = logging.getLogger(__name__)

# Action ids: 0 up, 1 right, 2 down, 3 left, as (row, col) offsets
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))


class GridworldShiftSpec(BaseModel):
    """
    A source/target gridworld pair that differs only in its slip probability
    (and, for the broken family, in one action being a no-op in the source).
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["gridworld"] = "gridworld"
    name: str = "gridworld-slip"
    width: int = Field(5, ge=1)
    height: int = Field(5, ge=1)
    slip_source: float = Field(0.4, ge=0.0, le=1.0)
    slip_target: float = Field(0.05, ge=0.0, le=1.0)
    goal: tuple[int, int] = (4, 4)  # (row, col)
    step_reward: float = 0.0
    goal_reward: float = 1.0
    discount: float = Field(0.99, ge=0.0, lt=1.0)
    horizon: int = Field(50, ge=1)
    broken_action: Optional[int] = Field(None, ge=0, le=3)

    @model_validator(mode="after")
    def _goal_inside(self) -> "GridworldShiftSpec":
        row, col = self.goal
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise ValueError(f"goal {self.goal} lies outside the {self.height}x{self.width} grid")
        return self

    @property
    def n_states(self) -> int:
        return self.width * self.height

    @property
    def goal_state(self) -> int:
        return self.goal[0] * self.width + self.goal[1]


def _move(spec: GridworldShiftSpec, state: int, direction: int) -> int:
    row, col = divmod(state, spec.width)
    d_row, d_col = MOVES[direction]
    row, col = row + d_row, col + d_col
    if not (0 <= row < spec.height and 0 <= col < spec.width):
        return state  # walls block
    return row * spec.width + col


def build_gridworld(spec: GridworldShiftSpec, slip: float, broken_action: Optional[int] = None) -> TabularMDP:
    """
    The intended move succeeds with probability 1 - slip, otherwise one of the
    three other directions is taken uniformly. The goal is absorbing and pays
    ``goal_reward`` per step; every other state pays ``step_reward``.
    """
    n_states, n_actions = spec.n_states, len(MOVES)
    transition = np.zeros((n_states, n_actions, n_states))
    for state in range(n_states):
        for action in range(n_actions):
            if state == spec.goal_state or action == broken_action:
                transition[state, action, state] = 1.0
                continue
            for direction in range(n_actions):
                prob = 1.0 - slip if direction == action else slip / 3.0
                transition[state, action, _move(spec, state, direction)] += prob

    reward = np.full((n_states, n_actions), spec.step_reward)
    reward[spec.goal_state] = spec.goal_reward

    initial = np.ones(n_states)
    if n_states > 1:
        initial[spec.goal_state] = 0.0
    return TabularMDP(
        transition=transition,
        reward=reward,
        discount=spec.discount,
        initial_dist=initial / initial.sum(),
    )


def make_gridworld_pair(spec: GridworldShiftSpec) -> tuple[TabularMDP, TabularMDP]:
    """Return (source, target) MDPs sharing states, actions and rewards."""
    source = build_gridworld(spec, spec.slip_source, broken_action=spec.broken_action)
    target = build_gridworld(spec, spec.slip_target)
    logger.debug(f"Built gridworld pair {spec.name}: slip {spec.slip_source} -> {spec.slip_target}")
    return source, target


@dataclass(frozen=True, eq=False)
class TabularEnv:
    """Stepping wrapper so tabular MDPs share the rollout protocol of continuous envs."""
    mdp: TabularMDP
    horizon: int
    env_id: str = "tabular"

    @property
    def kind(self) -> StateKind:
        return StateKind.TABULAR

    def reset(self, rng: np.random.Generator) -> int:
        return _sample(self.mdp.initial_dist, rng)

    def step(self, state: int, action: int, rng: np.random.Generator, t: int = 0) -> tuple[int, float, bool]:
        next_state = _sample(self.mdp.transition[state, action], rng)
        return next_state, float(self.mdp.reward[state, action]), t + 1 >= self.horizon


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
