# igdf/envs/behavior.py
"""
Behavior policies that generate the offline datasets.

Tabular envs get epsilon-greedy policies over the exact optimal Q of their
own MDP; the point mass gets a noisy proportional-derivative controller.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from igdf.envs.gridworld import TabularEnv
from igdf.envs.pointmass import PointMassEnv
from igdf.mdp_core import StateKind, Stream, TabularMDP, TabularPolicy, make_rng, value_iteration

logger = logging.getLogger(__name__)


class Quality(str, Enum):
    EXPERT = "expert"
    MEDIUM = "medium"
    EXPERT_MIX = "expert_mix"
    MEDIUM_REPLAY_MIX = "medium_replay_mix"
    RANDOM = "random"


EPSILON = {
    Quality.EXPERT: 0.05,
    Quality.MEDIUM: 0.3,
    Quality.EXPERT_MIX: 0.175,  # even mixture of the expert and medium policies
    Quality.RANDOM: 1.0,
}
REPLAY_EPSILON_RANGE = (0.3, 1.0)

# (kp, kd, noise scale) per quality
PD_GAINS = {
    Quality.EXPERT: (2.0, 1.0, 0.1),
    Quality.EXPERT_MIX: (2.0, 1.0, 0.3),
    Quality.MEDIUM: (1.0, 0.3, 0.5),
    Quality.MEDIUM_REPLAY_MIX: (0.5, 0.1, 1.0),
    Quality.RANDOM: (0.0, 0.0, 1.0),
}


def epsilon_greedy(q: np.ndarray, epsilon: Union[float, np.ndarray]) -> TabularPolicy:
    """
    pi(a|s) = eps(s)/|A| + (1 - eps(s)) 1[a = argmax_a Q(s, a)]; ties go to the lowest action id.
    """
    n_states, n_actions = q.shape
    epsilon = np.broadcast_to(np.asarray(epsilon, dtype=np.float64), (n_states,))
    probs = np.repeat((epsilon / n_actions)[:, None], n_actions, axis=1)
    probs[np.arange(n_states), np.argmax(q, axis=1)] += 1.0 - epsilon
    return TabularPolicy(probs=probs)


@dataclass(frozen=True)
class PdControllerPolicy:
    goal: tuple[float, float]
    kp: float
    kd: float
    noise_scale: float

    @property
    def kind(self) -> StateKind:
        return StateKind.CONTINUOUS

    def mean_action(self, state: np.ndarray) -> np.ndarray:
        error = np.asarray(self.goal) - state[:2]
        return np.clip(self.kp * error - self.kd * state[2:], -1.0, 1.0)

    def act(self, state: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
        noise = rng.standard_normal(2)
        if greedy:
            return self.mean_action(state)
        return np.clip(self.mean_action(state) + self.noise_scale * noise, -1.0, 1.0)


def make_behavior_policy(
    env: Union[TabularEnv, TabularMDP, PointMassEnv],
    quality: Union[Quality, str],
    seed: int = 0,
) -> Union[TabularPolicy, PdControllerPolicy]:
    """
    Build the behavior policy of the given quality for ``env``.

    Parameters:
    - env: a TabularEnv (or bare TabularMDP) or a PointMassEnv.
    - quality (Quality): expert, medium, expert_mix, medium_replay_mix or random.
    - seed (int): only medium_replay_mix draws randomness (one epsilon per state).

    Returns:
    - TabularPolicy for tabular envs, PdControllerPolicy for the point mass.
    """
    quality = Quality(quality)
    if isinstance(env, PointMassEnv):
        kp, kd, noise = PD_GAINS[quality]
        return PdControllerPolicy(goal=tuple(env.goal), kp=kp, kd=kd, noise_scale=noise)

    mdp = env.mdp if isinstance(env, TabularEnv) else env
    q_star = value_iteration(mdp)
    if quality is Quality.MEDIUM_REPLAY_MIX:
        rng = make_rng(seed, Stream.BEHAVIOR)
        epsilon = rng.uniform(*REPLAY_EPSILON_RANGE, size=mdp.n_states)
    else:
        epsilon = EPSILON[quality]
    logger.debug(f"Behavior policy quality={quality.value} seed={seed}")
    return epsilon_greedy(q_star, epsilon)
