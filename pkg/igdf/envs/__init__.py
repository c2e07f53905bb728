"""
Paired source/target environment families, behavior policies and dataset emission.

Families are looked up by name in ``FAMILIES``; ``make_env_pair`` turns any
spec into a stepping (source, target) pair with one rollout protocol for
both state kinds.
"""

import logging
from dataclasses import dataclass
from typing import Annotated, Union

import numpy as np
from pydantic import Field

from igdf.envs.behavior import (
    PdControllerPolicy,
    Quality,
    epsilon_greedy,
    make_behavior_policy,
)
from igdf.envs.gridworld import (
    GridworldShiftSpec,
    TabularEnv,
    build_gridworld,
    make_gridworld_pair,
)
from igdf.envs.pointmass import PointMassEnv, PointMassShiftSpec, make_pointmass_pair
from igdf.mdp_core import (
    Dataset,
    DomainTag,
    Stream,
    TabularMDP,
    TabularPolicy,
    domain_stream,
    make_rng,
    policy_transition,
    sample_dataset,
)

logger = logging.getLogger(__name__)

EnvSpec = Annotated[Union[GridworldShiftSpec, PointMassShiftSpec], Field(discriminator="kind")]
Env = Union[TabularEnv, PointMassEnv]

FAMILIES: dict[str, Union[GridworldShiftSpec, PointMassShiftSpec]] = {
    "gridworld-slip": GridworldShiftSpec(name="gridworld-slip"),
    "gridworld-broken": GridworldShiftSpec(
        name="gridworld-broken", slip_source=0.05, slip_target=0.05, broken_action=1,
    ),
    "pointmass-mass": PointMassShiftSpec(name="pointmass-mass"),
    "pointmass-friction": PointMassShiftSpec(
        name="pointmass-friction", mass_source=1.0, friction_source=0.5, friction_target=0.1,
    ),
    "pointmass-noise": PointMassShiftSpec(
        name="pointmass-noise", mass_source=1.0, joint_noise_source=0.5,
    ),
}


def family_spec(name: str, **overrides) -> Union[GridworldShiftSpec, PointMassShiftSpec]:
    """Look up a named family, optionally overriding some of its fields."""
    if name not in FAMILIES:
        raise ValueError(f"Unknown environment family: {name}. Known: {sorted(FAMILIES)}")
    base = FAMILIES[name]
    if not overrides:
        return base
    return type(base).model_validate({**base.model_dump(), **overrides})


@dataclass(frozen=True, eq=False)
class EnvPair:
    source: Env
    target: Env
    spec: Union[GridworldShiftSpec, PointMassShiftSpec]

    def domain(self, tag: DomainTag) -> Env:
        return self.source if DomainTag(tag) is DomainTag.SOURCE else self.target


def make_env_pair(spec: Union[GridworldShiftSpec, PointMassShiftSpec]) -> EnvPair:
    if isinstance(spec, GridworldShiftSpec):
        source_mdp, target_mdp = make_gridworld_pair(spec)
        return EnvPair(
            source=TabularEnv(source_mdp, spec.horizon, env_id=spec.name),
            target=TabularEnv(target_mdp, spec.horizon, env_id=spec.name),
            spec=spec,
        )
    source, target = make_pointmass_pair(spec)
    return EnvPair(source=source, target=target, spec=spec)


def sample_continuous_dataset(
    env: PointMassEnv,
    policy: PdControllerPolicy,
    n_transitions: int,
    seed: int,
    domain: DomainTag = DomainTag.TARGET,
    behavior_id: str = "custom",
) -> Dataset:
    """Roll ``policy`` in ``env``; episodes end (terminal) at the env horizon and restart."""
    if n_transitions < 1:
        raise ValueError(f"n_transitions must be >= 1, got {n_transitions}")
    rng = make_rng(seed, Stream.SAMPLING, domain_stream(domain))
    states = np.empty((n_transitions, env.state_dim))
    actions = np.empty((n_transitions, env.action_dim))
    rewards = np.empty(n_transitions)
    next_states = np.empty((n_transitions, env.state_dim))
    terminals = np.zeros(n_transitions, dtype=bool)

    state, t = env.reset(rng), 0
    for i in range(n_transitions):
        action = policy.act(state, rng)
        next_state, reward, terminal = env.step(state, action, rng, t)
        states[i], actions[i], rewards[i], next_states[i], terminals[i] = state, action, reward, next_state, terminal
        if terminal:
            state, t = env.reset(rng), 0
        else:
            state, t = next_state, t + 1

    return Dataset(
        states=states, actions=actions, rewards=rewards, next_states=next_states, terminals=terminals,
        domain_tag=domain, env_id=env.env_id, behavior_id=behavior_id, seed=seed,
    )


def generate_dataset(
    pair: EnvPair,
    domain: DomainTag,
    quality: Union[Quality, str],
    n_transitions: int,
    seed: int,
) -> Dataset:
    """Behavior policy of ``quality`` on the chosen domain, rolled for ``n_transitions``."""
    domain = DomainTag(domain)
    quality = Quality(quality)
    env = pair.domain(domain)
    policy = make_behavior_policy(env, quality, seed)
    logger.info(f"Generating {n_transitions} {domain.value} transitions on {env.env_id} ({quality.value})")
    if isinstance(env, TabularEnv):
        return sample_dataset(
            env.mdp, policy, n_transitions, env.horizon, seed,
            domain=domain, env_id=env.env_id, behavior_id=quality.value,
        )
    return sample_continuous_dataset(env, policy, n_transitions, seed, domain=domain, behavior_id=quality.value)


def goal_reach_probability(mdp: TabularMDP, policy: TabularPolicy, goal_state: int, horizon: int) -> np.ndarray:
    """Exact probability, per start state, of sitting in the absorbing goal after ``horizon`` steps."""
    p_pi = policy_transition(mdp, policy)
    occupancy = np.eye(mdp.n_states)
    for _ in range(horizon):
        occupancy = occupancy @ p_pi
    return occupancy[:, goal_state]


def greedy_success_rate(
    mdp: TabularMDP,
    policy: TabularPolicy,
    goal_state: int,
    horizon: int,
    threshold: float = 0.5,
) -> float:
    """
    Share of non-goal start states from which the greedy version of ``policy``
    reaches the goal within ``horizon`` steps with probability >= ``threshold``.
    """
    greedy = TabularPolicy.greedy(policy.probs)
    reach = goal_reach_probability(mdp, greedy, goal_state, horizon)
    starts = np.delete(np.arange(mdp.n_states), goal_state)
    return float(np.mean(reach[starts] >= threshold))


__all__ = [
    "EnvPair",
    "EnvSpec",
    "FAMILIES",
    "GridworldShiftSpec",
    "PdControllerPolicy",
    "PointMassEnv",
    "PointMassShiftSpec",
    "Quality",
    "TabularEnv",
    "build_gridworld",
    "epsilon_greedy",
    "family_spec",
    "generate_dataset",
    "goal_reach_probability",
    "greedy_success_rate",
    "make_behavior_policy",
    "make_env_pair",
    "make_gridworld_pair",
    "make_pointmass_pair",
    "sample_continuous_dataset",
]
