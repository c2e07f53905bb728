# igdf/mdp_core/tabular.py
"""
Tabular MDPs, policies, empirical (count-estimated) MDPs and the exact
linear-algebra oracles built on them: discounted state visitation, policy
return, value iteration and finite-horizon evaluation.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from igdf.errors import IgdfError, UnsupportedKindError
from igdf.mdp_core.dataset import Dataset, DomainTag, StateKind, Stream, domain_stream, make_rng

logger = logging.getLogger(__name__)

PROB_TOL = 1e-12


def _frozen_array(value) -> np.ndarray:
    array = np.array(value, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


class TabularMDP(BaseModel):
    """
    M = (S, A, P, r, gamma, rho0) with P indexed [state, action, next_state].
    """
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray

    @field_validator("transition", "reward", "initial_dist", mode="before")
    @classmethod
    def _to_array(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_invariants(self) -> "TabularMDP":
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError("transition must have shape (n_states, n_actions, n_states).")
        n_states, n_actions, _ = self.transition.shape
        if n_states < 1 or n_actions < 1:
            raise ValueError("MDP needs at least one state and one action.")
        if self.reward.shape != (n_states, n_actions):
            raise ValueError(f"reward must have shape {(n_states, n_actions)}, got {self.reward.shape}.")
        if self.initial_dist.shape != (n_states,):
            raise ValueError(f"initial_dist must have shape {(n_states,)}.")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(axis=2) - 1.0) > PROB_TOL):
            raise ValueError("Every transition row must be a probability vector.")
        if np.any(self.initial_dist < 0) or abs(self.initial_dist.sum() - 1.0) > PROB_TOL:
            raise ValueError("initial_dist must be a probability vector.")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}.")
        return self

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


class TabularPolicy(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    probs: np.ndarray

    @field_validator("probs", mode="before")
    @classmethod
    def _to_array(cls, value):
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check_rows(self) -> "TabularPolicy":
        if self.probs.ndim != 2:
            raise ValueError("probs must have shape (n_states, n_actions).")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > PROB_TOL):
            raise ValueError("Every policy row must be a probability vector.")
        return self

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(probs=np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def greedy(cls, q: np.ndarray) -> "TabularPolicy":
        probs = np.zeros_like(q, dtype=np.float64)
        probs[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
        return cls(probs=probs)

    @property
    def kind(self) -> StateKind:
        return StateKind.TABULAR

    def greedy_action(self, state: int) -> int:
        return int(np.argmax(self.probs[state]))

    def act(self, state: int, rng: np.random.Generator, greedy: bool = False) -> int:
        if greedy:
            return self.greedy_action(state)
        return _draw(np.cumsum(self.probs[state]), rng.random())


def _draw(cdf: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


@dataclass(frozen=True, eq=False)
class EmpiricalMDP:
    """
    Maximum-likelihood dynamics of a tabular dataset.

    ``counts`` may hold fractional weights (exact joint tensors); every
    derived quantity only depends on their ratios.
    """
    counts: np.ndarray
    p_hat: np.ndarray
    rho_hat_next: np.ndarray
    support_mask: np.ndarray

    @classmethod
    def from_counts(cls, counts: np.ndarray) -> "EmpiricalMDP":
        counts = np.array(counts, dtype=np.float64, copy=True)
        if counts.ndim != 3 or counts.shape[0] != counts.shape[2]:
            raise ValueError("counts must have shape (n_states, n_actions, n_states).")
        if np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError("counts must be non-negative with positive total.")
        row_totals = counts.sum(axis=2)
        support_mask = row_totals > 0
        p_hat = np.zeros_like(counts)
        p_hat[support_mask] = counts[support_mask] / row_totals[support_mask][:, None]
        rho_hat_next = counts.sum(axis=(0, 1)) / counts.sum()
        for array in (counts, p_hat, rho_hat_next, support_mask):
            array.setflags(write=False)
        return cls(counts=counts, p_hat=p_hat, rho_hat_next=rho_hat_next, support_mask=support_mask)

    @classmethod
    def from_joint(cls, sa_weights: np.ndarray, transition: np.ndarray) -> "EmpiricalMDP":
        """Exact empirical MDP with tuple weights q(s,a) P(s'|s,a)."""
        sa_weights = np.asarray(sa_weights, dtype=np.float64)
        transition = np.asarray(transition, dtype=np.float64)
        if sa_weights.shape != transition.shape[:2]:
            raise ValueError("sa_weights must have shape (n_states, n_actions).")
        return cls.from_counts(sa_weights[:, :, None] * transition)

    @property
    def n_states(self) -> int:
        return self.counts.shape[0]

    @property
    def n_actions(self) -> int:
        return self.counts.shape[1]

    @property
    def joint(self) -> np.ndarray:
        """Normalized tuple frequencies w(s, a, s')."""
        return self.counts / self.counts.sum()

    @property
    def sa_weights(self) -> np.ndarray:
        return self.counts.sum(axis=2) / self.counts.sum()

    def to_mdp(self, reward: np.ndarray, discount: float, initial_dist: np.ndarray) -> TabularMDP:
        """Complete p_hat into an MDP; unvisited (s, a) rows become self-loops."""
        transition = np.array(self.p_hat, copy=True)
        missing = np.argwhere(~self.support_mask)
        transition[missing[:, 0], missing[:, 1], missing[:, 0]] = 1.0
        return TabularMDP(transition=transition, reward=reward, discount=discount, initial_dist=initial_dist)


def count_tensor(dataset: Dataset, n_states: Optional[int] = None, n_actions: Optional[int] = None) -> np.ndarray:
    if dataset.kind is not StateKind.TABULAR:
        raise UnsupportedKindError(f"Empirical MDPs need a tabular dataset, got {dataset.kind.value}.")
    n_states = n_states or dataset.n_states
    n_actions = n_actions or dataset.n_actions
    counts = np.zeros((n_states, n_actions, n_states), dtype=np.float64)
    np.add.at(counts, (dataset.states, dataset.actions, dataset.next_states), 1.0)
    return counts


def estimate_empirical(
    dataset: Dataset,
    n_states: Optional[int] = None,
    n_actions: Optional[int] = None,
) -> EmpiricalMDP:
    """
    Count-based maximum-likelihood estimate of a tabular dataset's dynamics.

    Parameters:
    - dataset (Dataset): tabular transitions.
    - n_states, n_actions (int): override the dataset's declared spaces, e.g.
      to compare empiricals of two datasets over one shared space.

    Returns:
    - EmpiricalMDP with p_hat zero outside the visited (s, a) pairs.

    Raises:
    - UnsupportedKindError for continuous datasets.
    """
    return EmpiricalMDP.from_counts(count_tensor(dataset, n_states, n_actions))


def sample_dataset(
    mdp: TabularMDP,
    policy: TabularPolicy,
    n_transitions: int,
    horizon: int,
    seed: int,
    domain: DomainTag = DomainTag.TARGET,
    env_id: str = "tabular",
    behavior_id: str = "custom",
) -> Dataset:
    """
    Roll ``policy`` in ``mdp`` until exactly ``n_transitions`` are collected.

    Episodes restart from the initial distribution every ``horizon`` steps.
    Tabular transitions are never terminal; absorbing states simply loop.
    """
    if n_transitions < 1:
        raise ValueError(f"n_transitions must be >= 1, got {n_transitions}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("Policy and MDP disagree on the state/action space.")

    rng = make_rng(seed, Stream.SAMPLING, domain_stream(domain))
    init_cdf = np.cumsum(mdp.initial_dist)
    policy_cdf = np.cumsum(policy.probs, axis=1)
    transition_cdf = np.cumsum(mdp.transition, axis=2)
    uniforms = rng.random((n_transitions, 3))

    states = np.empty(n_transitions, dtype=np.int64)
    actions = np.empty(n_transitions, dtype=np.int64)
    next_states = np.empty(n_transitions, dtype=np.int64)
    state, t = _draw(init_cdf, uniforms[0, 0]), 0
    for i in range(n_transitions):
        if t == horizon:
            state, t = _draw(init_cdf, uniforms[i, 0]), 0
        action = _draw(policy_cdf[state], uniforms[i, 1])
        next_state = _draw(transition_cdf[state, action], uniforms[i, 2])
        states[i], actions[i], next_states[i] = state, action, next_state
        state, t = next_state, t + 1

    return Dataset(
        states=states,
        actions=actions,
        rewards=mdp.reward[states, actions],
        next_states=next_states,
        terminals=np.zeros(n_transitions, dtype=bool),
        domain_tag=domain,
        env_id=env_id,
        behavior_id=behavior_id,
        seed=seed,
        n_states=mdp.n_states,
        n_actions=mdp.n_actions,
    )


def policy_transition(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)."""
    return np.einsum("sa,sat->st", policy.probs, mdp.transition)


def policy_reward(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    return np.einsum("sa,sa->s", policy.probs, mdp.reward)


def discounted_visitation(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """
    Normalized discounted state occupancy, series started at t=0:

        rho = (1 - gamma) * sum_t gamma^t P(s_t = s | pi)

    solved as (I - gamma P_pi^T) rho = (1 - gamma) rho0.
    """
    p_pi = policy_transition(mdp, policy)
    system = np.eye(mdp.n_states) - mdp.discount * p_pi.T
    try:
        rho = np.linalg.solve(system, (1.0 - mdp.discount) * mdp.initial_dist)
    except np.linalg.LinAlgError as e:
        raise IgdfError(f"Visitation system is singular: {e}") from e
    rho = np.clip(rho, 0.0, None)
    return rho / rho.sum()


def policy_values(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    p_pi = policy_transition(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * p_pi, policy_reward(mdp, policy))


def policy_return(mdp: TabularMDP, policy: TabularPolicy) -> float:
    """Exact discounted return eta = rho0^T V_pi."""
    return float(mdp.initial_dist @ policy_values(mdp, policy))


def iterative_policy_evaluation(
    mdp: TabularMDP,
    policy: TabularPolicy,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    p_pi = policy_transition(mdp, policy)
    r_pi = policy_reward(mdp, policy)
    values = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        updated = r_pi + mdp.discount * p_pi @ values
        if np.max(np.abs(updated - values)) < tol:
            return updated
        values = updated
    logger.warning(f"Policy evaluation did not reach tol={tol} in {max_iter} sweeps")
    return values


def value_iteration(mdp: TabularMDP, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Optimal action values Q*[s, a]."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        updated = mdp.reward + mdp.discount * mdp.transition @ q.max(axis=1)
        if np.max(np.abs(updated - q)) < tol:
            return updated
        q = updated
    logger.warning(f"Value iteration did not reach tol={tol} in {max_iter} sweeps")
    return q


def finite_horizon_return(mdp: TabularMDP, policy: TabularPolicy, horizon: int) -> float:
    """Exact undiscounted return of ``horizon``-step episodes started from rho0."""
    p_pi = policy_transition(mdp, policy)
    r_pi = policy_reward(mdp, policy)
    values = np.zeros(mdp.n_states)
    for _ in range(horizon):
        values = r_pi + p_pi @ values
    return float(mdp.initial_dist @ values)
