"""Tabular MDP substrate: datasets, empirical MDPs and exact return oracles."""

from igdf.mdp_core.dataset import (
    Dataset,
    DomainTag,
    StateKind,
    Stream,
    Transition,
    TransitionBatch,
    domain_stream,
    dumps_dataset,
    load_dataset,
    loads_dataset,
    make_rng,
    save_dataset,
    subsample,
)
from igdf.mdp_core.tabular import (
    EmpiricalMDP,
    TabularMDP,
    TabularPolicy,
    count_tensor,
    discounted_visitation,
    estimate_empirical,
    finite_horizon_return,
    iterative_policy_evaluation,
    policy_return,
    policy_transition,
    policy_values,
    sample_dataset,
    value_iteration,
)

__all__ = [
    "Dataset",
    "DomainTag",
    "EmpiricalMDP",
    "StateKind",
    "Stream",
    "TabularMDP",
    "TabularPolicy",
    "Transition",
    "TransitionBatch",
    "count_tensor",
    "discounted_visitation",
    "domain_stream",
    "dumps_dataset",
    "estimate_empirical",
    "finite_horizon_return",
    "iterative_policy_evaluation",
    "load_dataset",
    "loads_dataset",
    "make_rng",
    "policy_return",
    "policy_transition",
    "policy_values",
    "sample_dataset",
    "save_dataset",
    "subsample",
    "value_iteration",
]
