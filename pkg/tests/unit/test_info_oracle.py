# tests/unit/test_info_oracle.py

import math

import numpy as np
import pytest

from igdf.envs import build_gridworld, family_spec, make_gridworld_pair
from igdf.errors import ShapeError
from igdf.info_oracle import (
    Infinity,
    decompose_theorem2,
    dynamics_ratio_exact,
    entropy,
    exact_infonce,
    exact_mi,
    expected_dynamics_kl,
    infonce_ceiling,
    is_finite,
    kl_divergence,
    mi_gap,
    optimal_score,
    performance_bound_rhs,
    plugin_mi,
    to_float,
)
from igdf.mdp_core import DomainTag, EmpiricalMDP, TabularMDP, TabularPolicy, estimate_empirical, make_rng, policy_return


def exact_pair(spec, sa_weights=None):
    """Exact empirical MDPs of a gridworld pair under one shared (s, a) distribution."""
    source, target = make_gridworld_pair(spec)
    if sa_weights is None:
        sa_weights = np.full((source.n_states, source.n_actions), 1.0 / (source.n_states * source.n_actions))
    return EmpiricalMDP.from_joint(sa_weights, source.transition), EmpiricalMDP.from_joint(sa_weights, target.transition)


# ---------------------------------------------
# Entropy and KL primitives
# ---------------------------------------------

@pytest.mark.parametrize(
    "probs, expected",
    [
        ([0.25, 0.25, 0.25, 0.25], math.log(4)),
        ([1.0, 0.0], 0.0),
        ([0.5, 0.5, 0.0], math.log(2)),
    ],
    ids=["uniform_four", "point_mass", "zero_entry_ignored"],
)
def test_entropy(probs, expected):
    assert entropy(np.array(probs)) == pytest.approx(expected, abs=1e-12)


def test_kl_divergence_support_mismatch_is_infinite():
    assert kl_divergence([0.5, 0.5], [1.0, 0.0]) is Infinity.POS
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert kl_divergence([0.3, 0.7], [0.3, 0.7]) == pytest.approx(0.0, abs=1e-15)


def test_sentinel_helpers():
    assert not is_finite(Infinity.NEG)
    assert to_float(Infinity.POS) == math.inf
    assert to_float(Infinity.NEG) == -math.inf
    assert to_float(1.5) == 1.5


# ---------------------------------------------
# Mutual information
# ---------------------------------------------

def test_exact_mi_of_deterministic_copy():
    # s' = a for two equally likely actions: I = log 2
    transition = np.zeros((2, 2, 2))
    transition[:, 0, 0] = 1.0
    transition[:, 1, 1] = 1.0
    emp = EmpiricalMDP.from_joint(np.full((2, 2), 0.25), transition)

    result = exact_mi(emp, emp)

    assert result.value == pytest.approx(math.log(2), abs=1e-12)
    assert result.violations == []


def test_exact_mi_matches_plugin_on_own_data(grid_datasets):
    d_src, _ = grid_datasets
    emp = estimate_empirical(d_src)

    assert exact_mi(emp, d_src).value == pytest.approx(plugin_mi(emp.counts), abs=1e-10)


def test_exact_mi_support_violation_modes():
    transition = np.zeros((2, 1, 2))
    transition[:, 0, 0] = 1.0
    emp = EmpiricalMDP.from_joint(np.full((2, 1), 0.5), transition)
    sampler = np.zeros((2, 1, 2))
    sampler[0, 0, 0] = 0.75
    sampler[1, 0, 1] = 0.25  # p_hat(1 | 1, 0) = 0

    sentinel = exact_mi(emp, sampler)
    restricted = exact_mi(emp, sampler, on_violation="restrict")

    assert sentinel.value is Infinity.NEG, "A sampled tuple with zero model probability should give -inf"
    assert [(v.state, v.action, v.next_state) for v in sentinel.violations] == [(1, 0, 1)]
    assert is_finite(restricted.value)
    assert restricted.excluded_mass == pytest.approx(0.25)


def test_sampler_shape_mismatch(random_empirical_pair):
    src, _ = random_empirical_pair(0)

    with pytest.raises(ShapeError):
        exact_mi(src, np.ones((3, 2, 3)))


# ---------------------------------------------
# MI gap decomposition
# ---------------------------------------------

@pytest.mark.parametrize("seed", range(100), ids=lambda s: f"pair_{s}")
@pytest.mark.parametrize("domain", [DomainTag.SOURCE, DomainTag.TARGET], ids=["source_data", "target_data"])
def test_gap_equals_kl_decomposition(random_empirical_pair, seed, domain):
    src, tar = random_empirical_pair(seed)
    sampler = src if domain is DomainTag.SOURCE else tar

    report = decompose_theorem2(src, tar, sampler, domain)

    if domain is DomainTag.SOURCE:
        expected = report.kl_state - report.kl_dynamics
    else:
        expected = report.kl_dynamics - report.kl_state
    assert abs(report.delta_i - expected) < 1e-9, f"delta_i={report.delta_i} but KL terms give {expected}"
    assert report.delta_i == pytest.approx(report.i_tar - report.i_src, abs=1e-12)


@pytest.mark.parametrize("seed", range(20), ids=lambda s: f"pair_{s}")
def test_gap_sign_follows_the_data_domain(random_empirical_pair, seed):
    src, tar = random_empirical_pair(seed)

    on_source = mi_gap(src, tar, src)
    on_target = mi_gap(src, tar, tar)

    assert on_source.delta_i <= 1e-12, f"Source-data gap {on_source.delta_i} is positive"
    assert on_target.delta_i >= -1e-12, f"Target-data gap {on_target.delta_i} is negative"


def test_more_slippery_target_loses_information_on_source_data(small_grid_spec):
    spec = small_grid_spec.model_copy(update={"slip_source": 0.1, "slip_target": 0.4})
    src, tar = exact_pair(spec)

    report = mi_gap(src, tar, src)

    assert report.delta_i < -1e-6
    assert report.entropy_bounds_hold()


@pytest.mark.parametrize("size", [3, 5], ids=lambda n: f"grid_{n}x{n}")
def test_restricted_gap_on_broken_family_stays_within_entropy(size):
    spec = family_spec("gridworld-broken", width=size, height=size, goal=(size - 1, size - 1))
    src, tar = exact_pair(spec)

    report = mi_gap(src, tar, src, on_violation="restrict")

    assert report.finite
    assert report.violations and report.excluded_mass > 0.0
    assert abs(report.delta_i) <= max(report.h_rho_src, report.h_rho_tar) + 1e-12
    assert report.entropy_bounds_hold()


def test_identical_domains_have_no_gap(random_empirical_pair):
    src, _ = random_empirical_pair(3)

    report = mi_gap(src, src, src)

    assert report.delta_i == pytest.approx(0.0, abs=1e-12)
    assert report.kl_state == pytest.approx(0.0, abs=1e-12)
    assert report.kl_dynamics == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "slip_source, slip_target",
    [(0.4, 0.05), (0.2, 0.1), (0.05, 0.4), (0.3, 0.3)],
    ids=["slippery_source", "mild_shift", "slippery_target", "no_shift"],
)
@pytest.mark.parametrize("domain", [DomainTag.SOURCE, DomainTag.TARGET], ids=["source_data", "target_data"])
def test_gap_within_entropy_bounds(small_grid_spec, slip_source, slip_target, domain):
    spec = small_grid_spec.model_copy(update={"slip_source": slip_source, "slip_target": slip_target})
    src, tar = exact_pair(spec)

    report = mi_gap(src, tar, src if domain is DomainTag.SOURCE else tar, data_domain=domain)

    assert report.finite
    assert report.entropy_bounds_hold(), (
        f"delta_i={report.delta_i} outside [-{report.h_rho_src}, {report.h_rho_tar}]"
    )


def test_gap_on_sampled_datasets_restricts_unseen_tuples(grid_datasets):
    d_src, d_tar = grid_datasets
    src = estimate_empirical(d_src, 9, 4)
    tar = estimate_empirical(d_tar, 9, 4)

    report = mi_gap(src, tar, d_src, on_violation="restrict")

    assert report.finite, "Restricting to shared support should leave every term finite"
    assert report.data_domain is DomainTag.SOURCE
    assert abs(report.delta_i - (report.kl_state - report.kl_dynamics)) < 1e-9


def test_report_row_counts_violations():
    spec = family_spec("gridworld-broken", width=3, height=3, goal=(2, 2))
    src, tar = exact_pair(spec)

    report = mi_gap(src, tar, src)
    row = report.as_row()

    assert report.delta_i is Infinity.NEG
    assert report.entropy_bounds_hold(), "An infinite gap should satisfy the bounds vacuously"
    assert row["delta_i"] == "-inf" and row["n_violations"] > 0
    assert "violations" not in row


def test_mismatched_shapes_are_rejected(random_empirical_pair):
    src, _ = random_empirical_pair(0)
    other, _ = random_empirical_pair(0, n_states=3)

    with pytest.raises(ShapeError, match="differ in shape"):
        mi_gap(src, other, src)


# ---------------------------------------------
# Dynamics ratio and KL
# ---------------------------------------------

def test_dynamics_ratio_is_negative_infinite_where_target_vanishes():
    spec = family_spec("gridworld-broken", width=3, height=3, goal=(2, 2))
    src, tar = exact_pair(spec)

    ratio = dynamics_ratio_exact(src, tar, src)

    assert ratio.value is Infinity.NEG
    assert any(v.action == spec.broken_action for v in ratio.violations)


def test_dynamics_ratio_is_finite_for_full_support(random_empirical_pair):
    src, tar = random_empirical_pair(1)

    ratio = dynamics_ratio_exact(src, tar, src)
    report = decompose_theorem2(src, tar, src, DomainTag.SOURCE)

    assert ratio.value == pytest.approx(-report.kl_dynamics, abs=1e-12)


def test_expected_dynamics_kl(small_grid_spec):
    same = build_gridworld(small_grid_spec, 0.2)
    broken_src, broken_tar = make_gridworld_pair(small_grid_spec.model_copy(update={"broken_action": 1}))

    assert expected_dynamics_kl(same, same) == pytest.approx(0.0, abs=1e-15)
    assert expected_dynamics_kl(broken_src, broken_tar) is Infinity.POS


def test_expected_dynamics_kl_grows_with_the_slip_gap(small_grid_spec):
    source = build_gridworld(small_grid_spec, 0.05)

    # Slip gaps 0 to .4
    slips = (0.05, 0.15, 0.25, 0.35, 0.45)
    kls = [expected_dynamics_kl(source, build_gridworld(small_grid_spec, slip)) for slip in slips]

    assert all(is_finite(kl) for kl in kls)
    assert all(a < b for a, b in zip(kls, kls[1:])), f"KL is not increasing in the slip gap: {kls}"


# ---------------------------------------------
# Contrastive ceiling and exact InfoNCE
# ---------------------------------------------

def test_constant_score_loss_is_log_k(random_empirical_pair):
    src, tar = random_empirical_pair(2)

    def constant(states, actions, next_states):
        return np.ones(len(states))

    estimate = exact_infonce(constant, tar, src, k=8, n_draws=500)

    assert estimate.loss == pytest.approx(math.log(8), abs=1e-12)
    assert estimate.stderr == pytest.approx(0.0, abs=1e-12)
    assert estimate.i_nce == pytest.approx(math.log(7) - math.log(8), abs=1e-12)


@pytest.mark.parametrize("k", [2, 16, 128], ids=lambda k: f"k_{k}")
def test_optimal_critic_stays_under_ceiling(random_empirical_pair, k):
    src, tar = random_empirical_pair(4)
    ceiling = infonce_ceiling(tar, src)

    estimate = exact_infonce(optimal_score(tar), tar, src, k=k, n_draws=20_000, seed=1)

    assert ceiling.finite
    assert estimate.i_nce <= ceiling.value + 4 * estimate.stderr, (
        f"I_NCE={estimate.i_nce:.4f} exceeds the ceiling {ceiling.value:.4f}"
    )


def test_infonce_needs_two_candidates(random_empirical_pair):
    src, tar = random_empirical_pair(0)

    with pytest.raises(ValueError, match="k counts all candidates"):
        exact_infonce(optimal_score(tar), tar, src, k=1)


# ---------------------------------------------
# Performance bound
# ---------------------------------------------

def test_bound_vanishes_for_exact_identical_domains(small_grid_spec):
    target = build_gridworld(small_grid_spec, small_grid_spec.slip_target)
    tar, _ = exact_pair(small_grid_spec.model_copy(update={"slip_source": small_grid_spec.slip_target}))
    report = mi_gap(tar, tar, tar)

    rhs = performance_bound_rhs(target, tar, tar, TabularPolicy.uniform(9, 4), 1.0, report)

    assert rhs == pytest.approx(0.0, abs=1e-9)


def test_bound_is_non_positive(small_grid_spec):
    target = build_gridworld(small_grid_spec, small_grid_spec.slip_target)
    src, tar = exact_pair(small_grid_spec)
    report = mi_gap(src, tar, src)

    rhs = performance_bound_rhs(target, tar, src, TabularPolicy.uniform(9, 4), 1.0, report)

    assert is_finite(rhs) and rhs < 0.0


@pytest.mark.parametrize("seed", range(20), ids=lambda s: f"instance_{s}")
def test_bound_holds_on_random_instances(seed):
    rng = make_rng(seed, 7)
    n_states, n_actions = 5, 3
    sa_weights = rng.dirichlet(np.full(n_states * n_actions, 2.0)).reshape(n_states, n_actions)
    p_src = rng.dirichlet(np.full(n_states, 2.0), size=(n_states, n_actions))
    p_tar = rng.dirichlet(np.full(n_states, 2.0), size=(n_states, n_actions))
    p_tar_hat = np.stack([rng.dirichlet(500.0 * row) for row in p_tar.reshape(-1, n_states)]).reshape(p_tar.shape)
    reward = rng.random((n_states, n_actions))
    initial = rng.dirichlet(np.ones(n_states))
    true_tar = TabularMDP(transition=p_tar, reward=reward, discount=0.9, initial_dist=initial)
    src = EmpiricalMDP.from_joint(sa_weights, p_src)
    tar = EmpiricalMDP.from_joint(sa_weights, p_tar_hat)
    policy = TabularPolicy(probs=rng.dirichlet(np.ones(n_actions), size=n_states))
    report = mi_gap(src, tar, src)

    rhs = performance_bound_rhs(true_tar, tar, src, policy, float(reward.max()), report)
    gap = policy_return(true_tar, policy) - policy_return(src.to_mdp(reward, 0.9, initial), policy)

    assert is_finite(rhs)
    assert gap >= rhs, f"Return gap {gap:.4f} falls below the bound {rhs:.4f}"


def test_bound_needs_source_domain_report(small_grid_spec):
    target = build_gridworld(small_grid_spec, 0.05)
    src, tar = exact_pair(small_grid_spec)
    report = mi_gap(src, tar, tar, data_domain=DomainTag.TARGET)

    with pytest.raises(ValueError, match="source-domain data"):
        performance_bound_rhs(target, tar, src, TabularPolicy.uniform(9, 4), 1.0, report)
