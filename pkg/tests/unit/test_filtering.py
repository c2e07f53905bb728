# tests/unit/test_filtering.py

import math

import numpy as np
import pytest

from igdf.contrastive import Encoder, shared_encoding
from igdf.filtering import (
    DaraClassifier,
    DaraRewardCorrection,
    dara_baseline_train,
    dara_loss,
    filter_by_scores,
    rank_and_filter,
    sample_mixed_batch,
    select_top,
    td_weights,
)
from igdf.errors import ShapeError
from igdf.envs import family_spec, generate_dataset, make_env_pair, make_gridworld_pair
from igdf.info_oracle import Infinity, dynamics_ratio_exact
from igdf.mdp_core import DomainTag, TransitionBatch, estimate_empirical, make_rng
from igdf.nn import Mlp, gradient_check
from igdf.schemas import DaraConfig, FilterConfig

GRAD_TOL = 1e-5


def brute_force_top(scores, xi):
    """Reference selection: sort by (score desc, index asc) and keep ceil(xi n)."""
    kept = math.ceil(xi * len(scores) - 1e-9)
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return set(order[:kept]), scores[order[kept - 1]]


def toy_batch(n: int) -> TransitionBatch:
    ids = np.arange(n) % 3
    return TransitionBatch(ids, ids % 2, np.arange(n, dtype=float), ids, np.zeros(n, dtype=bool))


def random_encoder(features, seed: int = 0) -> Encoder:
    rng = make_rng(seed, 1)
    return Encoder(
        Mlp.init((features.state_action_width, 8, 4), rng),
        Mlp.init((features.state_width, 8, 4), rng),
        features,
    )


# ---------------------------------------------
# Top-xi selection
# ---------------------------------------------

def test_selection_matches_brute_force_on_random_batches():
    rng = make_rng(0, 7)
    for batch in range(1000):
        n = int(rng.integers(4, 513))
        xi = float(rng.choice([0.1, 0.25, 0.5, 0.75, 1.0]))
        # One decimal forces plenty of ties
        scores = np.round(rng.uniform(0.4, 2.7, size=n), 1)

        omega, threshold = select_top(scores, xi)

        expected, expected_threshold = brute_force_top(list(scores), xi)
        assert set(np.flatnonzero(omega)) == expected, f"batch {batch}: n={n}, xi={xi}"
        assert threshold == expected_threshold


@pytest.mark.parametrize("xi", [0.1, 0.25, 0.5, 0.75, 1.0], ids=lambda xi: f"xi_{xi}")
def test_kept_count_is_ceil_of_xi_n(xi):
    for n in range(4, 513):
        omega, _ = select_top(np.ones(n), xi)

        assert omega.sum() == math.ceil(xi * n - 1e-9), f"n={n}"


def test_ties_keep_lower_indices_first():
    omega, threshold = select_top(np.ones(5), 0.5)

    np.testing.assert_array_equal(omega, [True, True, True, False, False])
    assert threshold == 1.0


@pytest.mark.parametrize(
    "scores, xi, match",
    [
        (np.array([]), 0.5, "empty batch"),
        (np.ones(3), 0.0, "xi must lie"),
        (np.ones(3), 1.5, "xi must lie"),
    ],
    ids=["empty", "xi_zero", "xi_above_one"],
)
def test_selection_rejects_bad_input(scores, xi, match):
    with pytest.raises(ValueError, match=match):
        select_top(scores, xi)


def test_selection_is_invariant_to_log_scores():
    scores = make_rng(3, 7).uniform(math.exp(-1), math.e, size=64)
    raw = toy_batch(64)

    plain = filter_by_scores(raw, scores, 0.25)
    logged = filter_by_scores(raw, np.log(scores), 0.25)

    np.testing.assert_array_equal(plain.omega, logged.omega)


def test_score_count_must_match_batch():
    with pytest.raises(ShapeError):
        filter_by_scores(toy_batch(4), np.ones(3), 0.5)


def test_kept_samples_stay_in_order():
    scores = np.array([0.5, 2.0, 1.0, 2.5])

    filtered = filter_by_scores(toy_batch(4), scores, 0.5)

    np.testing.assert_array_equal(filtered.kept_indices, [1, 3])
    np.testing.assert_array_equal(filtered.kept.rewards, [1.0, 3.0])
    assert len(filtered) == 2 and filtered.threshold == 2.0


# ---------------------------------------------
# Batch arithmetic
# ---------------------------------------------

@pytest.mark.parametrize(
    "batch_size, xi, target, raw, kept",
    [
        (256, 0.25, 128, 512, 128),
        (256, 0.1, 128, 1280, 128),
        (256, 0.5, 128, 256, 128),
        (256, 0.75, 128, 171, 129),
        (256, 1.0, 128, 128, 128),
    ],
    ids=["xi_0.25", "xi_0.1", "xi_0.5", "xi_0.75", "xi_1"],
)
def test_batch_arithmetic(batch_size, xi, target, raw, kept):
    cfg = FilterConfig(xi=xi, batch_size=batch_size)

    assert (cfg.target_batch_size, cfg.source_batch_size, cfg.kept_count) == (target, raw, kept)


def test_rank_and_filter_without_encoder_keeps_the_first_samples():
    cfg = FilterConfig(xi=0.25, batch_size=16)

    filtered = rank_and_filter(None, toy_batch(cfg.source_batch_size), cfg)

    np.testing.assert_array_equal(filtered.kept_indices, np.arange(8))
    np.testing.assert_array_equal(filtered.scores, 1.0)


def test_rank_and_filter_with_encoder(grid_datasets):
    d_src, d_tar = grid_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar))
    cfg = FilterConfig(xi=0.25, batch_size=256)
    raw = d_src.take(np.arange(cfg.source_batch_size))

    filtered = rank_and_filter(enc, raw, cfg)

    assert len(filtered) == 128
    assert filtered.kept_scores.min() >= filtered.scores[~filtered.omega].max()
    assert filtered.threshold == filtered.kept_scores.min()


# ---------------------------------------------
# TD weights
# ---------------------------------------------

def test_td_weights():
    filtered = filter_by_scores(toy_batch(4), np.array([0.5, 2.0, 1.0, 2.5]), 0.5)

    np.testing.assert_array_equal(td_weights(filtered, 0.0), [0.0, 1.0, 0.0, 1.0])
    np.testing.assert_allclose(td_weights(filtered, 2.0), [0.0, 4.0, 0.0, 5.0])
    np.testing.assert_array_equal(td_weights(filtered, 2.0, use_score_weight=False), [0.0, 2.0, 0.0, 2.0])
    with pytest.raises(ValueError, match="alpha must be non-negative"):
        td_weights(filtered, -1.0)


# ---------------------------------------------
# Mixed batches
# ---------------------------------------------

def test_mixed_batch_sizes(grid_datasets, tiny_filter_cfg):
    d_src, d_tar = grid_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar))

    mixed = sample_mixed_batch(make_rng(0, 1), d_tar, d_src, tiny_filter_cfg, enc)

    assert len(mixed.target) == 8
    assert len(mixed.filtered.raw) == 32
    assert len(mixed.source) == len(mixed.source_weights) == 8
    assert len(mixed) == 16
    np.testing.assert_allclose(mixed.source_weights, mixed.filtered.kept_scores)


def test_mixed_batch_without_source(grid_datasets, tiny_filter_cfg):
    _, d_tar = grid_datasets

    mixed = sample_mixed_batch(make_rng(0, 1), d_tar, None, tiny_filter_cfg)

    assert len(mixed.source) == 0 and len(mixed.target) == 8
    assert mixed.filtered is None


def test_scoring_does_not_change_the_draws(grid_datasets, tiny_filter_cfg):
    d_src, d_tar = grid_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar))

    scored = sample_mixed_batch(make_rng(0, 1), d_tar, d_src, tiny_filter_cfg, enc)
    unscored = sample_mixed_batch(make_rng(0, 1), d_tar, d_src, tiny_filter_cfg, None)

    np.testing.assert_array_equal(scored.target.states, unscored.target.states)
    np.testing.assert_array_equal(scored.filtered.raw.rewards, unscored.filtered.raw.rewards)
    np.testing.assert_array_equal(scored.filtered.raw.next_states, unscored.filtered.raw.next_states)


# ---------------------------------------------
# DARA baseline
# ---------------------------------------------

@pytest.mark.parametrize("seed", range(20), ids=lambda s: f"instance_{s}")
def test_dara_loss_gradients(grid_datasets, seed):
    d_src, d_tar = grid_datasets
    features = shared_encoding(d_src, d_tar)
    clf = DaraClassifier.init(DaraConfig(hidden_dims=(6,)), features, make_rng(seed, 1))
    rng = make_rng(seed, 2)
    batch = TransitionBatch.concat(
        d_src.take(rng.integers(0, len(d_src), size=5)), d_tar.take(rng.integers(0, len(d_tar), size=5)),
    )
    labels = np.array([0] * 5 + [1] * 5)

    _, analytic = dara_loss(clf, batch, labels)
    errors = gradient_check(lambda: dara_loss(clf, batch, labels)[0], clf.parameters(), analytic)

    assert max(errors.values()) < GRAD_TOL, f"Gradient check failed: {errors}"


def test_dara_label_count_must_match(grid_datasets):
    d_src, d_tar = grid_datasets
    clf = DaraClassifier.init(DaraConfig(hidden_dims=(4,)), shared_encoding(d_src, d_tar), make_rng(0, 1))

    with pytest.raises(ShapeError):
        dara_loss(clf, d_src.take(np.arange(4)), np.zeros(3))


def test_dara_rejects_single_domain_input(grid_datasets, tiny_dara_cfg):
    d_src, _ = grid_datasets

    with pytest.raises(ValueError, match="one source and one target dataset"):
        dara_baseline_train(d_src, d_src.with_domain(DomainTag.SOURCE), tiny_dara_cfg)


def test_dara_correction_is_clipped(grid_datasets):
    d_src, d_tar = grid_datasets
    features = shared_encoding(d_src, d_tar)
    sas = Mlp.zeros((features.state_action_width + features.state_width, 2))
    sa = Mlp.zeros((features.state_action_width, 2))
    sas.biases[0][...] = [0.0, 50.0]
    correction = DaraRewardCorrection(DaraClassifier(sas, sa, features), clip=10.0)
    batch = d_src.take(np.arange(3))

    unclipped = correction.unclipped(batch.states, batch.actions, batch.next_states)
    clipped = correction(batch.states, batch.actions, batch.next_states)

    np.testing.assert_allclose(unclipped, 50.0)
    np.testing.assert_allclose(clipped, 10.0)
    relabeled = correction.relabel(d_src, 0.1)
    np.testing.assert_allclose(relabeled.rewards, d_src.rewards + 1.0)


def test_dara_training_records_losses(grid_datasets, tiny_dara_cfg):
    d_src, d_tar = grid_datasets
    records = []

    correction = dara_baseline_train(d_src, d_tar, tiny_dara_cfg, records=records)

    assert [r.step for r in records] == [9, 19]
    assert all(r.phase == "dara" and r.values["loss"] > 0.0 for r in records)
    delta = correction(d_src.states, d_src.actions, d_src.next_states)
    assert np.all(np.abs(delta) <= tiny_dara_cfg.clip)


@pytest.mark.slow
def test_trained_dara_correction_is_unbounded_outside_target_support():
    spec = family_spec("gridworld-broken", width=5, height=5, goal=(4, 4), horizon=25)
    pair = make_env_pair(spec)
    d_src = generate_dataset(pair, DomainTag.SOURCE, "random", 20_000, seed=0)
    d_tar = generate_dataset(pair, DomainTag.TARGET, "random", 20_000, seed=0)
    cfg = DaraConfig(
        hidden_dims=(64,), activation="relu", learning_rate=1e-2, update_count=3000, batch_size=128, log_every=1000,
    )
    _, target_mdp = make_gridworld_pair(spec)
    # The broken action stays put in the source; the target never does away from walls
    violating = target_mdp.transition[d_src.states, d_src.actions, d_src.next_states] == 0.0

    correction = dara_baseline_train(d_src, d_tar, cfg)

    args = (d_src.states[violating], d_src.actions[violating], d_src.next_states[violating])
    unclipped = correction.unclipped(*args)
    assert violating.any()
    assert np.abs(unclipped).max() > 10.0, f"Largest |Δr| outside the target support is {np.abs(unclipped).max():.2f}"
    assert np.all(np.abs(correction(*args)) <= cfg.clip)
    ratio = dynamics_ratio_exact(estimate_empirical(d_src, 25, 4), estimate_empirical(d_tar, 25, 4), d_src)
    assert ratio.value is Infinity.NEG


@pytest.mark.slow
def test_dara_correction_is_small_without_a_gap(grid_pair):
    d_tar = generate_dataset(grid_pair, DomainTag.TARGET, "medium", 4000, seed=0)
    d_src = d_tar.with_domain(DomainTag.SOURCE)
    held_out = generate_dataset(grid_pair, DomainTag.TARGET, "medium", 2000, seed=1)
    cfg = DaraConfig(hidden_dims=(16,), update_count=500, batch_size=128, learning_rate=1e-3, log_every=250)

    correction = dara_baseline_train(d_src, d_tar, cfg)

    delta = correction(held_out.states, held_out.actions, held_out.next_states)
    assert np.mean(np.abs(delta)) < 0.2, "Identical domains should give near-even classifiers"
