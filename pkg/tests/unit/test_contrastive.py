# tests/unit/test_contrastive.py

import math

import numpy as np
import pytest

from igdf.contrastive import (
    Encoder,
    estimate_i_nce,
    load_encoder,
    nce_loss,
    reward_mod_variant,
    save_encoder,
    score,
    shared_encoding,
    train_encoder,
)
from igdf.errors import ShapeError, UnsupportedKindError
from igdf.envs import generate_dataset, make_env_pair
from igdf.info_oracle import infonce_ceiling, mi_gap, to_float
from igdf.mdp_core import DomainTag, StateKind, estimate_empirical, make_rng
from igdf.nn import Mlp, gradient_check
from igdf.nn.features import InputEncoding, StateEncoding

GRAD_TOL = 1e-5
TABULAR = InputEncoding(kind=StateKind.TABULAR, encoding=StateEncoding.ONE_HOT, n_states=3, n_actions=2)


def fixed_encoder(phi_bias, psi_weight) -> Encoder:
    """phi ignores its input and emits ``phi_bias``; psi maps one-hot state i to ``psi_weight[i]``."""
    phi = Mlp.zeros((TABULAR.state_action_width, len(phi_bias)))
    phi.biases[0][...] = phi_bias
    psi = Mlp.zeros((TABULAR.state_width, len(phi_bias)))
    psi.weights[0][...] = psi_weight
    return Encoder(phi, psi, TABULAR)


def random_encoder(features: InputEncoding, seed: int = 0, dim: int = 4) -> Encoder:
    rng = make_rng(seed, 1)
    phi = Mlp.init((features.state_action_width, 8, dim), rng)
    psi = Mlp.init((features.state_width, 8, dim), rng)
    return Encoder(phi, psi, features)


# ---------------------------------------------
# Scores
# ---------------------------------------------

@pytest.mark.parametrize(
    "next_state, expected",
    [(0, math.e), (1, 1.0), (2, math.exp(-1.0))],
    ids=["aligned", "orthogonal", "opposite"],
)
def test_score_endpoints(next_state, expected):
    enc = fixed_encoder([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])

    assert score(enc, 0, 1, next_state) == pytest.approx(expected, abs=1e-12)


def test_score_batch_returns_array():
    enc = fixed_encoder([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])

    scores = score(enc, np.array([0, 1, 2]), np.array([0, 1, 0]), np.array([0, 1, 2]))

    assert isinstance(scores, np.ndarray) and scores.shape == (3,)
    assert isinstance(score(enc, 0, 0, 0), float)


def test_random_encoder_scores_are_bounded(grid_datasets):
    d_src, _ = grid_datasets
    enc = random_encoder(InputEncoding.for_dataset(d_src))

    scores = enc.score_batch(d_src.states, d_src.actions, d_src.next_states)

    assert scores.min() >= math.exp(-1.0) - 1e-12 and scores.max() <= math.e + 1e-12


def test_encoder_rejects_mismatched_networks():
    phi = Mlp.zeros((TABULAR.state_action_width, 3))
    psi = Mlp.zeros((TABULAR.state_width, 4))

    with pytest.raises(ShapeError, match="representation dimension"):
        Encoder(phi, psi, TABULAR)


# ---------------------------------------------
# Contrastive loss
# ---------------------------------------------

def test_uninformative_encoder_loss_is_log_k():
    # Every candidate gets the same score
    enc = fixed_encoder([1.0, 0.0], np.tile([1.0, 0.0], (3, 1)))
    negatives = np.array([[1, 2, 0, 1, 2, 0, 1], [2, 2, 2, 2, 2, 2, 2]])

    result = nce_loss(enc, np.array([0, 1]), np.array([0, 1]), np.array([0, 1]), negatives)

    assert result.loss == pytest.approx(math.log(8), abs=1e-12)


def test_two_candidate_closed_form():
    # Positive logit +1, negative logit -1: L = log(1 + e^-2)
    enc = fixed_encoder([1.0, 0.0], [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])

    result = nce_loss(enc, np.array([0]), np.array([0]), np.array([0]), np.array([[1]]))

    assert result.loss == pytest.approx(math.log1p(math.exp(-2.0)), abs=1e-12)
    assert result.loss == pytest.approx(0.126928, abs=1e-6)


@pytest.mark.parametrize("seed", range(20), ids=lambda s: f"instance_{s}")
def test_tabular_loss_gradients(grid_datasets, seed):
    d_src, d_tar = grid_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar), seed=seed)
    rng = make_rng(seed, 2)
    pos = rng.integers(0, len(d_tar), size=6)
    negatives = d_src.next_states[rng.integers(0, len(d_src), size=(6, 5))]
    args = (d_tar.states[pos], d_tar.actions[pos], d_tar.next_states[pos], negatives)

    analytic = nce_loss(enc, *args).grads
    errors = gradient_check(lambda: nce_loss(enc, *args, compute_grads=False).loss, enc.parameters(), analytic)

    assert max(errors.values()) < GRAD_TOL, f"Gradient check failed: {errors}"


@pytest.mark.parametrize("seed", range(20), ids=lambda s: f"instance_{s}")
def test_continuous_loss_gradients(pointmass_datasets, seed):
    d_src, d_tar = pointmass_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar), seed=seed)
    rng = make_rng(seed, 3)
    pos = rng.integers(0, len(d_tar), size=4)
    negatives = d_src.next_states[rng.integers(0, len(d_src), size=(4, 3))]
    args = (d_tar.states[pos], d_tar.actions[pos], d_tar.next_states[pos], negatives)

    analytic = nce_loss(enc, *args).grads
    errors = gradient_check(lambda: nce_loss(enc, *args, compute_grads=False).loss, enc.parameters(), analytic)

    assert max(errors.values()) < GRAD_TOL, f"Gradient check failed: {errors}"


def test_loss_needs_negatives():
    enc = fixed_encoder([1.0, 0.0], np.eye(3, 2))

    with pytest.raises(ValueError, match="non-empty set of negatives"):
        nce_loss(enc, np.array([0]), np.array([0]), np.array([0]), np.zeros((1, 0), dtype=int))
    with pytest.raises(ShapeError):
        nce_loss(enc, np.array([0, 1]), np.array([0, 1]), np.array([0, 1]), np.zeros((3, 2), dtype=int))


def test_shared_encoding_rejects_mixed_kinds(grid_datasets, pointmass_datasets):
    with pytest.raises(UnsupportedKindError):
        shared_encoding(grid_datasets[0], pointmass_datasets[1])


# ---------------------------------------------
# Training and estimation
# ---------------------------------------------

def test_train_encoder_records_and_determinism(grid_datasets, tiny_contrastive_cfg):
    d_src, d_tar = grid_datasets

    enc, records = train_encoder(tiny_contrastive_cfg, d_src, d_tar)
    again, _ = train_encoder(tiny_contrastive_cfg, d_src, d_tar)

    assert [r.step for r in records] == [9, 19]
    assert all(r.phase == "encoder" for r in records)
    for record in records:
        assert record.values["i_nce_estimate"] == pytest.approx(math.log(7) - record.values["loss"])
    np.testing.assert_array_equal(enc.phi.flat(), again.phi.flat())
    np.testing.assert_array_equal(enc.psi.flat(), again.psi.flat())


@pytest.mark.slow
def test_training_lowers_the_loss(grid_datasets, tiny_contrastive_cfg):
    d_src, d_tar = grid_datasets
    cfg = tiny_contrastive_cfg.model_copy(update={"update_count": 400, "learning_rate": 1e-2, "log_every": 50})

    _, records = train_encoder(cfg, d_src, d_tar)

    assert records[-1].values["loss"] < records[0].values["loss"], "Training should reduce the contrastive loss"
    assert records[-1].values["i_nce_estimate"] > records[0].values["i_nce_estimate"]


def test_estimate_i_nce(grid_datasets):
    d_src, d_tar = grid_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar))

    mean, stderr = estimate_i_nce(enc, d_src, d_tar, k=8, n_eval_batches=5, batch_size=32)
    again = estimate_i_nce(enc, d_src, d_tar, k=8, n_eval_batches=5, batch_size=32)

    assert (mean, stderr) == again
    assert mean <= math.log(7) - math.log1p(7 * math.exp(-2.0)), "Scores in [1/e, e] cap I_NCE"
    assert stderr >= 0.0
    with pytest.raises(ValueError, match="k counts all candidates"):
        estimate_i_nce(enc, d_src, d_tar, k=1, n_eval_batches=5)


# ---------------------------------------------
# Reward-modification variant and checkpoints
# ---------------------------------------------

def test_reward_mod_variant_shifts_rewards(grid_datasets):
    d_src, d_tar = grid_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar))

    modified = reward_mod_variant(enc, d_src, sigma=0.5)
    unchanged = reward_mod_variant(enc, d_src, sigma=0.0)

    expected = d_src.rewards + 0.5 * enc.inner(d_src.states, d_src.actions, d_src.next_states)
    np.testing.assert_allclose(modified.rewards, expected)
    np.testing.assert_array_equal(unchanged.rewards, d_src.rewards)
    assert len(modified) == len(d_src), "Nothing should be filtered out"


@pytest.mark.parametrize("binary", [False, True], ids=["text", "binary"])
def test_encoder_checkpoint(tmp_path, grid_datasets, binary):
    d_src, d_tar = grid_datasets
    enc = random_encoder(shared_encoding(d_src, d_tar))

    loaded = load_encoder(save_encoder(enc, tmp_path / "encoder.ckpt", seed=3, binary=binary))

    np.testing.assert_array_equal(
        loaded.score_batch(d_src.states, d_src.actions, d_src.next_states),
        enc.score_batch(d_src.states, d_src.actions, d_src.next_states),
    )
    assert loaded.features == enc.features
    assert loaded.dim == 4


def test_records_hold_window_means(grid_datasets, tiny_contrastive_cfg):
    d_src, d_tar = grid_datasets

    _, every_step = train_encoder(tiny_contrastive_cfg.model_copy(update={"log_every": 1}), d_src, d_tar)
    _, windowed = train_encoder(tiny_contrastive_cfg, d_src, d_tar)

    per_step = [r.values["loss"] for r in every_step]
    assert len(per_step) == tiny_contrastive_cfg.update_count
    assert windowed[0].values["loss"] == pytest.approx(np.mean(per_step[:10]), abs=1e-12)
    assert windowed[1].values["loss"] == pytest.approx(np.mean(per_step[10:]), abs=1e-12)


# ---------------------------------------------
# Trained encoders against the exact oracle
# ---------------------------------------------

def trained_cfg(cfg):
    return cfg.model_copy(update={"update_count": 300, "learning_rate": 1e-2, "batch_size": 64, "log_every": 100})


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(10), ids=lambda s: f"instance_{s}")
def test_trained_i_nce_stays_under_the_ceiling(small_grid_spec, tiny_contrastive_cfg, seed):
    slip = make_rng(seed, 5).uniform(0.2, 0.5)
    pair = make_env_pair(small_grid_spec.model_copy(update={"slip_source": slip}))
    d_src = generate_dataset(pair, DomainTag.SOURCE, "medium", 2000, seed=seed)
    d_tar = generate_dataset(pair, DomainTag.TARGET, "medium", 2000, seed=seed)
    cfg = trained_cfg(tiny_contrastive_cfg).model_copy(update={"seed": seed})

    enc, _ = train_encoder(cfg, d_src, d_tar)
    mean, stderr = estimate_i_nce(enc, d_src, d_tar, k=cfg.k, n_eval_batches=20, batch_size=128)
    ceiling = infonce_ceiling(estimate_empirical(d_tar, 9, 4), estimate_empirical(d_src, 9, 4))

    assert mean <= to_float(ceiling.value) + 3 * stderr, f"I_NCE={mean:.4f} above the ceiling {ceiling.value}"


@pytest.mark.slow
def test_i_nce_grows_with_the_candidate_count(grid_datasets, tiny_contrastive_cfg):
    d_src, d_tar = grid_datasets
    enc, _ = train_encoder(trained_cfg(tiny_contrastive_cfg), d_src, d_tar)

    estimates = [estimate_i_nce(enc, d_src, d_tar, k=k, n_eval_batches=50, batch_size=128) for k in (4, 16, 64)]

    for (low, low_se), (high, high_se) in zip(estimates, estimates[1:]):
        assert high >= low - 3 * (low_se + high_se), f"I_NCE fell from {low:.4f} to {high:.4f} as K grew"


@pytest.mark.slow
def test_same_domain_data_scores_alike(grid_pair, tiny_contrastive_cfg):
    d_tar = generate_dataset(grid_pair, DomainTag.TARGET, "medium", 20_000, seed=0)
    d_src = generate_dataset(grid_pair, DomainTag.TARGET, "medium", 20_000, seed=1).with_domain(DomainTag.SOURCE)
    held_src = generate_dataset(grid_pair, DomainTag.TARGET, "medium", 20_000, seed=2)
    held_tar = generate_dataset(grid_pair, DomainTag.TARGET, "medium", 20_000, seed=3)

    enc, _ = train_encoder(trained_cfg(tiny_contrastive_cfg), d_src, d_tar)
    src_scores = enc.score_batch(held_src.states, held_src.actions, held_src.next_states)
    tar_scores = enc.score_batch(held_tar.states, held_tar.actions, held_tar.next_states)
    report = mi_gap(estimate_empirical(d_src, 9, 4), estimate_empirical(d_tar, 9, 4), d_src, on_violation="restrict")

    assert abs(src_scores.mean() - tar_scores.mean()) < 0.05
    assert abs(report.delta_i) < 0.05


@pytest.mark.slow
def test_scores_favor_target_consistent_transitions(grid_datasets, tiny_contrastive_cfg):
    d_src, d_tar = grid_datasets
    enc, _ = train_encoder(trained_cfg(tiny_contrastive_cfg), d_src, d_tar)
    in_support = estimate_empirical(d_tar, 9, 4).p_hat[d_src.states, d_src.actions, d_src.next_states] > 0

    scores = enc.score_batch(d_src.states, d_src.actions, d_src.next_states)

    assert in_support.any() and (~in_support).any()
    assert scores[in_support].mean() > scores[~in_support].mean()
