# igdf/filtering/__init__.py

"""
Module: filtering

Score-based data selection for the source half of every training batch,
the TD-loss weights that go with it, and the DARA dynamics-ratio reward
correction used as a comparison baseline.

Batch arithmetic for a total batch size B and selection ratio xi:

    target samples   = B / 2
    raw source       = ceil(B / (2 xi))
    kept source      = ceil(xi * raw source)
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from igdf.contrastive import Encoder, shared_encoding
from igdf.errors import ShapeError
from igdf.mdp_core import Dataset, Stream, TransitionBatch, make_rng
from igdf.nn import Mlp, OptimizerState, Params, adam_step
from igdf.nn.features import InputEncoding
from igdf.schemas import DaraConfig, FilterConfig, MetricsRecord, ceil_count

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FilteredBatch:
    """
    One raw source batch after top-xi selection.

    ``omega[i]`` is True exactly for the kept samples; ``threshold`` is the
    score of the lowest kept sample.
    """
    raw: TransitionBatch
    scores: np.ndarray
    omega: np.ndarray
    threshold: float

    @property
    def kept_indices(self) -> np.ndarray:
        return np.flatnonzero(self.omega)

    @property
    def kept(self) -> TransitionBatch:
        return self.raw.take(self.kept_indices)

    @property
    def kept_scores(self) -> np.ndarray:
        return self.scores[self.omega]

    def __len__(self) -> int:
        return int(self.omega.sum())


def select_top(scores: np.ndarray, xi: float) -> tuple[np.ndarray, float]:
    """
    Mask of the ceil(xi * n) highest scores and the lowest kept score.

    Ties are broken by lower index first, so the kept count is exact.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or len(scores) == 0:
        raise ValueError("Cannot filter an empty batch.")
    if not 0.0 < xi <= 1.0:
        raise ValueError(f"xi must lie in (0, 1], got {xi}")
    kept = ceil_count(xi * len(scores))
    order = np.argsort(-scores, kind="stable")
    omega = np.zeros(len(scores), dtype=bool)
    omega[order[:kept]] = True
    return omega, float(scores[order[kept - 1]])


def filter_by_scores(raw: TransitionBatch, scores: np.ndarray, xi: float) -> FilteredBatch:
    scores = np.asarray(scores, dtype=np.float64)
    if len(scores) != len(raw):
        raise ShapeError(f"Got {len(scores)} scores for a batch of {len(raw)}")
    omega, threshold = select_top(scores, xi)
    return FilteredBatch(raw=raw, scores=scores, omega=omega, threshold=threshold)


def rank_and_filter(enc: Optional[Encoder], raw_src_batch: TransitionBatch, cfg: FilterConfig) -> FilteredBatch:
    """
    Score a raw source batch with the encoder and keep its top-xi share.

    Parameters:
    - enc: trained encoder; ``None`` scores every sample 1 (no preference),
      which is how the naive-merge baseline shares this code path.
    - raw_src_batch: ceil(B / (2 xi)) source transitions.
    - cfg: filter configuration (xi, alpha, B).

    Returns:
    - FilteredBatch with the kept samples in their original order.

    Example:
    >>> filtered = rank_and_filter(enc, d_src.take(idx), FilterConfig(xi=0.25, batch_size=256))
    >>> len(filtered)
    128
    """
    if len(raw_src_batch) == 0:
        raise ValueError("Cannot filter an empty batch.")
    if enc is None:
        scores = np.ones(len(raw_src_batch))
    else:
        scores = enc.score_batch(raw_src_batch.states, raw_src_batch.actions, raw_src_batch.next_states)
    return filter_by_scores(raw_src_batch, scores, cfg.xi)


def td_weights(batch: FilteredBatch, alpha: float, use_score_weight: bool = True) -> np.ndarray:
    """
    Per-sample TD weights over the raw source batch.

    Kept samples get alpha * h (or alpha alone without score weighting);
    alpha = 0 means equal importance, weight 1. Masked-out samples get 0.
    """
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    weights = np.zeros(len(batch.scores))
    if alpha == 0:
        weights[batch.omega] = 1.0
    elif use_score_weight:
        weights[batch.omega] = alpha * batch.scores[batch.omega]
    else:
        weights[batch.omega] = alpha
    return weights


@dataclass(frozen=True, eq=False)
class MixedBatch:
    """Target half plus the kept source samples and their TD weights."""
    target: TransitionBatch
    source: TransitionBatch
    source_weights: np.ndarray
    filtered: Optional[FilteredBatch] = None

    @property
    def combined(self) -> TransitionBatch:
        return TransitionBatch.concat(self.target, self.source)

    def __len__(self) -> int:
        return len(self.target) + len(self.source)


def sample_mixed_batch(
    rng: np.random.Generator,
    d_tar: Dataset,
    d_src: Optional[Dataset],
    cfg: FilterConfig,
    enc: Optional[Encoder] = None,
) -> MixedBatch:
    """Draw B/2 target and ceil(B/(2 xi)) source samples, filter the source part."""
    tar_idx = rng.integers(0, len(d_tar), size=cfg.target_batch_size)
    target = d_tar.take(tar_idx)
    if d_src is None or len(d_src) == 0:
        empty = target.take(np.arange(0))
        return MixedBatch(target=target, source=empty, source_weights=np.zeros(0))
    src_idx = rng.integers(0, len(d_src), size=cfg.source_batch_size)
    filtered = rank_and_filter(enc, d_src.take(src_idx), cfg)
    weights = td_weights(filtered, cfg.alpha, cfg.use_score_weight)
    return MixedBatch(
        target=target,
        source=filtered.kept,
        source_weights=weights[filtered.omega],
        filtered=filtered,
    )


# ---------------------------------------------------------------- DARA baseline

class DaraClassifier:
    """
    Two domain classifiers with 2-way softmax heads: q(tar | s, a, s') and
    q(tar | s, a). Class 1 is the target domain.
    """

    def __init__(self, sas: Mlp, sa: Mlp, features: InputEncoding):
        if sas.layer_dims[0] != features.state_action_width + features.state_width:
            raise ShapeError("sas classifier input width does not match the encoding.")
        if sa.layer_dims[0] != features.state_action_width:
            raise ShapeError("sa classifier input width does not match the encoding.")
        self.sas = sas
        self.sa = sa
        self.features = features

    @classmethod
    def init(cls, cfg: DaraConfig, features: InputEncoding, rng: np.random.Generator) -> "DaraClassifier":
        sa_width = features.state_action_width
        sas = Mlp.init((sa_width + features.state_width, *cfg.hidden_dims, 2), rng, activation=cfg.activation)
        sa = Mlp.init((sa_width, *cfg.hidden_dims, 2), rng, activation=cfg.activation)
        return cls(sas, sa, features)

    def parameters(self) -> Params:
        params = {f"sas.{name}": p for name, p in self.sas.parameters().items()}
        params.update({f"sa.{name}": p for name, p in self.sa.parameters().items()})
        return params

    def inputs(self, states, actions, next_states) -> tuple[np.ndarray, np.ndarray]:
        sa_x = self.features.state_actions(states, actions)
        return np.concatenate([sa_x, self.features.states(next_states)], axis=1), sa_x

    def log_odds(self, states, actions, next_states) -> tuple[np.ndarray, np.ndarray]:
        """log q(tar)/q(src) for the sas and sa classifiers."""
        sas_x, sa_x = self.inputs(states, actions, next_states)
        sas_logits, sa_logits = self.sas(sas_x), self.sa(sa_x)
        return sas_logits[:, 1] - sas_logits[:, 0], sa_logits[:, 1] - sa_logits[:, 0]


def _cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    log_norm = logsumexp(logits, axis=1)
    rows = np.arange(len(labels))
    loss = float(np.mean(log_norm - logits[rows, labels]))
    d_logits = np.exp(logits - log_norm[:, None])
    d_logits[rows, labels] -= 1.0
    return loss, d_logits / len(labels)


def dara_loss(clf: DaraClassifier, batch: TransitionBatch, labels: np.ndarray) -> tuple[float, Params]:
    """Summed cross-entropy of both classifiers and the gradients of every parameter."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) != len(batch):
        raise ShapeError(f"Got {len(labels)} labels for a batch of {len(batch)}")
    sas_x, sa_x = clf.inputs(batch.states, batch.actions, batch.next_states)
    sas_logits, sas_cache = clf.sas.forward(sas_x)
    sa_logits, sa_cache = clf.sa.forward(sa_x)
    sas_loss, d_sas = _cross_entropy(sas_logits, labels)
    sa_loss, d_sa = _cross_entropy(sa_logits, labels)
    sas_grads, _ = clf.sas.backward(sas_cache, d_sas)
    sa_grads, _ = clf.sa.backward(sa_cache, d_sa)
    grads = {f"sas.{name}": g for name, g in sas_grads.items()}
    grads.update({f"sa.{name}": g for name, g in sa_grads.items()})
    return sas_loss + sa_loss, grads


class DaraRewardCorrection:
    """
    Δr(s,a,s') = log q_sas(tar)/q_sas(src) - log q_sa(tar)/q_sa(src),
    clipped to [-clip, clip] when called.
    """

    def __init__(self, classifier: DaraClassifier, clip: float = 10.0):
        self.classifier = classifier
        self.clip = clip

    def unclipped(self, states, actions, next_states) -> np.ndarray:
        sas_odds, sa_odds = self.classifier.log_odds(states, actions, next_states)
        return sas_odds - sa_odds

    def __call__(self, states, actions, next_states) -> np.ndarray:
        return np.clip(self.unclipped(states, actions, next_states), -self.clip, self.clip)

    def relabel(self, d_src: Dataset, coefficient: float) -> Dataset:
        """Source dataset with rewards r + coefficient * Δr."""
        delta = self(d_src.states, d_src.actions, d_src.next_states)
        return d_src.with_rewards(d_src.rewards + coefficient * delta)


def dara_baseline_train(
    d_src: Dataset,
    d_tar: Dataset,
    cfg: DaraConfig,
    run_id: str = "dara",
    records: Optional[list[MetricsRecord]] = None,
) -> DaraRewardCorrection:
    """
    Train both domain classifiers by cross-entropy on class-balanced batches
    (half source, half target) and return the reward correction.
    """
    if d_src.domain_tag is d_tar.domain_tag:
        raise ValueError(
            f"DARA needs one source and one target dataset, got two '{d_src.domain_tag.value}' datasets"
        )
    features = shared_encoding(d_src, d_tar)
    clf = DaraClassifier.init(cfg, features, make_rng(cfg.seed, Stream.DARA, 0))
    rng = make_rng(cfg.seed, Stream.DARA, 1)
    params = clf.parameters()
    optimizer = OptimizerState.for_params(params, cfg.learning_rate)
    half = cfg.batch_size // 2
    labels = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(cfg.batch_size - half, dtype=np.int64)])

    logger.info(f"Training DARA classifiers: steps={cfg.update_count}, batch={cfg.batch_size}")
    window: list[float] = []
    for step in range(cfg.update_count):
        src_idx = rng.integers(0, len(d_src), size=half)
        tar_idx = rng.integers(0, len(d_tar), size=cfg.batch_size - half)
        batch = TransitionBatch.concat(d_src.take(src_idx), d_tar.take(tar_idx))
        loss, grads = dara_loss(clf, batch, labels)
        adam_step(optimizer, params, grads)
        window.append(loss)
        if (step + 1) % cfg.log_every == 0 or step == cfg.update_count - 1:
            mean_loss = float(np.mean(window))
            logger.info(f"dara step {step + 1}/{cfg.update_count}: loss={mean_loss:.4f}")
            if records is not None:
                records.append(MetricsRecord(
                    run_id=run_id, seed=cfg.seed, step=step, phase="dara", values={"loss": mean_loss},
                ))
            window = []
    return DaraRewardCorrection(clf, clip=cfg.clip)


__all__ = [
    "DaraClassifier",
    "DaraRewardCorrection",
    "FilteredBatch",
    "MixedBatch",
    "dara_baseline_train",
    "dara_loss",
    "filter_by_scores",
    "rank_and_filter",
    "sample_mixed_batch",
    "select_top",
    "td_weights",
]
