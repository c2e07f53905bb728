# igdf/contrastive/__init__.py

"""
Module: contrastive

The representation learner: phi(s, a) and psi(s') networks whose unit-norm
outputs define the score h = exp(phi . psi) in [1/e, e], the contrastive
loss over one target positive and K-1 source negatives, its training loop,
and the I_NCE = log(K-1) - L_NCE estimator.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import logsumexp

from igdf.errors import ShapeError, UnsupportedKindError
from igdf.mdp_core import Dataset, StateKind, Stream, make_rng
from igdf.nn import (
    Mlp,
    OptimizerState,
    Params,
    adam_step,
    normalize_sphere,
    normalize_sphere_backward,
    parse_header_fields,
    read_net,
    write_net,
)
from igdf.nn.features import InputEncoding
from igdf.schemas import ContrastiveConfig, MetricsRecord

logger = logging.getLogger(__name__)

ENCODER_TAG = "igdf-encoder v1"


class Encoder:
    """phi: (s ⊕ a) -> R^d and psi: s' -> R^d, both sphere-normalized."""

    def __init__(self, phi: Mlp, psi: Mlp, features: InputEncoding):
        if phi.layer_dims[-1] != psi.layer_dims[-1]:
            raise ShapeError("phi and psi must share the representation dimension.")
        if phi.layer_dims[0] != features.state_action_width or psi.layer_dims[0] != features.state_width:
            raise ShapeError("Network input widths do not match the input encoding.")
        self.phi = phi
        self.psi = psi
        self.features = features

    @classmethod
    def init(cls, cfg: ContrastiveConfig, features: InputEncoding, rng: np.random.Generator) -> "Encoder":
        phi = Mlp.init((features.state_action_width, *cfg.hidden_dims, cfg.dim), rng)
        psi = Mlp.init((features.state_width, *cfg.hidden_dims, cfg.dim), rng)
        return cls(phi, psi, features)

    @property
    def dim(self) -> int:
        return self.phi.layer_dims[-1]

    def parameters(self) -> Params:
        params = {f"phi.{name}": p for name, p in self.phi.parameters().items()}
        params.update({f"psi.{name}": p for name, p in self.psi.parameters().items()})
        return params

    def embed_state_actions(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return normalize_sphere(self.phi(self.features.state_actions(states, actions)))[0]

    def embed_next_states(self, next_states: np.ndarray) -> np.ndarray:
        return normalize_sphere(self.psi(self.features.states(next_states)))[0]

    def inner(self, states: np.ndarray, actions: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        """phi(s,a) . psi(s') in [-1, 1] per transition."""
        u = self.embed_state_actions(states, actions)
        v = self.embed_next_states(next_states)
        if u.shape != v.shape:
            raise ShapeError(f"Batch sizes differ: {u.shape[0]} state-actions vs {v.shape[0]} next states")
        return np.clip(np.sum(u * v, axis=1), -1.0, 1.0)

    def score_batch(self, states: np.ndarray, actions: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        return np.exp(self.inner(states, actions, next_states))


def score(enc: Encoder, s, a, s_next) -> Union[float, np.ndarray]:
    """
    h(s, a, s') = exp(phi(s,a) . psi(s')), in [1/e, e].

    Scalar tabular ids (or single continuous vectors) return a float;
    batches return an array.
    """
    s, a, s_next = np.asarray(s), np.asarray(a), np.asarray(s_next)
    single_ndim = 0 if enc.features.kind is StateKind.TABULAR else 1
    if s.ndim == single_ndim:
        return float(enc.score_batch(s[None], a[None], s_next[None])[0])
    return enc.score_batch(s, a, s_next)


@dataclass
class NceResult:
    loss: float
    grads: Params
    logits: np.ndarray


def nce_loss(
    enc: Encoder,
    states: np.ndarray,
    actions: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    compute_grads: bool = True,
) -> NceResult:
    """
    L = -mean_b log[ h(s,a,s'_B) / sum over {s'_B} ∪ S'^- of h(s,a,s') ].

    Parameters:
    - states, actions, positives: the target positives (s, a, s'_B), batch B.
    - negatives: K-1 source next states per positive, shape (B, K-1) for
      tabular ids or (B, K-1, state_dim) for vectors.

    psi runs once per distinct candidate next state; its gradients are
    scattered back with np.add.at.
    """
    batch = len(positives)
    negatives = np.asarray(negatives)
    if negatives.ndim < 2 or negatives.shape[1] == 0:
        raise ValueError("Every positive needs a non-empty set of negatives.")
    if negatives.shape[0] != batch or len(states) != batch or len(actions) != batch:
        raise ShapeError(f"Expected {batch} negative sets, got {negatives.shape[0]}")

    tabular = enc.features.kind is StateKind.TABULAR
    candidates = np.concatenate([np.asarray(positives)[:, None], negatives], axis=1)
    k = candidates.shape[1]
    flat = candidates.reshape(batch * k) if tabular else candidates.reshape(batch * k, -1)
    unique, inverse = np.unique(flat, axis=None if tabular else 0, return_inverse=True)
    inverse = inverse.reshape(batch, k)

    u_raw, phi_cache = enc.phi.forward(enc.features.state_actions(states, actions))
    u, u_sphere = normalize_sphere(u_raw)
    v_raw, psi_cache = enc.psi.forward(enc.features.states(unique))
    v, v_sphere = normalize_sphere(v_raw)

    candidate_v = v[inverse]  # (B, K, d)
    logits = np.einsum("bd,bkd->bk", u, candidate_v)
    log_norm = logsumexp(logits, axis=1)
    loss = float(np.mean(log_norm - logits[:, 0]))
    if not compute_grads:
        return NceResult(loss=loss, grads={}, logits=logits)

    d_logits = np.exp(logits - log_norm[:, None])
    d_logits[:, 0] -= 1.0
    d_logits /= batch
    d_u = np.einsum("bk,bkd->bd", d_logits, candidate_v)
    d_v = np.zeros_like(v)
    np.add.at(d_v, inverse, d_logits[:, :, None] * u[:, None, :])

    phi_grads, _ = enc.phi.backward(phi_cache, normalize_sphere_backward(u_sphere, d_u))
    psi_grads, _ = enc.psi.backward(psi_cache, normalize_sphere_backward(v_sphere, d_v))
    grads = {f"phi.{name}": g for name, g in phi_grads.items()}
    grads.update({f"psi.{name}": g for name, g in psi_grads.items()})
    return NceResult(loss=loss, grads=grads, logits=logits)


def shared_encoding(d_src: Dataset, d_tar: Dataset, encoding=None) -> InputEncoding:
    """One input encoding covering both datasets."""
    if d_src.kind is not d_tar.kind:
        raise UnsupportedKindError(f"Dataset kinds differ: {d_src.kind.value} vs {d_tar.kind.value}")
    features = InputEncoding.for_dataset(d_tar, encoding)
    if d_tar.kind is StateKind.TABULAR:
        return InputEncoding(
            kind=features.kind,
            encoding=features.encoding,
            n_states=max(d_src.n_states, d_tar.n_states),
            n_actions=max(d_src.n_actions, d_tar.n_actions),
        )
    if (d_src.state_dim, d_src.action_dim) != (d_tar.state_dim, d_tar.action_dim):
        raise ShapeError("Source and target datasets differ in state/action dimension.")
    return features


def _draw_batch(rng: np.random.Generator, d_src: Dataset, d_tar: Dataset, batch_size: int, k: int):
    pos = rng.integers(0, len(d_tar), size=batch_size)
    neg = rng.integers(0, len(d_src), size=(batch_size, k - 1))
    return d_tar.states[pos], d_tar.actions[pos], d_tar.next_states[pos], d_src.next_states[neg]


def train_encoder(
    cfg: ContrastiveConfig,
    d_src: Dataset,
    d_tar: Dataset,
    run_id: str = "encoder",
) -> tuple[Encoder, list[MetricsRecord]]:
    """
    Run ``cfg.update_count`` Adam steps on the contrastive loss.

    Positives are target transitions; each positive gets its own K-1
    negatives drawn with replacement from the source next-state column.
    Metrics (mean loss and I_NCE over the last window) are emitted every
    ``cfg.log_every`` steps and at the final step.
    """
    features = shared_encoding(d_src, d_tar, cfg.state_encoding)
    enc = Encoder.init(cfg, features, make_rng(cfg.seed, Stream.ENCODER_INIT))
    rng = make_rng(cfg.seed, Stream.ENCODER_BATCHES)
    params = enc.parameters()
    optimizer = OptimizerState.for_params(params, cfg.learning_rate)
    log_k = math.log(cfg.negatives_per_positive)

    logger.info(
        f"Training encoder: d={cfg.dim}, K={cfg.k}, steps={cfg.update_count}, "
        f"|D_src|={len(d_src)}, |D_tar|={len(d_tar)}"
    )
    records: list[MetricsRecord] = []
    window: list[float] = []
    for step in range(cfg.update_count):
        result = nce_loss(enc, *_draw_batch(rng, d_src, d_tar, cfg.batch_size, cfg.k))
        adam_step(optimizer, params, result.grads)
        window.append(result.loss)
        if (step + 1) % cfg.log_every == 0 or step == cfg.update_count - 1:
            mean_loss = float(np.mean(window))
            records.append(MetricsRecord(
                run_id=run_id, seed=cfg.seed, step=step, phase="encoder",
                values={"loss": mean_loss, "i_nce_estimate": log_k - mean_loss},
            ))
            logger.info(f"encoder step {step + 1}/{cfg.update_count}: loss={mean_loss:.4f}")
            window = []
    return enc, records


def estimate_i_nce(
    enc: Encoder,
    d_src: Dataset,
    d_tar: Dataset,
    k: int,
    n_eval_batches: int,
    batch_size: int = 128,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean and standard error of log(K-1) - L_NCE over fresh evaluation batches."""
    if k < 2:
        raise ValueError(f"k counts all candidates and must be >= 2, got {k}")
    if n_eval_batches < 1:
        raise ValueError("n_eval_batches must be >= 1")
    rng = make_rng(seed, Stream.ORACLE, k)
    estimates = np.array([
        math.log(k - 1) - nce_loss(enc, *_draw_batch(rng, d_src, d_tar, batch_size, k), compute_grads=False).loss
        for _ in range(n_eval_batches)
    ])
    stderr = float(estimates.std(ddof=1) / math.sqrt(n_eval_batches)) if n_eval_batches > 1 else 0.0
    return float(estimates.mean()), stderr


def reward_mod_variant(enc: Encoder, d_src: Dataset, sigma: float) -> Dataset:
    """Copy of ``d_src`` with rewards r + sigma * phi(s,a) . psi(s'); nothing is filtered."""
    shift = enc.inner(d_src.states, d_src.actions, d_src.next_states)
    return d_src.with_rewards(d_src.rewards + sigma * shift)


def save_encoder(enc: Encoder, path: Union[str, Path], seed: int = 0, binary: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = "; ".join(f"{key}={value}" for key, value in enc.features.to_fields().items())
    with open(path, "wb") as handle:
        handle.write(f"{ENCODER_TAG}; d={enc.dim}; {fields}\n".encode("ascii"))
        write_net(handle, enc.phi, seed=seed, binary=binary)
        write_net(handle, enc.psi, seed=seed, binary=binary)
    logger.info(f"Saved encoder checkpoint to {path}")
    return path


def load_encoder(path: Union[str, Path]) -> Encoder:
    with open(path, "rb") as handle:
        fields = parse_header_fields(handle.readline().decode("ascii"), ENCODER_TAG)
        phi, _ = read_net(handle)
        psi, _ = read_net(handle)
    return Encoder(phi, psi, InputEncoding.from_fields(fields))


__all__ = [
    "Encoder",
    "NceResult",
    "estimate_i_nce",
    "load_encoder",
    "nce_loss",
    "reward_mod_variant",
    "save_encoder",
    "score",
    "shared_encoding",
    "train_encoder",
]
