# igdf/offline_rl/__init__.py

"""
Module: offline_rl

Implicit Q-learning over the filtered training mixture: expectile value
regression, score-weighted TD learning for Q, Polyak tracking of the target
Q network and advantage-weighted policy extraction.

Every update function takes the networks, one batch and the IqlConfig,
performs exactly one Adam step and returns the loss it minimized.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import logsumexp

from igdf.contrastive import Encoder, shared_encoding
from igdf.errors import DatasetFormatError, ShapeError, UnsupportedKindError
from igdf.filtering import MixedBatch, sample_mixed_batch
from igdf.mdp_core import Dataset, StateKind, Stream, TabularPolicy, TransitionBatch, make_rng
from igdf.nn import (
    Mlp,
    OptimizerState,
    Params,
    adam_step,
    parse_header_fields,
    read_net,
    write_net,
)
from igdf.nn.features import InputEncoding
from igdf.schemas import FilterConfig, IqlConfig, MetricsRecord

logger = logging.getLogger(__name__)

POLICY_TAG = "igdf-policy v1"
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0

EvalFn = Callable[["Policy"], tuple[float, float]]


# ---------------------------------------------------------------- policies

class TabularSoftmaxPolicy:
    """pi(a|s) = softmax(logits[s])."""

    def __init__(self, logits: np.ndarray):
        self.logits = np.array(logits, dtype=np.float64)
        if self.logits.ndim != 2:
            raise ShapeError(f"logits must have shape (n_states, n_actions), got {self.logits.shape}")

    @classmethod
    def init(cls, features: InputEncoding) -> "TabularSoftmaxPolicy":
        return cls(np.zeros((features.n_states, features.n_actions)))

    @property
    def kind(self) -> StateKind:
        return StateKind.TABULAR

    def parameters(self) -> Params:
        return {"logits": self.logits}

    def probs(self) -> np.ndarray:
        return np.exp(self.logits - logsumexp(self.logits, axis=1, keepdims=True))

    def to_tabular(self) -> TabularPolicy:
        return TabularPolicy(probs=self.probs())

    def log_prob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.int64)
        rows = self.logits[states]
        return rows[np.arange(len(states)), np.asarray(actions, dtype=np.int64)] - logsumexp(rows, axis=1)

    def act(self, state: int, rng: np.random.Generator, greedy: bool = False) -> int:
        if greedy:
            return int(np.argmax(self.logits[state]))
        probs = self.probs()[state]
        return min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), len(probs) - 1)

    def awr_loss(self, states: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> tuple[float, Params]:
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        batch = len(states)
        rows = self.logits[states]
        log_norm = logsumexp(rows, axis=1)
        log_p = rows[np.arange(batch), actions] - log_norm
        loss = -float(np.mean(weights * log_p))
        d_rows = np.exp(rows - log_norm[:, None])
        d_rows[np.arange(batch), actions] -= 1.0
        d_rows *= (weights / batch)[:, None]
        d_logits = np.zeros_like(self.logits)
        np.add.at(d_logits, states, d_rows)
        return loss, {"logits": d_logits}


class GaussianPolicy:
    """
    pi(a|s) = N(mean_net(s), diag(exp(log_std))^2), log_std kept in [-5, 2].
    """

    def __init__(self, mean_net: Mlp, log_std: np.ndarray, features: InputEncoding):
        self.mean_net = mean_net
        self.log_std = np.clip(np.array(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
        self.features = features
        if mean_net.layer_dims[0] != features.state_width or mean_net.layer_dims[-1] != len(self.log_std):
            raise ShapeError("Mean network does not match the state encoding or the action dimension.")

    @classmethod
    def init(cls, features: InputEncoding, hidden_dims, rng: np.random.Generator) -> "GaussianPolicy":
        mean_net = Mlp.init((features.state_width, *hidden_dims, features.action_dim), rng)
        return cls(mean_net, np.zeros(features.action_dim), features)

    @property
    def kind(self) -> StateKind:
        return StateKind.CONTINUOUS

    def parameters(self) -> Params:
        params = {f"mean.{name}": p for name, p in self.mean_net.parameters().items()}
        params["log_std"] = self.log_std
        return params

    def clamp(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def mean_action(self, states: np.ndarray) -> np.ndarray:
        return self.mean_net(self.features.states(states))

    def log_prob(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        z = (np.asarray(actions) - self.mean_action(states)) / np.exp(self.log_std)
        return np.sum(-0.5 * z ** 2 - self.log_std - 0.5 * math.log(2.0 * math.pi), axis=1)

    def act(self, state: np.ndarray, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
        mean = self.mean_action(np.asarray(state)[None])[0]
        if greedy:
            return mean
        return mean + np.exp(self.log_std) * rng.standard_normal(len(self.log_std))

    def awr_loss(self, states: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> tuple[float, Params]:
        batch = len(states)
        std = np.exp(self.log_std)
        mean, cache = self.mean_net.forward(self.features.states(states))
        z = (np.asarray(actions) - mean) / std
        log_p = np.sum(-0.5 * z ** 2 - self.log_std - 0.5 * math.log(2.0 * math.pi), axis=1)
        loss = -float(np.mean(weights * log_p))
        scale = (weights / batch)[:, None]
        d_mean = -scale * z / std
        mean_grads, _ = self.mean_net.backward(cache, d_mean)
        grads = {f"mean.{name}": g for name, g in mean_grads.items()}
        grads["log_std"] = -np.sum(scale * (z ** 2 - 1.0), axis=0)
        return loss, grads


Policy = Union[TabularSoftmaxPolicy, GaussianPolicy]


# ---------------------------------------------------------------- networks

@dataclass
class IqlNets:
    q: Mlp
    q_target: Mlp
    v: Mlp
    policy: Policy
    features: InputEncoding
    q_opt: OptimizerState
    v_opt: OptimizerState
    pi_opt: OptimizerState

    @classmethod
    def init(cls, cfg: IqlConfig, features: InputEncoding, rng: np.random.Generator) -> "IqlNets":
        q = Mlp.init((features.state_action_width, *cfg.hidden_dims, 1), rng)
        v = Mlp.init((features.state_width, *cfg.hidden_dims, 1), rng)
        if features.kind is StateKind.TABULAR:
            policy: Policy = TabularSoftmaxPolicy.init(features)
        else:
            policy = GaussianPolicy.init(features, cfg.hidden_dims, rng)
        return cls(
            q=q,
            q_target=q.copy(),
            v=v,
            policy=policy,
            features=features,
            q_opt=OptimizerState.for_params(q.parameters(), cfg.q_lr),
            v_opt=OptimizerState.for_params(v.parameters(), cfg.v_lr),
            pi_opt=OptimizerState.for_params(policy.parameters(), cfg.pi_lr),
        )

    def q_values(self, net: Mlp, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return net(self.features.state_actions(states, actions))[:, 0]

    def values(self, states: np.ndarray) -> np.ndarray:
        return self.v(self.features.states(states))[:, 0]


# ---------------------------------------------------------------- losses

def expectile_loss(u, tau: float):
    """L2^tau(u) = |tau - 1(u < 0)| u^2, elementwise."""
    u = np.asarray(u, dtype=np.float64)
    loss = np.where(u < 0.0, 1.0 - tau, tau) * u ** 2
    return float(loss) if loss.ndim == 0 else loss


def v_loss(nets: IqlNets, batch: TransitionBatch, tau: float) -> tuple[float, Params]:
    """Expectile regression of V(s) onto the frozen target Q(s, a)."""
    target_q = nets.q_values(nets.q_target, batch.states, batch.actions)
    values, cache = nets.v.forward(nets.features.states(batch.states))
    u = target_q - values[:, 0]
    weight = np.where(u < 0.0, 1.0 - tau, tau)
    loss = float(np.mean(weight * u ** 2))
    d_values = (-2.0 * weight * u / len(u))[:, None]
    grads, _ = nets.v.backward(cache, d_values)
    return loss, grads


def _td_coefficients(n_target: int, source_weights: np.ndarray) -> np.ndarray:
    if len(source_weights) == 0:
        return np.full(n_target, 1.0 / n_target)
    return np.concatenate([
        np.full(n_target, 0.5 / n_target),
        0.5 * np.asarray(source_weights, dtype=np.float64) / len(source_weights),
    ])


def q_loss(nets: IqlNets, mixed: MixedBatch, discount: float) -> tuple[float, Params]:
    """
    1/2 mean_tar[delta^2] + 1/2 mean_src[w delta^2], delta = r + gamma (1 - terminal) V(s') - Q(s, a).

    With no source samples the loss is mean_tar[delta^2].
    """
    if len(mixed.source_weights) != len(mixed.source):
        raise ShapeError(
            f"Got {len(mixed.source_weights)} weights for {len(mixed.source)} source samples"
        )
    batch = mixed.combined
    coefficients = _td_coefficients(len(mixed.target), mixed.source_weights)
    bootstrap = 1.0 - batch.terminals.astype(np.float64)
    targets = batch.rewards + discount * bootstrap * nets.values(batch.next_states)
    q, cache = nets.q.forward(nets.features.state_actions(batch.states, batch.actions))
    delta = targets - q[:, 0]
    loss = float(np.sum(coefficients * delta ** 2))
    grads, _ = nets.q.backward(cache, (-2.0 * coefficients * delta)[:, None])
    return loss, grads


def awr_weights(nets: IqlNets, batch: TransitionBatch, temperature: float, max_weight: float) -> np.ndarray:
    advantage = nets.q_values(nets.q_target, batch.states, batch.actions) - nets.values(batch.states)
    return np.minimum(np.exp(temperature * advantage), max_weight)


def policy_loss(nets: IqlNets, batch: TransitionBatch, temperature: float, max_weight: float) -> tuple[float, Params]:
    """-mean[min(exp(lambda (Q_target - V)), max_weight) log pi(a|s)]."""
    weights = awr_weights(nets, batch, temperature, max_weight)
    return nets.policy.awr_loss(batch.states, batch.actions, weights)


# ---------------------------------------------------------------- updates

def update_v(nets: IqlNets, batch: Union[TransitionBatch, MixedBatch], cfg: IqlConfig) -> float:
    if isinstance(batch, MixedBatch):
        batch = batch.combined
    loss, grads = v_loss(nets, batch, cfg.tau)
    adam_step(nets.v_opt, nets.v.parameters(), grads)
    return loss


def update_q(nets: IqlNets, mixed: MixedBatch, cfg: IqlConfig) -> float:
    loss, grads = q_loss(nets, mixed, cfg.discount)
    adam_step(nets.q_opt, nets.q.parameters(), grads)
    return loss


def polyak(nets: IqlNets, mu: float) -> Mlp:
    """theta_target <- (1 - mu) theta_target + mu theta, in place."""
    if not 0.0 < mu <= 1.0:
        raise ValueError(f"Target rate must lie in (0, 1], got {mu}")
    targets = nets.q_target.parameters()
    for name, param in nets.q.parameters().items():
        targets[name][...] = (1.0 - mu) * targets[name] + mu * param
    return nets.q_target


def update_policy_awr(nets: IqlNets, batch: Union[TransitionBatch, MixedBatch], cfg: IqlConfig) -> float:
    if isinstance(batch, MixedBatch):
        batch = batch.combined
    loss, grads = policy_loss(nets, batch, cfg.awr_temperature, cfg.max_weight)
    adam_step(nets.pi_opt, nets.policy.parameters(), grads)
    if isinstance(nets.policy, GaussianPolicy):
        nets.policy.clamp()
    return loss


# ---------------------------------------------------------------- training

def _target_only_batch(rng: np.random.Generator, d_tar: Dataset, batch_size: int) -> MixedBatch:
    target = d_tar.take(rng.integers(0, len(d_tar), size=batch_size))
    return MixedBatch(target=target, source=target.take(np.arange(0)), source_weights=np.zeros(0))


class _MetricWindow:
    """Averages losses between two log points."""

    def __init__(self, run_id: str, seed: int, log_every: int):
        self.run_id = run_id
        self.seed = seed
        self.log_every = log_every
        self.records: list[MetricsRecord] = []
        self._values: dict[str, list[float]] = {}

    def add(self, **values: float) -> None:
        for name, value in values.items():
            self._values.setdefault(name, []).append(value)

    def flush(self, step: int, phase: str, force: bool = False) -> None:
        if not self._values or not (force or (step + 1) % self.log_every == 0):
            return
        values = {name: float(np.mean(v)) for name, v in self._values.items()}
        self.records.append(MetricsRecord(run_id=self.run_id, seed=self.seed, step=step, phase=phase, values=values))
        summary = ", ".join(f"{name}={value:.4f}" for name, value in values.items())
        logger.info(f"{self.run_id} {phase} step {step + 1}: {summary}")
        self._values = {}

    def evaluate(self, step: int, policy: Policy, eval_fn: Optional[EvalFn]) -> None:
        if eval_fn is None:
            return
        mean, std = eval_fn(policy)
        self.records.append(MetricsRecord(
            run_id=self.run_id, seed=self.seed, step=step, phase="eval",
            values={"eval_return_mean": mean, "eval_return_std": std},
        ))
        logger.info(f"{self.run_id} eval at step {step + 1}: return {mean:.3f} ± {std:.3f}")


def train_iql(
    cfg: IqlConfig,
    d_tar: Dataset,
    d_src: Optional[Dataset] = None,
    fcfg: Optional[FilterConfig] = None,
    enc: Optional[Encoder] = None,
    eval_fn: Optional[EvalFn] = None,
    run_id: str = "iql",
) -> tuple[IqlNets, list[MetricsRecord]]:
    """
    IQL on target data, optionally mixed with filtered source data.

    Parameters:
    - d_src/fcfg: when both are given every batch is B/2 target samples
      plus the top-xi share of ceil(B/(2 xi)) source samples; otherwise
      batches hold ``cfg.batch_size`` target samples.
    - enc: scores the source samples; ``None`` scores them all equally.
    - eval_fn: maps the current policy to (mean return, std); called every
      ``cfg.eval_every`` policy steps (when positive) and once at the end.

    Returns:
    - The trained networks and the metric records in step order.
    """
    mixing = d_src is not None and fcfg is not None
    features = shared_encoding(d_src, d_tar) if mixing else InputEncoding.for_dataset(d_tar)
    if enc is not None and not enc.features.matches(d_tar):
        raise UnsupportedKindError("Encoder input encoding does not match the target dataset.")
    nets = IqlNets.init(cfg, features, make_rng(cfg.seed, Stream.IQL_INIT))
    rng = make_rng(cfg.seed, Stream.IQL_BATCHES)

    def next_batch() -> MixedBatch:
        if mixing:
            return sample_mixed_batch(rng, d_tar, d_src, fcfg, enc)
        return _target_only_batch(rng, d_tar, cfg.batch_size)

    def td_update(batch: MixedBatch) -> None:
        v = update_v(nets, batch, cfg)
        q = update_q(nets, batch, cfg)
        polyak(nets, cfg.target_rate)
        window.add(v_loss=v, q_loss=q)

    def policy_update(batch: MixedBatch) -> None:
        window.add(pi_loss=update_policy_awr(nets, batch, cfg))

    window = _MetricWindow(run_id, cfg.seed, cfg.log_every)
    logger.info(
        f"Training IQL ({cfg.schedule}): td_steps={cfg.td_steps}, policy_steps={cfg.policy_steps}, "
        f"mixing={'on' if mixing else 'off'}, scored={'yes' if enc is not None else 'no'}"
    )
    last_step = 0
    if cfg.schedule == "two_phase":
        for step in range(cfg.td_steps):
            td_update(next_batch())
            window.flush(step, "td", force=step == cfg.td_steps - 1)
            last_step = step
        for i in range(cfg.policy_steps):
            step = cfg.td_steps + i
            policy_update(next_batch())
            window.flush(step, "policy", force=i == cfg.policy_steps - 1)
            if cfg.eval_every and (i + 1) % cfg.eval_every == 0 and i < cfg.policy_steps - 1:
                window.evaluate(step, nets.policy, eval_fn)
            last_step = step
    else:
        total = max(cfg.td_steps, cfg.policy_steps)
        for step in range(total):
            batch = next_batch()
            if step < cfg.td_steps:
                td_update(batch)
            if step < cfg.policy_steps:
                policy_update(batch)
            window.flush(step, "interleaved", force=step == total - 1)
            if cfg.eval_every and (step + 1) % cfg.eval_every == 0 and step < total - 1:
                window.evaluate(step, nets.policy, eval_fn)
            last_step = step
    window.evaluate(last_step, nets.policy, eval_fn)
    return nets, window.records


def train_igdf_iql(
    cfg: IqlConfig,
    fcfg: FilterConfig,
    enc: Optional[Encoder],
    d_src: Dataset,
    d_tar: Dataset,
    eval_fn: Optional[EvalFn] = None,
    run_id: str = "igdf",
) -> tuple[Policy, list[MetricsRecord]]:
    """IQL with score-filtered, score-weighted source data; returns the policy and its metrics."""
    nets, records = train_iql(cfg, d_tar, d_src=d_src, fcfg=fcfg, enc=enc, eval_fn=eval_fn, run_id=run_id)
    return nets.policy, records


# ---------------------------------------------------------------- evaluation

def evaluate_policy(env, policy, n_episodes: int = 10, seed: int = 0, deterministic: bool = False) -> tuple[float, float]:
    """
    Undiscounted return over ``n_episodes`` rollouts of ``env.horizon`` steps.

    Actions are sampled from the policy; ``deterministic=True`` takes the
    greedy action (the argmax for tabular policies, the mean for Gaussian
    ones). Episode i draws from its own stream (seed, EVALUATION, i), so results do
    not depend on how many episodes run before it.
    """
    if env.kind is not policy.kind:
        raise UnsupportedKindError(f"A {policy.kind.value} policy cannot act in a {env.kind.value} env")
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    returns = np.empty(n_episodes)
    for episode in range(n_episodes):
        rng = make_rng(seed, Stream.EVALUATION, episode)
        state, total, t, done = env.reset(rng), 0.0, 0, False
        while not done:
            action = policy.act(state, rng, greedy=deterministic)
            state, reward, done = env.step(state, action, rng, t)
            total += reward
            t += 1
        returns[episode] = total
    return float(returns.mean()), float(returns.std())


# ---------------------------------------------------------------- checkpoints

def save_policy(policy: Policy, path: Union[str, Path], seed: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        if isinstance(policy, TabularSoftmaxPolicy):
            n_states, n_actions = policy.logits.shape
            handle.write(f"{POLICY_TAG}; type=tabular_softmax; n_states={n_states}; n_actions={n_actions}\n".encode("ascii"))
            handle.write(("\n".join("%.17g" % v for v in policy.logits.ravel()) + "\n").encode("ascii"))
        else:
            fields = "; ".join(f"{key}={value}" for key, value in policy.features.to_fields().items())
            log_std = ",".join("%.17g" % v for v in policy.log_std)
            handle.write(f"{POLICY_TAG}; type=gaussian; log_std={log_std}; {fields}\n".encode("ascii"))
            write_net(handle, policy.mean_net, seed=seed)
    logger.info(f"Saved policy checkpoint to {path}")
    return path


def load_policy(path: Union[str, Path]) -> Policy:
    with open(path, "rb") as handle:
        fields = parse_header_fields(handle.readline().decode("ascii"), POLICY_TAG)
        kind = fields.get("type")
        if kind == "tabular_softmax":
            shape = (int(fields["n_states"]), int(fields["n_actions"]))
            try:
                values = [float(handle.readline()) for _ in range(shape[0] * shape[1])]
            except ValueError as e:
                raise DatasetFormatError(f"Malformed policy logit line: {e}") from e
            return TabularSoftmaxPolicy(np.array(values).reshape(shape))
        if kind == "gaussian":
            mean_net, _ = read_net(handle)
            log_std = np.array([float(v) for v in fields["log_std"].split(",")])
            return GaussianPolicy(mean_net, log_std, InputEncoding.from_fields(fields))
    raise DatasetFormatError(f"Unknown policy type: {kind!r}")


__all__ = [
    "GaussianPolicy",
    "IqlNets",
    "Policy",
    "TabularSoftmaxPolicy",
    "awr_weights",
    "evaluate_policy",
    "expectile_loss",
    "load_policy",
    "policy_loss",
    "polyak",
    "q_loss",
    "save_policy",
    "train_iql",
    "train_igdf_iql",
    "update_policy_awr",
    "update_q",
    "update_v",
    "v_loss",
]
