# igdf/info_oracle/__init__.py

"""
Module: info_oracle

Exact information-theoretic quantities on tabular empirical MDPs. Every
expectation is an exact weighted sum over a sampler's tuple frequencies;
only exact_infonce draws Monte-Carlo negatives.

Conventions:
- 0 log 0 = 0 in every entropy and KL sum.
- A log of zero mass on sampled support is reported as the Infinity
  sentinel ("+inf" / "-inf"), never as an IEEE infinity or NaN.
- A sampler is a tabular Dataset, an EmpiricalMDP (its own joint) or a raw
  joint weight tensor indexed [state, action, next_state].
"""

import logging
import math
from enum import Enum
from typing import Callable, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import rel_entr
from scipy.stats import entropy as scipy_entropy

from igdf.errors import ShapeError
from igdf.mdp_core import (
    Dataset,
    DomainTag,
    EmpiricalMDP,
    Stream,
    TabularMDP,
    TabularPolicy,
    count_tensor,
    discounted_visitation,
    make_rng,
)

logger = logging.getLogger(__name__)

MAX_LISTED_VIOLATIONS = 1000


class Infinity(str, Enum):
    POS = "+inf"
    NEG = "-inf"


OracleNumber = Union[float, Infinity]
Sampler = Union[Dataset, EmpiricalMDP, np.ndarray]
ScoreFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
ViolationMode = Literal["sentinel", "restrict"]


def is_finite(value: OracleNumber) -> bool:
    return not isinstance(value, Infinity)


def to_float(value: OracleNumber) -> float:
    if value is Infinity.POS:
        return math.inf
    if value is Infinity.NEG:
        return -math.inf
    return float(value)


def _difference(first: OracleNumber, second: OracleNumber) -> OracleNumber:
    """first - second with sentinel arithmetic; an infinite first term dominates."""
    if isinstance(first, Infinity):
        return first
    if isinstance(second, Infinity):
        return Infinity.NEG if second is Infinity.POS else Infinity.POS
    return first - second


class SupportViolation(BaseModel):
    state: int
    action: int
    next_state: int
    weight: float


class OracleValue(BaseModel):
    value: OracleNumber
    violations: list[SupportViolation] = Field(default_factory=list)
    excluded_mass: float = 0.0

    @property
    def finite(self) -> bool:
        return is_finite(self.value)


class MiGapReport(BaseModel):
    """
    Exact MI gap with its KL decomposition. ``kl_state`` and ``kl_dynamics``
    are sampler expectations of the log density ratios; they coincide with
    the true divergences when the sampler is that domain's own data.
    """
    model_config = ConfigDict(frozen=True)

    i_tar: OracleNumber
    i_src: OracleNumber
    delta_i: OracleNumber
    kl_state: OracleNumber
    kl_dynamics: OracleNumber
    h_rho_src: float
    h_rho_tar: float
    data_domain: DomainTag
    violations: list[SupportViolation] = Field(default_factory=list)
    excluded_mass: float = 0.0

    @property
    def finite(self) -> bool:
        return all(is_finite(v) for v in (self.i_tar, self.i_src, self.delta_i, self.kl_state, self.kl_dynamics))

    def entropy_bounds_hold(self, slack: float = 1e-12) -> bool:
        """-H(rho_src) <= delta_i <= H(rho_tar); vacuously true for an infinite gap."""
        if not is_finite(self.delta_i):
            return True
        return -self.h_rho_src - slack <= self.delta_i <= self.h_rho_tar + slack

    def as_row(self) -> dict:
        row = self.model_dump(mode="json", exclude={"violations"})
        row["n_violations"] = len(self.violations)
        return row


class InfoNceEstimate(BaseModel):
    loss: float
    stderr: float
    i_nce: float
    k: int
    n_draws: int


# ---------------------------------------------------------------- helpers

def sampler_joint(sampler: Sampler, shape: tuple[int, int, int]) -> np.ndarray:
    """Normalized tuple weights of ``sampler`` over a (S, A, S) space."""
    if isinstance(sampler, Dataset):
        weights = count_tensor(sampler, shape[0], shape[1])
    elif isinstance(sampler, EmpiricalMDP):
        weights = np.asarray(sampler.counts, dtype=np.float64)
    else:
        weights = np.asarray(sampler, dtype=np.float64)
    if weights.shape != tuple(shape):
        raise ShapeError(f"Sampler covers {weights.shape}, expected {tuple(shape)}.")
    total = weights.sum()
    if np.any(weights < 0) or total <= 0:
        raise ValueError("Sampler weights must be non-negative with positive total.")
    return weights / total


def _violations(weights: np.ndarray, bad: np.ndarray) -> list[SupportViolation]:
    offending = np.argwhere(bad)[:MAX_LISTED_VIOLATIONS]
    return [
        SupportViolation(state=int(s), action=int(a), next_state=int(n), weight=float(weights[s, a, n]))
        for s, a, n in offending
    ]


def _restrict(weights: np.ndarray, bad: np.ndarray) -> tuple[np.ndarray, float]:
    excluded = float(weights[bad].sum())
    kept = np.where(bad, 0.0, weights)
    if kept.sum() <= 0:
        raise ValueError("Every sampled tuple violates support; nothing left to restrict to.")
    return kept / kept.sum(), excluded


def _expected_log_ratio(weights: np.ndarray, numer: np.ndarray, denom: np.ndarray) -> OracleValue:
    """E_w[log numer - log denom] over the support of w, with sentinels for zero mass."""
    numer = np.broadcast_to(numer, weights.shape)
    denom = np.broadcast_to(denom, weights.shape)
    support = weights > 0
    zero_numer = support & (numer == 0)
    if zero_numer.any():
        return OracleValue(value=Infinity.NEG, violations=_violations(weights, zero_numer))
    zero_denom = support & (denom == 0)
    if zero_denom.any():
        return OracleValue(value=Infinity.POS, violations=_violations(weights, zero_denom))
    value = np.sum(weights[support] * (np.log(numer[support]) - np.log(denom[support])))
    return OracleValue(value=float(value))


def entropy(probs: np.ndarray) -> float:
    """Shannon entropy in nats with 0 log 0 = 0."""
    return float(scipy_entropy(np.asarray(probs, dtype=np.float64)))


def kl_divergence(p: np.ndarray, q: np.ndarray) -> OracleNumber:
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if np.any((p > 0) & (q == 0)):
        return Infinity.POS
    return float(np.sum(rel_entr(p, q)))


# ---------------------------------------------------------------- operations

def exact_mi(emp: EmpiricalMDP, sampler: Sampler, on_violation: ViolationMode = "sentinel") -> OracleValue:
    """
    E_{(s,a,s')~sampler}[ log p_hat(s'|s,a) / rho_hat_next(s') ] under ``emp``.

    Parameters:
    - emp (EmpiricalMDP): supplies p_hat and rho_hat_next.
    - sampler: tuple frequencies to average over.
    - on_violation: "sentinel" returns -inf plus the offending tuples when a
      sampled tuple has p_hat = 0; "restrict" drops those tuples,
      renormalizes and records the excluded mass.

    Returns:
    - OracleValue in nats.
    """
    weights = sampler_joint(sampler, emp.counts.shape)
    bad = (weights > 0) & (emp.p_hat == 0)
    excluded = 0.0
    if bad.any():
        if on_violation == "sentinel":
            return OracleValue(value=Infinity.NEG, violations=_violations(weights, bad))
        violations = _violations(weights, bad)
        weights, excluded = _restrict(weights, bad)
        result = _expected_log_ratio(weights, emp.p_hat, emp.rho_hat_next[None, None, :])
        return OracleValue(value=result.value, violations=violations, excluded_mass=excluded)
    return _expected_log_ratio(weights, emp.p_hat, emp.rho_hat_next[None, None, :])


def plugin_mi(counts: np.ndarray) -> float:
    """Plug-in I([S,A]; S') = H(rho_hat) - H(S'|S,A) straight from a count tensor."""
    emp = EmpiricalMDP.from_counts(counts)
    conditional = sum(
        emp.sa_weights[s, a] * entropy(emp.p_hat[s, a])
        for s, a in np.argwhere(emp.support_mask)
    )
    return entropy(emp.rho_hat_next) - float(conditional)


def decompose_theorem2(
    src_emp: EmpiricalMDP,
    tar_emp: EmpiricalMDP,
    sampler: Sampler,
    data_domain: Union[DomainTag, str],
    on_violation: ViolationMode = "sentinel",
) -> MiGapReport:
    """
    MI gap with its state/dynamics KL decomposition.

    For source-domain data:  delta_i = KL[rho_src || rho_tar] - E KL[P_src || P_tar]
    For target-domain data:  delta_i = E KL[P_tar || P_src] - KL[rho_tar || rho_src]

    delta_i itself is computed as exact_mi(tar) - exact_mi(src), so the KL
    terms are an independent cross-check of it.
    """
    if src_emp.counts.shape != tar_emp.counts.shape:
        raise ShapeError(f"Empirical MDPs differ in shape: {src_emp.counts.shape} vs {tar_emp.counts.shape}")
    data_domain = DomainTag(data_domain)
    weights = sampler_joint(sampler, src_emp.counts.shape)

    violations: list[SupportViolation] = []
    excluded = 0.0
    if on_violation == "restrict":
        bad = (weights > 0) & ((src_emp.p_hat == 0) | (tar_emp.p_hat == 0))
        if bad.any():
            violations = _violations(weights, bad)
            weights, excluded = _restrict(weights, bad)

    i_tar = exact_mi(tar_emp, weights)
    i_src = exact_mi(src_emp, weights)
    rho_src = src_emp.rho_hat_next[None, None, :]
    rho_tar = tar_emp.rho_hat_next[None, None, :]
    if data_domain is DomainTag.SOURCE:
        kl_state = _expected_log_ratio(weights, rho_src, rho_tar)
        kl_dynamics = _expected_log_ratio(weights, src_emp.p_hat, tar_emp.p_hat)
    else:
        kl_state = _expected_log_ratio(weights, rho_tar, rho_src)
        kl_dynamics = _expected_log_ratio(weights, tar_emp.p_hat, src_emp.p_hat)

    for term in (i_tar, i_src, kl_state, kl_dynamics):
        violations.extend(term.violations)
    report = MiGapReport(
        i_tar=i_tar.value,
        i_src=i_src.value,
        delta_i=_difference(i_tar.value, i_src.value),
        kl_state=kl_state.value,
        kl_dynamics=kl_dynamics.value,
        h_rho_src=entropy(src_emp.rho_hat_next),
        h_rho_tar=entropy(tar_emp.rho_hat_next),
        data_domain=data_domain,
        violations=violations[:MAX_LISTED_VIOLATIONS],
        excluded_mass=excluded,
    )
    if not report.finite:
        logger.info(f"MI gap report has infinite terms ({len(report.violations)} support violations)")
    return report


def mi_gap(
    src_emp: EmpiricalMDP,
    tar_emp: EmpiricalMDP,
    sampler: Sampler,
    data_domain: Optional[Union[DomainTag, str]] = None,
    on_violation: ViolationMode = "sentinel",
) -> MiGapReport:
    """
    delta_i = I_tar - I_src, both evaluated on the same sampler.

    The data domain defaults to the sampler's own tag (source for raw tensors).
    """
    if data_domain is None:
        data_domain = sampler.domain_tag if isinstance(sampler, Dataset) else DomainTag.SOURCE
    return decompose_theorem2(src_emp, tar_emp, sampler, data_domain, on_violation=on_violation)


def dynamics_ratio_exact(src_emp: EmpiricalMDP, tar_emp: EmpiricalMDP, sampler: Sampler) -> OracleValue:
    """Delta_P = E_sampler[log P_tar(s'|s,a) / P_src(s'|s,a)]; -inf where P_tar vanishes."""
    weights = sampler_joint(sampler, src_emp.counts.shape)
    return _expected_log_ratio(weights, tar_emp.p_hat, src_emp.p_hat)


def expected_dynamics_kl(
    source: TabularMDP,
    target: TabularMDP,
    sa_weights: Optional[np.ndarray] = None,
) -> OracleNumber:
    """E_{(s,a)}[KL(P_src(.|s,a) || P_tar(.|s,a))], uniform over (s,a) by default."""
    if source.transition.shape != target.transition.shape:
        raise ShapeError("MDPs differ in shape.")
    if sa_weights is None:
        sa_weights = np.full((source.n_states, source.n_actions), 1.0 / (source.n_states * source.n_actions))
    total = 0.0
    for s, a in np.argwhere(sa_weights > 0):
        term = kl_divergence(source.transition[s, a], target.transition[s, a])
        if isinstance(term, Infinity):
            return term
        total += sa_weights[s, a] * term
    return float(total)


def performance_bound_rhs(
    true_tar: TabularMDP,
    tar_emp: EmpiricalMDP,
    src_emp: EmpiricalMDP,
    policy: TabularPolicy,
    r_max: float,
    report: MiGapReport,
) -> OracleNumber:
    """
    Lower bound on eta_{M_tar}(pi) - eta_{M_hat_src}(pi):

        -(gamma R_max / (1 - gamma)^2) * { 2 E[TV(P_tar, P_hat_tar)]
                                           + sqrt(2 KL[rho_src || rho_tar] + 2 |delta_i|) }

    The TV expectation runs over pi's discounted (s, a) visitation in the
    completed empirical target MDP, not over the target data's (s, a)
    frequencies. The KL and |delta_i| terms come from ``report``.
    """
    if report.data_domain is not DomainTag.SOURCE:
        raise ValueError("The performance bound needs a report computed on source-domain data.")
    if src_emp.counts.shape != tar_emp.counts.shape or tar_emp.n_states != true_tar.n_states:
        raise ShapeError("Empirical and true MDPs disagree on the state/action space.")
    if not (is_finite(report.kl_state) and is_finite(report.delta_i)):
        return Infinity.NEG

    empirical = tar_emp.to_mdp(true_tar.reward, true_tar.discount, true_tar.initial_dist)
    visitation = discounted_visitation(empirical, policy)
    sa_visitation = visitation[:, None] * policy.probs
    tv = 0.5 * np.abs(true_tar.transition - empirical.transition).sum(axis=2)
    expected_tv = float(np.sum(sa_visitation * tv))

    gamma = true_tar.discount
    coefficient = gamma * r_max / (1.0 - gamma) ** 2
    brace = 2.0 * expected_tv + math.sqrt(2.0 * max(report.kl_state, 0.0) + 2.0 * abs(report.delta_i))
    return -coefficient * brace


def optimal_score(tar_emp: EmpiricalMDP) -> ScoreFn:
    """h(s,a,s') = P_hat_tar(s'|s,a) / rho_hat_tar(s'), zero where rho_hat_tar vanishes."""
    ratio = np.zeros_like(tar_emp.p_hat)
    visited = tar_emp.rho_hat_next > 0
    ratio[:, :, visited] = tar_emp.p_hat[:, :, visited] / tar_emp.rho_hat_next[visited]

    def score(states: np.ndarray, actions: np.ndarray, next_states: np.ndarray) -> np.ndarray:
        return ratio[states, actions, next_states]

    return score


def infonce_ceiling(tar_emp: EmpiricalMDP, src_emp: EmpiricalMDP) -> OracleValue:
    """
    E_{D_tar}[log P_hat_tar(s'|s,a) / rho_hat_src(s')]: no critic can push
    log(K-1) - L_NCE above this when negatives come from rho_hat_src.
    """
    weights = tar_emp.joint
    return _expected_log_ratio(weights, tar_emp.p_hat, src_emp.rho_hat_next[None, None, :])


def exact_infonce(
    score: ScoreFn,
    tar_emp: EmpiricalMDP,
    src_emp: EmpiricalMDP,
    k: int,
    negative_score: Optional[ScoreFn] = None,
    n_draws: int = 100_000,
    seed: int = 0,
    chunk_size: int = 10_000,
) -> InfoNceEstimate:
    """
    Contrastive loss over K candidates (one positive, K-1 negatives):

        L = E[ -log h(s,a,s'_B) / (h(s,a,s'_B) + sum_{s'_A} h(s,a,s'_A)) ]

    Positives follow the target empirical tuple frequencies, negatives are
    i.i.d. draws from rho_hat_src. ``negative_score`` scores the negatives
    when given (the two-function form); otherwise ``score`` scores both.
    """
    if k < 2:
        raise ValueError(f"k counts all candidates and must be >= 2, got {k}")
    if n_draws < 2:
        raise ValueError(f"n_draws must be >= 2, got {n_draws}")
    if src_emp.counts.shape != tar_emp.counts.shape:
        raise ShapeError("Empirical MDPs differ in shape.")
    negative_score = negative_score or score
    rng = make_rng(seed, Stream.ORACLE)
    joint = tar_emp.joint.ravel()
    n_states = src_emp.n_states

    losses = np.empty(n_draws)
    for start in range(0, n_draws, chunk_size):
        size = min(chunk_size, n_draws - start)
        flat = rng.choice(joint.size, size=size, p=joint)
        states, actions, next_states = np.unravel_index(flat, tar_emp.counts.shape)
        negatives = rng.choice(n_states, size=(size, k - 1), p=src_emp.rho_hat_next)
        h_pos = np.asarray(score(states, actions, next_states), dtype=np.float64)
        h_neg = np.asarray(
            negative_score(np.repeat(states, k - 1), np.repeat(actions, k - 1), negatives.ravel()),
            dtype=np.float64,
        ).reshape(size, k - 1)
        losses[start:start + size] = np.log(h_pos + h_neg.sum(axis=1)) - np.log(h_pos)

    loss = float(losses.mean())
    stderr = float(losses.std(ddof=1) / math.sqrt(n_draws))
    return InfoNceEstimate(loss=loss, stderr=stderr, i_nce=math.log(k - 1) - loss, k=k, n_draws=n_draws)


__all__ = [
    "InfoNceEstimate",
    "Infinity",
    "MiGapReport",
    "OracleNumber",
    "OracleValue",
    "SupportViolation",
    "decompose_theorem2",
    "dynamics_ratio_exact",
    "entropy",
    "exact_infonce",
    "exact_mi",
    "expected_dynamics_kl",
    "infonce_ceiling",
    "is_finite",
    "kl_divergence",
    "mi_gap",
    "optimal_score",
    "performance_bound_rhs",
    "plugin_mi",
    "sampler_joint",
    "to_float",
]
