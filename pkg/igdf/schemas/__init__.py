# Pydantic models for every hyperparameter bundle and for emitted metrics
import math
from enum import Enum
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from igdf.envs import EnvSpec, Quality
from igdf.nn.features import StateEncoding

# Guards ceil() against float noise such as 256 / (2 * 0.1) = 1280.0000000000002
CEIL_SLACK = 1e-9


def ceil_count(value: float) -> int:
    return math.ceil(value - CEIL_SLACK)


class ContrastiveConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dim: int = Field(16, ge=1)
    negatives_per_positive: int = Field(127, ge=1)  # K - 1
    learning_rate: float = Field(3e-4, gt=0)
    batch_size: int = Field(128, ge=1)
    update_count: int = Field(7000, ge=1)
    seed: int = Field(0, ge=0)
    state_encoding: Optional[StateEncoding] = None  # one_hot for tabular, raw_vector otherwise
    hidden_dims: tuple[int, ...] = (256, 256)
    log_every: int = Field(100, ge=1)

    @property
    def k(self) -> int:
        """Candidate count: one positive plus the negatives."""
        return self.negatives_per_positive + 1


class FilterConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    xi: float = Field(0.25, gt=0.0, le=1.0)
    alpha: float = Field(1.0, ge=0.0)
    batch_size: int = Field(256, ge=2)
    use_score_weight: bool = True  # False weights kept samples by alpha alone

    @field_validator("batch_size")
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            raise ValueError(f"batch_size must be even, got {value}")
        return value

    @property
    def target_batch_size(self) -> int:
        return self.batch_size // 2

    @property
    def source_batch_size(self) -> int:
        """ceil(B / (2 xi)) raw source samples per step."""
        return ceil_count(self.batch_size / (2.0 * self.xi))

    @property
    def kept_count(self) -> int:
        return ceil_count(self.xi * self.source_batch_size)


class IqlConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tau: float = Field(0.7, gt=0.0, lt=1.0)
    awr_temperature: float = Field(3.0, ge=0.0)
    discount: float = Field(0.99, ge=0.0, lt=1.0)
    target_rate: float = Field(0.005, gt=0.0, le=1.0)
    q_lr: float = Field(3e-4, gt=0)
    v_lr: float = Field(3e-4, gt=0)
    pi_lr: float = Field(3e-4, gt=0)
    td_steps: int = Field(1000, ge=0)
    policy_steps: int = Field(1000, ge=0)
    batch_size: int = Field(256, ge=1)  # target-only batches
    seed: int = Field(0, ge=0)
    schedule: Literal["two_phase", "interleaved"] = "two_phase"
    hidden_dims: tuple[int, ...] = (256, 256)
    max_weight: float = Field(100.0, gt=0)
    eval_every: int = Field(0, ge=0)  # 0 evaluates only at the end
    log_every: int = Field(100, ge=1)


class DaraConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    hidden_dims: tuple[int, ...] = (256, 256)
    activation: Literal["relu", "tanh"] = "tanh"
    learning_rate: float = Field(3e-4, gt=0)
    update_count: int = Field(5000, ge=1)
    batch_size: int = Field(256, ge=2)
    clip: float = Field(10.0, gt=0)
    reward_coefficient: float = 0.1
    seed: int = Field(0, ge=0)
    log_every: int = Field(500, ge=1)


class Mode(str, Enum):
    IGDF = "igdf"
    NAIVE_MERGE = "naive_merge"
    TARGET_ONLY = "target_only"
    DARA_REWARD = "dara_reward"
    REWARD_MOD_VARIANT = "reward_mod_variant"


class ExperimentConfig(BaseModel):
    """
    One experiment: an env family, data budgets, every nested config and a
    training mode. Unknown keys anywhere are rejected.
    """
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    name: str = "experiment"
    env: EnvSpec
    n_source: int = Field(50_000, ge=1)
    n_target: int = Field(5_000, ge=1)
    target_data_ratio: float = Field(1.0, gt=0.0, le=1.0)
    source_quality: Quality = Quality.MEDIUM_REPLAY_MIX
    target_quality: Quality = Quality.EXPERT_MIX
    contrastive: ContrastiveConfig = Field(default_factory=ContrastiveConfig)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    iql: IqlConfig = Field(default_factory=IqlConfig)
    dara: DaraConfig = Field(default_factory=DaraConfig)
    reward_mod_sigma: float = 1.0
    n_seeds: int = Field(5, ge=1)
    base_seed: int = Field(0, ge=0)
    output_dir: str = "runs/experiment"
    mode: Mode = Mode.IGDF
    eval_episodes: int = Field(10, ge=1)

    @property
    def seeds(self) -> list[int]:
        return [self.base_seed + i for i in range(self.n_seeds)]


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse a YAML experiment file; schema_version must be 1."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path) as handle:
        data = yaml.safe_load(handle) or {}
    if data.get("schema_version") != 1:
        raise ValueError(f"Unsupported config schema_version: {data.get('schema_version')!r}")
    return ExperimentConfig.model_validate(data)


class MetricsRecord(BaseModel):
    """
    One logged row of metrics. Training losses (encoder, DARA, IQL) are the
    mean over the ``log_every`` steps ending at ``step``; evaluation rows
    hold a single rollout measurement.
    """
    model_config = ConfigDict(frozen=True)

    run_id: str
    seed: int
    step: int = Field(ge=0)
    phase: str
    values: dict[str, float]
