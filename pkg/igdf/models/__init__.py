from abc import ABC, ABCMeta, abstractmethod
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional
import uuid

from sqlalchemy import (
    JSON,
    Column,
    DateTime,
    Float,
    ForeignKey,
    Integer,
    String,
    Text,
    Uuid,
    create_engine,
)
from sqlalchemy.engine import Engine
from sqlalchemy.orm import DeclarativeMeta, declarative_base, relationship, sessionmaker

from igdf.contrastive import reward_mod_variant, save_encoder, train_encoder
from igdf.filtering import dara_baseline_train
from igdf.mdp_core import Dataset
from igdf.offline_rl import Policy, train_igdf_iql, train_iql
from igdf.schemas import ExperimentConfig, MetricsRecord, Mode


# Declarative metaclass that also honours abstract methods
class RunMeta(DeclarativeMeta, ABCMeta):
    pass


Base = declarative_base(metaclass=RunMeta)


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


@dataclass
class TrainingContext:
    """Everything the mode-specific training stage of one seed needs."""
    config: ExperimentConfig
    seed: int
    d_src: Dataset
    d_tar: Dataset
    output_dir: Path
    eval_fn: Optional[Callable[[Policy], tuple[float, float]]] = None

    def seeded(self, section: str):
        """The nested config ``section`` with its seed replaced by the run seed."""
        return getattr(self.config, section).model_copy(update={"seed": self.seed})

    @property
    def naive_filter(self):
        """xi = 1 and alpha = 0: every source sample kept with weight 1."""
        return self.config.filter.model_copy(update={"xi": 1.0, "alpha": 0.0})


class Experiment(Base):
    __tablename__ = 'experiments'

    id = Column(Uuid, primary_key=True, default=uuid.uuid4)
    name = Column(String(100), nullable=False)
    config = Column(JSON, nullable=False)  # the validated config, JSON-dumped
    config_hash = Column(String(64), nullable=False)
    version = Column(String(20), nullable=False)
    created_at = Column(DateTime(timezone=True), default=_utcnow, nullable=False)

    runs = relationship(
        "Run",
        back_populates="experiment",
        cascade="all, delete, delete-orphan",
        order_by="Run.seed",
    )

    def __repr__(self):
        return f"<Experiment(name={self.name}, runs={len(self.runs)})>"


class Run(Base, ABC):
    """
    One seed of one experiment. Modes share data generation and evaluation;
    each subclass implements only the training stage.
    """
    __tablename__ = 'runs'

    id = Column(Uuid, primary_key=True, default=uuid.uuid4)
    experiment_id = Column(Uuid, ForeignKey('experiments.id'), nullable=True)
    mode = Column(String(30), nullable=False)
    seed = Column(Integer, nullable=False)
    status = Column(String(20), nullable=False, default="pending")
    reason = Column(Text, nullable=True)  # failure reason when status == "failed"
    return_mean = Column(Float, nullable=True)
    return_std = Column(Float, nullable=True)
    success_rate = Column(Float, nullable=True)
    created_at = Column(DateTime(timezone=True), default=_utcnow, nullable=False)

    experiment = relationship("Experiment", back_populates="runs")
    metrics = relationship(
        "MetricRow",
        back_populates="run",
        cascade="all, delete, delete-orphan",
        order_by="MetricRow.id",
    )

    __mapper_args__ = {
        'polymorphic_on': mode,
        'polymorphic_identity': 'run',
        'with_polymorphic': '*',
    }

    @classmethod
    def create(cls, mode, seed: int, **kwargs) -> 'Run':
        """
        Factory method returning the Run subclass registered for ``mode``.
        """
        run_classes = {
            Mode.IGDF.value: IgdfRun,
            Mode.NAIVE_MERGE.value: NaiveMergeRun,
            Mode.TARGET_ONLY.value: TargetOnlyRun,
            Mode.DARA_REWARD.value: DaraRewardRun,
            Mode.REWARD_MOD_VARIANT.value: RewardModRun,
        }
        key = mode.value if isinstance(mode, Mode) else str(mode).lower()
        run_class = run_classes.get(key)
        if not run_class:
            raise ValueError(f"Unsupported run mode: {mode}")
        return run_class(seed=seed, status="pending", **kwargs)

    @property
    def run_key(self) -> str:
        return f"{self.mode}-seed{self.seed}"

    @abstractmethod
    def train(self, ctx: TrainingContext) -> tuple[Policy, list[MetricsRecord]]:
        """
        The mode-specific training stage. Must be implemented by all subclasses.
        """
        pass

    def complete(self, return_mean: float, return_std: float, success_rate: Optional[float] = None) -> None:
        self.status = "completed"
        self.return_mean = return_mean
        self.return_std = return_std
        self.success_rate = success_rate

    def fail(self, reason: str) -> None:
        self.status = "failed"
        self.reason = reason

    def record_metrics(self, records: list[MetricsRecord]) -> None:
        for record in records:
            for name, value in record.values.items():
                self.metrics.append(MetricRow(step=record.step, phase=record.phase, name=name, value=value))

    def __repr__(self):
        return f"<Run(mode={self.mode}, seed={self.seed}, status={self.status})>"


class IgdfRun(Run):
    __mapper_args__ = {
        'polymorphic_identity': Mode.IGDF.value,
    }

    def train(self, ctx: TrainingContext) -> tuple[Policy, list[MetricsRecord]]:
        enc, records = train_encoder(ctx.seeded("contrastive"), ctx.d_src, ctx.d_tar, run_id=self.run_key)
        save_encoder(enc, ctx.output_dir / "encoder.ckpt", seed=ctx.seed)
        policy, rl_records = train_igdf_iql(
            ctx.seeded("iql"), ctx.config.filter, enc, ctx.d_src, ctx.d_tar,
            eval_fn=ctx.eval_fn, run_id=self.run_key,
        )
        return policy, records + rl_records


class NaiveMergeRun(Run):
    __mapper_args__ = {
        'polymorphic_identity': Mode.NAIVE_MERGE.value,
    }

    def train(self, ctx: TrainingContext) -> tuple[Policy, list[MetricsRecord]]:
        nets, records = train_iql(
            ctx.seeded("iql"), ctx.d_tar, d_src=ctx.d_src, fcfg=ctx.naive_filter,
            eval_fn=ctx.eval_fn, run_id=self.run_key,
        )
        return nets.policy, records


class TargetOnlyRun(Run):
    __mapper_args__ = {
        'polymorphic_identity': Mode.TARGET_ONLY.value,
    }

    def train(self, ctx: TrainingContext) -> tuple[Policy, list[MetricsRecord]]:
        nets, records = train_iql(ctx.seeded("iql"), ctx.d_tar, eval_fn=ctx.eval_fn, run_id=self.run_key)
        return nets.policy, records


class DaraRewardRun(Run):
    __mapper_args__ = {
        'polymorphic_identity': Mode.DARA_REWARD.value,
    }

    def train(self, ctx: TrainingContext) -> tuple[Policy, list[MetricsRecord]]:
        dara_cfg = ctx.seeded("dara")
        records: list[MetricsRecord] = []
        correction = dara_baseline_train(ctx.d_src, ctx.d_tar, dara_cfg, run_id=self.run_key, records=records)
        relabeled = correction.relabel(ctx.d_src, dara_cfg.reward_coefficient)
        nets, rl_records = train_iql(
            ctx.seeded("iql"), ctx.d_tar, d_src=relabeled, fcfg=ctx.naive_filter,
            eval_fn=ctx.eval_fn, run_id=self.run_key,
        )
        return nets.policy, records + rl_records


class RewardModRun(Run):
    __mapper_args__ = {
        'polymorphic_identity': Mode.REWARD_MOD_VARIANT.value,
    }

    def train(self, ctx: TrainingContext) -> tuple[Policy, list[MetricsRecord]]:
        enc, records = train_encoder(ctx.seeded("contrastive"), ctx.d_src, ctx.d_tar, run_id=self.run_key)
        modified = reward_mod_variant(enc, ctx.d_src, ctx.config.reward_mod_sigma)
        nets, rl_records = train_iql(
            ctx.seeded("iql"), ctx.d_tar, d_src=modified, fcfg=ctx.naive_filter,
            eval_fn=ctx.eval_fn, run_id=self.run_key,
        )
        return nets.policy, records + rl_records


class MetricRow(Base):
    __tablename__ = 'metrics'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Uuid, ForeignKey('runs.id'), nullable=False)
    step = Column(Integer, nullable=False)
    phase = Column(String(30), nullable=False)
    name = Column(String(50), nullable=False)
    value = Column(Float, nullable=False)

    run = relationship("Run", back_populates="metrics")

    def __repr__(self):
        return f"<MetricRow(step={self.step}, {self.name}={self.value})>"


def make_engine(url: str) -> Engine:
    return create_engine(url, echo=False)


def make_session_factory(engine: Engine) -> sessionmaker:
    Base.metadata.create_all(engine)
    return sessionmaker(bind=engine)


__all__ = [
    "Base",
    "DaraRewardRun",
    "Experiment",
    "IgdfRun",
    "MetricRow",
    "NaiveMergeRun",
    "RewardModRun",
    "Run",
    "TargetOnlyRun",
    "TrainingContext",
    "make_engine",
    "make_session_factory",
]
