# igdf/envs/pointmass.py
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from igdf.mdp_core import StateKind

logger = logging.getLogger(__name__)


class PointMassShiftSpec(BaseModel):
    """
    A planar point mass whose source and target domains differ in mass,
    friction or source-only action noise.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["pointmass"] = "pointmass"
    name: str = "pointmass-mass"
    dt: float = Field(0.1, gt=0.0)
    mass_source: float = Field(3.0, gt=0.0)
    mass_target: float = Field(1.0, gt=0.0)
    friction_source: float = Field(0.1, ge=0.0, lt=1.0)
    friction_target: float = Field(0.1, ge=0.0, lt=1.0)
    action_noise: float = Field(0.0, ge=0.0)
    joint_noise_source: float = Field(0.0, ge=0.0)
    horizon: int = Field(50, ge=1)
    goal: tuple[float, float] = (0.5, 0.5)


@dataclass(frozen=True, eq=False)
class PointMassEnv:
    """
    State (x, y, vx, vy), action a in [-1, 1]^2:

        v' = (1 - friction) v + (a / mass) dt
        x' = x + v' dt
        r  = -||x' - goal||
    """
    mass: float
    friction: float
    action_noise: float
    dt: float
    horizon: int
    goal: tuple[float, float]
    env_id: str = "pointmass"
    state_dim: int = 4
    action_dim: int = 2

    @property
    def kind(self) -> StateKind:
        return StateKind.CONTINUOUS

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([rng.uniform(-1.0, 1.0, size=2), np.zeros(2)])

    def step(
        self,
        state: np.ndarray,
        action: np.ndarray,
        rng: np.random.Generator,
        t: int = 0,
    ) -> tuple[np.ndarray, float, bool]:
        # The noise draw happens even at zero scale so paired envs stay on one stream.
        noise = rng.standard_normal(2)
        applied = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0) + self.action_noise * noise
        position, velocity = state[:2], state[2:]
        velocity = (1.0 - self.friction) * velocity + (applied / self.mass) * self.dt
        position = position + velocity * self.dt
        reward = -float(np.linalg.norm(position - np.asarray(self.goal)))
        return np.concatenate([position, velocity]), reward, t + 1 >= self.horizon


def make_pointmass_pair(spec: PointMassShiftSpec) -> tuple[PointMassEnv, PointMassEnv]:
    source = PointMassEnv(
        mass=spec.mass_source,
        friction=spec.friction_source,
        action_noise=spec.action_noise + spec.joint_noise_source,
        dt=spec.dt,
        horizon=spec.horizon,
        goal=spec.goal,
        env_id=spec.name,
    )
    target = PointMassEnv(
        mass=spec.mass_target,
        friction=spec.friction_target,
        action_noise=spec.action_noise,
        dt=spec.dt,
        horizon=spec.horizon,
        goal=spec.goal,
        env_id=spec.name,
    )
    return source, target
