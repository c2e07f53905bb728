# igdf/nn/features.py
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np

from igdf.errors import ShapeError, UnsupportedKindError
from igdf.mdp_core import Dataset, StateKind


class StateEncoding(str, Enum):
    ONE_HOT = "one_hot"
    RAW_VECTOR = "raw_vector"


@dataclass(frozen=True)
class InputEncoding:
    """
    How states and actions enter a network: one-hot ids for tabular data,
    raw float vectors for continuous data.
    """
    kind: StateKind
    encoding: StateEncoding
    n_states: Optional[int] = None
    n_actions: Optional[int] = None
    state_dim: int = 1
    action_dim: int = 1

    @classmethod
    def for_dataset(
        cls,
        dataset: Dataset,
        encoding: Optional[Union[StateEncoding, str]] = None,
    ) -> "InputEncoding":
        if encoding is None:
            encoding = StateEncoding.ONE_HOT if dataset.kind is StateKind.TABULAR else StateEncoding.RAW_VECTOR
        encoding = StateEncoding(encoding)
        if encoding is StateEncoding.ONE_HOT and dataset.kind is not StateKind.TABULAR:
            raise UnsupportedKindError("One-hot encoding needs a tabular dataset.")
        return cls(
            kind=dataset.kind,
            encoding=encoding,
            n_states=dataset.n_states,
            n_actions=dataset.n_actions,
            state_dim=dataset.state_dim,
            action_dim=dataset.action_dim,
        )

    def matches(self, dataset: Dataset) -> bool:
        if dataset.kind is not self.kind:
            return False
        if self.kind is StateKind.TABULAR:
            return dataset.n_states <= self.n_states and dataset.n_actions <= self.n_actions
        return dataset.state_dim == self.state_dim and dataset.action_dim == self.action_dim

    @property
    def state_width(self) -> int:
        return self.n_states if self.encoding is StateEncoding.ONE_HOT else self.state_dim

    @property
    def action_width(self) -> int:
        return self.n_actions if self.encoding is StateEncoding.ONE_HOT else self.action_dim

    @property
    def state_action_width(self) -> int:
        return self.state_width + self.action_width

    def _encode(self, values: np.ndarray, size: Optional[int], dim: int) -> np.ndarray:
        values = np.asarray(values)
        if self.encoding is StateEncoding.ONE_HOT:
            return np.eye(size)[values.astype(np.int64)]
        values = values.astype(np.float64)
        if values.ndim == 1:
            values = values[:, None] if dim == 1 else values[None, :]
        if values.shape[1] != dim:
            raise ShapeError(f"Expected vectors of width {dim}, got {values.shape}")
        return values

    def states(self, states: np.ndarray) -> np.ndarray:
        return self._encode(states, self.n_states, self.state_dim)

    def actions(self, actions: np.ndarray) -> np.ndarray:
        return self._encode(actions, self.n_actions, self.action_dim)

    def state_actions(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.concatenate([self.states(states), self.actions(actions)], axis=1)

    def to_fields(self) -> dict[str, str]:
        return {
            "kind": self.kind.value,
            "encoding": self.encoding.value,
            "n_states": str(self.n_states),
            "n_actions": str(self.n_actions),
            "state_dim": str(self.state_dim),
            "action_dim": str(self.action_dim),
        }

    @classmethod
    def from_fields(cls, fields: dict[str, str]) -> "InputEncoding":
        def optional_int(key: str) -> Optional[int]:
            value = fields.get(key, "None")
            return None if value == "None" else int(value)

        return cls(
            kind=StateKind(fields["kind"]),
            encoding=StateEncoding(fields["encoding"]),
            n_states=optional_int("n_states"),
            n_actions=optional_int("n_actions"),
            state_dim=int(fields.get("state_dim", 1)),
            action_dim=int(fields.get("action_dim", 1)),
        )
