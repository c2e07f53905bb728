# igdf/mdp_core/dataset.py
"""
Offline experience containers and their on-disk formats.

A Dataset stores its transitions column-wise (one numpy array per field) so
that batch sampling is a fancy-index away. Iterating a Dataset still yields
one Transition per row.

Text format (canonical):

    igdf-dataset v1; kind=tabular; domain=source; env=gridworld-slip; seed=7; n=3; behavior=medium; n_states=25; n_actions=4
    3, 1, 0, 4, 0
    ...

Continuous records join vector components with "," and fields with ", ".
Floats are written with %.17g so a load/save cycle is lossless.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

import numpy as np

from igdf.errors import DatasetFormatError, ShapeError

logger = logging.getLogger(__name__)

FORMAT_TAG = "igdf-dataset v1"
FLOAT_FMT = "%.17g"


class DomainTag(str, Enum):
    SOURCE = "source"
    TARGET = "target"


class StateKind(str, Enum):
    TABULAR = "tabular"
    CONTINUOUS = "continuous"


class Stream(IntEnum):
    """Named RNG streams; each consumer draws from its own key."""
    SAMPLING = 1
    BEHAVIOR = 2
    ENCODER_INIT = 3
    ENCODER_BATCHES = 4
    ORACLE = 5
    IQL_INIT = 6
    IQL_BATCHES = 7
    EVALUATION = 8
    DARA = 9
    SUBSAMPLE = 10
    TARGET_DATA = 11
    SOURCE_DATA = 12


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """
    Build the repo-wide counter-based generator for (seed, *stream).

    Philox keyed by a SeedSequence gives independent, reproducible streams
    for every (seed, stream id, sub id) tuple.
    """
    if seed < 0:
        raise ValueError(f"Seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


def domain_stream(domain: "DomainTag") -> int:
    return Stream.SOURCE_DATA if DomainTag(domain) is DomainTag.SOURCE else Stream.TARGET_DATA


@dataclass(frozen=True)
class Transition:
    state: Union[int, np.ndarray]
    action: Union[int, np.ndarray]
    reward: float
    next_state: Union[int, np.ndarray]
    terminal: bool


@dataclass(frozen=True, eq=False)
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    def take(self, idx: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(
            self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.terminals[idx],
        )

    @staticmethod
    def concat(first: "TransitionBatch", second: "TransitionBatch") -> "TransitionBatch":
        return TransitionBatch(
            np.concatenate([first.states, second.states]),
            np.concatenate([first.actions, second.actions]),
            np.concatenate([first.rewards, second.rewards]),
            np.concatenate([first.next_states, second.next_states]),
            np.concatenate([first.terminals, second.terminals]),
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    A tagged, immutable offline dataset.

    Tabular datasets hold integer id columns of shape (n,); continuous ones
    hold float rows of shape (n, dim). ``n_states``/``n_actions`` (tabular)
    and the dims (continuous) are derived when not given.
    """
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    terminals: np.ndarray
    domain_tag: DomainTag
    env_id: str = "custom"
    behavior_id: str = "custom"
    seed: int = 0
    n_states: Optional[int] = None
    n_actions: Optional[int] = None
    _kind: StateKind = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("states", "actions", "next_states"):
            object.__setattr__(self, name, np.array(getattr(self, name), copy=True))
        object.__setattr__(self, "rewards", np.array(self.rewards, dtype=np.float64, copy=True))
        object.__setattr__(self, "terminals", np.array(self.terminals, dtype=bool, copy=True))
        n = len(self.rewards)
        if n == 0:
            raise ValueError("Dataset must contain at least one transition.")
        columns = {
            "states": self.states, "actions": self.actions, "next_states": self.next_states,
            "terminals": self.terminals,
        }
        for name, column in columns.items():
            if len(column) != n:
                raise ShapeError(f"Column '{name}' has {len(column)} rows, expected {n}.")
        if self.states.shape != self.next_states.shape or self.states.dtype.kind != self.next_states.dtype.kind:
            raise ShapeError("state and next_state columns must share kind and dimension.")

        if self.states.dtype.kind in "iu":
            if self.actions.dtype.kind not in "iu" or self.states.ndim != 1 or self.actions.ndim != 1:
                raise ShapeError("Tabular datasets need 1-D integer state and action columns.")
            kind = StateKind.TABULAR
            if self.n_states is None:
                object.__setattr__(self, "n_states", int(max(self.states.max(), self.next_states.max())) + 1)
            if self.n_actions is None:
                object.__setattr__(self, "n_actions", int(self.actions.max()) + 1)
            if min(self.states.min(), self.next_states.min(), self.actions.min()) < 0 \
                    or max(self.states.max(), self.next_states.max()) >= self.n_states \
                    or self.actions.max() >= self.n_actions:
                raise ShapeError("Tabular ids fall outside the declared state/action space.")
        else:
            if self.states.ndim != 2 or self.actions.ndim != 2:
                raise ShapeError("Continuous datasets need 2-D state and action columns.")
            kind = StateKind.CONTINUOUS

        for column in (self.states, self.actions, self.rewards, self.next_states, self.terminals):
            column.setflags(write=False)
        object.__setattr__(self, "domain_tag", DomainTag(self.domain_tag))
        object.__setattr__(self, "_kind", kind)

    @property
    def kind(self) -> StateKind:
        return self._kind

    @property
    def state_dim(self) -> int:
        return 1 if self.kind is StateKind.TABULAR else self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return 1 if self.kind is StateKind.TABULAR else self.actions.shape[1]

    def __len__(self) -> int:
        return len(self.rewards)

    def __iter__(self) -> Iterator[Transition]:
        tabular = self.kind is StateKind.TABULAR
        for i in range(len(self)):
            yield Transition(
                state=int(self.states[i]) if tabular else self.states[i].copy(),
                action=int(self.actions[i]) if tabular else self.actions[i].copy(),
                reward=float(self.rewards[i]),
                next_state=int(self.next_states[i]) if tabular else self.next_states[i].copy(),
                terminal=bool(self.terminals[i]),
            )

    def take(self, idx: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            self.states[idx], self.actions[idx], self.rewards[idx],
            self.next_states[idx], self.terminals[idx],
        )

    def as_batch(self) -> TransitionBatch:
        return self.take(np.arange(len(self)))

    def subset(self, idx: np.ndarray) -> "Dataset":
        return self._replace(
            states=self.states[idx], actions=self.actions[idx], rewards=self.rewards[idx],
            next_states=self.next_states[idx], terminals=self.terminals[idx],
        )

    def with_rewards(self, rewards: np.ndarray) -> "Dataset":
        rewards = np.asarray(rewards, dtype=np.float64)
        if rewards.shape != self.rewards.shape:
            raise ShapeError(f"Expected {self.rewards.shape} rewards, got {rewards.shape}.")
        return self._replace(rewards=rewards)

    def with_domain(self, domain: DomainTag) -> "Dataset":
        return self._replace(domain_tag=DomainTag(domain))

    def _replace(self, **changes) -> "Dataset":
        values = {
            "states": self.states, "actions": self.actions, "rewards": self.rewards,
            "next_states": self.next_states, "terminals": self.terminals,
            "domain_tag": self.domain_tag, "env_id": self.env_id, "behavior_id": self.behavior_id,
            "seed": self.seed, "n_states": self.n_states, "n_actions": self.n_actions,
        }
        values.update(changes)
        return Dataset(**values)

    @classmethod
    def from_transitions(
        cls,
        transitions: Sequence[Transition],
        domain_tag: DomainTag,
        **metadata,
    ) -> "Dataset":
        if not transitions:
            raise ValueError("Dataset must contain at least one transition.")
        tabular = isinstance(transitions[0].state, (int, np.integer))
        dtype = np.int64 if tabular else np.float64
        return cls(
            states=np.array([t.state for t in transitions], dtype=dtype),
            actions=np.array([t.action for t in transitions], dtype=dtype),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.array([t.next_state for t in transitions], dtype=dtype),
            terminals=np.array([t.terminal for t in transitions], dtype=bool),
            domain_tag=domain_tag,
            **metadata,
        )


def subsample(dataset: Dataset, ratio: float, rng: np.random.Generator) -> Dataset:
    """Keep a uniformly random ``ratio`` share of the transitions, in original order."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"Subsample ratio must lie in (0, 1], got {ratio}")
    if ratio == 1.0:
        return dataset
    size = max(1, int(round(ratio * len(dataset))))
    idx = np.sort(rng.choice(len(dataset), size=size, replace=False))
    return dataset.subset(idx)


# ---------------------------------------------------------------- file formats

def _format_value(value, tabular: bool) -> str:
    if tabular:
        return str(int(value))
    return ",".join(FLOAT_FMT % v for v in np.atleast_1d(value))


def _header(dataset: Dataset) -> str:
    parts = [
        FORMAT_TAG,
        f"kind={dataset.kind.value}",
        f"domain={dataset.domain_tag.value}",
        f"env={dataset.env_id}",
        f"seed={dataset.seed}",
        f"n={len(dataset)}",
        f"behavior={dataset.behavior_id}",
    ]
    if dataset.kind is StateKind.TABULAR:
        parts += [f"n_states={dataset.n_states}", f"n_actions={dataset.n_actions}"]
    else:
        parts += [f"state_dim={dataset.state_dim}", f"action_dim={dataset.action_dim}"]
    return "; ".join(parts)


def _parse_header(line: str) -> dict:
    parts = [p.strip() for p in line.strip().split(";")]
    if not parts or parts[0] != FORMAT_TAG:
        raise DatasetFormatError(f"Not an igdf dataset header: {line.strip()!r}")
    fields = {}
    for part in parts[1:]:
        if "=" not in part:
            raise DatasetFormatError(f"Malformed header field: {part!r}")
        key, value = part.split("=", 1)
        fields[key.strip()] = value.strip()
    missing = {"kind", "domain", "env", "seed", "n"} - fields.keys()
    if missing:
        raise DatasetFormatError(f"Dataset header is missing fields: {sorted(missing)}")
    return fields


def dumps_dataset(dataset: Dataset) -> str:
    tabular = dataset.kind is StateKind.TABULAR
    lines = [_header(dataset)]
    for i in range(len(dataset)):
        lines.append(", ".join([
            _format_value(dataset.states[i], tabular),
            _format_value(dataset.actions[i], tabular),
            FLOAT_FMT % dataset.rewards[i],
            _format_value(dataset.next_states[i], tabular),
            "1" if dataset.terminals[i] else "0",
        ]))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError("Empty dataset file.")
    header = _parse_header(lines[0])
    kind = StateKind(header["kind"])
    records = [line for line in lines[1:] if line.strip()]
    if len(records) != int(header["n"]):
        raise DatasetFormatError(f"Header declares n={header['n']} but found {len(records)} records.")

    states, actions, rewards, next_states, terminals = [], [], [], [], []
    for lineno, record in enumerate(records, start=2):
        fields = [f.strip() for f in record.split(", ")]
        if len(fields) != 5:
            raise DatasetFormatError(f"Line {lineno}: expected 5 fields, got {len(fields)}")
        try:
            if kind is StateKind.TABULAR:
                states.append(int(fields[0]))
                actions.append(int(fields[1]))
                next_states.append(int(fields[3]))
            else:
                states.append([float(v) for v in fields[0].split(",")])
                actions.append([float(v) for v in fields[1].split(",")])
                next_states.append([float(v) for v in fields[3].split(",")])
            rewards.append(float(fields[2]))
            terminals.append(fields[4] == "1")
        except ValueError as e:
            raise DatasetFormatError(f"Line {lineno}: {e}") from e

    dtype = np.int64 if kind is StateKind.TABULAR else np.float64
    return Dataset(
        states=np.array(states, dtype=dtype),
        actions=np.array(actions, dtype=dtype),
        rewards=np.array(rewards, dtype=np.float64),
        next_states=np.array(next_states, dtype=dtype),
        terminals=np.array(terminals, dtype=bool),
        domain_tag=DomainTag(header["domain"]),
        env_id=header["env"],
        behavior_id=header.get("behavior", "custom"),
        seed=int(header["seed"]),
        n_states=int(header["n_states"]) if "n_states" in header else None,
        n_actions=int(header["n_actions"]) if "n_actions" in header else None,
    )


def save_dataset(dataset: Dataset, path: Union[str, Path]) -> Path:
    """Write the text format, or the binary .npz variant when the suffix is .npz."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".npz":
        with open(path, "wb") as handle:
            np.savez(
                handle,
                states=dataset.states, actions=dataset.actions, rewards=dataset.rewards,
                next_states=dataset.next_states, terminals=dataset.terminals,
                header=np.array(_header(dataset)),
            )
    else:
        path.write_text(dumps_dataset(dataset))
    logger.info(f"Saved {len(dataset)} {dataset.domain_tag.value} transitions to {path}")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Dataset file not found: {path}")
    if path.suffix != ".npz":
        return loads_dataset(path.read_text())
    with np.load(path, allow_pickle=False) as data:
        header = _parse_header(str(data["header"]))
        return Dataset(
            states=data["states"], actions=data["actions"], rewards=data["rewards"],
            next_states=data["next_states"], terminals=data["terminals"],
            domain_tag=DomainTag(header["domain"]),
            env_id=header["env"],
            behavior_id=header.get("behavior", "custom"),
            seed=int(header["seed"]),
            n_states=int(header["n_states"]) if "n_states" in header else None,
            n_actions=int(header["n_actions"]) if "n_actions" in header else None,
        )
