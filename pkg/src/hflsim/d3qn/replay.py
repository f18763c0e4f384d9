"""Fixed-capacity FIFO replay memory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation


@dataclass(frozen=True)
class Transition:
    """(s, a, r, s') with s = (features, t) and s' = (features, t + 1).

    ``done`` marks the last device of an episode (no successor state).
    """

    features: np.ndarray  # (H, F) episode feature matrix
    t: int
    action: int
    reward: float
    done: bool

    @property
    def next_t(self) -> int | None:
        return None if self.done else self.t + 1


@dataclass
class Batch:
    features: np.ndarray  # (O, H, F)
    t: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Ring storage; once full, each push evicts the oldest transition."""

    def __init__(self, capacity: int, horizon: int, n_features: int):
        if capacity < 1:
            raise ContractViolation("replay capacity must be >= 1")
        self.capacity = capacity
        self.features = np.zeros((capacity, horizon, n_features))
        self.t = np.zeros(capacity, dtype=np.int64)
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self.serial = np.full(capacity, -1, dtype=np.int64)  # push order, for FIFO checks
        self._next = 0
        self._pushed = 0

    def __len__(self) -> int:
        return min(self._pushed, self.capacity)

    def push(self, tr: Transition) -> None:
        if tr.reward not in (1.0, -1.0):
            raise ContractViolation(f"reward must be +1 or -1, got {tr.reward}")
        k = self._next
        self.features[k] = tr.features
        self.t[k] = tr.t
        self.action[k] = tr.action
        self.reward[k] = tr.reward
        self.done[k] = tr.done
        self.serial[k] = self._pushed
        self._pushed += 1
        self._next = (k + 1) % self.capacity

    def sample(self, rng: np.random.Generator, size: int) -> Batch:
        n = len(self)
        if size > n:
            raise ContractViolation(f"cannot sample {size} of {n} transitions")
        idx = rng.choice(n, size=size, replace=False)
        return Batch(self.features[idx], self.t[idx], self.action[idx], self.reward[idx], self.done[idx])

    def oldest_serial(self) -> int:
        return int(self.serial[: len(self)].min()) if len(self) else -1
