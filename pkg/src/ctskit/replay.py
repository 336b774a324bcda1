"""Uniform experience replay with FIFO eviction."""

from __future__ import annotations

import random
from dataclasses import dataclass

from .simulator import Observation

__all__ = ["Transition", "ReplayBuffer"]


@dataclass(frozen=True)
class Transition:
    obs: Observation
    action: int
    reward: float
    next_obs: Observation
    done: bool
    mode_label: int  # 0 = guided, 1 = free


class ReplayBuffer:
    """Ring buffer; sampling is uniform without replacement within a batch."""

    def __init__(self, capacity: int = 100_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._storage: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._storage)

    def add(self, transition: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(transition)
        else:
            self._storage[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: random.Random) -> list[Transition]:
        if batch_size > len(self._storage):
            raise ValueError(f"cannot sample {batch_size} from {len(self._storage)} transitions")
        return [self._storage[i] for i in rng.sample(range(len(self._storage)), batch_size)]

    def __contains__(self, transition: Transition) -> bool:
        return any(t is transition for t in self._storage)
