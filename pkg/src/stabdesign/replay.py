"""Experience tuples and a FIFO replay buffer."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .encoder import GraphEmbedding


@dataclass(frozen=True, eq=False)
class Experience:
    state: GraphEmbedding
    a1: int  # position
    a2: int  # substitution slot in 0..18
    reward: float
    next_state: GraphEmbedding
    terminal: bool
    next_position_mask: np.ndarray | None = None  # (|V|,) bool
    next_substitution_mask: np.ndarray | None = None  # (|V|, 19) bool


class ReplayBuffer:
    """Ring buffer with strict FIFO eviction and uniform sampling without replacement."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self.inserted = 0

    def __len__(self) -> int:
        return len(self._items)

    def add(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self.inserted % self.capacity] = item
        self.inserted += 1

    def __iter__(self) -> Iterator:
        """Oldest to newest."""
        if len(self._items) < self.capacity:
            return iter(list(self._items))
        k = self.inserted % self.capacity
        return iter(self._items[k:] + self._items[:k])

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        if batch_size > len(self._items):
            raise ValueError(f"batch of {batch_size} from buffer of {len(self._items)}")
        return rng.choice(len(self._items), size=batch_size, replace=False)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        return [self._items[i] for i in self.sample_indices(batch_size, rng)]
