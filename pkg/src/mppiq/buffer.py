"""Replay buffer with plan amortization: sample-with-removal, refine the
stored open-loop plan, reinsert. Removed items occupy no slot, so they can
never be evicted while a refinement pass is in flight."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    cost: float
    next_s: np.ndarray
    done: bool
    plan: np.ndarray  # warm-start plan anchored at next_s, shape (H+1, adim)
    refinements: int = 0  # planner passes applied to the stored plan


class ReplayBuffer:
    """Ring-ish transition store; eviction removes the oldest insertion."""

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._birth: list[int] = []  # insertion-order stamp per slot
        self._clock = 0
        self.n_pushed = 0
        self.n_evicted = 0
        self.n_outstanding = 0

    def __len__(self) -> int:
        return len(self._items)

    def _insert(self, t: Transition) -> None:
        if len(self._items) >= self.capacity:
            oldest = int(np.argmin(self._birth))
            self._swap_remove(oldest)
            self.n_evicted += 1
        self._items.append(t)
        self._birth.append(self._clock)
        self._clock += 1

    def _swap_remove(self, idx: int) -> Transition:
        last = len(self._items) - 1
        self._items[idx], self._items[last] = self._items[last], self._items[idx]
        self._birth[idx], self._birth[last] = self._birth[last], self._birth[idx]
        self._birth.pop()
        return self._items.pop()

    def push(self, t: Transition) -> None:
        self._insert(t)
        self.n_pushed += 1

    def sample_remove(self, batch_size: int, rng) -> list[Transition]:
        """Uniform distinct sample, removed from the buffer until reinserted."""
        if batch_size > len(self._items):
            raise ValueError(
                f"batch size {batch_size} exceeds buffer size {len(self._items)}"
            )
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        batch = [self._swap_remove(i) for i in sorted(idx, reverse=True)]
        self.n_outstanding += batch_size
        return batch

    def sample(self, batch_size: int, rng) -> list[Transition]:
        """Uniform distinct sample without removal (cold-start ablation)."""
        if batch_size > len(self._items):
            raise ValueError(
                f"batch size {batch_size} exceeds buffer size {len(self._items)}"
            )
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]

    def reinsert(self, batch: list[Transition]) -> None:
        """Return previously removed transitions, with refined plans."""
        if self.n_outstanding < len(batch):
            raise ValueError("reinserting more transitions than were sampled out")
        for t in batch:
            self._insert(t)
        self.n_outstanding -= len(batch)

    def conserved(self) -> bool:
        """push-count - evictions - outstanding == size."""
        return self.n_pushed - self.n_evicted - self.n_outstanding == len(self._items)

    def mean_refinements(self) -> float:
        if not self._items:
            return 0.0
        return float(np.mean([t.refinements for t in self._items]))
