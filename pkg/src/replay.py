"""Transition memory: uniform ring buffer, prioritized sum-tree variant and bootstrap sampling."""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .models import Transition, TransitionBatch


class SumTree:
    """Binary tree whose leaves hold priorities and whose internal nodes hold
    the sum of their children.

    Stored as a flat array with the root at index 1 and the leaves at
    ``capacity .. 2 * capacity - 1``; capacity is rounded up to a power of two.
    """

    def __init__(self, size: int):
        if size < 1:
            raise ValueError("SumTree size must be at least 1")
        capacity = 1
        while capacity < size:
            capacity *= 2
        self.size = size
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.nodes[1])

    def get(self, index: int) -> float:
        return float(self.nodes[self.capacity + index])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity:self.capacity + self.size].copy()

    def update(self, index: int, value: float):
        """Set one leaf and recompute its ancestors from their children."""
        if not 0 <= index < self.size:
            raise IndexError(f"Leaf index {index} out of range [0, {self.size})")
        if value < 0:
            raise ValueError("Priorities cannot be negative")
        node = self.capacity + index
        self.nodes[node] = value
        node //= 2
        while node >= 1:
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1]
            node //= 2

    def retrieve(self, value: float) -> int:
        """Leaf index whose cumulative-priority interval contains ``value``."""
        node = 1
        while node < self.capacity:
            left = 2 * node
            if value <= self.nodes[left] or self.nodes[left + 1] == 0.0:
                node = left
            else:
                value -= self.nodes[left]
                node = left + 1
        return min(node - self.capacity, self.size - 1)

    def check(self) -> bool:
        """Whether every internal node equals the sum of its children."""
        for node in range(1, self.capacity):
            if self.nodes[node] != self.nodes[2 * node] + self.nodes[2 * node + 1]:
                return False
        return True

    def __repr__(self):
        return f"SumTree(size={self.size}, total={self.total:.6g})"


class ReplayMemory:
    """Fixed-capacity FIFO ring buffer of transitions.

    Storage is allocated lazily on the first push, sized from the observation.
    Every stored transition has a global id (its push count); the ring slot is
    ``id % capacity``.
    """

    def __init__(self, capacity: int = 100_000):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self.logger = logging.getLogger(__name__)
        self._n_pushed = 0
        self._observations = None
        self._next_observations = None
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity, dtype=np.float64)
        self._terminals = np.zeros(capacity, dtype=bool)
        self._truncateds = np.zeros(capacity, dtype=bool)
        self._samplers: Dict[int, "BootstrapSampler"] = {}

    def __len__(self) -> int:
        return min(self._n_pushed, self.capacity)

    @property
    def total_pushed(self) -> int:
        return self._n_pushed

    def _allocate(self, obs_dim: int):
        self._observations = np.zeros((self.capacity, obs_dim), dtype=np.float64)
        self._next_observations = np.zeros((self.capacity, obs_dim), dtype=np.float64)

    def push(self, transition: Transition) -> int:
        """Store a transition, evicting the oldest at capacity.

        Returns:
            Global id of the stored transition
        """
        observation = np.asarray(transition.observation, dtype=np.float64)
        if self._observations is None:
            self._allocate(len(observation))
        elif len(observation) != self._observations.shape[1]:
            raise ValueError(
                f"Observation length {len(observation)} does not match memory width "
                f"{self._observations.shape[1]}"
            )

        slot = self._n_pushed % self.capacity
        self._observations[slot] = observation
        self._next_observations[slot] = transition.next_observation
        self._actions[slot] = transition.action
        self._rewards[slot] = transition.reward
        self._terminals[slot] = transition.terminal
        self._truncateds[slot] = transition.truncated

        transition_id = self._n_pushed
        self._n_pushed += 1
        return transition_id

    def _oldest_id(self) -> int:
        return max(0, self._n_pushed - self.capacity)

    def _batch(self, slots: np.ndarray) -> TransitionBatch:
        return TransitionBatch(
            observations=self._observations[slots],
            actions=self._actions[slots],
            rewards=self._rewards[slots],
            next_observations=self._next_observations[slots],
            terminals=self._terminals[slots],
            truncateds=self._truncateds[slots],
        )

    def _empty_batch(self) -> TransitionBatch:
        width = 0 if self._observations is None else self._observations.shape[1]
        return TransitionBatch(
            observations=np.zeros((0, width)),
            actions=np.zeros(0, dtype=np.int64),
            rewards=np.zeros(0),
            next_observations=np.zeros((0, width)),
            terminals=np.zeros(0, dtype=bool),
            truncateds=np.zeros(0, dtype=bool),
        )

    def _uniform_slots(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        ids = rng.integers(self._oldest_id(), self._n_pushed, size=batch_size)
        return ids % self.capacity

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> TransitionBatch:
        """I.i.d. uniform draws with replacement; the batch may exceed the memory size."""
        if batch_size == 0:
            return self._empty_batch()
        if len(self) == 0:
            raise ValueError(f"Cannot sample a batch of {batch_size} from an empty memory")
        return self._batch(self._uniform_slots(batch_size, rng))

    def bootstrap_sampler(self, member_seed: int) -> "BootstrapSampler":
        """Independent sampling stream for one ensemble member."""
        return BootstrapSampler(self, member_seed)

    def sample_bootstrap(self, batch_size: int, member_seed: int) -> TransitionBatch:
        """Uniform draws with replacement from the member's own random stream."""
        if member_seed not in self._samplers:
            self._samplers[member_seed] = self.bootstrap_sampler(member_seed)
        return self._samplers[member_seed].sample(batch_size)


class BootstrapSampler:
    """Per-member sampler cursor over a shared memory."""

    def __init__(self, memory: ReplayMemory, member_seed: int):
        self.memory = memory
        self.member_seed = member_seed
        self.rng = np.random.default_rng(member_seed)

    def sample(self, batch_size: int) -> TransitionBatch:
        if len(self.memory) < 1:
            raise ValueError("Cannot bootstrap from an empty memory")
        if batch_size == 0:
            return self.memory._empty_batch()
        return self.memory._batch(self.memory._uniform_slots(batch_size, self.rng))


class PrioritizedReplayMemory(ReplayMemory):
    """Replay memory sampling transitions in proportion to priority ** alpha.

    Raw priorities (|TD error| + floor) are kept per slot; the sum tree holds
    the exponentiated values for the alpha it was last built with.
    """

    def __init__(self, capacity: int = 100_000, alpha: float = 0.6,
                 priority_epsilon: float = 1e-5):
        super().__init__(capacity)
        if alpha < 0:
            raise ValueError("alpha cannot be negative")
        if priority_epsilon <= 0:
            raise ValueError("priority_epsilon must be positive")
        self.alpha = alpha
        self.priority_epsilon = priority_epsilon
        self.tree = SumTree(capacity)
        self._priorities = np.zeros(capacity, dtype=np.float64)
        self.max_priority = 1.0
        self.stale_updates = 0

    def push(self, transition: Transition) -> int:
        transition_id = super().push(transition)
        slot = transition_id % self.capacity
        self._set_priority(slot, self.max_priority)
        return transition_id

    def _set_priority(self, slot: int, priority: float):
        self._priorities[slot] = priority
        self.tree.update(slot, priority ** self.alpha)

    def _rebuild(self, alpha: float):
        self.logger.debug(f"[Replay] Rebuilding sum tree for alpha={alpha}")
        self.alpha = alpha
        self.tree = SumTree(self.capacity)
        for slot in range(len(self)):
            self.tree.update(slot, self._priorities[slot] ** alpha)

    def probabilities(self) -> np.ndarray:
        """Sampling probability of every stored slot."""
        leaves = self.tree.leaves()[:len(self)]
        return leaves / leaves.sum()

    def sample_prioritized(self, batch_size: int, alpha: float, beta: float,
                           rng: np.random.Generator) -> Tuple[TransitionBatch, np.ndarray, np.ndarray]:
        """Stratified proportional sampling.

        Returns:
            (batch, transition ids, importance weights normalised by the batch maximum)
        """
        if len(self) == 0:
            raise ValueError("Cannot sample from an empty memory")
        if alpha != self.alpha:
            self._rebuild(alpha)
        if batch_size == 0:
            return self._empty_batch(), np.zeros(0, dtype=np.int64), np.zeros(0)

        total = self.tree.total
        segment = total / batch_size
        slots = np.empty(batch_size, dtype=np.int64)
        for i in range(batch_size):
            value = rng.uniform(segment * i, segment * (i + 1))
            slots[i] = self.tree.retrieve(value)

        leaf_values = self.tree.nodes[self.tree.capacity + slots]
        probabilities = leaf_values / total
        weights = (len(self) * probabilities) ** (-beta)
        weights = weights / weights.max()

        ids = self._ids_for_slots(slots)
        return self._batch(slots), ids, weights

    def _ids_for_slots(self, slots: np.ndarray) -> np.ndarray:
        """Global id currently held in each slot."""
        newest = self._n_pushed - 1
        newest_slot = newest % self.capacity
        offset = (newest_slot - slots) % self.capacity
        return newest - offset

    def update_priorities(self, ids, td_errors):
        """Set priority = |td_error| + floor for each still-stored transition id."""
        oldest = self._oldest_id()
        for transition_id, td_error in zip(np.asarray(ids), np.asarray(td_errors, dtype=np.float64)):
            transition_id = int(transition_id)
            if transition_id >= self._n_pushed:
                raise IndexError(f"Transition id {transition_id} has not been pushed")
            if transition_id < oldest:
                self.stale_updates += 1
                continue
            priority = abs(float(td_error)) + self.priority_epsilon
            self._set_priority(transition_id % self.capacity, priority)
            self.max_priority = max(self.max_priority, priority)

    def priorities_frame(self) -> pd.DataFrame:
        n = len(self)
        return pd.DataFrame({
            "slot": np.arange(n),
            "priority": self._priorities[:n],
            "probability": self.probabilities() if n else np.zeros(0),
        })

    def dump_priorities(self, path: str):
        """Debug dump of stored priorities as CSV."""
        self.priorities_frame().to_csv(path, index=False)
        self.logger.info(f"[Replay] Priorities written: {path}")
