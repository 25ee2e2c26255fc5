"""Episodic replay buffer and mixed mini-batch sampling."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable

import numpy as np

from .streams.dataset import PhaseDataset, stack_examples

POLICIES = ("reservoir", "fifo")


@dataclass(frozen=True)
class MixConfig:
    lam: float = 0.5
    batch_size: int = 128
    double_batch: bool = False  # B current + B buffer instead of splitting B

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("replay ratio must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch size must be positive")

    def counts(self) -> tuple[int, int]:
        """(buffer draws, current draws) for a batch with a non-empty buffer."""
        if self.double_batch:
            return self.batch_size, self.batch_size
        n_buf = int(round(self.lam * self.batch_size))
        return n_buf, self.batch_size - n_buf


@dataclass
class Entry:
    item: Any
    phase: int
    order: int


class ReplayBuffer:
    """Fixed-capacity store of past examples.

    ``reservoir`` keeps every offered item with probability C/N (Algorithm R);
    ``fifo`` evicts the oldest entry. The generator is owned by the buffer so
    that its draws never perturb the trainer's stream.
    """

    def __init__(self, capacity: int, policy: str = "reservoir", seed=0):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        if policy not in POLICIES:
            raise ValueError(f"unknown buffer policy {policy!r}")
        self.capacity = int(capacity)
        self.policy = policy
        self.entries: list[Entry] = []
        self.seen_count = 0
        self._order = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self.entries)

    @property
    def items(self) -> list:
        return [e.item for e in self.entries]

    def _entry(self, item, phase):
        entry = Entry(item, phase, self._order)
        self._order += 1
        return entry

    def offer(self, item, phase: int = 0) -> "ReplayBuffer":
        return self.offer_many([item], phase)

    def offer_many(self, items: Iterable, phase: int = 0) -> "ReplayBuffer":
        items = list(items)
        if self.capacity == 0:
            self.seen_count += len(items)
            return self
        if self.policy == "fifo":
            for item in items:
                if len(self.entries) >= self.capacity:
                    self.entries.pop(0)
                self.entries.append(self._entry(item, phase))
            self.seen_count += len(items)
            return self
        room = min(self.capacity - len(self.entries), len(items))
        for item in items[:room]:
            self.entries.append(self._entry(item, phase))
        self.seen_count += room
        rest = items[room:]
        if rest:
            # item i of the rest is the (seen + i + 1)-th offer; it survives
            # iff a uniform draw on [0, n) lands inside the buffer
            n = np.arange(self.seen_count + 1, self.seen_count + len(rest) + 1)
            slots = self.rng.integers(0, n)
            for i in np.flatnonzero(slots < self.capacity):
                self.entries[slots[i]] = self._entry(rest[i], phase)
            self.seen_count += len(rest)
        return self

    def snapshot(self) -> list[Entry]:
        return list(self.entries)

    def state(self) -> dict:
        return {"capacity": self.capacity, "policy": self.policy, "seen_count": self.seen_count,
                "order": self._order, "rng": self.rng.bit_generator.state}

    @classmethod
    def restore(cls, state: dict, entries: list[Entry]) -> "ReplayBuffer":
        buf = cls(state["capacity"], state["policy"])
        buf.seen_count = state["seen_count"]
        buf._order = state["order"]
        buf.rng.bit_generator.state = state["rng"]
        buf.entries = list(entries)
        return buf


def end_of_phase_ingest(buffer: ReplayBuffer, phase: PhaseDataset, quota: int) -> ReplayBuffer:
    """Offer ``quota`` training examples of the phase, drawn without replacement."""
    if quota < 0:
        raise ValueError("quota must be non-negative")
    n = len(phase.train_x)
    quota = min(quota, n)
    if quota == 0:
        return buffer
    picks = buffer.rng.permutation(n)[:quota]
    return buffer.offer_many((phase.example(int(i)) for i in picks), phase.phase_id)


def sample_mixed_batch(buffer: ReplayBuffer, current: PhaseDataset, mix: MixConfig,
                       rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw one batch; returns (x, y, from_buffer mask).

    Current-phase draws use ``rng`` (the trainer's), buffer draws and the final
    shuffle use the buffer's generator. With an empty buffer this is exactly
    the sequential fine-tuning draw.
    """
    n = len(current.train_x)
    if n == 0:
        raise ValueError("current phase has no training data")
    if len(buffer) == 0:
        idx = rng.integers(0, n, size=mix.batch_size)
        return current.train_x[idx], current.train_y[idx], np.zeros(mix.batch_size, dtype=bool)
    n_buf, n_cur = mix.counts()
    idx = rng.integers(0, n, size=n_cur)
    picks = buffer.rng.integers(0, len(buffer), size=n_buf)
    buf_x, buf_y = stack_examples([buffer.entries[i].item for i in picks], current.task) \
        if n_buf else (current.train_x[:0], current.train_y[:0])
    x = np.concatenate([current.train_x[idx], buf_x])
    y = np.concatenate([current.train_y[idx], buf_y])
    source = np.concatenate([np.zeros(n_cur, dtype=bool), np.ones(n_buf, dtype=bool)])
    perm = buffer.rng.permutation(len(x))
    return x[perm], y[perm], source[perm]


def buffer_distribution(buffer_or_entries) -> dict[int, float]:
    entries = buffer_or_entries.entries if isinstance(buffer_or_entries, ReplayBuffer) else buffer_or_entries
    if not entries:
        raise ValueError("empty buffer has no phase distribution")
    counts = Counter(e.phase for e in entries)
    total = sum(counts.values())
    return {p: counts[p] / total for p in sorted(counts)}
