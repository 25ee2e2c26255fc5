from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..objectives import TaskKind


class StreamConfigError(ValueError):
    """Invalid stream construction request."""


@dataclass(frozen=True, eq=False)
class Example:
    x: np.ndarray
    y: Any  # class index or real vector
    phase_origin: int
    key: int = -1


@dataclass(eq=False)
class PhaseDataset:
    """Train/val arrays for one phase. Keys are stable example ids."""

    phase_id: int
    task: TaskKind
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    train_keys: np.ndarray = field(default=None)
    val_keys: np.ndarray = field(default=None)

    def __post_init__(self):
        if len(self.train_x) == 0 or len(self.val_x) == 0:
            raise StreamConfigError(f"phase {self.phase_id}: train and val must be non-empty")
        if len(self.train_x) != len(self.train_y) or len(self.val_x) != len(self.val_y):
            raise StreamConfigError(f"phase {self.phase_id}: feature/target length mismatch")
        if self.train_x.shape[1:] != self.val_x.shape[1:]:
            raise StreamConfigError(f"phase {self.phase_id}: train/val feature dims differ")
        if self.train_keys is None:
            self.train_keys = np.arange(len(self.train_x))
        if self.val_keys is None:
            self.val_keys = np.arange(len(self.train_x), len(self.train_x) + len(self.val_x))
        if np.intersect1d(self.train_keys, self.val_keys).size:
            raise StreamConfigError(f"phase {self.phase_id}: train and val share examples")

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]

    def arrays(self, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
        if split == "train":
            return self.train_x, self.train_y
        if split == "val":
            return self.val_x, self.val_y
        raise ValueError(f"unknown split {split!r}")

    def example(self, i: int, split: str = "train") -> Example:
        x, y = self.arrays(split)
        keys = self.train_keys if split == "train" else self.val_keys
        return Example(x[i], y[i], self.phase_id, int(keys[i]))

    @property
    def train(self) -> list[Example]:
        return [self.example(i) for i in range(len(self.train_x))]

    @property
    def val(self) -> list[Example]:
        return [self.example(i, "val") for i in range(len(self.val_x))]


def make_phase(phase_id: int, x, y, keys, task: TaskKind, val_fraction: float = 0.2) -> PhaseDataset:
    """Hold out the last ``val_fraction`` of the examples, in their given order."""
    if not 0.0 < val_fraction < 1.0:
        raise StreamConfigError("val_fraction must lie in (0, 1)")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    keys = np.asarray(keys)
    n = len(x)
    if n < 2:
        raise StreamConfigError(f"phase {phase_id} has {n} examples; need at least 2")
    n_val = min(max(int(round(n * val_fraction)), 1), n - 1)
    cut = n - n_val
    return PhaseDataset(phase_id, task, x[:cut], y[:cut], x[cut:], y[cut:], keys[:cut], keys[cut:])


def stack_examples(examples: Sequence[Example], task: TaskKind) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([e.x for e in examples])
    if task.kind == "classification":
        y = np.fromiter((e.y for e in examples), dtype=np.int64, count=len(examples))
    else:
        y = np.stack([np.asarray(e.y, dtype=np.float64) for e in examples])
    return x, y
