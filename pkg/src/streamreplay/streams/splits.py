"""Partition an example pool into phases: label pairs, time slices, entity groups."""
from __future__ import annotations

import hashlib
from typing import Callable, Hashable, Sequence

import numpy as np

from ..objectives import TaskKind
from .dataset import PhaseDataset, StreamConfigError, make_phase

DIGIT_PAIRS = ((0, 1), (2, 3), (4, 5), (6, 7), (8, 9))


def _keys(keys, n):
    return np.arange(n) if keys is None else np.asarray(keys)


def split_label_pairs(x, y, pairs=DIGIT_PAIRS, task: TaskKind | None = None,
                      val_fraction: float = 0.2, keys=None, labels=None) -> list[PhaseDataset]:
    """Phase t holds every example whose label is in ``pairs[t-1]``.

    ``labels`` selects examples when the targets are not the labels themselves
    (reconstruction); by default the class head spans all ten digits.
    """
    y = np.asarray(y)
    labels = y if labels is None else np.asarray(labels)
    seen: set[int] = set()
    for pair in pairs:
        if seen & set(pair):
            raise StreamConfigError(f"label pairs overlap: {pairs}")
        seen |= set(pair)
    if task is None:
        task = TaskKind.classification(max(10, int(labels.max()) + 1), np.asarray(x).shape[1])
    keys = _keys(keys, len(y))
    phases = []
    for t, pair in enumerate(pairs, start=1):
        mask = np.isin(labels, pair)
        if not mask.any():
            raise StreamConfigError(f"no examples with labels {pair}")
        phases.append(make_phase(t, np.asarray(x)[mask], y[mask], keys[mask], task, val_fraction))
    return phases


def slice_bounds(n: int, num_phases: int) -> list[tuple[int, int]]:
    """Contiguous nearly-equal slices; the remainder goes to the earliest slices."""
    if n < num_phases:
        raise StreamConfigError(f"{n} examples cannot fill {num_phases} phases")
    base, extra = divmod(n, num_phases)
    bounds, start = [], 0
    for t in range(num_phases):
        size = base + (1 if t < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def split_time(x, y, num_phases: int, task: TaskKind, val_fraction: float = 0.2,
               keys=None) -> list[PhaseDataset]:
    x, y = np.asarray(x), np.asarray(y)
    keys = _keys(keys, len(x))
    return [make_phase(t, x[a:b], y[a:b], keys[a:b], task, val_fraction)
            for t, (a, b) in enumerate(slice_bounds(len(x), num_phases), start=1)]


def split_group(x, y, group_of: Callable[[int], int] | Sequence[int], num_phases: int,
                task: TaskKind, val_fraction: float = 0.2, keys=None) -> list[PhaseDataset]:
    """Phase t holds the examples with group id t (1-based)."""
    x, y = np.asarray(x), np.asarray(y)
    keys = _keys(keys, len(x))
    if callable(group_of):
        groups = np.array([group_of(i) for i in range(len(x))])
    else:
        groups = np.asarray(group_of)
    if groups.size and (groups.min() < 1 or groups.max() > num_phases):
        raise StreamConfigError(f"group ids must lie in 1..{num_phases}")
    phases = []
    for t in range(1, num_phases + 1):
        mask = groups == t
        if not mask.any():
            raise StreamConfigError(f"group {t} is empty")
        phases.append(make_phase(t, x[mask], y[mask], keys[mask], task, val_fraction))
    return phases


def _digest(key: Hashable) -> str:
    return hashlib.sha256(str(key).encode("utf-8")).hexdigest()


def hash_groups(entity_keys, num_groups: int) -> dict:
    """Deterministic balanced grouping of entity keys.

    Entities are ordered by the SHA-256 of their key and dealt round-robin, so
    group sizes differ by at most one and the mapping never depends on input order.
    """
    unique = sorted(set(entity_keys), key=lambda k: (_digest(k), str(k)))
    if len(unique) < num_groups:
        raise StreamConfigError(f"{len(unique)} entities cannot fill {num_groups} groups")
    return {k: rank % num_groups + 1 for rank, k in enumerate(unique)}
