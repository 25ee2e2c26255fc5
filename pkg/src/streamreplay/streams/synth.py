"""Desk-scale synthetic streams for the two regimes.

``synth_pairs``: ten unit-variance Gaussian classes in R^16. Every phase
splits its two classes along one shared axis and sits at its own orthogonal
offset, so phases look alike but carry disjoint labels; phase t sees classes
{2t-2, 2t-1} while the head always scores all ten. No two class means are
closer than ``separation``.

``synth_drift``: one binary problem whose class means translate by
``drift_step`` per phase along a direction orthogonal to the class axis.
"""
from __future__ import annotations

import numpy as np

from ..objectives import TaskKind
from .dataset import PhaseDataset, StreamConfigError, make_phase

DIM = 16
NUM_CLASSES = 10


def _orthonormal(rng, dim, count):
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    return q[:, :count].T


def pair_means(seed: int, separation: float, dim: int = DIM) -> np.ndarray:
    """(10, dim) class means; pairwise distances are ``separation`` or sqrt(2) times it."""
    rng = np.random.default_rng(seed)
    basis = _orthonormal(rng, dim, 1 + NUM_CLASSES // 2)
    axis, offsets = basis[0], basis[1:]
    means = np.empty((NUM_CLASSES, dim))
    for p, offset in enumerate(offsets):
        centre = separation / np.sqrt(2.0) * offset
        means[2 * p] = centre - 0.5 * separation * axis
        means[2 * p + 1] = centre + 0.5 * separation * axis
    return means


def synth_pairs(seed: int, num_phases: int = 5, samples_per_phase: int = 1000,
                separation: float = 6.0, val_fraction: float = 0.2,
                dim: int = DIM) -> list[PhaseDataset]:
    if num_phases * 2 > NUM_CLASSES:
        raise StreamConfigError(f"synth_pairs supports at most {NUM_CLASSES // 2} phases")
    means = pair_means(seed, separation, dim)
    rng = np.random.default_rng([seed, 1])
    task = TaskKind.classification(NUM_CLASSES, dim)
    phases, next_key = [], 0
    for t in range(1, num_phases + 1):
        labels = np.array([2 * t - 2, 2 * t - 1])[rng.integers(0, 2, samples_per_phase)]
        x = means[labels] + rng.standard_normal((samples_per_phase, dim))
        keys = np.arange(next_key, next_key + samples_per_phase)
        next_key += samples_per_phase
        phases.append(make_phase(t, x, labels, keys, task, val_fraction))
    return phases


def drift_means(seed: int, separation: float, drift_step: float, num_phases: int,
                dim: int = DIM) -> np.ndarray:
    """(num_phases, 2, dim) array of class means per phase."""
    rng = np.random.default_rng(seed)
    axis, shift = _orthonormal(rng, dim, 2)
    base = np.stack([-0.5 * separation * axis, 0.5 * separation * axis])
    return np.stack([base + drift_step * t * shift for t in range(num_phases)])


def synth_drift(seed: int, num_phases: int = 5, samples_per_phase: int = 1000,
                separation: float = 3.0, drift_step: float = 0.5, val_fraction: float = 0.2,
                dim: int = DIM) -> list[PhaseDataset]:
    means = drift_means(seed, separation, drift_step, num_phases, dim)
    rng = np.random.default_rng([seed, 2])
    task = TaskKind.classification(2, dim)
    phases, next_key = [], 0
    for t in range(1, num_phases + 1):
        labels = rng.integers(0, 2, samples_per_phase)
        x = means[t - 1][labels] + rng.standard_normal((samples_per_phase, dim))
        keys = np.arange(next_key, next_key + samples_per_phase)
        next_key += samples_per_phase
        phases.append(make_phase(t, x, labels, keys, task, val_fraction))
    return phases
