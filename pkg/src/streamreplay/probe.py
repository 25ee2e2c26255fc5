"""Gradient-alignment instrumentation for forgetting analysis.

All quantities use full-batch empirical risks on the phases' training data.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .diffcore import GradientVector, ModelState, loss_and_grad, per_example_grad_norms
from .replay import Entry
from .streams.dataset import PhaseDataset, stack_examples

LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(11))


class NotApplicable(str, enum.Enum):
    NO_CONFLICT = "no_conflict"          # h(0) >= 0: the current phase does not hurt phase k
    HOSTILE_HISTORY = "hostile_history"  # h(1) < 0: even pure history hurts phase k


class UndefinedCosine(ValueError):
    pass


def phase_gradient(model: ModelState, phase: PhaseDataset) -> GradientVector:
    _, grad = loss_and_grad(model, phase.train_x, phase.train_y, phase.task)
    return grad


def entries_gradient(model: ModelState, entries: Sequence[Entry], task) -> GradientVector:
    if not entries:
        raise ValueError("gradient of an empty buffer")
    x, y = stack_examples([e.item for e in entries], task)
    _, grad = loss_and_grad(model, x, y, task)
    return grad


def mean_gradient(grads: Sequence[GradientVector]) -> GradientVector:
    """Unweighted mean over phases, regardless of phase sizes."""
    if not grads:
        raise ValueError("no gradients to average")
    return GradientVector(np.mean([g.values for g in grads], axis=0))


def cosine(g1: GradientVector, g2: GradientVector) -> float:
    if g1.norm == 0 or g2.norm == 0:
        raise UndefinedCosine("cosine with a zero gradient is undefined")
    return float(np.clip(g1.dot(g2) / (g1.norm * g2.norm), -1.0, 1.0))


def mixture_h(grad_k: GradientVector, grad_t: GradientVector, grad_hist: GradientVector,
              lambdas=LAMBDA_GRID) -> list[tuple[float, float]]:
    """(lam, <g_k, (1 - lam) g_t + lam g_hist>) pairs, via the two endpoint inner products."""
    h0 = grad_k.dot(grad_t)
    h1 = grad_k.dot(grad_hist)
    out = []
    for lam in lambdas:
        lam = float(lam)
        if lam == 0.0:
            out.append((lam, h0))
        elif lam == 1.0:
            out.append((lam, h1))
        else:
            out.append((lam, (1.0 - lam) * h0 + lam * h1))
    return out


def lambda_star(grad_k: GradientVector, grad_t: GradientVector,
                grad_hist: GradientVector) -> float | NotApplicable:
    """Smallest replay ratio whose mixed direction no longer increases phase k's risk."""
    h0 = grad_k.dot(grad_t)
    h1 = grad_k.dot(grad_hist)
    if h0 >= 0:
        return NotApplicable.NO_CONFLICT
    if h1 < 0 or h0 == h1:
        return NotApplicable.HOSTILE_HISTORY
    return h0 / (h0 - h1)


def predict_one_step(grad_k: GradientVector, direction: GradientVector, eta: float) -> float:
    """First-order change of R_k under theta <- theta - eta * direction."""
    if not eta > 0:
        raise ValueError("step size must be positive")
    return -eta * grad_k.dot(direction)


def buffer_gradient_deviation(model: ModelState, entries: Sequence[Entry],
                              past_phases: Sequence[PhaseDataset],
                              grad_hist: GradientVector | None = None) -> tuple[float, int]:
    """||grad of buffer risk - mean past-phase gradient||, and the buffer size."""
    if not past_phases:
        raise ValueError("no past phases")
    if not entries:
        raise ValueError("empty buffer")
    if grad_hist is None:
        grad_hist = mean_gradient([phase_gradient(model, p) for p in past_phases])
    buf = entries_gradient(model, entries, past_phases[0].task)
    return float(np.linalg.norm(buf.values - grad_hist.values)), len(entries)


@dataclass
class ProbeReport:
    k: int
    t: int
    grad_k: GradientVector
    grad_t: GradientVector
    grad_hist: GradientVector
    cosine_kt: float | None
    lambda_star: float | NotApplicable
    h_at: list[tuple[float, float]]
    buffer_grad: GradientVector | None = None
    grad_bound: float | None = None
    deviation: float | None = None
    capacity: int | None = None

    def to_dict(self) -> dict:
        """Scalar summary; gradient vectors are reduced to their norms."""
        ls = self.lambda_star
        return {
            "phase_k": self.k,
            "phase_t": self.t,
            "cosine_kt": self.cosine_kt,
            "lambda_star": None if isinstance(ls, NotApplicable) else ls,
            "lambda_star_status": ls.value if isinstance(ls, NotApplicable) else "root",
            "h": [[lam, h] for lam, h in self.h_at],
            "norm_grad_k": self.grad_k.norm,
            "norm_grad_t": self.grad_t.norm,
            "norm_grad_hist": self.grad_hist.norm,
            "norm_buffer_grad": None if self.buffer_grad is None else self.buffer_grad.norm,
            "grad_bound": self.grad_bound,
            "deviation": self.deviation,
            "buffer_size": self.capacity,
        }


def probe_run(checkpoints: Sequence[ModelState], phases: Sequence[PhaseDataset],
              buffer_snapshots: Sequence[Sequence[Entry]] | None = None) -> list[ProbeReport]:
    """One report per pair k < t, evaluated at the start of phase t.

    ``buffer_snapshots[j]`` is the buffer after ingesting phase j + 1, i.e.
    the buffer in force while phase j + 2 trains.
    """
    T = len(phases)
    if len(checkpoints) < T - 1:
        raise ValueError(f"need {T - 1} checkpoints, got {len(checkpoints)}")
    if buffer_snapshots is not None and len(buffer_snapshots) < T - 1:
        raise ValueError(f"need {T - 1} buffer snapshots, got {len(buffer_snapshots)}")
    reports = []
    for t in range(2, T + 1):
        theta = checkpoints[t - 2]
        grads = [phase_gradient(theta, p) for p in phases[:t]]
        grad_hist = mean_gradient(grads[:t - 1])
        buffer_grad = bound = deviation = size = None
        if buffer_snapshots is not None and buffer_snapshots[t - 2]:
            entries = buffer_snapshots[t - 2]
            task = phases[0].task
            buffer_grad = entries_gradient(theta, entries, task)
            deviation = float(np.linalg.norm(buffer_grad.values - grad_hist.values))
            x, y = stack_examples([e.item for e in entries], task)
            bound = float(per_example_grad_norms(theta, x, y, task).max())
            size = len(entries)
        grad_t = grads[t - 1]
        for k in range(1, t):
            grad_k = grads[k - 1]
            try:
                cos = cosine(grad_k, grad_t)
            except UndefinedCosine:
                cos = None
            ls = lambda_star(grad_k, grad_t, grad_hist)
            lams = list(LAMBDA_GRID) + ([ls] if not isinstance(ls, NotApplicable) else [])
            reports.append(ProbeReport(k, t, grad_k, grad_t, grad_hist, cos, ls,
                                       mixture_h(grad_k, grad_t, grad_hist, lams),
                                       buffer_grad, bound, deviation, size))
    return reports
