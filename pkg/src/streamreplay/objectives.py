"""Task kinds, empirical risk, evaluation metrics and phase-wise forgetting."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .diffcore import ModelState, forward, per_example_losses

TASK_KINDS = ("reconstruction", "forecasting", "classification")


@dataclass(frozen=True)
class TaskKind:
    kind: str
    output_dim: int
    num_classes: int | None = None
    input_dim: int | None = None

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.output_dim < 1:
            raise ValueError("output_dim must be positive")
        if self.kind == "classification":
            if self.num_classes is None or self.num_classes < 2:
                raise ValueError("classification needs num_classes >= 2")
            if self.output_dim != self.num_classes:
                raise ValueError("classification output_dim must equal num_classes")
        elif self.num_classes is not None:
            raise ValueError(f"{self.kind} takes no num_classes")
        if self.kind == "reconstruction" and self.input_dim is not None \
                and self.input_dim != self.output_dim:
            raise ValueError("reconstruction output_dim must equal the input dimension")

    @classmethod
    def classification(cls, num_classes: int, input_dim: int | None = None) -> "TaskKind":
        return cls("classification", num_classes, num_classes, input_dim)

    @classmethod
    def reconstruction(cls, dim: int) -> "TaskKind":
        return cls("reconstruction", dim, None, dim)

    @classmethod
    def forecasting(cls, input_dim: int | None = None, horizon: int = 1) -> "TaskKind":
        return cls("forecasting", horizon, None, input_dim)

    @property
    def metric(self) -> "MetricKind":
        return ACCURACY if self.kind == "classification" else MSE


@dataclass(frozen=True)
class MetricKind:
    kind: str
    orientation: str

    def __post_init__(self):
        expected = {"mse": "lower_better", "accuracy": "higher_better"}
        if expected.get(self.kind) != self.orientation:
            raise ValueError(f"metric {self.kind!r} cannot be {self.orientation!r}")

    @property
    def higher_better(self) -> bool:
        return self.orientation == "higher_better"


MSE = MetricKind("mse", "lower_better")
ACCURACY = MetricKind("accuracy", "higher_better")
METRICS = {"mse": MSE, "accuracy": ACCURACY}


def forgetting(init: float, final: float, metric: MetricKind) -> float:
    """Positive means the phase got worse after the rest of the stream."""
    if not (math.isfinite(init) and math.isfinite(final)):
        raise ValueError("forgetting needs finite metrics")
    if metric.higher_better:
        return init - final
    return final - init


@dataclass(frozen=True)
class PhaseRecord:
    dataset: str
    split: str
    task: str
    metric: str
    method: str
    seed: int
    phase: int
    init: float
    final: float
    forgetting: float

    def __post_init__(self):
        if self.method not in ("seqft", "replay"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.phase < 1:
            raise ValueError("phases are 1-based")
        if self.forgetting != forgetting(self.init, self.final, METRICS[self.metric]):
            raise ValueError("forgetting does not match init/final")

    @classmethod
    def build(cls, dataset, split, task: TaskKind, method, seed, phase, init, final) -> "PhaseRecord":
        metric = task.metric
        return cls(dataset, split, task.kind, metric.kind, method, int(seed), int(phase),
                   float(init), float(final), forgetting(float(init), float(final), metric))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def empirical_risk(model: ModelState, dataset, split: str = "train") -> float:
    x, y = dataset.arrays(split)
    if len(x) == 0:
        raise ValueError("empirical risk of an empty dataset")
    return float(np.mean(per_example_losses(model, x, y, dataset.task)))


def evaluate(model: ModelState, dataset, metric: MetricKind | None = None, split: str = "val") -> float:
    """Accuracy in [0, 1] or MSE averaged over examples and output coordinates."""
    task = dataset.task
    metric = metric or task.metric
    if metric != task.metric:
        raise ValueError(f"metric {metric.kind!r} does not fit a {task.kind} task")
    x, y = dataset.arrays(split)
    if len(x) == 0:
        raise ValueError("evaluation on an empty split")
    out = forward(model, x)
    if metric.kind == "accuracy":
        # np.argmax returns the first maximum, i.e. ties go to the lowest class
        return float(np.mean(np.argmax(out, axis=1) == np.asarray(y)))
    y = np.asarray(y, dtype=np.float64).reshape(out.shape)
    return float(np.mean((out - y) ** 2))


class Summary(NamedTuple):
    mean: float
    std: float
    n: int


def summarize(values: Iterable[float]) -> Summary:
    """Mean and sample (n-1) standard deviation; a single value has std 0."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot summarize an empty group")
    std = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
    return Summary(float(np.mean(arr)), std, int(arr.size))


def aggregate_forgetting(records: Iterable[PhaseRecord]) -> dict[tuple[str, str, str], Summary]:
    """Mean and std of F_k per (dataset, split, method), pooled over phases and seeds."""
    groups: dict[tuple[str, str, str], list[PhaseRecord]] = defaultdict(list)
    for rec in records:
        groups[(rec.dataset, rec.split, rec.method)].append(rec)
    if not groups:
        raise ValueError("no records to aggregate")
    out = {}
    for key in sorted(groups):
        recs = groups[key]
        if len({r.metric for r in recs}) > 1:
            raise ValueError(f"group {key} mixes metric orientations")
        out[key] = summarize(r.forgetting for r in recs)
    return out
