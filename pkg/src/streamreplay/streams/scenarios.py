"""Stream specifications, their key=value config format, and the scenario registry."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from ..objectives import TaskKind
from .dataset import PhaseDataset, StreamConfigError, make_phase
from .idx import load_idx_images, rotate_dataset
from .splits import DIGIT_PAIRS, hash_groups, slice_bounds, split_label_pairs
from .synth import synth_drift, synth_pairs
from .tabular import (Schema, Table, Vocabulary, encode_features, load_csv_table, load_wide_series,
                      make_windows, zscore)

DATA_ROOT_ENV = "STREAMREPLAY_DATA"

SPLITS = {
    "rotmnist": ("digits_pairs",),
    "electricity": ("time", "meters"),
    "airlines": ("time", "airline_group"),
    "synth": ("synth_pairs", "synth_drift"),
}
DEFAULT_TASK = {"rotmnist": "classification", "electricity": "forecasting",
                "airlines": "classification", "synth": "classification"}


class DataMissingError(StreamConfigError):
    def __init__(self, path):
        super().__init__(f"dataset file not found: {path}")
        self.path = str(path)


@dataclass(frozen=True)
class StreamSpec:
    dataset: str
    split: str
    num_phases: int = 5
    val_fraction: float = 0.2
    window_len: int = 96
    seed: int = 0
    task: str = ""
    samples_per_phase: int = 1000
    separation: float = 0.0
    drift_step: float = 0.5
    max_angle: float = 45.0

    def __post_init__(self):
        if self.dataset not in SPLITS:
            raise StreamConfigError(f"unknown dataset {self.dataset!r}")
        if self.split not in SPLITS[self.dataset]:
            raise StreamConfigError(f"split {self.split!r} is not defined for {self.dataset}")
        if self.num_phases < 2:
            raise StreamConfigError("a stream needs at least 2 phases")
        if not 0.0 < self.val_fraction < 1.0:
            raise StreamConfigError("val_fraction must lie in (0, 1)")
        if self.window_len < 1 or self.samples_per_phase < 2:
            raise StreamConfigError("window_len and samples_per_phase must be positive")
        task = self.task or DEFAULT_TASK[self.dataset]
        allowed = ("classification", "reconstruction") if self.dataset == "rotmnist" \
            else (DEFAULT_TASK[self.dataset],)
        if task not in allowed:
            raise StreamConfigError(f"{self.dataset} does not support task {task!r}")
        object.__setattr__(self, "task", task)

    @property
    def name(self) -> str:
        base = f"{self.dataset}.{self.split}"
        return base if self.task == DEFAULT_TASK[self.dataset] else f"{base}.{self.task}"

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def loads(cls, text: str) -> "StreamSpec":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise StreamConfigError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise StreamConfigError(f"config line {lineno}: unknown key {key!r}")
            conv = {"int": int, "float": float}.get(types[key], str)
            try:
                values[key] = conv(value)
            except ValueError:
                raise StreamConfigError(f"config line {lineno}: bad value {value!r} for {key}") from None
        return cls(**values)


# Per-scenario stream settings and training schedule (epochs, batch, lr), fixed
# up front and shared by both methods.
SCENARIOS: dict[str, tuple[StreamSpec, dict]] = {
    "synth.synth_pairs": (
        StreamSpec("synth", "synth_pairs", samples_per_phase=1000, separation=6.0),
        {"epochs_per_phase": 3, "batch_size": 32, "lr": 1e-2},
    ),
    "synth.synth_drift": (
        StreamSpec("synth", "synth_drift", samples_per_phase=1000, separation=3.0, drift_step=0.5),
        {"epochs_per_phase": 3, "batch_size": 32, "lr": 1e-2},
    ),
    "rotmnist.digits_pairs": (
        StreamSpec("rotmnist", "digits_pairs", samples_per_phase=2500),
        {"epochs_per_phase": 3, "batch_size": 128, "lr": 1e-3},
    ),
    "rotmnist.digits_pairs.reconstruction": (
        StreamSpec("rotmnist", "digits_pairs", task="reconstruction", samples_per_phase=2500),
        {"epochs_per_phase": 3, "batch_size": 128, "lr": 1e-3},
    ),
    "electricity.time": (
        StreamSpec("electricity", "time", samples_per_phase=2500),
        {"epochs_per_phase": 3, "batch_size": 128, "lr": 1e-3},
    ),
    "electricity.meters": (
        StreamSpec("electricity", "meters", samples_per_phase=2500),
        {"epochs_per_phase": 3, "batch_size": 128, "lr": 1e-3},
    ),
    "airlines.time": (
        StreamSpec("airlines", "time", samples_per_phase=2500),
        {"epochs_per_phase": 3, "batch_size": 128, "lr": 1e-3},
    ),
    "airlines.airline_group": (
        StreamSpec("airlines", "airline_group", samples_per_phase=2500),
        {"epochs_per_phase": 3, "batch_size": 128, "lr": 1e-3},
    ),
}
DEFAULT_SCENARIOS = ("synth.synth_pairs", "synth.synth_drift")


def scenario(name: str, **overrides) -> StreamSpec:
    try:
        spec, _ = SCENARIOS[name]
    except KeyError:
        raise StreamConfigError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}") from None
    return replace(spec, **overrides) if overrides else spec


def schedule(name: str) -> dict:
    return dict(SCENARIOS[name][1]) if name in SCENARIOS else {}


def data_root(root=None) -> Path:
    return Path(root or os.environ.get(DATA_ROOT_ENV, "data"))


def _find(root: Path, *names) -> Path:
    for name in names:
        for candidate in (root / name, root / (name + ".gz")):
            if candidate.exists():
                return candidate
    raise DataMissingError(root / names[0])


def _subsample(n: int, cap: int, rng) -> np.ndarray:
    """Sorted random subset of range(n) of size min(n, cap); keeps temporal order."""
    if n <= cap:
        return np.arange(n)
    return np.sort(rng.choice(n, size=cap, replace=False))


def build_stream(spec: StreamSpec, root=None) -> list[PhaseDataset]:
    if spec.dataset == "synth":
        if spec.split == "synth_pairs":
            return synth_pairs(spec.seed, spec.num_phases, spec.samples_per_phase,
                               spec.separation or 6.0, spec.val_fraction)
        return synth_drift(spec.seed, spec.num_phases, spec.samples_per_phase,
                           spec.separation or 3.0, spec.drift_step, spec.val_fraction)
    root = data_root(root)
    return {"rotmnist": _rotmnist, "electricity": _electricity, "airlines": _airlines}[spec.dataset](spec, root)


def _rotmnist(spec: StreamSpec, root: Path) -> list[PhaseDataset]:
    folder = root / "mnist"
    images, labels = load_idx_images(_find(folder, "train-images-idx3-ubyte"),
                                     _find(folder, "train-labels-idx1-ubyte"))
    pairs = DIGIT_PAIRS[:spec.num_phases]
    chosen = []
    for pair in pairs:
        idx = np.flatnonzero(np.isin(labels, pair))
        chosen.append(idx[:spec.samples_per_phase])
    chosen = np.sort(np.concatenate(chosen))
    rotated, sub_labels, _ = rotate_dataset(images[chosen], labels[chosen], spec.seed, spec.max_angle)
    x = rotated.reshape(len(chosen), -1)
    if spec.task == "reconstruction":
        task = TaskKind.reconstruction(x.shape[1])
        return split_label_pairs(x, x, pairs, task, spec.val_fraction, keys=chosen, labels=sub_labels)
    task = TaskKind.classification(10, x.shape[1])
    return split_label_pairs(x, sub_labels, pairs, task, spec.val_fraction, keys=chosen)


def _electricity(spec: StreamSpec, root: Path) -> list[PhaseDataset]:
    names, data = load_wide_series(_find(root / "electricity", "LD2011_2014.txt"), aggregate=4)
    task = TaskKind.forecasting(spec.window_len)
    rng = np.random.default_rng(spec.seed)
    length = data.shape[1]
    stats_len = length // spec.num_phases
    phases = []
    if spec.split == "time":
        for t, (a, b) in enumerate(slice_bounds(length, spec.num_phases), start=1):
            # normalise with the first segment only, then window inside the segment
            series = [np.concatenate([s[:stats_len], s[a:b]]) for s in data]
            normed = [zscore(s, stats_len)[stats_len:] for s in series]
            x, y, ent, start = make_windows(normed, spec.window_len, normalize=False)
            order = np.lexsort((ent, start))
            keep = order[_subsample(len(order), spec.samples_per_phase, rng)]
            keys = ent[keep] * length + a + start[keep]
            phases.append(make_phase(t, x[keep], y[keep], keys, task, spec.val_fraction))
        return phases
    groups = hash_groups(names, spec.num_phases)
    for t in range(1, spec.num_phases + 1):
        members = [i for i, n in enumerate(names) if groups[n] == t]
        x, y, ent, start = make_windows([data[i] for i in members], spec.window_len, stats_len)
        order = np.lexsort((ent, start))
        keep = order[_subsample(len(order), spec.samples_per_phase, rng)]
        keys = np.asarray(members)[ent[keep]] * length + start[keep]
        phases.append(make_phase(t, x[keep], y[keep], keys, task, spec.val_fraction))
    return phases


AIRLINES_SCHEMA = """\
Airline = feature_categorical+entity_id
AirportFrom = feature_categorical
AirportTo = feature_categorical
DayOfWeek = feature_categorical
Time = feature_numeric
Length = feature_numeric
Delay = label
"""


def _airlines(spec: StreamSpec, root: Path) -> list[PhaseDataset]:
    folder = root / "airlines"
    path = _find(folder, "airlines.csv")
    schema_path = folder / "airlines.schema"
    schema = Schema.load(schema_path) if schema_path.exists() else Schema.parse(AIRLINES_SCHEMA)
    table = load_csv_table(path, schema, vocab=Vocabulary(max_size=64))
    if table.label is None:
        raise StreamConfigError("airlines schema needs a label column")
    order = np.arange(len(table))
    if table.timestamp is not None:
        order = np.argsort(table.timestamp, kind="stable")
    rng = np.random.default_rng(spec.seed)
    labels = table.label.astype(np.int64)
    if spec.split == "time":
        bounds = slice_bounds(len(order), spec.num_phases)
        members = [order[a:b] for a, b in bounds]
    else:
        if table.entity is None:
            raise StreamConfigError("airline_group split needs an entity_id column")
        groups = hash_groups(table.entity, spec.num_phases)
        gid = np.array([groups[e] for e in table.entity])[order]
        members = [order[gid == t] for t in range(1, spec.num_phases + 1)]
    members = [m[_subsample(len(m), spec.samples_per_phase, rng)] for m in members]
    # numeric scaling is fitted on the first phase only
    features, stats = encode_features(_take(table, members[0]))
    task = TaskKind.classification(2, features.shape[1])
    phases = []
    for t, m in enumerate(members, start=1):
        x, _ = encode_features(_take(table, m), stats)
        phases.append(make_phase(t, x, labels[m], m, task, spec.val_fraction))
    return phases


def _take(table, idx):
    return Table(table.numeric[idx], table.categorical[idx], table.numeric_columns,
                 table.categorical_columns, None, None, None, table.vocab)
