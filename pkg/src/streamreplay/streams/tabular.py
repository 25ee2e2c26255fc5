"""CSV ingestion with declared schemas, categorical vocabularies, and forecasting windows."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import StreamConfigError

ROLES = ("feature_numeric", "feature_categorical", "label", "timestamp", "entity_id")
UNKNOWN = 0


class CsvFormatError(ValueError):
    def __init__(self, path, row, column, message):
        super().__init__(f"{path}: row {row}, column {column!r}: {message}")
        self.row = row
        self.column = column


@dataclass
class Schema:
    """Column name -> set of roles, in file order of declaration."""

    roles: dict[str, tuple[str, ...]]

    def __post_init__(self):
        for col, roles in self.roles.items():
            for role in roles:
                if role not in ROLES:
                    raise StreamConfigError(f"column {col!r}: unknown role {role!r}")
        if len(self.columns("label")) > 1:
            raise StreamConfigError("schema declares more than one label column")

    def columns(self, role: str) -> list[str]:
        return [c for c, roles in self.roles.items() if role in roles]

    @classmethod
    def parse(cls, text: str) -> "Schema":
        roles = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise StreamConfigError(f"schema line {lineno}: expected 'column = role'")
            col, spec = (s.strip() for s in line.split("=", 1))
            roles[col] = tuple(r.strip() for r in spec.split("+"))
        return cls(roles)

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.parse(Path(path).read_text())

    def dumps(self) -> str:
        return "".join(f"{c} = {'+'.join(r)}\n" for c, r in self.roles.items())


@dataclass
class Vocabulary:
    """Per-column category -> index maps; index 0 is reserved for unseen values."""

    maps: dict[str, dict[str, int]] = field(default_factory=dict)
    max_size: int | None = None
    frozen: bool = False

    def index(self, column: str, value: str) -> int:
        table = self.maps.setdefault(column, {})
        idx = table.get(value)
        if idx is not None:
            return idx
        if self.frozen or (self.max_size is not None and len(table) + 1 >= self.max_size):
            return UNKNOWN
        table[value] = len(table) + 1
        return table[value]

    def size(self, column: str) -> int:
        return len(self.maps.get(column, {})) + 1

    def dumps(self) -> str:
        return json.dumps({"max_size": self.max_size, "maps": self.maps}, sort_keys=True, indent=1)

    @classmethod
    def loads(cls, text: str, frozen: bool = True) -> "Vocabulary":
        d = json.loads(text)
        return cls({c: dict(m) for c, m in d["maps"].items()}, d["max_size"], frozen)

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path, frozen: bool = True) -> "Vocabulary":
        return cls.loads(Path(path).read_text(), frozen)


@dataclass
class Table:
    numeric: np.ndarray              # (n, n_numeric) float
    categorical: np.ndarray          # (n, n_categorical) int, 0 = unknown
    numeric_columns: list[str]
    categorical_columns: list[str]
    label: np.ndarray | None
    timestamp: np.ndarray | None
    entity: np.ndarray | None
    vocab: Vocabulary

    def __len__(self):
        return self.numeric.shape[0]


def _parse_float(text, decimal):
    if decimal != ".":
        text = text.replace(decimal, ".")
    return float(text)


def load_csv_table(path, schema: Schema, delimiter: str = ",", vocab: Vocabulary | None = None,
                   decimal: str = ".") -> Table:
    path = Path(path)
    vocab = vocab if vocab is not None else Vocabulary()
    num_cols = schema.columns("feature_numeric")
    cat_cols = schema.columns("feature_categorical")
    label_cols = schema.columns("label")
    ts_cols = schema.columns("timestamp")
    ent_cols = schema.columns("entity_id")
    numeric, categorical, labels, stamps, entities = [], [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(path, 1, None, "missing header row") from None
        header = [h.strip() for h in header]
        missing = [c for c in schema.roles if c not in header]
        if missing:
            raise CsvFormatError(path, 1, missing[0], "column declared in schema is missing")
        pos = {c: header.index(c) for c in schema.roles}
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(path, rowno, None, f"{len(row)} cells, header has {len(header)}")
            col = None
            try:
                vals = []
                for col in num_cols:
                    vals.append(_parse_float(row[pos[col]], decimal))
                numeric.append(vals)
                if label_cols:
                    col = label_cols[0]
                    labels.append(_parse_float(row[pos[col]], decimal))
                if ts_cols:
                    col = ts_cols[0]
                    stamps.append(row[pos[col]])
            except ValueError:
                raise CsvFormatError(path, rowno, col, f"cannot parse {row[pos[col]]!r}") from None
            categorical.append([vocab.index(c, row[pos[c]].strip()) for c in cat_cols])
            if ent_cols:
                entities.append(row[pos[ent_cols[0]]].strip())
    n = len(numeric)
    return Table(
        numeric=np.asarray(numeric, dtype=np.float64).reshape(n, len(num_cols)),
        categorical=np.asarray(categorical, dtype=np.int64).reshape(n, len(cat_cols)),
        numeric_columns=num_cols,
        categorical_columns=cat_cols,
        label=np.asarray(labels, dtype=np.float64) if label_cols else None,
        timestamp=np.asarray(stamps) if ts_cols else None,
        entity=np.asarray(entities) if ent_cols else None,
        vocab=vocab,
    )


def encode_features(table: Table, stats: tuple[np.ndarray, np.ndarray] | None = None):
    """Z-scored numeric columns followed by one-hot blocks per categorical column.

    ``stats`` (mean, std) lets validation/later data reuse the fitting span.
    Returns (features, stats).
    """
    if stats is None:
        mean = table.numeric.mean(axis=0) if len(table) else np.zeros(table.numeric.shape[1])
        std = table.numeric.std(axis=0) if len(table) else np.ones(table.numeric.shape[1])
        stats = (mean, np.where(std > 0, std, 1.0))
    blocks = [(table.numeric - stats[0]) / stats[1]]
    for j, col in enumerate(table.categorical_columns):
        onehot = np.zeros((len(table), table.vocab.size(col)))
        onehot[np.arange(len(table)), table.categorical[:, j]] = 1.0
        blocks.append(onehot)
    return np.hstack(blocks), stats


def zscore(series: np.ndarray, stats_len: int | None = None) -> np.ndarray:
    """Normalise with the mean/std of the first ``stats_len`` points; flat series map to 0."""
    series = np.asarray(series, dtype=np.float64)
    span = series if stats_len is None else series[:stats_len]
    if span.size == 0:
        return np.zeros_like(series)
    std = span.std()
    if std == 0:
        return np.zeros_like(series)
    return (series - span.mean()) / std


def make_windows(series: Sequence[np.ndarray], window_len: int, stats_len: int | None = None,
                 normalize: bool = True):
    """Sliding windows over each entity's series.

    A series of length L gives max(0, L - window_len) examples: x is
    positions [i, i + window_len), y is position i + window_len.
    Returns (x, y, entity_index, start_position).
    """
    if window_len < 1:
        raise StreamConfigError("window_len must be at least 1")
    xs, ys, ents, starts = [], [], [], []
    for e, s in enumerate(series):
        s = np.asarray(s, dtype=np.float64)
        if normalize:
            s = zscore(s, stats_len)
        count = max(0, len(s) - window_len)
        if count == 0:
            continue
        windows = np.lib.stride_tricks.sliding_window_view(s, window_len)[:count]
        xs.append(windows)
        ys.append(s[window_len:window_len + count, None])
        ents.append(np.full(count, e))
        starts.append(np.arange(count))
    if not xs:
        return (np.zeros((0, window_len)), np.zeros((0, 1)),
                np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
    return np.vstack(xs), np.vstack(ys), np.concatenate(ents), np.concatenate(starts)


def load_wide_series(path, delimiter: str = ";", decimal: str = ",", aggregate: int = 1):
    """Read a wide load file (first column timestamp, one column per meter).

    ``aggregate`` sums consecutive readings, e.g. 4 turns 15-minute data hourly.
    Returns (meter names, (n_meters, length) array).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader)
        rows = []
        for rowno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([_parse_float(v, decimal) for v in row[1:]])
            except ValueError:
                raise CsvFormatError(path, rowno, None, "unparsable reading") from None
    data = np.asarray(rows, dtype=np.float64).T
    if aggregate > 1:
        usable = data.shape[1] - data.shape[1] % aggregate
        data = data[:, :usable].reshape(data.shape[0], -1, aggregate).sum(axis=2)
    names = [h.strip().strip('"') for h in header[1:]]
    return names, data
