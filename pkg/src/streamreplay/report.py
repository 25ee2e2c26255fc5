"""Append-only run log, table aggregation and plot-ready data.

The log holds one JSON object per line. Every record carries
``schema_version`` and ``record_type``:

* ``phase``    -- one PhaseRecord (dataset, split, task, metric, method, seed,
  phase, init, final, forgetting)
* ``probe``    -- one gradient-alignment report for a phase pair (k, t)
* ``run_meta`` -- configuration echo and status of one run
"""
from __future__ import annotations

import csv
import io
import json
import os
import queue
import statistics
import threading
from collections import defaultdict
from pathlib import Path
from typing import Iterable, Sequence

from .objectives import PhaseRecord, Summary, aggregate_forgetting, summarize

SCHEMA_VERSION = 1
RECORD_TYPES = ("phase", "probe", "run_meta")
IDENTITY_KEYS = ("dataset", "split", "method", "seed")
FIGURES = ("per_phase_accuracy", "per_phase_mse", "forgetting_summary")


class LogSchemaError(ValueError):
    pass


def make_record(record_type: str, payload: dict) -> dict:
    record = {"schema_version": SCHEMA_VERSION, "record_type": record_type, **payload}
    validate_record(record)
    return record


def phase_record(rec: PhaseRecord) -> dict:
    return make_record("phase", rec.to_dict())


def validate_record(record: dict) -> None:
    version = record.get("schema_version")
    if version != SCHEMA_VERSION:
        raise LogSchemaError(f"unsupported schema_version {version!r}")
    kind = record.get("record_type")
    if kind not in RECORD_TYPES:
        raise LogSchemaError(f"unknown record_type {kind!r}")
    if kind in ("phase", "probe"):
        missing = [k for k in IDENTITY_KEYS if k not in record]
        if missing:
            raise LogSchemaError(f"{kind} record lacks {missing}")
    if kind == "phase":
        PhaseRecord.from_dict(record)


def dumps(record: dict) -> str:
    # json writes floats with repr(), the shortest string that round-trips exactly
    return json.dumps(record, sort_keys=True, allow_nan=False)


def append(log_path, record: dict) -> None:
    validate_record(record)
    line = dumps(record) + "\n"
    try:
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(line)
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise OSError(f"cannot append to log {log_path}: {exc}") from exc


def read_log(log_path) -> list[dict]:
    records = []
    with open(log_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            try:
                validate_record(record)
            except LogSchemaError as exc:
                raise LogSchemaError(f"{log_path}:{lineno}: {exc}") from None
            records.append(record)
    return records


class LogWriter:
    """Single writer thread; producers call ``put`` from any thread."""

    def __init__(self, log_path):
        self.log_path = Path(log_path)
        self._queue: queue.Queue = queue.Queue()
        self._error: BaseException | None = None
        self._thread = threading.Thread(target=self._drain, daemon=True)
        self._thread.start()

    def _drain(self):
        while True:
            record = self._queue.get()
            if record is None:
                return
            try:
                append(self.log_path, record)
            except BaseException as exc:  # surfaced on close()
                self._error = exc

    def put(self, record: dict) -> None:
        validate_record(record)
        self._queue.put(record)

    def close(self) -> None:
        self._queue.put(None)
        self._thread.join()
        if self._error is not None:
            raise self._error

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def phase_records(records: Iterable[dict]) -> list[PhaseRecord]:
    return [PhaseRecord.from_dict(r) for r in records if r["record_type"] == "phase"]


def _scale(metric: str) -> float:
    return 100.0 if metric == "accuracy" else 1.0


def _scaled(summary: Summary, factor: float) -> Summary:
    return Summary(summary.mean * factor, summary.std * factor, summary.n)


def table_per_phase(records: Iterable[dict], dataset: str, split: str,
                    task: str | None = None) -> list[dict]:
    """Rows of {phase, method, metric, init, final, forgetting} with (mean, std, n) over seeds.

    Accuracy is reported in percent. A method absent from the log yields rows
    whose cells are None.
    """
    recs = [r for r in phase_records(records) if r.dataset == dataset and r.split == split]
    tasks = sorted({r.task for r in recs})
    if task is None:
        if len(tasks) > 1:
            raise ValueError(f"{dataset}.{split} has several tasks {tasks}; pick one")
        task = tasks[0] if tasks else None
    recs = [r for r in recs if r.task == task]
    cells: dict[tuple[int, str], list[PhaseRecord]] = defaultdict(list)
    for r in recs:
        cells[(r.phase, r.method)].append(r)
    phases = sorted({r.phase for r in recs})
    rows = []
    for phase in phases:
        for method in ("seqft", "replay"):
            group = cells.get((phase, method))
            if not group:
                rows.append({"phase": phase, "method": method, "metric": None,
                             "init": None, "final": None, "forgetting": None})
                continue
            factor = _scale(group[0].metric)
            rows.append({
                "phase": phase,
                "method": method,
                "metric": group[0].metric,
                "init": _scaled(summarize(r.init for r in group), factor),
                "final": _scaled(summarize(r.final for r in group), factor),
                "forgetting": _scaled(summarize(r.forgetting for r in group), factor),
            })
    return rows


def table_avg_forgetting(records: Iterable[dict], task: str | None = "classification") -> list[dict]:
    """Mean forgetting per (dataset, split, method), pooled over phases and seeds.

    Restricted to one task kind (classification by default) so that units agree.
    """
    recs = [r for r in phase_records(records) if task is None or r.task == task]
    if not recs:
        return []
    metric_of = {(r.dataset, r.split, r.method): r.metric for r in recs}
    rows = []
    for (dataset, split, method), summary in aggregate_forgetting(recs).items():
        factor = _scale(metric_of[(dataset, split, method)])
        rows.append({"dataset": dataset, "split": split, "method": method,
                     "forgetting": _scaled(summary, factor)})
    return rows


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, Summary):
        return f"{value.mean:.1f} ± {value.std:.1f}"
    return str(value)


def _flatten(rows: Sequence[dict]) -> tuple[list[str], list[list]]:
    header: list[str] = []
    for key, value in rows[0].items():
        if isinstance(value, Summary) or (value is None and key in ("init", "final", "forgetting")):
            header += [f"{key}_mean", f"{key}_std"]
        else:
            header.append(key)
    body = []
    for row in rows:
        line = []
        for key, value in row.items():
            if isinstance(value, Summary):
                line += [repr(value.mean), repr(value.std)]
            elif value is None and key in ("init", "final", "forgetting"):
                line += ["", ""]
            else:
                line.append("" if value is None else value)
        body.append(line)
    return header, body


def format_table(rows: Sequence[dict], style: str = "text") -> str:
    """Aligned plain text (``text``) or delimiter-separated (``csv`` / ``tsv``)."""
    if not rows:
        return ""
    if style in ("csv", "tsv"):
        header, body = _flatten(rows)
        buf = io.StringIO()
        writer = csv.writer(buf, delimiter="," if style == "csv" else "\t", lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return buf.getvalue()
    if style != "text":
        raise ValueError(f"unknown table style {style!r}")
    header = list(rows[0].keys())
    text_rows = [[_cell(row[k]) for k in header] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in text_rows)) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in text_rows]
    return "\n".join(lines) + "\n"


def plot_data(records: Sequence[dict], figure: str, dataset: str | None = None,
              split: str | None = None) -> list[tuple]:
    """4-column rows (phase, series, value, error) for one figure.

    Per-phase figures need a dataset and split and emit one series per
    (method, init|final); the forgetting summary emits one row per
    scenario and method with the pooled std as its error bar.
    """
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {FIGURES}")
    if figure == "forgetting_summary":
        return [("all", f"{r['dataset']}.{r['split']}/{r['method']}",
                 r["forgetting"].mean, r["forgetting"].std)
                for r in table_avg_forgetting(records)]
    if dataset is None or split is None:
        raise ValueError(f"{figure} needs a dataset and split")
    task = "classification" if figure == "per_phase_accuracy" else None
    recs = [r for r in records if r.get("record_type") == "phase" and r["dataset"] == dataset
            and r["split"] == split
            and (r["metric"] == "accuracy") == (figure == "per_phase_accuracy")]
    if figure == "per_phase_mse" and recs:
        task = recs[0]["task"]
    rows = []
    for row in table_per_phase(recs, dataset, split, task):
        if row["init"] is None:
            continue
        for which in ("init", "final"):
            cell = row[which]
            rows.append((row["phase"], f"{row['method']}.{which}", cell.mean, cell.std))
    return rows


def emit_plot_data(records: Sequence[dict], figure: str, path=None, dataset: str | None = None,
                   split: str | None = None, delimiter: str = ",") -> list[tuple]:
    rows = plot_data(records, figure, dataset, split)
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            writer.writerow(("phase", "series", "value", "error"))
            writer.writerows((p, s, repr(v), repr(e)) for p, s, v, e in rows)
    return rows


def scenarios_in(records: Iterable[dict]) -> list[tuple[str, str, str, str]]:
    """Distinct (dataset, split, task, metric) combinations among phase records."""
    return sorted({(r["dataset"], r["split"], r["task"], r["metric"])
                   for r in records if r["record_type"] == "phase"})


def table_probe_summary(records: Iterable[dict]) -> list[dict]:
    """Per (dataset, split, method): probe count, median cosine, share of conflicting pairs."""
    groups: dict[tuple[str, str, str], list[dict]] = defaultdict(list)
    for r in records:
        if r["record_type"] == "probe":
            groups[(r["dataset"], r["split"], r["method"])].append(r)
    rows = []
    for (dataset, split, method), probes in sorted(groups.items()):
        cos = [p["cosine_kt"] for p in probes if p["cosine_kt"] is not None]
        roots = [p["lambda_star"] for p in probes if p["lambda_star"] is not None]
        devs = [p["deviation"] for p in probes if p.get("deviation") is not None]
        rows.append({
            "dataset": dataset, "split": split, "method": method, "reports": len(probes),
            "median_cosine": f"{statistics.median(cos):.4f}" if cos else "-",
            "conflicting": f"{sum(c < 0 for c in cos)}/{len(cos)}",
            "median_lambda_star": f"{statistics.median(roots):.4f}" if roots else "-",
            "median_deviation": f"{statistics.median(devs):.4f}" if devs else "-",
        })
    return rows
