"""SeqFT and Replay over a phase sequence with matched budgets."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .diffcore import ModelState, OptimizerState, adam_step, init_model, init_optimizer, loss_and_grad
from .objectives import PhaseRecord, evaluate
from .probe import probe_run
from .replay import Entry, MixConfig, ReplayBuffer, end_of_phase_ingest, sample_mixed_batch
from .report import LogWriter, make_record, phase_record
from .streams.dataset import PhaseDataset
from .streams.scenarios import build_stream, scenario, schedule

log = logging.getLogger(__name__)

METHODS = ("seqft", "replay")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "seqft"
    seed: int = 0
    epochs_per_phase: int = 3
    batch_size: int = 128
    lr: float = 1e-3
    hidden: tuple[int, ...] = (64,)
    activation: str = "tanh"
    capacity: int | None = None
    lam: float = 0.5
    policy: str = "reservoir"
    quota: int | None = None  # examples offered per phase; default capacity // num_phases
    double_batch: bool = False
    reset_optimizer: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.epochs_per_phase < 0 or self.batch_size < 1 or not self.lr > 0:
            raise ValueError("need epochs >= 0, batch >= 1 and lr > 0")
        if self.method == "replay" and self.capacity is None:
            raise ValueError("replay needs a buffer capacity")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        MixConfig(self.lam, self.batch_size, self.double_batch)

    @property
    def mix(self) -> MixConfig:
        return MixConfig(self.lam, self.batch_size, self.double_batch)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class RunState:
    model: ModelState
    optimizer: OptimizerState
    rng: np.random.Generator
    buffer: ReplayBuffer | None = None
    checkpoints: list[ModelState] = field(default_factory=list)
    buffer_snapshots: list[list[Entry]] = field(default_factory=list)
    steps: int = 0

    @property
    def phases_done(self) -> int:
        return len(self.checkpoints)


def init_run(cfg: TrainConfig, input_dim: int, output_dim: int) -> RunState:
    rng = np.random.default_rng(cfg.seed)
    topology = (input_dim, *cfg.hidden, output_dim)
    model = init_model(topology, rng, hidden_activation=cfg.activation)
    buffer = None
    if cfg.method == "replay":
        buffer = ReplayBuffer(cfg.capacity, cfg.policy, seed=[cfg.seed, 7])
    return RunState(model, init_optimizer(model.params.size, cfg.lr), rng, buffer)


def steps_per_phase(n_train: int, cfg: TrainConfig) -> int:
    return cfg.epochs_per_phase * math.ceil(n_train / cfg.batch_size)


def train_phase(state: RunState, phase: PhaseDataset, cfg: TrainConfig, num_phases: int) -> RunState:
    n = len(phase.train_x)
    if n == 0:
        raise ValueError("phase has no training data")
    if cfg.reset_optimizer and state.phases_done > 0:
        state.optimizer = init_optimizer(state.model.params.size, cfg.lr)
    for _ in range(steps_per_phase(n, cfg)):
        if state.buffer is not None:
            x, y, _ = sample_mixed_batch(state.buffer, phase, cfg.mix, state.rng)
        else:
            idx = state.rng.integers(0, n, size=cfg.batch_size)
            x, y = phase.train_x[idx], phase.train_y[idx]
        _, grad = loss_and_grad(state.model, x, y, phase.task)
        state.optimizer, state.model = adam_step(state.optimizer, state.model, grad)
        state.steps += 1
    state.checkpoints.append(state.model)
    if state.buffer is not None:
        quota = cfg.quota if cfg.quota is not None else cfg.capacity // num_phases
        end_of_phase_ingest(state.buffer, phase, quota)
        state.buffer_snapshots.append(state.buffer.snapshot())
    return state


@dataclass
class RunResult:
    records: list[PhaseRecord]
    state: RunState


def run_stream(phases: Sequence[PhaseDataset], cfg: TrainConfig, dataset: str = "synth",
               split: str = "", state: RunState | None = None,
               stop_after: int | None = None) -> RunResult:
    """Train through every phase, then log init/final validation metrics per phase.

    ``state`` resumes a partially trained run; ``stop_after`` halts after that
    many phases (records are only produced once the stream is complete).
    """
    if len(phases) < 2:
        raise ValueError("a stream needs at least 2 phases")
    task = phases[0].task
    if state is None:
        state = init_run(cfg, phases[0].input_dim, task.output_dim)
    end = len(phases) if stop_after is None else min(stop_after, len(phases))
    for phase in phases[state.phases_done:end]:
        train_phase(state, phase, cfg, len(phases))
        log.debug("%s/%s %s seed=%d phase %d done (%d steps)", dataset, split, cfg.method,
                  cfg.seed, phase.phase_id, state.steps)
    if state.phases_done < len(phases):
        return RunResult([], state)
    final_model = state.checkpoints[-1]
    records = []
    for k, phase in enumerate(phases):
        init = evaluate(state.checkpoints[k], phase)
        final = evaluate(final_model, phase)
        records.append(PhaseRecord.build(dataset, split, phase.task, cfg.method, cfg.seed,
                                         phase.phase_id, init, final))
    return RunResult(records, state)


def run_records(phases: Sequence[PhaseDataset], spec, cfg: TrainConfig, probe: bool = False,
                scenario_name: str | None = None,
                extra_meta: dict | None = None) -> tuple[list[dict], RunResult | None]:
    """One run as log records: run_meta first, then phase (and probe) records.

    Failures are captured in the run_meta record instead of raised.
    """
    ident = {"dataset": spec.dataset, "split": spec.split, "method": cfg.method, "seed": cfg.seed}
    meta = {**ident, "scenario": scenario_name or spec.name, "task": spec.task,
            "config": cfg.to_dict(), "stream": asdict(spec), **(extra_meta or {})}
    try:
        result = run_stream(phases, cfg, spec.dataset, spec.split)
    except (FloatingPointError, ValueError) as exc:
        log.warning("run %s failed: %s", ident, exc)
        kind = "numeric" if isinstance(exc, FloatingPointError) else "config"
        failed = {**meta, "status": "failed", "error_kind": kind, "error": str(exc)}
        return [make_record("run_meta", failed)], None
    out = [make_record("run_meta", {**meta, "status": "ok", "steps": result.state.steps})]
    out += [phase_record(r) for r in result.records]
    if probe:
        snaps = result.state.buffer_snapshots if result.state.buffer is not None else None
        for rep in probe_run(result.state.checkpoints, phases, snaps):
            out.append(make_record("probe", {**ident, **rep.to_dict()}))
    return out, result


def _matrix_job(args):
    phases, spec, name, cfg, probe, extra = args
    return run_records(phases, spec, cfg, probe, name, extra)[0]


def run_matrix(scenarios, cfg: TrainConfig, seeds=(13, 21, 42), methods=METHODS,
               log_path=None, workers: int = 1, data_root=None, probe: bool = False,
               use_schedule: bool = True, extra_meta: dict | None = None) -> list[dict]:
    """Every (scenario, method, seed) run, appended to one log.

    ``scenarios`` holds registry names or (name, StreamSpec) pairs. With
    ``use_schedule`` each scenario's fixed epochs/batch/lr replace the
    template's. Records come back in (scenario, method, seed) order; the log
    is in that order too when ``workers == 1``.
    """
    jobs = []
    for item in scenarios:
        name, spec = (item, scenario(item)) if isinstance(item, str) else item
        phases = build_stream(spec, data_root)
        sched = schedule(name) if use_schedule else {}
        for method in methods:
            for seed in seeds:
                run_cfg = replace(cfg, **sched, method=method, seed=int(seed))
                jobs.append((phases, spec, name, run_cfg, probe, extra_meta))
    writer = LogWriter(log_path) if log_path is not None else None
    results: list[list[dict] | None] = [None] * len(jobs)
    try:
        if workers <= 1:
            for i, job in enumerate(jobs):
                results[i] = _matrix_job(job)
                if writer:
                    for rec in results[i]:
                        writer.put(rec)
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(_matrix_job, job): i for i, job in enumerate(jobs)}
                for fut in as_completed(futures):
                    results[futures[fut]] = fut.result()
                    if writer:
                        for rec in results[futures[fut]]:
                            writer.put(rec)
    finally:
        if writer:
            writer.close()
    return [rec for recs in results for rec in recs]
