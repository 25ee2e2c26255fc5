"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import save_checkpoint
from .report import (append, emit_plot_data, format_table, read_log, scenarios_in,
                     table_avg_forgetting, table_per_phase, table_probe_summary)
from .streams.dataset import StreamConfigError
from .streams.scenarios import (DATA_ROOT_ENV, DEFAULT_SCENARIOS, SCENARIOS, StreamSpec, build_stream,
                                scenario, schedule)
from .trainer import TrainConfig, run_matrix, run_records

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SEEDS = (13, 21, 42)


class ConfigError(Exception):
    pass


def _add_stream_flags(p):
    g = p.add_argument_group("stream")
    g.add_argument("--scenario", help="registered scenario, e.g. synth.synth_pairs "
                   f"(known: {', '.join(SCENARIOS)})")
    g.add_argument("--dataset", help="dataset tag, used with --split when --scenario is absent")
    g.add_argument("--split", help="split tag, used with --dataset")
    g.add_argument("--task", default=None, help="task kind override (rotmnist: reconstruction)")
    g.add_argument("--num-phases", type=int, default=None, help="phases T (default 5)")
    g.add_argument("--val-fraction", type=float, default=None, help="held-out fraction per phase (default 0.2)")
    g.add_argument("--window-len", type=int, default=None, help="forecasting window (default 96)")
    g.add_argument("--stream-seed", type=int, default=None, help="data generation seed (default 0)")
    g.add_argument("--samples-per-phase", type=int, default=None, help="examples per phase cap")
    g.add_argument("--data-root", default=None, help=f"dataset directory (default ${DATA_ROOT_ENV} or ./data)")


def _add_train_flags(p, capacity_default=None):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=None, help="epochs per phase (default: scenario schedule, else 3)")
    g.add_argument("--batch", type=int, default=None, help="batch size B (default: scenario schedule, else 128)")
    g.add_argument("--lr", type=float, default=None, help="Adam learning rate (default: scenario schedule, else 1e-3)")
    g.add_argument("--hidden", default="64", help="comma-separated hidden widths (default 64)")
    g.add_argument("--activation", default="tanh", choices=("tanh", "relu"), help="hidden activation (default tanh)")
    g.add_argument("--buffer-capacity", type=int, default=capacity_default, help="replay buffer capacity C")
    g.add_argument("--lambda", dest="lam", type=float, default=0.5, help="replay ratio (default 0.5)")
    g.add_argument("--policy", default="reservoir", choices=("reservoir", "fifo"), help="buffer policy (default reservoir)")
    g.add_argument("--quota", type=int, default=None, help="examples offered to the buffer per phase (default C // T)")
    g.add_argument("--double-batch", action="store_true", help="draw B current plus B buffered examples")
    g.add_argument("--reset-optimizer", action="store_true", help="reset Adam moments at each phase")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="streamreplay", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    subs = {}

    p = subs["run"] = sub.add_parser("run", help="one SeqFT or Replay run")
    _add_stream_flags(p)
    _add_train_flags(p)
    p.add_argument("--method", required=True, choices=("seqft", "replay"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="runs.log", help="log file to append to (default runs.log)")
    p.add_argument("--checkpoint-dir", default=None, help="write the final run checkpoint here")

    p = subs["probe"] = sub.add_parser("probe", help="one run plus gradient-alignment probes")
    _add_stream_flags(p)
    _add_train_flags(p)
    p.add_argument("--method", required=True, choices=("seqft", "replay"))
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default="runs.log", help="log file to append to (default runs.log)")

    p = subs["matrix"] = sub.add_parser("matrix", help="scenarios x methods x seeds")
    p.add_argument("--scenarios", default=",".join(DEFAULT_SCENARIOS),
                   help="comma-separated scenario names (default: the synthetic pair)")
    p.add_argument("--methods", default="seqft,replay", help="comma-separated methods (default both)")
    p.add_argument("--seeds", default=",".join(map(str, SEEDS)), help="comma-separated seeds (default 13,21,42)")
    p.add_argument("--workers", type=int, default=1, help="parallel runs (default 1: byte-stable log)")
    p.add_argument("--probe", action="store_true", help="also append probe records")
    p.add_argument("--data-root", default=None, help=f"dataset directory (default ${DATA_ROOT_ENV} or ./data)")
    p.add_argument("--out", default="runs.log", help="log file to append to (default runs.log)")
    _add_train_flags(p, capacity_default=1000)

    p = subs["report"] = sub.add_parser("report", help="tables and plot data from a log")
    p.add_argument("--log", default="runs.log", help="log file (default runs.log)")
    p.add_argument("--out-dir", default="report", help="output directory (default report)")
    p.add_argument("--format", default="text", choices=("text", "csv", "tsv"), help="stdout table style")

    p = subs["gen-synth"] = sub.add_parser("gen-synth", help="write a synthetic stream to CSV files")
    p.add_argument("--split", default="synth_pairs", choices=("synth_pairs", "synth_drift"))
    p.add_argument("--num-phases", type=int, default=5)
    p.add_argument("--samples-per-phase", type=int, default=1000)
    p.add_argument("--stream-seed", type=int, default=0)
    p.add_argument("--out-dir", default="synth_stream")

    for p in subs.values():
        p.add_argument("--config", default=None, help="key = value file; flags override it")
    return parser, subs


def _apply_config(parser, subs, argv):
    """Load --config values as defaults of the chosen subcommand, then reparse."""
    config = verb = None
    for i, tok in enumerate(argv):
        if verb is None and tok in subs:
            verb = tok
        if tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    if config is None or verb is None:
        return parser.parse_args(argv)
    actions = {a.dest: a for a in subs[verb]._actions}
    try:
        text = Path(config).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {config}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{config}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = {"lambda": "lam"}.get(key, key.replace("-", "_"))
        action = actions.get(dest)
        if action is None or dest in ("config", "help"):
            raise ConfigError(f"{config}:{lineno}: unknown option {key!r}")
        if isinstance(action, argparse._StoreTrueAction):
            converted = value.lower() in ("1", "true", "yes", "on")
        else:
            try:
                converted = action.type(value) if action.type else value
            except ValueError:
                raise ConfigError(f"{config}:{lineno}: bad value {value!r} for {key}") from None
        action.default = converted
        action.required = False
    return parser.parse_args(argv)


def _stream_spec(args) -> tuple[str, StreamSpec]:
    overrides = {k: v for k, v in {
        "num_phases": args.num_phases, "val_fraction": args.val_fraction,
        "window_len": args.window_len, "seed": args.stream_seed,
        "samples_per_phase": args.samples_per_phase,
    }.items() if v is not None}
    if args.scenario:
        if args.task:
            overrides["task"] = args.task
        spec = scenario(args.scenario, **overrides)
        return args.scenario, spec
    if not (args.dataset and args.split):
        raise ConfigError("give --scenario or both --dataset and --split")
    name = f"{args.dataset}.{args.split}" + (f".{args.task}" if args.task else "")
    if name in SCENARIOS:
        return name, scenario(name, **overrides)
    spec = StreamSpec(args.dataset, args.split, task=args.task or "", **overrides)
    return spec.name, spec


def _train_config(args, name: str, method: str = "seqft", seed: int = 0) -> TrainConfig:
    sched = schedule(name)
    values = {
        "epochs_per_phase": args.epochs if args.epochs is not None else sched.get("epochs_per_phase", 3),
        "batch_size": args.batch if args.batch is not None else sched.get("batch_size", 128),
        "lr": args.lr if args.lr is not None else sched.get("lr", 1e-3),
    }
    try:
        hidden = tuple(int(h) for h in args.hidden.split(",") if h.strip())
    except ValueError:
        raise ConfigError(f"bad --hidden {args.hidden!r}") from None
    return TrainConfig(method=method, seed=seed, hidden=hidden, activation=args.activation,
                       capacity=args.buffer_capacity, lam=args.lam, policy=args.policy,
                       quota=args.quota, double_batch=args.double_batch,
                       reset_optimizer=args.reset_optimizer, **values)


def _echo(args) -> dict:
    """Every resolved flag value, for provenance in run_meta records."""
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose",)}


def _single_run(args, probe: bool) -> int:
    if args.method == "replay" and args.buffer_capacity is None:
        raise ConfigError("--method replay needs --buffer-capacity")
    name, spec = _stream_spec(args)
    cfg = _train_config(args, name, args.method, args.seed)
    phases = build_stream(spec, args.data_root)
    records, result = run_records(phases, spec, cfg, probe=probe, scenario_name=name,
                                  extra_meta={"cli": _echo(args)})
    for rec in records:
        append(args.out, rec)
    meta = records[0]
    if meta["status"] != "ok":
        print(f"run failed: {meta['error']}", file=sys.stderr)
        return EXIT_NUMERIC if meta.get("error_kind") == "numeric" else EXIT_CONFIG
    for rec in records[1:]:
        if rec["record_type"] == "phase":
            print(f"{name} {cfg.method} seed={cfg.seed} phase {rec['phase']}: "
                  f"{rec['metric']} init={rec['init']:.4f} final={rec['final']:.4f} "
                  f"F={rec['forgetting']:+.4f}")
    if probe:
        n = sum(r["record_type"] == "probe" for r in records)
        print(f"{n} probe reports appended to {args.out}")
    if getattr(args, "checkpoint_dir", None):
        Path(args.checkpoint_dir).mkdir(parents=True, exist_ok=True)
        path = Path(args.checkpoint_dir) / f"{name}_{cfg.method}_{cfg.seed}.ckpt"
        save_checkpoint(path, result.state, cfg.to_dict())
    return EXIT_OK


def cmd_run(args) -> int:
    return _single_run(args, probe=False)


def cmd_probe(args) -> int:
    return _single_run(args, probe=True)


def cmd_matrix(args) -> int:
    names = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad --seeds {args.seeds!r}") from None
    for m in methods:
        if m not in ("seqft", "replay"):
            raise ConfigError(f"unknown method {m!r}")
    if "replay" in methods and args.buffer_capacity is None:
        raise ConfigError("replay needs --buffer-capacity")
    specs = []
    for name in names:
        spec = scenario(name)
        build_stream(spec, args.data_root)  # fail fast on missing data
        specs.append((name, spec))
    template = _train_config(args, names[0] if names else "", "seqft", 0)
    use_schedule = args.epochs is None and args.batch is None and args.lr is None
    records = run_matrix(specs, template, seeds, methods, args.out, args.workers,
                         args.data_root, probe=args.probe, use_schedule=use_schedule,
                         extra_meta={"cli": _echo(args)})
    metas = [r for r in records if r["record_type"] == "run_meta"]
    failed = [m for m in metas if m["status"] != "ok"]
    print(f"{len(metas)} runs, {len(failed)} failed; "
          f"{sum(r['record_type'] == 'phase' for r in records)} phase records appended to {args.out}")
    for row in table_avg_forgetting(records):
        f = row["forgetting"]
        print(f"{row['dataset']}.{row['split']} {row['method']}: mean forgetting {f.mean:.2f} ± {f.std:.2f}")
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_report(args) -> int:
    try:
        records = read_log(args.log)
    except OSError as exc:
        raise ConfigError(f"cannot read log {args.log}: {exc}") from None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = {"text": "txt", "csv": "csv", "tsv": "tsv"}
    for dataset, split, task, metric in scenarios_in(records):
        rows = table_per_phase(records, dataset, split, task)
        stem = f"per_phase_{dataset}.{split}.{task}"
        print(f"== {dataset}.{split} ({task}, {metric}) ==")
        print(format_table(rows, args.format))
        for style in ("text", "csv"):
            (out / f"{stem}.{ext[style]}").write_text(format_table(rows, style))
        figure = "per_phase_accuracy" if metric == "accuracy" else "per_phase_mse"
        emit_plot_data(records, figure, out / f"plot_{figure}_{dataset}.{split}.{task}.csv", dataset, split)
    avg = table_avg_forgetting(records)
    if avg:
        print("== average forgetting (classification, accuracy points) ==")
        print(format_table(avg, args.format))
        for style in ("text", "csv"):
            (out / f"avg_forgetting.{ext[style]}").write_text(format_table(avg, style))
        emit_plot_data(records, "forgetting_summary", out / "plot_forgetting_summary.csv")
    probes = table_probe_summary(records)
    if probes:
        print("== gradient alignment probes ==")
        print(format_table(probes, args.format))
        (out / "probe_summary.txt").write_text(format_table(probes, "text"))
    return EXIT_OK


def cmd_gen_synth(args) -> int:
    spec = scenario(f"synth.{args.split}", num_phases=args.num_phases,
                    samples_per_phase=args.samples_per_phase, seed=args.stream_seed)
    phases = build_stream(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stream.cfg").write_text(spec.dumps())
    for ph in phases:
        with open(out / f"phase_{ph.phase_id}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["part", "key", "label", *[f"x{i}" for i in range(ph.input_dim)]])
            for part in ("train", "val"):
                x, y = ph.arrays(part)
                keys = ph.train_keys if part == "train" else ph.val_keys
                for k, xi, yi in zip(keys, x, y):
                    w.writerow([part, int(k), int(yi), *map(repr, map(float, xi))])
    print(f"wrote {len(phases)} phases and stream.cfg to {out}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "probe": cmd_probe, "matrix": cmd_matrix,
            "report": cmd_report, "gen-synth": cmd_gen_synth}


def main(argv=None) -> int:
    parser, subs = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        try:
            args = _apply_config(parser, subs, argv)
        except SystemExit as exc:  # argparse usage errors and --help
            return int(exc.code or 0)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.verb](args)
    except (ConfigError, StreamConfigError, ValueError) as exc:
        print(f"streamreplay: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"streamreplay: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
