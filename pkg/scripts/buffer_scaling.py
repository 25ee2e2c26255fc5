"""Deviation of the buffer gradient from the mean past-phase gradient versus capacity.

Parameters are frozen after four synth_pairs phases; for each capacity C the
buffer is refilled from scratch (C/4 offers per past phase) many times, and
the mean deviation is fitted on log-log axes. Reservoir sampling predicts a
slope near -1/2.
"""
import argparse
import time

import numpy as np

from streamreplay.probe import buffer_gradient_deviation, mean_gradient, phase_gradient
from streamreplay.replay import ReplayBuffer, end_of_phase_ingest
from streamreplay.streams import synth_pairs
from streamreplay.trainer import TrainConfig, run_stream


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--capacities", default="16,64,256,1024")
    ap.add_argument("--resamples", type=int, default=50)
    ap.add_argument("--samples-per-phase", type=int, default=20_000)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--out", default=None, help="optional CSV of (capacity, mean, std)")
    args = ap.parse_args()

    start = time.perf_counter()
    phases = synth_pairs(0, 5, args.samples_per_phase)
    cfg = TrainConfig(epochs_per_phase=1, batch_size=32, lr=1e-2, seed=args.seed)
    theta = run_stream(phases, cfg, stop_after=4).state.checkpoints[-1]
    past = phases[:4]
    grad_hist = mean_gradient([phase_gradient(theta, p) for p in past])

    capacities = [int(c) for c in args.capacities.split(",")]
    rows = []
    for C in capacities:
        devs = []
        for i in range(args.resamples):
            buf = ReplayBuffer(C, seed=[i, C])
            for p in past:
                end_of_phase_ingest(buf, p, C // len(past))
            devs.append(buffer_gradient_deviation(theta, buf.entries, past, grad_hist)[0])
        rows.append((C, float(np.mean(devs)), float(np.std(devs, ddof=1))))
        print(f"C={C:5d}  deviation {rows[-1][1]:.4f} ± {rows[-1][2]:.4f}")
    slope, intercept = np.polyfit(np.log(capacities), np.log([r[1] for r in rows]), 1)
    print(f"log-log slope {slope:.3f}  ({time.perf_counter() - start:.1f}s)")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("capacity,mean_deviation,std_deviation\n")
            fh.writelines(f"{c},{m!r},{s!r}\n" for c, m, s in rows)


if __name__ == "__main__":
    main()
