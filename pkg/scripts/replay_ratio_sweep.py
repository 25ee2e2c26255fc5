"""Forgetting and phase-1 retention on synth_pairs as the replay ratio varies.

Both methods share the scenario schedule; lambda = 0 is replay with an unused
buffer, which reproduces SeqFT's trajectory up to batch order.
"""
import argparse

import numpy as np

from streamreplay.streams import build_stream, scenario, schedule
from streamreplay.trainer import TrainConfig, run_stream


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="synth.synth_pairs")
    ap.add_argument("--lambdas", default="0,0.1,0.25,0.5,0.75")
    ap.add_argument("--capacity", type=int, default=1000)
    ap.add_argument("--seeds", default="13,21,42")
    args = ap.parse_args()

    phases = build_stream(scenario(args.scenario))
    sched = schedule(args.scenario)
    seeds = [int(s) for s in args.seeds.split(",")]
    print(f"{'lambda':>7} {'mean F':>8} {'phase-1 final':>14}")
    for lam in (float(v) for v in args.lambdas.split(",")):
        forget, first = [], []
        for seed in seeds:
            cfg = TrainConfig(method="replay", seed=seed, capacity=args.capacity, lam=lam, **sched)
            recs = run_stream(phases, cfg).records
            forget += [r.forgetting for r in recs]
            first.append(recs[0].final)
        print(f"{lam:7.2f} {100 * np.mean(forget):8.1f} {100 * np.mean(first):14.1f}")


if __name__ == "__main__":
    main()
