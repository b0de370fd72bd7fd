"""Learning curve on the demo world: flight time and exploration metric per run, per seed."""

import argparse
import csv
import sys

import numpy as np

from subgoal_learning import demo_world_path
from subgoal_learning.env import Environment
from subgoal_learning.simulator import AgentConfig, World, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--env", default=None)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--csv", help="also write seed,run,flight_time,exploration rows here")
    args = ap.parse_args(argv)

    world = World.build(Environment.load(args.env or demo_world_path()))
    times = np.full((args.seeds, args.runs), np.nan)
    em = np.zeros((args.seeds, args.runs))
    for seed in range(args.seeds):
        res = run_experiment(world, args.runs, AgentConfig(seed=seed))
        times[seed] = [np.nan if t is None else t for t in res.flight_times]
        em[seed] = res.exploration

    print(f"{'run':>4} {'median t [s]':>13} {'best t [s]':>11} {'mean EM':>8}")
    for r in range(args.runs):
        col = times[:, r]
        med = np.nanmedian(col) if np.isfinite(col).any() else float("nan")
        best = np.nanmin(col) if np.isfinite(col).any() else float("nan")
        print(f"{r + 1:>4} {med:>13.2f} {best:>11.2f} {em[:, r].mean():>8.3f}")

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "run", "flight_time", "exploration"])
            for s in range(args.seeds):
                for r in range(args.runs):
                    w.writerow([s, r + 1, "" if np.isnan(times[s, r]) else times[s, r], em[s, r]])
    return 0


if __name__ == "__main__":
    sys.exit(main())
