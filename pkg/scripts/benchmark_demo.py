"""Print the benchmark subgoal graph of an environment and the optimal route from the start."""

import argparse
import math
import sys

import numpy as np

from subgoal_learning import demo_world_path
from subgoal_learning.benchmark import build_benchmark, optimal_sequence
from subgoal_learning.env import Environment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--env", default=None)
    ap.add_argument("--mode", choices=("point_mass", "dubins"), default="point_mass")
    args = ap.parse_args(argv)

    env = Environment.load(args.env or demo_world_path())
    g = build_benchmark(env, mode=args.mode)
    n_edges = int(np.isfinite(g.DC).sum())
    print(f"{len(g.nodes)} nodes, {n_edges} edges ({args.mode})")
    print(f"{'node':>4} {'x':>7} {'y':>7} {'CTG [s]':>8}  next")
    for k, (x, y) in enumerate(g.nodes.positions):
        ctg = g.CTG[k]
        nxt = "-" if k == 0 or g.children[k] is None else str(g.children[k])
        shown = f"{ctg:8.3f}" if math.isfinite(ctg) else f"{'inf':>8}"
        print(f"{k:>4} {x:7.2f} {y:7.2f} {shown}  {nxt}")
    seq = optimal_sequence(g, env, env.start[:2])
    print("optimal route from start:", " -> ".join(map(str, seq)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
