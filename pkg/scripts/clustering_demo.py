"""Cluster corner passes from a short learning experiment into guidance primitives."""

import argparse
import sys

from subgoal_learning import demo_world_path
from subgoal_learning.analysis import cluster_segments, cluster_stats, extract_segments
from subgoal_learning.env import Environment
from subgoal_learning.simulator import AgentConfig, World, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--env", default=None)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--clusters", type=int, default=5)
    ap.add_argument("--weight", choices=("verbatim", "corner"), default="verbatim")
    args = ap.parse_args(argv)

    world = World.build(Environment.load(args.env or demo_world_path()))
    res = run_experiment(world, args.runs, AgentConfig(seed=args.seed))
    segments = extract_segments(res.logs, world.nodes)
    if len(segments) < args.clusters:
        print(f"only {len(segments)} corner passes; lower --clusters", file=sys.stderr)
        return 3
    clusters = cluster_segments(segments, args.clusters, args.weight)
    print(f"{len(segments)} corner passes from {args.runs} runs")
    print(f"{'cluster':>7} {'size':>5} {'freq':>6} {'V [m/s]':>8} {'U_v':>6} {'min r [m]':>9}")
    for i, c in enumerate(clusters):
        V, U, f = cluster_stats(c, weight=args.weight)
        mt = c.mean_trajectory()
        r_min = float(min((mt["x"] ** 2 + mt["y"] ** 2) ** 0.5))
        print(f"{i:>7} {len(c.members):>5} {f:>6.3f} {V:>8.3f} {U:>6.3f} {r_min:>9.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
