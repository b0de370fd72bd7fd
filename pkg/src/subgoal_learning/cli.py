"""Command-line entry point: bench, simulate, analyze, cluster and decide."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, demo_world_path
from .analysis import (
    DEFAULT_T,
    behavior_metrics,
    cluster_segments,
    cluster_stats,
    extract_segments,
    parse_run,
    vis_window,
)
from .benchmark import MODES, NoVisibleSubgoal, build_benchmark, optimal_sequence
from .decision import AGGREGATORS, DecisionParams, candidate_values, classify_case, predict_next_node
from .dynamics import VehicleParams
from .env import Environment, InvalidEnvironment, extract_nodes
from .knowledge import KnowledgeBase, exploration_metric
from .runlog import RunLog
from .simulator import AgentConfig, SteeringGains, run_experiment

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

MANIFEST_SCHEMA = "run-manifest/1"
SUMMARY_SCHEMA = "experiment-summary/1"
PARSED_SCHEMA = "parsed-runs/1"
METRICS_SCHEMA = "metrics/1"
CLUSTERS_SCHEMA = "clusters/1"
DECISION_SCHEMA = "decision/1"

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_INFEASIBLE = 0, 2, 3, 4

AGENT_KEYS = {
    "p_explore", "p_explore_initial", "p_explore_decay", "explore_cases", "arrival_radius",
    "goal_radius", "corner_clearance", "path_margin", "max_duration", "r_thresh",
}
TOP_KEYS = AGENT_KEYS | {"seed", "runs", "fov", "gamma", "dmax", "aggregator", "vehicle", "gains"}


class InvalidInput(ValueError):
    pass


class Infeasible(RuntimeError):
    pass


# -- output helpers ------------------------------------------------------------------


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def dumps(obj) -> str:
    """Canonical JSON text: sorted keys, two-space indent, non-finite as null."""
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write(out: Path, name: str, text: str, written: list[str]) -> None:
    path = out / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    written.append(name)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, config: dict, seed, env_path, written: list[str]) -> None:
    manifest = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config": config,
        "seed": seed,
        "env_sha256": _sha256(env_path) if env_path is not None else None,
        "version": __version__,
        "outputs": sorted(written),
    }
    (out / "manifest.json").write_text(dumps(manifest))


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# -- input helpers -------------------------------------------------------------------


def _load_env(path) -> tuple[Environment, Path]:
    path = Path(path) if path else demo_world_path()
    try:
        return Environment.load(path), path
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInput(f"cannot read environment {path}: {exc}") from exc


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InvalidInput(f"cannot read config {path}: {exc}") from exc
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise InvalidInput(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _decision_params(gamma, dmax, aggregator) -> DecisionParams:
    try:
        return DecisionParams(gamma=float(gamma), d_max=None if dmax is None else int(dmax), aggregator=aggregator)
    except (TypeError, ValueError) as exc:
        raise InvalidInput(str(exc)) from exc


def agent_config(cfg: dict, args) -> AgentConfig:
    """AgentConfig from a config mapping, with command-line flags taking precedence."""

    def pick(flag, key, default):
        val = getattr(args, flag, None)
        return val if val is not None else cfg.get(key, default)

    decision = _decision_params(pick("gamma", "gamma", 1.0), pick("dmax", "dmax", None), pick("aggregator", "aggregator", "min"))
    kwargs = {k: cfg[k] for k in AGENT_KEYS if k in cfg}
    try:
        vehicle = VehicleParams(**cfg.get("vehicle", {}))
        gains = SteeringGains(**cfg.get("gains", {}))
        return AgentConfig(
            decision=decision,
            fov=math.radians(float(pick("fov", "fov", 60.0))),
            seed=int(pick("seed", "seed", 0)),
            vehicle=vehicle,
            gains=gains,
            **kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise InvalidInput(f"invalid configuration: {exc}") from exc


def _log_paths(items) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("run_*.csv")))
        else:
            paths.append(p)
    if not paths:
        raise InvalidInput("no run logs given")
    return paths


def _read_logs(items) -> list[RunLog]:
    logs = []
    for p in _log_paths(items):
        try:
            logs.append(RunLog.read_csv(p))
        except (OSError, ValueError, StopIteration) as exc:
            raise InvalidInput(f"cannot read run log {p}: {exc}") from exc
    return logs


# -- subcommands -------------------------------------------------------------------


def cmd_bench(args) -> int:
    env, env_path = _load_env(args.env)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    graph = build_benchmark(env, args.mode)
    doc = graph.to_dict()
    try:
        doc["start_sequence"] = optimal_sequence(graph, env, env.start[:2])
        feasible = True
    except NoVisibleSubgoal:
        doc["start_sequence"] = None
        feasible = False
    written: list[str] = []
    _write(out, "graph.json", dumps(doc), written)
    _write(out, "graph.dot", graph.to_dot(), written)
    write_manifest(out, "bench", {"mode": args.mode}, None, env_path, written)
    if not feasible:
        raise Infeasible("the goal cannot be reached from the start position")
    return EXIT_OK


def _experiment(env_path: str, cfg: AgentConfig, n_runs: int, out: str) -> list[str]:
    env = Environment.load(env_path)
    res = run_experiment(env, n_runs, cfg)
    out_dir = Path(out)
    written: list[str] = []
    for r, log in enumerate(res.logs):
        _write(out_dir, f"run_{r:03d}.csv", log.to_csv(), written)
        _write(out_dir, f"kb_{r:03d}.json", dumps(res.kb_history[r + 1].to_dict()), written)
    summary = {"schema": SUMMARY_SCHEMA, "seed": cfg.seed, **res.summary()}
    _write(out_dir, "summary.json", dumps(summary), written)
    return written


def cmd_simulate(args) -> int:
    cfg_file = load_config(args.config)
    n_runs = args.runs if args.runs is not None else cfg_file.get("runs", 20)
    if not isinstance(n_runs, int) or n_runs < 1:
        raise _UsageError("--runs must be a positive integer")
    if args.experiments < 1 or args.workers < 1:
        raise _UsageError("--experiments and --workers must be positive")
    cfg = agent_config(cfg_file, args)
    env, env_path = _load_env(args.env)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.experiments == 1:
        jobs = [(cfg, out, "")]
    else:
        jobs = [
            (dataclasses.replace(cfg, seed=cfg.seed + e), out / f"seed_{cfg.seed + e}", f"seed_{cfg.seed + e}/")
            for e in range(args.experiments)
        ]
    if args.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            futures = [pool.submit(_experiment, str(env_path), c, n_runs, str(d)) for c, d, _ in jobs]
            results = [f.result() for f in futures]
    else:
        results = [_experiment(str(env_path), c, n_runs, str(d)) for c, d, _ in jobs]
    written = [prefix + name for (_, _, prefix), names in zip(jobs, results) for name in names]
    config = {**cfg.to_dict(), "runs": n_runs, "experiments": args.experiments}
    write_manifest(out, "simulate", config, cfg.seed, env_path, written)
    return EXIT_OK


def cmd_analyze(args) -> int:
    env, env_path = _load_env(args.env)
    nodes = extract_nodes(env)
    logs = _read_logs(args.logs)
    fov = math.radians(args.fov)
    kb = KnowledgeBase(len(nodes))
    parsed_docs, skipped = [], []
    for log in logs:
        pr = parse_run(log, nodes, args.r_thresh)
        if not log.completed or not pr.completed:
            skipped.append(log.run_id)
            kb.update(pr, allow_partial=True)
            continue
        kb.update(pr)
        doc = pr.to_dict()
        for entry in doc["sequence"]:
            entry["vis"] = sorted(vis_window(log, nodes, env, entry["t"], args.tw, fov))
        doc["flight_time"] = log.flight_time
        parsed_docs.append(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    _write(out, "parsed_runs.json", dumps({"schema": PARSED_SCHEMA, "runs": parsed_docs, "incomplete_runs": skipped}), written)
    _write(out, "kb.json", dumps(kb.to_dict()), written)
    metrics = {
        "schema": METRICS_SCHEMA,
        "exploration_metric": exploration_metric(kb),
        "behavior": behavior_metrics(logs, nodes, r_thresh=args.r_thresh).to_dict(),
        "per_run": {str(log.run_id): behavior_metrics([log], nodes, r_thresh=args.r_thresh).to_dict() for log in logs},
    }
    _write(out, "metrics.json", dumps(metrics), written)
    write_manifest(out, "analyze", {"fov_deg": args.fov, "tw": args.tw, "r_thresh": args.r_thresh}, None, env_path, written)
    return EXIT_OK


def cmd_cluster(args) -> int:
    env, env_path = _load_env(args.env)
    nodes = extract_nodes(env)
    logs = _read_logs(args.logs)
    segments = extract_segments(logs, nodes, args.T)
    if len(segments) < args.clusters:
        raise InvalidInput(f"{len(segments)} corner segments cannot form {args.clusters} clusters")
    clusters = cluster_segments(segments, args.clusters, args.weight)
    assign = []
    means = []
    summary = []
    for c_id, c in enumerate(clusters):
        for m in c.members:
            s = segments[m]
            assign.append((m, s.run_id, s.corner, int(s.reflected), c_id))
        mt = c.mean_trajectory()
        for j in range(len(mt["t_c"])):
            means.append((c_id, mt["t_c"][j], mt["x"][j], mt["y"][j], mt["v"][j], mt["omega"][j]))
        V, U, f = cluster_stats(c, weight=args.weight)
        summary.append({"cluster": c_id, "size": len(c.members), "frequency": f, "V": V, "U_v": U})
    assign.sort()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[str] = []
    _write(out, "assignments.csv", _csv(assign, ("segment", "run_id", "corner", "reflected", "cluster")), written)
    _write(out, "cluster_means.csv", _csv(means, ("cluster", "t_c", "x", "y", "v", "omega")), written)
    _write(out, "clusters.json", dumps({"schema": CLUSTERS_SCHEMA, "n_segments": len(segments), "clusters": summary}), written)
    config = {"clusters": args.clusters, "T": args.T, "weight": args.weight}
    write_manifest(out, "cluster", config, None, env_path, written)
    return EXIT_OK


def decision_report(kb: KnowledgeBase, node: int, params: DecisionParams) -> dict:
    if not 0 <= node < kb.n_nodes:
        raise InvalidInput(f"node {node} is outside 0..{kb.n_nodes - 1}")
    case = classify_case(kb, node)
    values = candidate_values(kb, node, params)
    return {
        "schema": DECISION_SCHEMA,
        "node": node,
        "case": case,
        "predicted": predict_next_node(kb, node, params) if values else None,
        "values": {str(i): values[i] for i in sorted(values)},
        "params": dataclasses.asdict(params),
    }


def cmd_decide(args) -> int:
    try:
        kb = KnowledgeBase.load(args.kb)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InvalidInput(f"cannot read knowledge base {args.kb}: {exc}") from exc
    params = _decision_params(args.gamma, args.dmax, args.aggregator)
    text = dumps(decision_report(kb, args.node, params))
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        written: list[str] = []
        _write(out, "decision.json", text, written)
        write_manifest(out, "decide", {"kb_sha256": _sha256(args.kb), **dataclasses.asdict(params)}, None, None, written)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


class _UsageError(Exception):
    pass


def _dmax(text: str):
    if text.lower() in ("inf", "none", "unlimited"):
        return None
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subgoal-learning", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="benchmark subgoal graph of an environment")
    b.add_argument("--env", help="environment JSON (default: shipped demo world)")
    b.add_argument("--mode", choices=MODES, default="point_mass")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("simulate", help="multi-run learning experiments")
    s.add_argument("--env")
    s.add_argument("--config", help="TOML file with agent settings")
    s.add_argument("--seed", type=int)
    s.add_argument("--runs", type=int)
    s.add_argument("--gamma", type=float)
    s.add_argument("--dmax", type=_dmax)
    s.add_argument("--aggregator", choices=sorted(AGGREGATORS))
    s.add_argument("--fov", type=float, help="field of view in degrees (default 60)")
    s.add_argument("--experiments", type=int, default=1, help="number of seeds, starting at --seed")
    s.add_argument("--workers", type=int, default=1, help="worker processes for --experiments")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="parse run logs into sequences, knowledge and metrics")
    a.add_argument("--env")
    a.add_argument("--logs", nargs="+", required=True, help="run-log CSV files or directories")
    a.add_argument("--fov", type=float, default=60.0)
    a.add_argument("--tw", type=float, default=1.0)
    a.add_argument("--r-thresh", dest="r_thresh", type=float, default=1.5)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("cluster", help="corner-frame guidance primitives")
    c.add_argument("--env")
    c.add_argument("--logs", nargs="+", required=True)
    c.add_argument("--clusters", type=int, default=5)
    c.add_argument("--T", type=float, default=DEFAULT_T)
    c.add_argument("--weight", choices=("verbatim", "corner"), default="verbatim")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cluster)

    d = sub.add_parser("decide", help="decision-model values at one node")
    d.add_argument("--kb", required=True)
    d.add_argument("--node", type=int, required=True)
    d.add_argument("--gamma", type=float, default=1.0)
    d.add_argument("--dmax", type=_dmax, default=None)
    d.add_argument("--aggregator", choices=sorted(AGGREGATORS), default="min")
    d.add_argument("--out")
    d.set_defaults(func=cmd_decide)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvalidInput, InvalidEnvironment) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
