import csv
import hashlib
import io
import json
import subprocess
import sys

import pytest

from conftest import make_env, square
from subgoal_learning import __version__, demo_world_path
from subgoal_learning.benchmark import build_benchmark
from subgoal_learning.cli import dumps, main
from subgoal_learning.knowledge import KnowledgeBase, from_benchmark
from subgoal_learning.runlog import RunLog


def read_json(path):
    return json.loads(path.read_text())


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--seed", "0", "--runs", "6", "--out", str(out)]) == 0
    return out


# -- bench ----------------------------------------------------------------------------


def test_bench_square_world(tmp_path):
    env_path = tmp_path / "square.json"
    make_env([square(0, 0, 2)]).save(env_path)
    assert main(["bench", "--env", str(env_path), "--out", str(tmp_path / "o")]) == 0
    g = read_json(tmp_path / "o" / "graph.json")
    assert len(g["CTG"]) == 5 and all(c is not None for c in g["CTG"])
    assert g["start_sequence"][-1] == 0
    m = read_json(tmp_path / "o" / "manifest.json")
    assert m["env_sha256"] == hashlib.sha256(env_path.read_bytes()).hexdigest()
    assert m["outputs"] == ["graph.dot", "graph.json"] and m["version"] == __version__


def test_bench_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["bench", "--mode", "dubins", "--out", str(tmp_path / name)]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")


def test_bench_walled_goal_is_infeasible(tmp_path, capsys):
    walls = [[(8, -4), (9, -4), (9, 4), (8, 4)], [(7.5, 3), (13.5, 3), (13.5, 4.5), (7.5, 4.5)],
             [(7.5, -4.5), (13.5, -4.5), (13.5, -3), (7.5, -3)], [(12, -4), (13, -4), (13, 4), (12, 4)]]
    env_path = tmp_path / "walled.json"
    make_env(walls, goal=(10.5, 0.0)).save(env_path)
    code = main(["bench", "--env", str(env_path), "--out", str(tmp_path / "o")])
    assert code == 4
    g = read_json(tmp_path / "o" / "graph.json")
    assert g["start_sequence"] is None and all(c is None for c in g["CTG"][1:])
    assert "infeasible" in capsys.readouterr().err


@pytest.mark.parametrize("content", ["{not json", json.dumps({"bounds": [0, 0, 1, 1]})])
def test_bench_invalid_environment(tmp_path, content):
    env_path = tmp_path / "bad.json"
    env_path.write_text(content)
    assert main(["bench", "--env", str(env_path), "--out", str(tmp_path / "o")]) == 3


def test_invalid_geometry_exit_code(tmp_path):
    d = make_env().to_dict()
    d["obstacles"] = [[[14, -1], [16, -1], [16, 1], [14, 1]]]
    env_path = tmp_path / "goal_inside.json"
    env_path.write_text(json.dumps(d))
    assert main(["bench", "--env", str(env_path), "--out", str(tmp_path / "o")]) == 3


def test_usage_errors(tmp_path):
    assert main(["frobnicate"]) == 2
    assert main(["bench"]) == 2
    assert main(["simulate", "--runs", "0", "--out", str(tmp_path)]) == 2
    assert main(["simulate", "--runs", "2", "--experiments", "0", "--out", str(tmp_path)]) == 2


# -- simulate -------------------------------------------------------------------------


def test_simulate_outputs(sim_dir):
    s = read_json(sim_dir / "summary.json")
    assert s["schema"] == "experiment-summary/1" and s["n_runs"] == 6
    assert len(s["flight_times"]) == 6 and len(s["exploration_metric"]) == 6
    m = read_json(sim_dir / "manifest.json")
    assert m["seed"] == 0 and m["config"]["runs"] == 6
    assert set(m["outputs"]) == {p.name for p in sim_dir.iterdir()} - {"manifest.json"}
    assert len(list(sim_dir.glob("run_*.csv"))) == 6 and len(list(sim_dir.glob("kb_*.json"))) == 6


def test_simulate_is_byte_deterministic(sim_dir, tmp_path):
    assert main(["simulate", "--seed", "0", "--runs", "6", "--out", str(tmp_path)]) == 0
    assert tree(tmp_path) == tree(sim_dir)


def test_seed_changes_logs_not_schema(sim_dir, tmp_path):
    assert main(["simulate", "--seed", "1", "--runs", "6", "--out", str(tmp_path)]) == 0
    # the first run has no random choices; later runs do
    logs = lambda d: [p.read_bytes() for p in sorted(d.glob("run_*.csv"))]  # noqa: E731
    assert logs(tmp_path) != logs(sim_dir)
    assert read_json(tmp_path / "summary.json").keys() == read_json(sim_dir / "summary.json").keys()


def test_simulate_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "agent.toml"
    cfg.write_text('seed = 4\nruns = 2\ngamma = 0.8\np_explore = 0.0\n[vehicle]\nv_max = 5.2\n')
    assert main(["simulate", "--config", str(cfg), "--gamma", "0.5", "--out", str(tmp_path / "o")]) == 0
    m = read_json(tmp_path / "o" / "manifest.json")
    assert m["seed"] == 4 and m["config"]["runs"] == 2
    assert m["config"]["decision"]["gamma"] == 0.5 and m["config"]["p_explore"] == 0.0
    bad = tmp_path / "bad.toml"
    bad.write_text("warp_drive = true\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "b")]) == 3


def test_parallel_experiments_match_serial(tmp_path):
    base = ["simulate", "--seed", "3", "--runs", "2", "--experiments", "2"]
    assert main(base + ["--out", str(tmp_path / "serial")]) == 0
    assert main(base + ["--workers", "2", "--out", str(tmp_path / "par")]) == 0
    assert tree(tmp_path / "serial") == tree(tmp_path / "par")
    assert (tmp_path / "par" / "seed_4" / "summary.json").exists()


def test_outputs_round_trip(sim_dir):
    for p in sim_dir.glob("*.json"):
        assert dumps(json.loads(p.read_text())) == p.read_text()
    for p in sim_dir.glob("run_*.csv"):
        assert RunLog.read_csv(p).to_csv() == p.read_text()
    kb = KnowledgeBase.from_dict(read_json(sim_dir / "kb_005.json"))
    assert dumps(kb.to_dict()) == (sim_dir / "kb_005.json").read_text()


# -- analyze, cluster, decide -----------------------------------------------------------


def test_analyze_counts_completed_runs(sim_dir, tmp_path):
    assert main(["analyze", "--logs", str(sim_dir), "--out", str(tmp_path)]) == 0
    parsed = read_json(tmp_path / "parsed_runs.json")
    completed = sum(o == "goal_reached" for o in read_json(sim_dir / "summary.json")["outcomes"])
    assert len(parsed["runs"]) == completed
    for run in parsed["runs"]:
        assert run["sequence"][-1]["node"] == 0
        assert all("vis" in e for e in run["sequence"])
    kb = read_json(tmp_path / "kb.json")
    assert kb["q_counts"] == read_json(sim_dir / "kb_005.json")["q_counts"]
    metrics = read_json(tmp_path / "metrics.json")
    assert metrics["exploration_metric"] == read_json(sim_dir / "summary.json")["exploration_metric"][-1]


def test_analyze_missing_logs(tmp_path):
    assert main(["analyze", "--logs", str(tmp_path / "nothing"), "--out", str(tmp_path / "o")]) == 3


def test_cluster_on_demo_logs(sim_dir, tmp_path):
    assert main(["cluster", "--logs", str(sim_dir), "--clusters", "5", "--out", str(tmp_path)]) == 0
    doc = read_json(tmp_path / "clusters.json")
    assert len(doc["clusters"]) == 5
    assert sum(c["frequency"] for c in doc["clusters"]) == pytest.approx(1.0)
    rows = list(csv.DictReader(io.StringIO((tmp_path / "assignments.csv").read_text())))
    assert len(rows) == doc["n_segments"]
    assert main(["cluster", "--logs", str(sim_dir), "--clusters", "10000", "--out", str(tmp_path / "x")]) == 3


def test_decide_unlimited_depth_equals_depth_n(tmp_path, demo_env, capsys):
    kb = from_benchmark(build_benchmark(demo_env))
    # a second experienced child keeps this a real case C decision
    kb.q_counts[1, 0] += 1
    kb.dc_lists.setdefault((1, 0), []).append(50.0)
    path = tmp_path / "kb.json"
    kb.save(path)
    outs = []
    for dmax in ("inf", str(kb.n_nodes)):
        assert main(["decide", "--kb", str(path), "--node", "1", "--dmax", dmax]) == 0
        doc = json.loads(capsys.readouterr().out)
        outs.append((doc["case"], doc["predicted"], doc["values"]))
    assert outs[0] == outs[1] and outs[0][0] == "C"
    assert main(["decide", "--kb", str(path), "--node", "99"]) == 3
    assert main(["decide", "--kb", str(tmp_path / "missing.json"), "--node", "1"]) == 3
    assert main(["decide", "--kb", str(path), "--node", "1", "--gamma", "0"]) == 3


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "subgoal_learning", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == __version__


def test_demo_world_ships_with_package():
    assert demo_world_path().is_file()
