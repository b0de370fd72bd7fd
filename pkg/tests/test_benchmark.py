import itertools
import json
import logging
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import LineString, Polygon

from conftest import make_env, square
from subgoal_learning.benchmark import (
    NoVisibleSubgoal,
    SubgoalGraph,
    build_benchmark,
    build_dc_matrix,
    optimal_sequence,
    route_margin,
    solve_ctg,
)
from subgoal_learning.dynamics import VehicleParams
from subgoal_learning.env import NodeSet, extract_nodes, random_world

INF = math.inf


def enumerate_ctg(DC):
    """Minimum over all simple paths k -> ... -> 0, summed from the goal end."""
    n = len(DC)
    best = [INF] * n
    best[0] = 0.0
    others = list(range(1, n))
    for k in others:
        rest = [i for i in others if i != k]
        for r in range(len(rest) + 1):
            for mid in itertools.permutations(rest, r):
                path = (k, *mid, 0)
                total = 0.0
                for a, b in reversed(list(zip(path[:-1], path[1:]))):
                    total = DC[a][b] + total
                best[k] = min(best[k], total)
    return best


def random_dc(rng, n, density=0.6, integer=False):
    DC = np.full((n, n), INF)
    for k in range(n):
        for i in range(n):
            if k != i and rng.random() < density:
                DC[k, i] = float(rng.integers(1, 10)) if integer else float(rng.uniform(0.1, 10.0))
    return DC


def test_worked_example():
    DC = np.full((3, 3), INF)
    DC[1, 0], DC[1, 2], DC[2, 0] = 10, 2, 5
    ctg, Q, unreachable = solve_ctg(DC)
    assert list(ctg) == [0, 7, 5]
    assert Q[1].tolist() == [0, 0, 1] and Q[2].tolist() == [1, 0, 0]
    assert not Q[0].any() and unreachable == []


def test_single_node_graph():
    ctg, Q, unreachable = solve_ctg(np.full((1, 1), INF))
    assert list(ctg) == [0.0] and Q.shape == (1, 1) and not Q.any()


def test_unreachable_flagged(caplog):
    DC = np.full((3, 3), INF)
    DC[1, 0] = 2.0
    DC[0, 2] = 1.0
    with caplog.at_level(logging.WARNING):
        ctg, Q, unreachable = solve_ctg(DC)
    assert unreachable == [2] and ctg[2] == INF and not Q[2].any()
    assert "unreachable" in caplog.text


def test_tie_goes_to_lowest_index():
    DC = np.full((4, 4), INF)
    DC[1, 0], DC[2, 0] = 3.0, 3.0
    DC[3, 1], DC[3, 2] = 1.0, 1.0
    _, Q, _ = solve_ctg(DC)
    assert Q[3].tolist() == [0, 1, 0, 0]


def test_zero_cost_edges_stay_acyclic():
    DC = np.full((3, 3), INF)
    DC[1, 2], DC[2, 1], DC[2, 0] = 0.0, 0.0, 1.0
    ctg, Q, _ = solve_ctg(DC)
    assert list(ctg) == [0.0, 1.0, 1.0]
    assert Q[2, 0] == 1 and Q[1, 2] == 1


@settings(max_examples=120, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8))
def test_solve_ctg_matches_enumeration(seed, n):
    DC = random_dc(np.random.default_rng(seed), n)
    ctg, Q, unreachable = solve_ctg(DC)
    assert list(ctg) == enumerate_ctg(DC)
    for k in range(1, n):
        if math.isfinite(ctg[k]):
            assert Q[k].sum() == 1
            i = int(np.flatnonzero(Q[k])[0])
            assert ctg[i] < ctg[k]
            assert ctg[k] == min(DC[k, j] + ctg[j] for j in range(n) if j != k)
        else:
            assert k in unreachable and not Q[k].any()
    assert not Q[0].any() and not Q.diagonal().any()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
def test_following_children_reaches_goal(seed, n):
    DC = random_dc(np.random.default_rng(seed), n)
    ctg, Q, _ = solve_ctg(DC)
    for k in range(n):
        if not math.isfinite(ctg[k]):
            continue
        node, steps = k, 0
        while node != 0:
            node = int(np.flatnonzero(Q[node])[0])
            steps += 1
            assert steps <= n - 1


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), data=st.data())
def test_solve_ctg_permutation_invariant(seed, n, data):
    DC = random_dc(np.random.default_rng(seed), n, integer=True)
    tail = data.draw(st.permutations(list(range(1, n))))
    perm = [0, *tail]
    ctg, _, _ = solve_ctg(DC)
    ctg_p, _, _ = solve_ctg(DC[np.ix_(perm, perm)])
    assert np.array_equal(ctg_p, ctg[perm])


# -- DC matrix ----------------------------------------------------------------------


def test_point_mass_cost():
    env = make_env([square(0, 8, 1)], goal=(-1 + 10.4, 7))
    nodes = extract_nodes(env)
    DC = build_dc_matrix(env, nodes)
    k = [tuple(p) for p in nodes.positions].index((-1.0, 7.0))
    assert DC[k, 0] == pytest.approx(2.0, abs=1e-12)


def test_occluded_pair_infinite(square_env):
    nodes = extract_nodes(square_env)
    DC = build_dc_matrix(square_env, nodes)
    idx = {tuple(p): k for k, p in enumerate(nodes.positions)}
    assert DC[idx[(-2, -2)], idx[(2, 2)]] == INF
    assert not np.isfinite(DC.diagonal()).any()


def test_dubins_aligned_equals_point_mass(square_env):
    nodes = extract_nodes(square_env)
    idx = {tuple(p): k for k, p in enumerate(nodes.positions)}
    headings = [None] * len(nodes)
    headings[idx[(2, -2)]] = 0.0
    a, b = idx[(-2, -2)], idx[(2, -2)]
    pm = build_dc_matrix(square_env, nodes, "point_mass")
    db = build_dc_matrix(square_env, nodes, "dubins", node_headings=headings)
    assert db[a, b] == pm[a, b] == pytest.approx(4.0 / 5.2)


def test_bad_mode(square_env):
    with pytest.raises(ValueError):
        build_dc_matrix(square_env, extract_nodes(square_env), "teleport")


def _oracle_ctg(env, nodes, v_max):
    g = nx.DiGraph()
    polys = [Polygon(p) for p in env.obstacles]
    pos = nodes.positions
    for k in range(len(nodes)):
        for i in range(len(nodes)):
            if k == i:
                continue
            seg = LineString([pos[k], pos[i]])
            if not any(seg.relate_pattern(p, "T********") for p in polys):
                g.add_edge(k, i, weight=math.hypot(*(pos[i] - pos[k])) / v_max)
    return nx.single_source_dijkstra_path_length(g.reverse(), 0)


def test_demo_point_mass_ctg_matches_networkx(demo_env):
    graph = build_benchmark(demo_env)
    oracle = _oracle_ctg(demo_env, graph.nodes, 5.2)
    for k in range(len(graph.nodes)):
        assert graph.CTG[k] == pytest.approx(oracle.get(k, INF), rel=1e-12)


@pytest.mark.parametrize("seed", range(4))
def test_random_world_ctg_matches_networkx(seed):
    env = random_world(np.random.default_rng(seed))
    graph = build_benchmark(env)
    oracle = _oracle_ctg(env, graph.nodes, 5.2)
    for k in range(len(graph.nodes)):
        assert graph.CTG[k] == pytest.approx(oracle.get(k, INF), rel=1e-12)


def test_point_mass_lower_bounds_dubins(demo_env):
    pm = build_benchmark(demo_env, "point_mass")
    db = build_benchmark(demo_env, "dubins")
    assert np.all(pm.CTG <= db.CTG + 1e-12)
    assert np.all(np.isfinite(db.CTG))
    assert db.headings is not None
    for k in range(1, len(db.nodes)):
        assert db.Q[k].sum() == 1


@pytest.mark.parametrize("seed", range(2))
def test_point_mass_lower_bounds_dubins_random(seed):
    env = random_world(np.random.default_rng(seed))
    pm = build_benchmark(env, "point_mass")
    db = build_benchmark(env, "dubins")
    assert np.all(pm.CTG <= db.CTG + 1e-12)


def test_graph_invariants_on_demo(demo_env):
    g = build_benchmark(demo_env)
    assert g.CTG[0] == 0 and not g.Q[0].any() and not g.Q.diagonal().any()
    for k, child in enumerate(g.children[1:], start=1):
        assert g.CTG[child] < g.CTG[k]
        assert g.CTG[k] == pytest.approx(g.DC[k, child] + g.CTG[child], abs=1e-12)


# -- optimal sequence ---------------------------------------------------------------


def _three_node_graph():
    env = make_env([[(4, -5), (6, -5), (6, 4), (4, 4)]], start=(0, 0, 0), goal=(10, 0))
    nodes = NodeSet(np.array([[10.0, 0.0], [0.0, 5.0], [10.0, 5.0]]), [])
    DC = np.full((3, 3), INF)
    DC[1, 0], DC[1, 2], DC[2, 0] = 10, 2, 5
    ctg, Q, _ = solve_ctg(DC)
    return env, SubgoalGraph(nodes, DC, ctg, Q)


def test_sequence_follows_children():
    env, g = _three_node_graph()
    seq = optimal_sequence(g, env, (0.0, 0.0))
    assert seq == [1, 2, 0]
    assert all(g.CTG[a] > g.CTG[b] for a, b in zip(seq[:-1], seq[1:]))


def test_sequence_direct_to_goal(square_env):
    g = build_benchmark(square_env)
    assert optimal_sequence(g, square_env, (14.0, 0.0)) == [0]


def test_sequence_without_visible_node():
    env, g = _three_node_graph()
    with pytest.raises(NoVisibleSubgoal):
        optimal_sequence(g, env, (5.0, 0.0))


def test_demo_sequence(demo_env):
    g = build_benchmark(demo_env)
    seq = optimal_sequence(g, demo_env, demo_env.start[:2])
    assert seq[-1] == 0 and len(set(seq)) == len(seq)
    assert all(g.CTG[a] > g.CTG[b] for a, b in zip(seq[:-1], seq[1:]))


def test_walled_goal_is_unreachable():
    walls = [[(8, -4), (9, -4), (9, 4), (8, 4)], [(7.5, 3), (13.5, 3), (13.5, 4.5), (7.5, 4.5)],
             [(7.5, -4.5), (13.5, -4.5), (13.5, -3), (7.5, -3)], [(12, -4), (13, -4), (13, 4), (12, 4)]]
    env = make_env(walls, goal=(10.5, 0.0))
    g = build_benchmark(env)
    assert g.unreachable == list(range(1, len(g.nodes)))
    assert np.isinf(g.CTG[1:]).all()
    with pytest.raises(NoVisibleSubgoal):
        optimal_sequence(g, env, env.start[:2])


def test_graph_serialization(square_env):
    g = build_benchmark(square_env)
    doc = json.loads(json.dumps(g.to_dict(), allow_nan=False))
    assert doc["CTG"][0] == 0.0 and doc["DC"][0][0] is None
    dot = g.to_dot()
    assert dot.startswith("digraph") and dot.count("->") == len(g.nodes) - 1


def test_route_margin(square_env):
    nodes = extract_nodes(square_env)
    idx = {tuple(p): k for k, p in enumerate(nodes.positions)}
    seq = [idx[(-2, 2)], idx[(2, 2)], 0]
    # the start leg from (-15, 0) to (-2, 2) passes (-2, -2) at distance 4 * 13 / hypot(13, 2)
    assert route_margin(square_env, nodes, seq) == pytest.approx(4 * 13 / math.hypot(13, 2))
    assert VehicleParams().v_max == 5.2
