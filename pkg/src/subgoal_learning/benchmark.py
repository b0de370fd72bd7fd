"""Optimal (benchmark) subgoal graphs for point-mass and Dubins vehicles."""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleParams, dubins_path
from .env import (
    Environment,
    NodeSet,
    boundary_distance,
    extract_nodes,
    line_of_sight,
    point_segment_distance,
    strictly_inside,
    visibility_graph,
)

log = logging.getLogger(__name__)

MODES = ("point_mass", "dubins")
GRAPH_SCHEMA = "subgoal-graph/1"


class NoVisibleSubgoal(RuntimeError):
    pass


@dataclass
class SubgoalGraph:
    nodes: NodeSet
    DC: np.ndarray
    CTG: np.ndarray
    Q: np.ndarray
    mode: str = "point_mass"
    headings: np.ndarray | None = None  # arrival heading at i on edge k -> i
    unreachable: list[int] = field(default_factory=list)

    @property
    def children(self) -> list[int | None]:
        out = []
        for row in self.Q:
            nz = np.flatnonzero(row)
            out.append(int(nz[0]) if len(nz) else None)
        return out

    def to_dict(self) -> dict:
        def enc(a):
            return [[None if not math.isfinite(v) else float(v) for v in row] for row in a]

        d = {
            "schema": GRAPH_SCHEMA,
            "mode": self.mode,
            "nodes": self.nodes.positions.tolist(),
            "DC": enc(self.DC),
            "CTG": [None if not math.isfinite(v) else float(v) for v in self.CTG],
            "Q": self.Q.astype(int).tolist(),
            "unreachable": list(self.unreachable),
        }
        if self.headings is not None:
            d["headings"] = [[None if not math.isfinite(v) else float(v) for v in row] for row in self.headings]
        return d

    def to_dot(self) -> str:
        lines = ["digraph subgoal_graph {", "  rankdir=LR;"]
        for k, (x, y) in enumerate(self.nodes.positions):
            ctg = "inf" if not math.isfinite(self.CTG[k]) else f"{self.CTG[k]:.3f}"
            shape = "doublecircle" if k == 0 else "circle"
            lines.append(f'  n{k} [label="{k}\\nCTG={ctg}" shape={shape} pos="{x:.3f},{y:.3f}!"];')
        for k, child in enumerate(self.children):
            if child is not None:
                lines.append(f'  n{k} -> n{child} [label="{self.DC[k, child]:.3f}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"


def _heading(p, q) -> float:
    return math.atan2(q[1] - p[1], q[0] - p[0])


def path_penetrates(env: Environment, pts: np.ndarray, tolerance: float) -> bool:
    """True if any sampled point lies inside an obstacle deeper than ``tolerance``."""
    for poly, (bx0, by0, bx1, by1) in zip(env.obstacles, env._bbox):
        inside = (pts[:, 0] > bx0) & (pts[:, 0] < bx1) & (pts[:, 1] > by0) & (pts[:, 1] < by1)
        for pt in pts[inside]:
            if strictly_inside(poly, pt) and boundary_distance(poly, pt) > tolerance:
                return True
    return False


def build_dc_matrix(
    env: Environment,
    nodes: NodeSet,
    mode: str = "point_mass",
    vehicle: VehicleParams = VehicleParams(),
    *,
    V: np.ndarray | None = None,
    node_headings=None,
    radius: float = 1.0,
    clearance: float = 0.05,
) -> np.ndarray:
    """Incremental travel-time matrix between subgoals (s, ``inf`` = infeasible).

    In ``dubins`` mode the vehicle leaves node k heading straight at node i and
    arrives at i with ``node_headings[i]`` (the direction of i's own outgoing
    edge); for the goal, or when no heading is known, it arrives along k -> i.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    n = len(nodes)
    pos = nodes.positions
    if V is None:
        V = visibility_graph(env, nodes)
    DC = np.full((n, n), np.inf)
    for k in range(n):
        for i in range(n):
            if i == k or not V[k, i]:
                continue
            dist = math.hypot(pos[i, 0] - pos[k, 0], pos[i, 1] - pos[k, 1])
            if mode == "point_mass":
                DC[k, i] = dist / vehicle.v_max
                continue
            psi_dep = _heading(pos[k], pos[i])
            psi_arr = psi_dep
            if i != 0 and node_headings is not None and node_headings[i] is not None:
                psi_arr = float(node_headings[i])
            path = dubins_path((pos[k, 0], pos[k, 1], psi_dep), (pos[i, 0], pos[i, 1], psi_arr), radius)
            if path.word in ("LSL", "RSR", "LSR", "RSL") and path.length <= dist + 1e-9:
                DC[k, i] = dist / vehicle.v_max
                continue
            if path_penetrates(env, path.sample(0.05)[:, :2], clearance):
                continue
            DC[k, i] = path.length / vehicle.v_max
    return DC


def solve_ctg(DC: np.ndarray):
    """Cost-to-go by Dijkstra from the goal over reversed edges.

    Returns ``(CTG, Q, unreachable)``. The child of node k is the lowest-index
    minimiser of ``DC[k, i] + CTG[i]`` among nodes settled before k.
    """
    DC = np.asarray(DC, dtype=float)
    n = DC.shape[0]
    ctg = np.full(n, np.inf)
    order = np.full(n, n, dtype=int)
    if n == 0:
        return ctg, np.zeros((0, 0), dtype=int), []
    ctg[0] = 0.0
    heap = [(0.0, 0)]
    done = np.zeros(n, dtype=bool)
    rank = 0
    while heap:
        c, i = heapq.heappop(heap)
        if done[i]:
            continue
        done[i] = True
        order[i] = rank
        rank += 1
        for k in range(n):
            if k == i or done[k] or not math.isfinite(DC[k, i]):
                continue
            cand = DC[k, i] + ctg[i]
            if cand < ctg[k]:
                ctg[k] = cand
                heapq.heappush(heap, (cand, k))
    Q = np.zeros((n, n), dtype=int)
    unreachable = []
    for k in range(1, n):
        if not math.isfinite(ctg[k]):
            unreachable.append(k)
            continue
        best, child = np.inf, None
        for i in range(n):
            if i == k or order[i] >= order[k] or not math.isfinite(DC[k, i]):
                continue
            v = DC[k, i] + ctg[i]
            if v < best:
                best, child = v, i
        Q[k, child] = 1
    if unreachable:
        log.warning("unreachable subgoals: %s", unreachable)
    return ctg, Q, unreachable


def _node_headings(nodes: NodeSet, Q: np.ndarray) -> list[float | None]:
    out: list[float | None] = [None]
    for k in range(1, len(nodes)):
        nz = np.flatnonzero(Q[k])
        out.append(_heading(nodes.positions[k], nodes.positions[nz[0]]) if len(nz) else None)
    return out


def build_benchmark(
    env: Environment,
    mode: str = "point_mass",
    vehicle: VehicleParams = VehicleParams(),
    *,
    nodes: NodeSet | None = None,
    radius: float = 1.0,
    clearance: float = 0.05,
    max_iter: int = 10,
) -> SubgoalGraph:
    """Benchmark subgoal graph of ``env``.

    Dubins headings at each subgoal point at its child, so the Dubins costs
    depend on the solution; they are iterated from the point-mass solution
    until the child map stops changing (at most ``max_iter`` rounds).
    """
    if nodes is None:
        nodes = extract_nodes(env)
    V = visibility_graph(env, nodes)
    DC = build_dc_matrix(env, nodes, "point_mass", vehicle, V=V)
    ctg, Q, unreachable = solve_ctg(DC)
    headings = None
    if mode == "dubins":
        for _ in range(max_iter):
            hd = _node_headings(nodes, Q)
            DC = build_dc_matrix(env, nodes, "dubins", vehicle, V=V, node_headings=hd, radius=radius, clearance=clearance)
            ctg, Q_new, unreachable = solve_ctg(DC)
            converged = np.array_equal(Q_new, Q)
            Q = Q_new
            if converged:
                break
        hd = _node_headings(nodes, Q)
        n = len(nodes)
        headings = np.full((n, n), np.nan)
        for k in range(n):
            for i in range(n):
                if math.isfinite(DC[k, i]):
                    headings[k, i] = hd[i] if (i != 0 and hd[i] is not None) else _heading(nodes.positions[k], nodes.positions[i])
    elif mode != "point_mass":
        raise ValueError(f"mode must be one of {MODES}")
    return SubgoalGraph(nodes, DC, ctg, Q, mode, headings, unreachable)


def optimal_sequence(graph: SubgoalGraph, env: Environment, from_position, v_max: float = VehicleParams().v_max) -> list[int]:
    """Subgoal sequence from an arbitrary position to the goal."""
    p = np.asarray(from_position, dtype=float)
    best, first = np.inf, None
    for i, pos in enumerate(graph.nodes.positions):
        if not math.isfinite(graph.CTG[i]) or not line_of_sight(env, p, pos):
            continue
        cost = math.hypot(pos[0] - p[0], pos[1] - p[1]) / v_max + graph.CTG[i]
        if cost < best:
            best, first = cost, i
    if first is None:
        raise NoVisibleSubgoal("no reachable subgoal is visible from the position")
    seq = [first]
    children = graph.children
    while seq[-1] != 0:
        nxt = children[seq[-1]]
        if nxt is None or len(seq) > len(graph.nodes):
            raise RuntimeError("child map does not lead to the goal")
        seq.append(nxt)
    return seq


def route_margin(env: Environment, nodes: NodeSet, sequence, from_position=None) -> float:
    """Smallest distance from an off-route node to the route polyline.

    A route flown along ``sequence`` passes that close to a node it does not
    turn at; below the parsing radius such a pass shows up as a visit.
    """
    start = env.start[:2] if from_position is None else from_position
    pts = [np.asarray(start, dtype=float)] + [nodes.positions[i] for i in sequence]
    off = np.array([nodes.positions[i] for i in range(len(nodes)) if i not in set(sequence)])
    if len(off) == 0:
        return math.inf
    best = math.inf
    for a, b in zip(pts[:-1], pts[1:]):
        d = point_segment_distance(off[:, 0], off[:, 1], a[0], a[1], b[0], b[1])
        best = min(best, float(d.min()))
    return best
