"""From run logs to subgoal sequences, corner-frame segments, guidance
primitive clusters and behaviour metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleParams
from .env import Environment, NodeSet, visible_nodes
from .runlog import RunLog

TAU = 1.13  # s, command-to-speed time constant
DEFAULT_T = 2.0 * TAU
DEFAULT_R_THRESH = 1.5
DEFAULT_MERGE_WINDOW = 0.5
WEIGHTS = ("verbatim", "corner")


class GridMismatch(ValueError):
    pass


@dataclass
class ParsedRun:
    sequence: list[tuple[int, float, float]]  # (node, time of closest approach, min distance)
    run_id: int = 0

    @property
    def nodes(self) -> list[int]:
        return [k for k, _, _ in self.sequence]

    @property
    def completed(self) -> bool:
        return bool(self.sequence) and self.sequence[-1][0] == 0

    @property
    def t_0(self) -> float | None:
        return self.sequence[-1][1] if self.completed else None

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "completed": self.completed,
            "t_0": self.t_0,
            "sequence": [{"node": k, "t": t, "d_min": d} for k, t, d in self.sequence],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParsedRun":
        return cls([(int(e["node"]), float(e["t"]), float(e["d_min"])) for e in d["sequence"]], int(d.get("run_id", 0)))


def _passes(t: np.ndarray, d: np.ndarray, r_thresh: float, window: float):
    """(index of minimum, ...) for each excursion of ``d`` below ``r_thresh``.

    Excursions separated by less than ``window`` seconds are merged.
    """
    below = d < r_thresh
    if not below.any():
        return []
    idx = np.flatnonzero(below)
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.r_[idx[0], idx[breaks + 1]]
    ends = np.r_[idx[breaks], idx[-1]]
    groups = [[int(starts[0]), int(ends[0])]]
    for s, e in zip(starts[1:], ends[1:]):
        if t[s] - t[groups[-1][1]] < window:
            groups[-1][1] = int(e)
        else:
            groups.append([int(s), int(e)])
    return [s + int(np.argmin(d[s : e + 1])) for s, e in groups]


def parse_run(
    log: RunLog,
    nodes: NodeSet,
    r_thresh: float = DEFAULT_R_THRESH,
    window: float = DEFAULT_MERGE_WINDOW,
) -> ParsedRun:
    """Subgoal sequence of a run: one entry per close pass of a node.

    A pass is an excursion of the node distance below ``r_thresh`` and is
    stamped with its closest-approach time. The sequence stops at the first
    goal pass.
    """
    if len(log) == 0:
        raise ValueError("empty run log")
    P = log.positions
    events = []
    for k, pos in enumerate(nodes.positions):
        d = np.hypot(P[:, 0] - pos[0], P[:, 1] - pos[1])
        for j in _passes(log.t, d, r_thresh, window):
            events.append((float(log.t[j]), k, float(d[j])))
    events.sort()
    seq = []
    for t, k, d in events:
        seq.append((k, t, d))
        if k == 0:
            break
    return ParsedRun(seq, log.run_id)


def vis_window(
    log: RunLog,
    nodes: NodeSet,
    env: Environment,
    t_star: float,
    t_w: float = 1.0,
    fov: float = math.radians(60.0),
) -> set[int]:
    """Nodes visible at any sample within ``t_w/2`` of ``t_star``."""
    t = log.t
    sel = np.flatnonzero(np.abs(t - t_star) <= 0.5 * t_w + 1e-9)
    nearest = int(np.argmin(np.abs(t - t_star)))
    out: set[int] = set()
    for j in sorted(set(sel.tolist()) | {nearest}):
        out |= visible_nodes(env, (log.x[j], log.y[j], log.psi[j]), nodes, fov)
    return out


# -- corner frame --------------------------------------------------------------


@dataclass
class CornerSegment:
    corner: int
    t_c: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    omega: np.ndarray
    reflected: bool = False
    run_id: int = 0

    @property
    def T(self) -> float:
        return float(self.t_c[-1])

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])


def closest_approach(log: RunLog, position) -> tuple[int, float]:
    d = np.hypot(log.x - position[0], log.y - position[1])
    j = int(np.argmin(d))
    return j, float(d[j])


def corner_frame_transform(
    log: RunLog,
    nodes: NodeSet,
    k: int,
    T: float = DEFAULT_T,
    t_star: float | None = None,
    r_thresh: float = DEFAULT_R_THRESH,
) -> CornerSegment | None:
    """Express the part of ``log`` around corner ``k`` in that corner's frame.

    The frame origin is the corner, +x is the wall bisector pointing into
    free space and the time origin is the closest approach. The segment is
    mirrored about x when it starts at negative y. Returns None when the log
    does not cover ``[t* - T, t* + T]``.
    """
    pos = nodes.positions[k]
    if t_star is None:
        j, dmin = closest_approach(log, pos)
        if dmin >= r_thresh:
            raise ValueError(f"run never comes within {r_thresh} m of corner {k}")
        t_star = float(log.t[j])
    if t_star - T < log.t[0] - 1e-9 or t_star + T > log.t[-1] + 1e-9:
        return None
    dt = log.dt
    L = int(round(2.0 * T / dt)) + 1
    t_c = np.linspace(-T, T, L)
    tt = np.clip(t_star + t_c, log.t[0], log.t[-1])
    x = np.interp(tt, log.t, log.x) - pos[0]
    y = np.interp(tt, log.t, log.y) - pos[1]
    v = np.interp(tt, log.t, log.v)
    omega = np.interp(tt, log.t, log.turn_rate())
    phi = nodes.meta(k).free_bisector
    c, s = math.cos(phi), math.sin(phi)
    xc = c * x + s * y
    yc = -s * x + c * y
    reflected = bool(yc[0] < 0)
    if reflected:
        yc = -yc
        omega = -omega
    return CornerSegment(k, t_c, xc, yc, v, omega, reflected, log.run_id)


def extract_segments(logs, nodes: NodeSet, T: float = DEFAULT_T, r_thresh: float = DEFAULT_R_THRESH) -> list[CornerSegment]:
    """Corner-frame segments for every corner pass in ``logs`` that spans +-T."""
    out = []
    for log in logs:
        for k, t, _ in parse_run(log, nodes, r_thresh).sequence:
            if k == 0:
                continue
            seg = corner_frame_transform(log, nodes, k, T, t_star=t, r_thresh=r_thresh)
            if seg is not None:
                out.append(seg)
    return out


# -- distances and clustering ----------------------------------------------------


def time_weights(t_c: np.ndarray, T: float | None = None, weight: str = "verbatim") -> np.ndarray:
    """Per-sample weights: ``1 - |t_c - T| / 2T`` (verbatim) or ``1 - |t_c| / T`` (corner)."""
    if T is None:
        T = float(t_c[-1])
    if weight == "verbatim":
        return 1.0 - np.abs(t_c - T) / (2.0 * T)
    if weight == "corner":
        return 1.0 - np.abs(t_c) / T
    raise ValueError(f"weight must be one of {WEIGHTS}")


def segment_distance(si: CornerSegment, sj: CornerSegment, weight: str = "verbatim") -> float:
    if len(si.t_c) != len(sj.t_c) or not np.allclose(si.t_c, sj.t_c, atol=1e-9):
        raise GridMismatch("segments are sampled on different time grids")
    w = time_weights(si.t_c, weight=weight)
    return float(np.sum(w * np.hypot(si.x - sj.x, si.y - sj.y)))


def distance_matrix(segments, weight: str = "verbatim") -> np.ndarray:
    n = len(segments)
    if n == 0:
        return np.zeros((0, 0))
    t_c = segments[0].t_c
    for s in segments:
        if len(s.t_c) != len(t_c) or not np.allclose(s.t_c, t_c, atol=1e-9):
            raise GridMismatch("segments are sampled on different time grids")
    w = time_weights(t_c, weight=weight)
    X = np.stack([s.x for s in segments])
    Y = np.stack([s.y for s in segments])
    D = np.zeros((n, n))
    for i in range(n):
        D[i] = np.sum(w * np.hypot(X - X[i], Y - Y[i]), axis=1)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def average_linkage(D: np.ndarray, n_clusters: int):
    """Bottom-up clustering merging the pair with the least mean pairwise distance.

    Returns ``(clusters, merges)``: member index lists, and the merge history
    as ``(a, b, height)`` where a and b are the earliest member ids of the
    merged clusters. Ties go to the lexicographically smallest (a, b).
    """
    D = np.asarray(D, dtype=float)
    n = D.shape[0]
    if not 1 <= n_clusters <= max(n, 1):
        raise ValueError("n_clusters must lie in [1, number of items]")
    members = {i: [i] for i in range(n)}
    S = D.copy()
    size = np.ones(n)
    active = np.ones(n, dtype=bool)
    merges = []
    iu = np.triu(np.ones((n, n), dtype=bool), k=1)
    while len(members) > n_clusters:
        with np.errstate(invalid="ignore"):
            link = S / np.outer(size, size)
        mask = iu & active[:, None] & active[None, :]
        link = np.where(mask, link, np.inf)
        flat = int(np.argmin(link))
        a, b = divmod(flat, n)
        merges.append((a, b, float(link[a, b])))
        S[a, :] += S[b, :]
        S[:, a] += S[:, b]
        size[a] += size[b]
        active[b] = False
        members[a] = sorted(members[a] + members.pop(b))
    return [members[k] for k in sorted(members)], merges


@dataclass
class PrimitiveCluster:
    members: list[int]  # indices into the clustered segment list
    segments: list[CornerSegment] = field(repr=False)
    frequency: float = 0.0

    @property
    def t_c(self) -> np.ndarray:
        return self.segments[0].t_c

    def mean_trajectory(self) -> dict[str, np.ndarray]:
        return {
            "t_c": self.t_c,
            "x": np.mean([s.x for s in self.segments], axis=0),
            "y": np.mean([s.y for s in self.segments], axis=0),
            "v": np.mean([s.v for s in self.segments], axis=0),
            "omega": np.mean([s.omega for s in self.segments], axis=0),
        }


def cluster_segments(segments, n_clusters: int = 5, weight: str = "verbatim") -> list[PrimitiveCluster]:
    """Average-linkage clusters ordered by descending frequency (ties: earliest member)."""
    segments = list(segments)
    groups, _ = average_linkage(distance_matrix(segments, weight), n_clusters)
    total = len(segments)
    groups.sort(key=lambda g: (-len(g), g[0]))
    return [PrimitiveCluster(g, [segments[i] for i in g], len(g) / total) for g in groups]


def cluster_linkage_distance(ci: PrimitiveCluster, cj: PrimitiveCluster, weight: str = "verbatim") -> float:
    """Mean pairwise segment distance between two clusters."""
    tot = 0.0
    for si in ci.segments:
        for sj in cj.segments:
            tot += segment_distance(si, sj, weight)
    return tot / (len(ci.segments) * len(cj.segments))


def match_clusters(reference, other, weight: str = "verbatim") -> dict[int, int | None]:
    """Greedy one-to-one matching of ``other`` clusters onto ``reference`` clusters.

    Returns ``{other index: reference index}``; leftovers map to None.
    """
    D = np.array([[cluster_linkage_distance(r, o, weight) for o in other] for r in reference]).reshape(
        len(reference), len(other)
    )
    out: dict[int, int | None] = {j: None for j in range(len(other))}
    D = D.copy()
    for _ in range(min(len(reference), len(other))):
        r, o = divmod(int(np.argmin(D)), D.shape[1])
        out[o] = r
        D[r, :] = np.inf
        D[:, o] = np.inf
    return out


def cluster_stats(cluster: PrimitiveCluster, T: float | None = None, weight: str = "verbatim"):
    """``(V, U_v, frequency)``: weighted time averages of the members' mean
    speed and (population) speed standard deviation."""
    t_c = cluster.t_c
    vs = np.stack([s.v for s in cluster.segments])
    v_m = vs.mean(axis=0)
    sigma = vs.std(axis=0) if len(vs) > 1 else np.zeros_like(v_m)
    w = time_weights(t_c, T, weight)
    norm = np.trapezoid(w, t_c)
    return float(np.trapezoid(w * v_m, t_c) / norm), float(np.trapezoid(w * sigma, t_c) / norm), cluster.frequency


def library_stats(clusters, T: float | None = None, weight: str = "verbatim") -> tuple[float, float]:
    """Frequency-weighted V and U_v over a whole clustering."""
    V = U = 0.0
    for c in clusters:
        v, u, f = cluster_stats(c, T, weight)
        V += f * v
        U += f * u
    return V, U


# -- behaviour metrics -------------------------------------------------------------


@dataclass
class BehaviorMetrics:
    high_speed_frequency: float | None
    mean_r_min: float | None
    proximity_frequency: float | None
    n_corner_passes: int

    def to_dict(self) -> dict:
        return {
            "high_speed_frequency": self.high_speed_frequency,
            "mean_r_min": self.mean_r_min,
            "proximity_frequency": self.proximity_frequency,
            "n_corner_passes": self.n_corner_passes,
        }


def proximity_frequency(points, nodes: NodeSet, radius: float = 1.0) -> float | None:
    """Fraction of 2-D points (positions or gaze points) within ``radius`` of a corner."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    corners = nodes.positions[1:]
    if len(pts) == 0:
        return None
    if len(corners) == 0:
        return 0.0
    d = np.hypot(pts[:, None, 0] - corners[None, :, 0], pts[:, None, 1] - corners[None, :, 1])
    return float(np.mean(d.min(axis=1) <= radius))


def behavior_metrics(
    logs,
    nodes: NodeSet,
    v_max: float = VehicleParams().v_max,
    T: float = DEFAULT_T,
    r_thresh: float = DEFAULT_R_THRESH,
    high_speed_ratio: float = 0.9,
    radius: float = 1.0,
    points=None,
) -> BehaviorMetrics:
    """High-speed frequency near corners, mean closest corner distance and
    proximity frequency of ``points`` (defaults to the logged positions)."""
    speeds = []
    r_mins = []
    for log in logs:
        near = np.zeros(len(log), dtype=bool)
        for k, t, d in parse_run(log, nodes, r_thresh).sequence:
            if k == 0:
                continue
            near |= np.abs(log.t - t) <= T + 1e-9
            r_mins.append(d)
        speeds.append(log.v[near])
    speeds = np.concatenate(speeds) if speeds else np.zeros(0)
    hs = float(np.mean(speeds >= high_speed_ratio * v_max)) if len(speeds) else None
    if points is None:
        points = np.concatenate([log.positions for log in logs]) if logs else np.zeros((0, 2))
    return BehaviorMetrics(hs, float(np.mean(r_mins)) if r_mins else None, proximity_frequency(points, nodes, radius), len(r_mins))
