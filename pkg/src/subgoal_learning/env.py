"""Polygonal worlds: corners, line of sight and visibility queries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EPS = 1e-9


class InvalidEnvironment(ValueError):
    """Raised when an environment violates its geometric invariants."""


def wrap_angle(a):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    if np.ndim(a) == 0 and -math.pi < a <= math.pi:
        return float(a)
    w = np.mod(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    w = np.where(w <= -math.pi, w + 2.0 * math.pi, w)
    if np.ndim(w) == 0:
        return float(w)
    return w


def signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def _segments_intersect(p1, p2, p3, p4) -> bool:
    """Closed-segment intersection test (touching counts)."""
    d1 = _cross(p4[0] - p3[0], p4[1] - p3[1], p1[0] - p3[0], p1[1] - p3[1])
    d2 = _cross(p4[0] - p3[0], p4[1] - p3[1], p2[0] - p3[0], p2[1] - p3[1])
    d3 = _cross(p2[0] - p1[0], p2[1] - p1[1], p3[0] - p1[0], p3[1] - p1[1])
    d4 = _cross(p2[0] - p1[0], p2[1] - p1[1], p4[0] - p1[0], p4[1] - p1[1])
    if ((d1 > EPS and d2 < -EPS) or (d1 < -EPS and d2 > EPS)) and (
        (d3 > EPS and d4 < -EPS) or (d3 < -EPS and d4 > EPS)
    ):
        return True

    def on_seg(a, b, c, d):
        return abs(d) <= EPS and min(a[0], b[0]) - EPS <= c[0] <= max(a[0], b[0]) + EPS and (
            min(a[1], b[1]) - EPS <= c[1] <= max(a[1], b[1]) + EPS
        )

    return (
        on_seg(p3, p4, p1, d1)
        or on_seg(p3, p4, p2, d2)
        or on_seg(p1, p2, p3, d3)
        or on_seg(p1, p2, p4, d4)
    )


def is_simple_polygon(poly: np.ndarray) -> bool:
    n = len(poly)
    if n < 3 or abs(signed_area(poly)) <= EPS:
        return False
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a, b, poly[j], poly[(j + 1) % n]):
                return False
    return True


def boundary_distance(poly: np.ndarray, pt) -> float:
    """Euclidean distance from a point to the polygon boundary."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ap = np.asarray(pt, dtype=float) - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / denom, 0.0, 1.0)
    d = ap - ab * t[:, None]
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", d, d))))


def _crossing_inside(poly: np.ndarray, x: float, y: float) -> bool:
    xs, ys = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xs, 1), np.roll(ys, 1)
    cond = (ys > y) != (yj > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = (xj - xs) * (y - ys) / (yj - ys) + xs
    return bool(np.count_nonzero(cond & (x < xint)) % 2)


def strictly_inside(poly: np.ndarray, pt) -> bool:
    """True if ``pt`` lies in the open interior, farther than EPS from the boundary."""
    x, y = float(pt[0]), float(pt[1])
    if x < poly[:, 0].min() or x > poly[:, 0].max() or y < poly[:, 1].min() or y > poly[:, 1].max():
        return False
    if not _crossing_inside(poly, x, y):
        return False
    return boundary_distance(poly, pt) > EPS


@dataclass
class Environment:
    obstacles: list[np.ndarray]
    bounds: tuple[float, float, float, float]
    start: tuple[float, float, float]
    goal_position: tuple[float, float]
    _bbox: list[tuple[float, float, float, float]] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        polys = []
        for raw in self.obstacles:
            poly = np.asarray(raw, dtype=float).reshape(-1, 2)
            if len(poly) >= 2 and np.allclose(poly[0], poly[-1]):
                poly = poly[:-1]
            if signed_area(poly) < 0:
                poly = poly[::-1].copy()
            polys.append(poly)
        self.obstacles = polys
        self.bounds = tuple(float(b) for b in self.bounds)
        self.start = tuple(float(s) for s in self.start)
        self.goal_position = tuple(float(g) for g in self.goal_position)
        self._bbox = [
            (p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max()) for p in self.obstacles
        ]
        self.validate()

    def validate(self) -> None:
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise InvalidEnvironment("workspace bounds are empty")
        for pid, poly in enumerate(self.obstacles):
            if len(poly) < 3:
                raise InvalidEnvironment(f"obstacle {pid} has fewer than 3 vertices")
            if not is_simple_polygon(poly):
                raise InvalidEnvironment(f"obstacle {pid} is not a simple polygon")
            if (
                poly[:, 0].min() < xmin - EPS
                or poly[:, 0].max() > xmax + EPS
                or poly[:, 1].min() < ymin - EPS
                or poly[:, 1].max() > ymax + EPS
            ):
                raise InvalidEnvironment(f"obstacle {pid} leaves the workspace bounds")
        if self.in_obstacle(self.goal_position):
            raise InvalidEnvironment("goal lies inside an obstacle")
        if self.in_obstacle(self.start[:2]):
            raise InvalidEnvironment("start lies inside an obstacle")

    def in_obstacle(self, pt) -> bool:
        x, y = float(pt[0]), float(pt[1])
        for poly, (bx0, by0, bx1, by1) in zip(self.obstacles, self._bbox):
            if bx0 <= x <= bx1 and by0 <= y <= by1 and strictly_inside(poly, (x, y)):
                return True
        return False

    def in_bounds(self, pt) -> bool:
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= pt[0] <= xmax and ymin <= pt[1] <= ymax

    # -- serialization -------------------------------------------------------------

    def to_dict(self) -> dict:
        xmin, ymin, xmax, ymax = self.bounds
        return {
            "bounds": {"xmin": xmin, "ymin": ymin, "xmax": xmax, "ymax": ymax},
            "start": {"x": self.start[0], "y": self.start[1], "psi": self.start[2]},
            "goal": {"x": self.goal_position[0], "y": self.goal_position[1]},
            "obstacles": [[[float(x), float(y)] for x, y in poly] for poly in self.obstacles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        try:
            b = d["bounds"]
            if isinstance(b, dict):
                bounds = (b["xmin"], b["ymin"], b["xmax"], b["ymax"])
            else:
                bounds = tuple(b)
            s = d["start"]
            g = d["goal"]
            obstacles = [np.asarray(p, dtype=float) for p in d.get("obstacles", [])]
            return cls(
                obstacles=obstacles,
                bounds=bounds,
                start=(s["x"], s["y"], s.get("psi", 0.0)),
                goal_position=(g["x"], g["y"]),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise InvalidEnvironment(f"malformed environment document: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Environment":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def transformed(self, rotation: float = 0.0, translation=(0.0, 0.0), mirror: bool = False) -> "Environment":
        """Copy of the world under ``T(p) = R(rotation) @ M @ p + translation``.

        ``M`` mirrors the y axis when ``mirror`` is set.
        """
        c, s = math.cos(rotation), math.sin(rotation)
        R = np.array([[c, -s], [s, c]])
        M = np.diag([1.0, -1.0]) if mirror else np.eye(2)
        A = R @ M
        t = np.asarray(translation, dtype=float)

        def tp(p):
            return A @ np.asarray(p, dtype=float) + t

        def th(psi):
            return (-psi if mirror else psi) + rotation

        corners = np.array(
            [[self.bounds[0], self.bounds[1]], [self.bounds[2], self.bounds[1]],
             [self.bounds[2], self.bounds[3]], [self.bounds[0], self.bounds[3]]]
        )
        tc = corners @ A.T + t
        sx, sy = tp(self.start[:2])
        return Environment(
            obstacles=[p @ A.T + t for p in self.obstacles],
            bounds=(tc[:, 0].min(), tc[:, 1].min(), tc[:, 0].max(), tc[:, 1].max()),
            start=(sx, sy, float(wrap_angle(th(self.start[2])))),
            goal_position=tuple(tp(self.goal_position)),
        )


def random_world(
    rng: np.random.Generator,
    cols: int = 3,
    rows: int = 3,
    cell: float = 20.0,
    size: tuple[float, float] = (3.0, 6.0),
    fill: float = 0.7,
) -> Environment:
    """Rotated rectangles on a jittered grid, start on the left, goal on the right.

    Each occupied cell holds one rectangle that stays inside the cell's
    central area, so neighbouring obstacles keep a gap of at least
    ``cell - size[1] * sqrt(2)``.
    """
    margin = cell
    width = cols * cell + 2 * margin
    height = rows * cell
    obstacles = []
    for cx in range(cols):
        for cy in range(rows):
            if rng.random() >= fill:
                continue
            w, h = rng.uniform(*size, 2)
            half = 0.5 * math.hypot(w, h)
            slack = max(0.5 * cell - half - 0.5 * (cell - size[1] * math.sqrt(2)) / 2, 0.0)
            ox = margin + (cx + 0.5) * cell + rng.uniform(-slack, slack)
            oy = (cy + 0.5) * cell + rng.uniform(-slack, slack)
            a = rng.uniform(0.0, math.pi)
            c, s = math.cos(a), math.sin(a)
            local = np.array([[-w, -h], [w, -h], [w, h], [-w, h]]) * 0.5
            obstacles.append(local @ np.array([[c, s], [-s, c]]) + (ox, oy))
    start = (0.25 * margin, rng.uniform(0.2, 0.8) * height, 0.0)
    goal = (width - 0.25 * margin, rng.uniform(0.2, 0.8) * height)
    return Environment(obstacles, (0.0, 0.0, width, height), start, goal)


@dataclass(frozen=True)
class CornerMeta:
    polygon: int
    vertex: int
    wall_directions: tuple[float, float]  # rad, along the two incident edges, pointing away

    @property
    def free_bisector(self) -> float:
        """Heading of the angle bisector that points into free space."""
        a, b = self.wall_directions
        vx = math.cos(a) + math.cos(b)
        vy = math.sin(a) + math.sin(b)
        return math.atan2(-vy, -vx)


@dataclass
class NodeSet:
    positions: np.ndarray  # (N+1, 2), row 0 is the goal
    corner_meta: list[CornerMeta]  # entry k-1 describes node k

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_subgoals(self) -> int:
        return len(self.positions) - 1

    def meta(self, k: int) -> CornerMeta:
        if k == 0:
            raise IndexError("node 0 is the goal and has no corner metadata")
        return self.corner_meta[k - 1]


def extract_nodes(env: Environment) -> NodeSet:
    """Goal at index 0, then every convex obstacle corner in free space.

    Ordering is by polygon id, then vertex id. Reflex corners and corners
    buried inside another obstacle are dropped.
    """
    if env.in_obstacle(env.goal_position):
        raise InvalidEnvironment("goal lies inside an obstacle")
    positions = [np.asarray(env.goal_position, dtype=float)]
    meta: list[CornerMeta] = []
    for pid, poly in enumerate(env.obstacles):
        n = len(poly)
        for vid in range(n):
            prev, cur, nxt = poly[vid - 1], poly[vid], poly[(vid + 1) % n]
            turn = _cross(cur[0] - prev[0], cur[1] - prev[1], nxt[0] - cur[0], nxt[1] - cur[1])
            if turn <= EPS:
                continue
            if any(
                strictly_inside(other, cur) for oid, other in enumerate(env.obstacles) if oid != pid
            ):
                continue
            d_prev = math.atan2(prev[1] - cur[1], prev[0] - cur[0])
            d_next = math.atan2(nxt[1] - cur[1], nxt[0] - cur[0])
            positions.append(cur.copy())
            meta.append(CornerMeta(pid, vid, (d_prev, d_next)))
    return NodeSet(np.array(positions).reshape(-1, 2), meta)


def _segment_blocked_by(poly: np.ndarray, p: np.ndarray, q: np.ndarray) -> bool:
    d = q - p
    a = poly
    e = np.roll(poly, -1, axis=0) - a
    ap = a - p
    denom = d[0] * e[:, 1] - d[1] * e[:, 0]
    num_t = ap[:, 0] * e[:, 1] - ap[:, 1] * e[:, 0]
    num_u = ap[:, 0] * d[1] - ap[:, 1] * d[0]
    dd = float(d @ d)
    ts = [0.0, 1.0]
    scale = max(math.sqrt(dd), 1.0)
    par = np.abs(denom) <= EPS * scale * np.maximum(np.linalg.norm(e, axis=1), 1.0)
    nz = ~par
    if np.any(nz):
        t = num_t[nz] / denom[nz]
        u = num_u[nz] / denom[nz]
        ok = (u >= -EPS) & (u <= 1.0 + EPS) & (t >= 0.0) & (t <= 1.0)
        ts.extend(t[ok].tolist())
    if np.any(par) and dd > 0:
        col = par & (np.abs(num_u) <= EPS * scale)
        for idx in np.nonzero(col)[0]:
            for v in (a[idx], a[idx] + e[idx]):
                tv = float((v - p) @ d) / dd
                if 0.0 < tv < 1.0:
                    ts.append(tv)
    ts = sorted(ts)
    for t0, t1 in zip(ts[:-1], ts[1:]):
        if t1 - t0 <= 1e-12:
            continue
        m = p + 0.5 * (t0 + t1) * d
        if strictly_inside(poly, m):
            return True
    return False


def line_of_sight(env: Environment, p, q) -> bool:
    """True iff the open segment pq never enters the interior of an obstacle.

    Grazing a vertex or running along an edge does not block.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    lox, hix = min(p[0], q[0]), max(p[0], q[0])
    loy, hiy = min(p[1], q[1]), max(p[1], q[1])
    for poly, (bx0, by0, bx1, by1) in zip(env.obstacles, env._bbox):
        if hix < bx0 or lox > bx1 or hiy < by0 or loy > by1:
            continue
        if _segment_blocked_by(poly, p, q):
            return False
    return True


def visibility_graph(env: Environment, nodes: NodeSet) -> np.ndarray:
    n = len(nodes)
    V = np.zeros((n, n), dtype=bool)
    for k in range(n):
        for i in range(k + 1, n):
            V[k, i] = V[i, k] = line_of_sight(env, nodes.positions[k], nodes.positions[i])
    return V


def in_fov(pose, target, fov: float) -> bool:
    if fov >= 2.0 * math.pi - 1e-12:
        return True
    bearing = math.atan2(target[1] - pose[1], target[0] - pose[0])
    return abs(wrap_angle(bearing - pose[2])) <= 0.5 * fov + 1e-12


def visible_nodes(env: Environment, pose, nodes: NodeSet, fov: float) -> set[int]:
    """Nodes within +-fov/2 of the heading and in line of sight of the pose.

    A node coinciding with the pose position is not reported.
    """
    if not (0.0 < fov <= 2.0 * math.pi + 1e-12):
        raise ValueError("fov must lie in (0, 2*pi]")
    out = set()
    p = np.asarray(pose[:2], dtype=float)
    for i, pos in enumerate(nodes.positions):
        if math.hypot(pos[0] - p[0], pos[1] - p[1]) <= EPS:
            continue
        if in_fov(pose, pos, fov) and line_of_sight(env, p, pos):
            out.add(i)
    return out


def point_segment_distance(px, py, ax, ay, bx, by):
    abx, aby = bx - ax, by - ay
    denom = abx * abx + aby * aby
    t = np.clip(((px - ax) * abx + (py - ay) * aby) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    return np.hypot(px - ax - t * abx, py - ay - t * aby)


def segment_clearance(env: Environment, p, q, cap: float = math.inf) -> float:
    """Smallest distance between segment pq and any obstacle (0 if it enters one).

    Obstacles farther than ``cap`` (by bounding box) are skipped, so the
    result is exact only below ``cap``.
    """
    if not line_of_sight(env, p, q):
        return 0.0
    px, py = float(p[0]), float(p[1])
    qx, qy = float(q[0]), float(q[1])
    lox, hix = min(px, qx) - cap, max(px, qx) + cap
    loy, hiy = min(py, qy) - cap, max(py, qy) + cap
    best = math.inf
    for poly, (bx0, by0, bx1, by1) in zip(env.obstacles, env._bbox):
        if hix < bx0 or lox > bx1 or hiy < by0 or loy > by1:
            continue
        a = poly
        b = np.roll(poly, -1, axis=0)
        d = np.minimum.reduce(
            [
                point_segment_distance(px, py, a[:, 0], a[:, 1], b[:, 0], b[:, 1]),
                point_segment_distance(qx, qy, a[:, 0], a[:, 1], b[:, 0], b[:, 1]),
                point_segment_distance(a[:, 0], a[:, 1], px, py, qx, qy),
                point_segment_distance(b[:, 0], b[:, 1], px, py, qx, qy),
            ]
        )
        best = min(best, float(d.min()))
    return best
