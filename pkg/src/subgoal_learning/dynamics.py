"""Vehicle model of the guidance experiments and the Dubins reference vehicle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .env import wrap_angle

TWO_PI = 2.0 * math.pi


class ControlBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    v_max: float = 5.20
    omega_max: float = 0.65
    k_acc: float = 7.50
    k_drag: float = 0.88
    u_lon_min: float = 0.0
    u_lon_max: float = 0.62
    u_lat_min: float = -0.75
    u_lat_max: float = 0.75
    dt: float = 0.02
    v_floor: float = 0.1

    def __post_init__(self):
        for name in ("v_max", "omega_max", "k_acc", "k_drag", "u_lon_max", "u_lat_max", "dt", "v_floor"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.u_lon_min < 0 or self.u_lon_min > self.u_lon_max or self.u_lat_min > self.u_lat_max:
            raise ValueError("inconsistent control bounds")

    @property
    def time_constant(self) -> float:
        return 1.0 / self.k_drag

    def steady_speed(self, u_lon: float) -> float:
        return self.k_acc * u_lon / self.k_drag


@dataclass(frozen=True, slots=True)
class VehicleState:
    x: float
    y: float
    psi: float
    v: float

    @property
    def pose(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.psi)


@dataclass(frozen=True, slots=True)
class ControlInput:
    u_lon: float
    u_lat: float


def check_control(u: ControlInput, params: VehicleParams) -> None:
    tol = 1e-12
    if not (params.u_lon_min - tol <= u.u_lon <= params.u_lon_max + tol):
        raise ControlBoundsError(f"u_lon={u.u_lon} outside [{params.u_lon_min}, {params.u_lon_max}]")
    if not (params.u_lat_min - tol <= u.u_lat <= params.u_lat_max + tol):
        raise ControlBoundsError(f"u_lat={u.u_lat} outside [{params.u_lat_min}, {params.u_lat_max}]")


def speed_turnrate_limit(v: float, params: VehicleParams = VehicleParams()) -> float:
    """Largest achievable turn rate at speed ``v`` (rad/s)."""
    return min(params.u_lat_max / max(v, params.v_floor), params.omega_max)


def turn_rate(v: float, u_lat: float, params: VehicleParams) -> float:
    return math.copysign(min(abs(u_lat) / max(v, params.v_floor), params.omega_max), u_lat) if u_lat else 0.0


def step(state: VehicleState, u: ControlInput, params: VehicleParams = VehicleParams()) -> VehicleState:
    """One explicit Euler step of length ``params.dt``."""
    check_control(u, params)
    dt = params.dt
    v = state.v
    x = state.x + v * math.cos(state.psi) * dt
    y = state.y + v * math.sin(state.psi) * dt
    psi = wrap_angle(state.psi + turn_rate(v, u.u_lat, params) * dt)
    v_new = v + (params.k_acc * u.u_lon - params.k_drag * v) * dt
    v_new = min(max(v_new, 0.0), params.v_max)
    return VehicleState(x, y, psi, v_new)


def speed_closed_form(t, v0: float, u_lon: float, params: VehicleParams = VehicleParams()):
    """Unclamped solution of the speed lag ODE under constant ``u_lon``."""
    v_ss = params.steady_speed(u_lon)
    return v_ss + (v0 - v_ss) * np.exp(-params.k_drag * np.asarray(t, dtype=float))


# -- Dubins shortest paths ---------------------------------------------------------


def _mod2pi(a: float) -> float:
    return a - TWO_PI * math.floor(a / TWO_PI)


def _lsl(a, b, d):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = 2 + d * d - 2 * math.cos(a - b) + 2 * d * (sa - sb)
    if p2 < 0:
        return None
    tmp = math.atan2(cb - ca, d + sa - sb)
    return _mod2pi(-a + tmp), math.sqrt(p2), _mod2pi(b - tmp)


def _rsr(a, b, d):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = 2 + d * d - 2 * math.cos(a - b) + 2 * d * (sb - sa)
    if p2 < 0:
        return None
    tmp = math.atan2(ca - cb, d - sa + sb)
    return _mod2pi(a - tmp), math.sqrt(p2), _mod2pi(-b + tmp)


def _lsr(a, b, d):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = -2 + d * d + 2 * math.cos(a - b) + 2 * d * (sa + sb)
    if p2 < 0:
        return None
    p = math.sqrt(p2)
    tmp = math.atan2(-ca - cb, d + sa + sb) - math.atan2(-2.0, p)
    return _mod2pi(-a + tmp), p, _mod2pi(-_mod2pi(b) + tmp)


def _rsl(a, b, d):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    p2 = d * d - 2 + 2 * math.cos(a - b) - 2 * d * (sa + sb)
    if p2 < 0:
        return None
    p = math.sqrt(p2)
    tmp = math.atan2(ca + cb, d - sa - sb) - math.atan2(2.0, p)
    return _mod2pi(a - tmp), p, _mod2pi(b - tmp)


def _rlr(a, b, d):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    tmp = (6.0 - d * d + 2 * math.cos(a - b) + 2 * d * (sa - sb)) / 8.0
    if abs(tmp) > 1:
        return None
    p = _mod2pi(TWO_PI - math.acos(tmp))
    t = _mod2pi(a - math.atan2(ca - cb, d - sa + sb) + p / 2.0)
    return t, p, _mod2pi(a - b - t + p)


def _lrl(a, b, d):
    sa, sb, ca, cb = math.sin(a), math.sin(b), math.cos(a), math.cos(b)
    tmp = (6.0 - d * d + 2 * math.cos(a - b) + 2 * d * (sb - sa)) / 8.0
    if abs(tmp) > 1:
        return None
    p = _mod2pi(TWO_PI - math.acos(tmp))
    t = _mod2pi(-a - math.atan2(ca - cb, d + sa - sb) + p / 2.0)
    return t, p, _mod2pi(_mod2pi(b) - a - t + p)


_WORDS = {
    "LSL": _lsl,
    "RSR": _rsr,
    "LSR": _lsr,
    "RSL": _rsl,
    "RLR": _rlr,
    "LRL": _lrl,
}


def _advance(pose, kind: str, length: float, radius: float):
    """Move along one Dubins segment of arc length ``length`` (m)."""
    x, y, psi = pose
    if kind == "S":
        return x + length * math.cos(psi), y + length * math.sin(psi), psi
    sgn = 1.0 if kind == "L" else -1.0
    dpsi = sgn * length / radius
    nx = x + sgn * radius * (math.sin(psi + dpsi) - math.sin(psi))
    ny = y - sgn * radius * (math.cos(psi + dpsi) - math.cos(psi))
    return nx, ny, psi + dpsi


@dataclass(frozen=True)
class DubinsPath:
    start: tuple[float, float, float]
    word: str
    segment_lengths: tuple[float, float, float]  # metres
    radius: float

    @property
    def length(self) -> float:
        return float(sum(self.segment_lengths))

    def endpoint(self):
        pose = self.start
        for kind, seg in zip(self.word, self.segment_lengths):
            pose = _advance(pose, kind, seg, self.radius)
        return pose

    def sample(self, ds: float = 0.05) -> np.ndarray:
        """Poses (x, y, psi) along the path spaced at most ``ds`` apart."""
        pts = [self.start]
        pose = self.start
        for kind, seg in zip(self.word, self.segment_lengths):
            if seg <= 0:
                continue
            n = max(1, math.ceil(seg / ds))
            for j in range(1, n + 1):
                pts.append(_advance(pose, kind, seg * j / n, self.radius))
            pose = pts[-1]
        return np.array(pts)


def dubins_candidates(a, b, radius: float) -> list[DubinsPath]:
    """All valid Dubins words between poses ``a`` and ``b`` (each verified to reach ``b``)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    dx, dy = b[0] - a[0], b[1] - a[1]
    d = math.hypot(dx, dy) / radius
    theta = _mod2pi(math.atan2(dy, dx)) if d > 0 else 0.0
    alpha = _mod2pi(a[2] - theta)
    beta = _mod2pi(b[2] - theta)
    out = []
    for word, fn in _WORDS.items():
        sol = fn(alpha, beta, d)
        if sol is None:
            continue
        lengths = tuple(float(s * radius) for s in sol)
        path = DubinsPath((float(a[0]), float(a[1]), float(a[2])), word, lengths, radius)
        ex, ey, epsi = path.endpoint()
        tol = 1e-6 * max(1.0, radius, math.hypot(dx, dy))
        if math.hypot(ex - b[0], ey - b[1]) <= tol and abs(wrap_angle(epsi - b[2])) <= 1e-6:
            out.append(path)
    return out


def dubins_shortest_path(a, b, radius: float, ds: float = 0.05):
    """Shortest Dubins path between two poses.

    Returns ``(length, samples)`` where ``samples`` is an (n, 3) array of
    poses spaced at most ``ds`` apart along the path.
    """
    best = min(dubins_candidates(a, b, radius), key=lambda p: (p.length, p.word))
    return best.length, best.sample(ds)


def dubins_path(a, b, radius: float) -> DubinsPath:
    return min(dubins_candidates(a, b, radius), key=lambda p: (p.length, p.word))
