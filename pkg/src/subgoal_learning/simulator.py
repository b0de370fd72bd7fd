"""Closed-loop trials of a learning agent flying the experiment vehicle.

The agent perceives subgoals in its field of view, picks the next one with
the decision model (plus an exploration rule), steers to it, and folds each
finished run into its knowledge base.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .analysis import ParsedRun, parse_run
from .decision import DecisionParams, DecisionRecord, classify_case, predict_next_node
from .dynamics import ControlInput, VehicleParams, VehicleState, step
from .env import (
    Environment,
    NodeSet,
    extract_nodes,
    line_of_sight,
    segment_clearance,
    visibility_graph,
    visible_nodes,
    wrap_angle,
)
from .knowledge import KnowledgeBase, connected_nodes, exploration_metric
from .runlog import RunLog


@dataclass(frozen=True)
class SteeringGains:
    k_psi: float = 2.0  # heading gain, 1/s per rad
    k_v: float = 3.0  # speed-tracking gain, 1/s
    max_overshoot: float = 1.5  # m, tolerated outward swing in a corner turn
    tight_overshoot: float = 0.3  # m, same when the corner lies on the outside of the turn
    brake_margin: float = 0.9


@dataclass
class AgentConfig:
    decision: DecisionParams = field(default_factory=DecisionParams)
    p_explore: float | None = None  # fixed probability; None uses the schedule
    p_explore_initial: float = 0.5
    p_explore_decay: float = 0.85
    explore_cases: str = "BC"
    arrival_radius: float = 1.2
    goal_radius: float = 1.5
    corner_clearance: float = 1.0  # m, aim point offset along the free bisector
    path_margin: float = 0.3  # m, required gap between a direct leg and the obstacles
    max_duration: float = 120.0
    fov: float = math.radians(60.0)
    r_thresh: float = 1.5
    seed: int = 0
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    gains: SteeringGains = field(default_factory=SteeringGains)

    def __post_init__(self):
        if self.arrival_radius <= 0 or self.goal_radius <= 0:
            raise ValueError("radii must be positive")
        for p in (self.p_explore, self.p_explore_initial):
            if p is not None and not 0.0 <= p <= 1.0:
                raise ValueError("exploration probability must lie in [0, 1]")
        if not 0.0 < self.p_explore_decay <= 1.0:
            raise ValueError("p_explore_decay must lie in (0, 1]")
        if self.max_duration < 0:
            raise ValueError("max_duration must be non-negative")

    def explore_probability(self, run: int) -> float:
        """Exploration probability for 1-based run number ``run``."""
        if self.p_explore is not None:
            return self.p_explore
        return self.p_explore_initial * self.p_explore_decay ** (run - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fov_deg"] = math.degrees(d.pop("fov"))
        return d


# -- low-level guidance -------------------------------------------------------------


def corner_speed(turn: float, params: VehicleParams, max_overshoot: float) -> float:
    """Speed that turns through ``turn`` rad with at most ``max_overshoot`` swing."""
    turn = abs(turn)
    if turn < 1e-6:
        return params.v_max
    radius = max_overshoot / (1.0 - math.cos(min(turn, math.pi / 2)))
    v = min(math.sqrt(params.u_lat_max * radius), params.omega_max * radius)
    return min(max(v, params.v_floor), params.v_max)


def steer_to_subgoal(
    state: VehicleState,
    target,
    next_target=None,
    params: VehicleParams = VehicleParams(),
    gains: SteeringGains = SteeringGains(),
    corner=None,
    prev_corner=None,
) -> ControlInput:
    """Proportional heading control with anticipatory braking before turns."""
    dx, dy = target[0] - state.x, target[1] - state.y
    dist = math.hypot(dx, dy)
    bearing = math.atan2(dy, dx)
    err = wrap_angle(bearing - state.psi)
    u_lat = min(max(gains.k_psi * err * state.v, params.u_lat_min), params.u_lat_max)

    v_des = params.v_max
    if next_target is not None:
        turn = wrap_angle(math.atan2(next_target[1] - target[1], next_target[0] - target[0]) - bearing)
        overshoot = gains.max_overshoot
        if corner is not None:
            side = (dx * (corner[1] - target[1]) - dy * (corner[0] - target[0])) * turn
            if side < 0:
                overshoot = gains.tight_overshoot
        v_c = corner_speed(turn, params, overshoot)
        v_des = min(v_des, v_c + gains.brake_margin * params.k_drag * dist)
    if prev_corner is not None and abs(err) > 1e-3:
        # still turning away from the corner just left
        c, sn = math.cos(state.psi), math.sin(state.psi)
        side = (c * (prev_corner[1] - state.y) - sn * (prev_corner[0] - state.x)) * err
        overshoot = gains.tight_overshoot if side < 0 else gains.max_overshoot
        v_des = min(v_des, corner_speed(err, params, overshoot))
    if abs(err) > 1e-3:
        # circle tangent to the heading through the target
        r_fit = dist / (2.0 * abs(math.sin(err))) if abs(err) < math.pi / 2 else dist / 2.0
        v_fit = 0.9 * min(math.sqrt(params.u_lat_max * r_fit), params.omega_max * r_fit)
        v_des = min(v_des, max(v_fit, 2.0 * params.v_floor))
    if v_des >= params.v_max - 1e-9:
        u_lon = params.u_lon_max
    else:
        u_lon = (params.k_drag * v_des + gains.k_v * (v_des - state.v)) / params.k_acc
        u_lon = min(max(u_lon, params.u_lon_min), params.u_lon_max)
    return ControlInput(u_lon, u_lat)


# -- agent --------------------------------------------------------------------------


def aim_point(nodes: NodeSet, k: int, clearance: float) -> tuple[float, float]:
    """Point the vehicle steers at for node k: the corner pushed out along its free bisector."""
    x, y = nodes.positions[k]
    if k == 0 or clearance <= 0:
        return float(x), float(y)
    phi = nodes.meta(k).free_bisector
    return float(x + clearance * math.cos(phi)), float(y + clearance * math.sin(phi))


def _heuristic_pick(candidates, pose, nodes: NodeSet, v_max: float) -> int:
    goal = nodes.positions[0]

    def h(i):
        p = nodes.positions[i]
        return (math.hypot(p[0] - pose[0], p[1] - pose[1]) + math.hypot(goal[0] - p[0], goal[1] - p[1])) / v_max

    return min(sorted(candidates), key=lambda i: (h(i), i))


def select_subgoal(
    kb: KnowledgeBase,
    current: int | None,
    pose,
    vis,
    cfg: AgentConfig,
    nodes: NodeSet,
    reachable,
    rng: np.random.Generator,
    p_explore: float,
    exclude=(),
) -> tuple[int, str | None, int | None]:
    """Next subgoal from node ``current`` (or from a free pose when None).

    ``reachable`` is the set of nodes the agent could fly to directly. Returns
    ``(node, case, model prediction)``; case is None away from a node.
    """
    exclude = set(exclude) - {0}
    if current is not None:
        exclude.add(current)
    reach = set(reachable) - exclude
    vis_c = (set(vis) & reach) or set()
    v_max = cfg.vehicle.v_max
    f = cfg.decision.f

    if current is None:
        known = {i for i in reach if i == 0 or kb.ctg_lists[i]}
        if not known:
            return _heuristic_pick(vis_c or reach, pose, nodes, v_max), None, None
        unknown_vis = vis_c - known
        if unknown_vis and rng.random() < p_explore:
            return _heuristic_pick(unknown_vis, pose, nodes, v_max), None, None

        def value(i):
            p = nodes.positions[i]
            est = 0.0 if i == 0 else f(kb.ctg_lists[i])
            return math.hypot(p[0] - pose[0], p[1] - pose[1]) / v_max + est

        return min(sorted(known), key=lambda i: (value(i), i)), None, None

    case = classify_case(kb, current)
    if case == "A":
        pool = vis_c
        if not pool:
            known = {i for i in reach if i == 0 or kb.ctg_lists[i]}
            if known:
                p = np.asarray(pose[:2])
                return min(sorted(known), key=lambda i: (np.hypot(*(nodes.positions[i] - p)), i)), case, None
            pool = reach
        if not pool:
            return 0, case, None
        return _heuristic_pick(pool, pose, nodes, v_max), case, None

    cn = connected_nodes(kb, current)
    predicted = predict_next_node(kb, current, cfg.decision) if case == "C" else None
    if case in cfg.explore_cases:
        fresh = vis_c - cn
        if fresh and rng.random() < p_explore:
            return _heuristic_pick(fresh, pose, nodes, v_max), case, predicted
    choice = next(iter(cn)) if case == "B" else predicted
    if choice in exclude:
        pool = (vis_c - cn) or (reach - cn) or reach
        if pool:
            return _heuristic_pick(pool, pose, nodes, v_max), case, predicted
    return choice, case, predicted


def decision_vis(env: Environment, pose, aim, goal, nodes: NodeSet, fov: float) -> set[int]:
    """Nodes seen while rounding a corner: from the current pose, and from the
    aim point with the gaze swept from the current heading toward the goal."""
    vis = visible_nodes(env, pose, nodes, fov)
    psi = pose[2]
    turn = wrap_angle(math.atan2(goal[1] - aim[1], goal[0] - aim[0]) - psi)
    for frac in (0.0, 0.5, 1.0):
        vis |= visible_nodes(env, (aim[0], aim[1], psi + frac * turn), nodes, fov)
    return vis


@dataclass
class World:
    """Environment plus the derived node set and visibility graph."""

    env: Environment
    nodes: NodeSet
    V: np.ndarray

    @classmethod
    def build(cls, env: Environment) -> "World":
        nodes = extract_nodes(env)
        return cls(env, nodes, visibility_graph(env, nodes))


def run_trial(
    world: World,
    kb: KnowledgeBase,
    cfg: AgentConfig,
    rng: np.random.Generator | None = None,
    run_id: int = 0,
    p_explore: float | None = None,
) -> RunLog:
    """Fly one trial from the start pose until goal, collision or timeout.

    Never raises for flight outcomes; the decisions taken at nodes are
    attached to the returned log.
    """
    env, nodes, V = world.env, world.nodes, world.V
    params = cfg.vehicle
    dt = params.dt
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if p_explore is None:
        p_explore = cfg.explore_probability(run_id + 1)
    goal = nodes.positions[0]
    aims = [aim_point(nodes, k, cfg.corner_clearance) for k in range(len(nodes))]
    n_steps_max = int(math.floor(cfg.max_duration / dt + 1e-9))

    state = VehicleState(env.start[0], env.start[1], wrap_angle(env.start[2]), 0.0)
    rows = []
    decisions: list[DecisionRecord] = []
    visited: set[int] = set()

    # a direct leg must keep path_margin from the obstacles, or as much as its aim point allows
    margins = [min(cfg.path_margin, 0.9 * segment_clearance(env, a, a)) for a in aims]

    def clear_leg(p, i):
        return segment_clearance(env, p, aims[i], cap=margins[i]) >= margins[i]

    here = (state.x, state.y)
    start_reach = {
        i for i in range(len(nodes)) if line_of_sight(env, here, nodes.positions[i]) and clear_leg(here, i)
    }
    vis = visible_nodes(env, state.pose, nodes, cfg.fov)
    active, _, _ = select_subgoal(kb, None, state.pose, vis, cfg, nodes, start_reach, rng, p_explore)
    pending: int | None = None
    prev: int | None = None
    closest_aim = math.inf

    outcome = "timeout"
    flight_time = None
    n = 0
    while True:
        t = n * dt
        if math.hypot(state.x - goal[0], state.y - goal[1]) < cfg.goal_radius:
            outcome, flight_time = "goal_reached", t
            rows.append((t, state.x, state.y, state.psi, state.v, 0.0, 0.0, active))
            break
        if env.in_obstacle((state.x, state.y)) or not env.in_bounds((state.x, state.y)):
            outcome = "collision"
            rows.append((t, state.x, state.y, state.psi, state.v, 0.0, 0.0, active))
            break
        if n >= n_steps_max:
            rows.append((t, state.x, state.y, state.psi, state.v, 0.0, 0.0, active))
            break

        if active != 0 and pending is None:
            node_pos = nodes.positions[active]
            if math.hypot(state.x - node_pos[0], state.y - node_pos[1]) <= cfg.arrival_radius:
                visited.add(active)
                vis = decision_vis(env, state.pose, aims[active], goal, nodes, cfg.fov)
                reach = {int(i) for i in np.flatnonzero(V[active])}
                pending, case, predicted = select_subgoal(
                    kb, active, state.pose, vis, cfg, nodes, reach, rng, p_explore, exclude=visited
                )
                decisions.append(DecisionRecord(run_id, active, case, pending, predicted, sorted(vis)))
                closest_aim = math.inf
        if pending is not None:
            ax, ay = aims[active]
            d_aim = math.hypot(state.x - ax, state.y - ay)
            closest_aim = min(closest_aim, d_aim)
            if clear_leg((state.x, state.y), pending) or d_aim > closest_aim + 0.2:
                prev, active, pending = active, pending, None

        target = aims[active]
        nxt = None
        if active != 0:
            nxt = aims[pending] if pending is not None else None
            if nxt is None:
                # anticipate the turn toward the goal side of the corner
                nxt = tuple(nodes.positions[0])
        corner = nodes.positions[active] if active != 0 else None
        prev_corner = None
        if prev is not None:
            prev_corner = nodes.positions[prev]
            if math.hypot(state.x - prev_corner[0], state.y - prev_corner[1]) > 3.0:
                prev, prev_corner = None, None
        u = steer_to_subgoal(state, target, nxt, params, cfg.gains, corner, prev_corner)
        rows.append((t, state.x, state.y, state.psi, state.v, u.u_lon, u.u_lat, active))
        state = step(state, u, params)
        n += 1

    log = RunLog.from_rows(rows, outcome=outcome, flight_time=flight_time, run_id=run_id)
    log.decisions = decisions
    return log


@dataclass
class ExperimentResult:
    logs: list[RunLog]
    parsed: list[ParsedRun]
    kb_history: list[KnowledgeBase]  # kb_history[r] is the knowledge before run r
    flight_times: list[float | None]
    exploration: list[float]  # EM after each run
    decisions: list[DecisionRecord]

    @property
    def final_kb(self) -> KnowledgeBase:
        return self.kb_history[-1]

    def summary(self) -> dict:
        return {
            "n_runs": len(self.logs),
            "outcomes": [log.outcome for log in self.logs],
            "flight_times": self.flight_times,
            "exploration_metric": self.exploration,
            "sequences": [p.nodes for p in self.parsed],
            "decisions": [d.to_dict() for d in self.decisions],
        }


def run_experiment(
    env: Environment | World,
    n_runs: int,
    cfg: AgentConfig,
    kb: KnowledgeBase | None = None,
) -> ExperimentResult:
    """Sequential trials sharing one evolving knowledge base."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    world = env if isinstance(env, World) else World.build(env)
    rng = np.random.default_rng(cfg.seed)
    kb = KnowledgeBase(len(world.nodes)) if kb is None else kb.copy()
    history = [kb.copy()]
    logs, parsed, times, em, decisions = [], [], [], [], []
    for r in range(n_runs):
        log = run_trial(world, kb, cfg, rng, run_id=r, p_explore=cfg.explore_probability(r + 1))
        pr = parse_run(log, world.nodes, cfg.r_thresh)
        kb.update(pr, allow_partial=not pr.completed)
        logs.append(log)
        parsed.append(pr)
        times.append(log.flight_time)
        em.append(exploration_metric(kb))
        decisions.extend(log.decisions)
        history.append(kb.copy())
    return ExperimentResult(logs, parsed, history, times, em, decisions)
