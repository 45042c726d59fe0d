"""Synthetic driving scenarios: map templates, kinematic agent rollouts, JSONL dataset files.

Agents follow routes through the lane graph. Along a route the longitudinal
motion is an intelligent-driver-model rollout whose desired speed is capped
by the curvature ahead, so agents heading into a sharp branch brake before
they reach it. Followers never get closer than ``MIN_GAP`` to a leader on
the same route, and a vehicle bound for a shared downstream lane counts as a
leader before the paths meet. At junctions, vehicles on conflicting
connectors take turns: whoever is committed or nearer its stop line goes first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .encoders import AgentTrack
from .geometry import SE2
from .lanegraph import HIGHWAY_INTERVAL, URBAN_INTERVAL, Crosswalk, Lane, MapSource, map_from_records, map_to_records

SCHEMA_VERSION = 1
TEMPLATES = ("straight", "curve", "fork", "merge", "intersection", "crosswalk")
MIN_GAP = 2.0
LANE_WIDTH = 3.7
SIM_DT = 0.1

_BOX = {"vehicle": (4.6, 1.9), "pedestrian": (0.6, 0.6), "cyclist": (1.8, 0.7), "motorcycle": (2.2, 0.9)}


class ScenarioError(ValueError):
    """Infeasible generation request or unreadable scenario file."""


@dataclass(frozen=True)
class Domain:
    name: str
    interval: float          # lane-graph sampling (m)
    history_steps: int       # past steps at 10 Hz (excluding t=0)
    future_steps: int        # waypoints over 6 s
    future_stride: int       # 10 Hz steps between waypoints
    geometry_scale: float
    speed_range: tuple[float, float]

    @property
    def future_dt(self) -> float:
        return self.future_stride * SIM_DT


DOMAINS = {
    "urban": Domain("urban", URBAN_INTERVAL, 50, 60, 1, 1.0, (8.0, 14.0)),
    "highway": Domain("highway", HIGHWAY_INTERVAL, 5, 12, 5, 3.0, (22.0, 32.0)),
}


@dataclass(frozen=True)
class BehaviorMix:
    """Route and manoeuvre priors used by the generator."""

    fork_left: float = 0.7
    turn_left: float = 0.4
    turn_right: float = 0.35
    lane_change: float = 0.3
    occlusion: float = 0.1
    two_wheeler: float = 0.1

    def __post_init__(self):
        for name in ("fork_left", "turn_left", "turn_right", "lane_change", "occlusion", "two_wheeler"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.turn_left + self.turn_right > 1.0:
            raise ValueError("turn probabilities exceed 1")

    @classmethod
    def from_dict(cls, d: dict) -> "BehaviorMix":
        return cls(**d)


@dataclass
class Scenario:
    id: str
    domain: str
    template: str
    map: MapSource
    agents: list[AgentTrack]
    future_dt: float = 0.1

    def transformed(self, T: SE2) -> "Scenario":
        agents = [AgentTrack(a.id, a.agent_class, T.apply_points(a.positions), T.apply_vectors(a.headings),
                             T.apply_vectors(a.velocities), a.box, a.observed.copy(),
                             None if a.future is None else T.apply_points(a.future)) for a in self.agents]
        return Scenario(self.id, self.domain, self.template, self.map.transformed(T), agents, self.future_dt)

    def scaled(self, s: float) -> "Scenario":
        if s <= 0:
            raise ValueError("scale must be positive")
        agents = [AgentTrack(a.id, a.agent_class, a.positions * s, a.headings.copy(), a.velocities * s,
                             (a.box[0] * s, a.box[1] * s), a.observed.copy(),
                             None if a.future is None else a.future * s) for a in self.agents]
        return Scenario(self.id, self.domain, self.template, self.map.scaled(s), agents, self.future_dt)


# --------------------------------------------------------------------------
# paths

class Path2:
    """Dense polyline parameterised by arclength, extended straight at both ends."""

    EXTEND = 400.0

    def __init__(self, points, step: float = 0.5):
        pts = np.asarray(points, dtype=float)
        keep = np.r_[True, np.hypot(*np.diff(pts, axis=0).T) > 1e-9]
        pts = pts[keep]
        t0 = pts[1] - pts[0]
        t1 = pts[-1] - pts[-2]
        t0, t1 = t0 / np.hypot(*t0), t1 / np.hypot(*t1)
        pts = np.vstack([pts[0] - self.EXTEND * t0, pts, pts[-1] + self.EXTEND * t1])
        seg = np.hypot(*np.diff(pts, axis=0).T)
        s = np.r_[0.0, np.cumsum(seg)]
        n = int(np.ceil(s[-1] / step)) + 1
        self.s = np.linspace(0.0, s[-1], n)
        self.pts = np.c_[np.interp(self.s, s, pts[:, 0]), np.interp(self.s, s, pts[:, 1])]
        self.origin = self.EXTEND        # arclength of the first real point
        d = np.gradient(self.pts, self.s, axis=0)
        self.tangent = d / np.hypot(*d.T)[:, None]
        yaw = np.unwrap(np.arctan2(self.tangent[:, 1], self.tangent[:, 0]))
        self.kappa = np.gradient(yaw, self.s)

    @property
    def length(self) -> float:
        return float(self.s[-1])

    def at(self, s) -> tuple[np.ndarray, np.ndarray]:
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.s[-1])
        p = np.stack([np.interp(s, self.s, self.pts[:, 0]), np.interp(s, self.s, self.pts[:, 1])], -1)
        t = np.stack([np.interp(s, self.s, self.tangent[:, 0]), np.interp(s, self.s, self.tangent[:, 1])], -1)
        return p, t / np.linalg.norm(t, axis=-1, keepdims=True)

    def speed_cap(self, v_desired: float, a_lat: float = 2.0, b_comf: float = 1.5) -> np.ndarray:
        """Highest speed at each sample that still allows braking for every curve ahead."""
        vc = np.minimum(v_desired, np.sqrt(a_lat / np.maximum(np.abs(self.kappa), 1e-6)))
        # backward pass: v(s)^2 <= v(s')^2 + 2 b (s' - s)
        cap = vc.copy()
        for i in range(len(cap) - 2, -1, -1):
            ds = self.s[i + 1] - self.s[i]
            cap[i] = min(cap[i], np.sqrt(cap[i + 1] ** 2 + 2 * b_comf * ds))
        return cap


def _route_points(lanes: dict[str, Lane], route: list[str]) -> np.ndarray:
    parts = [lanes[route[0]].centerline]
    for lid in route[1:]:
        parts.append(lanes[lid].centerline[1:])
    return np.vstack(parts)


def _arc(center, radius, start, sweep, n=40) -> np.ndarray:
    t = np.linspace(start, start + sweep, n)
    return np.c_[center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)]


def _line(a, b, n=2) -> np.ndarray:
    return np.linspace(np.asarray(a, float), np.asarray(b, float), n)


def _bezier(p0, p1, p2, n=24) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


# --------------------------------------------------------------------------
# map templates; each returns (map, {entry lane: [(route, weight), ...]}, spare routes)
# Spare routes are only used once the main entries are full.

RouteTable = dict[str, list[tuple[list[str], float]]]


def _template_straight(rng, k, mix):
    L = 240.0 * k
    a = Lane("s0", _line((-L / 2, 0), (L / 2, 0), 9), left_neighbor="s1",
             left_boundary=("dashed", "white"), right_boundary=("solid", "white"))
    b = Lane("s1", _line((-L / 2, LANE_WIDTH), (L / 2, LANE_WIDTH), 9), right_neighbor="s0",
             left_boundary=("solid", "yellow"), right_boundary=("dashed", "white"))
    return MapSource([a, b]), {"s0": [(["s0"], 1.0)], "s1": [(["s1"], 1.0)]}, {}


def _template_curve(rng, k, mix):
    R = rng.uniform(40.0, 120.0) * k
    sweep = rng.uniform(0.6, 1.2) * rng.choice([-1.0, 1.0])
    lead = 60.0 * k
    if sweep > 0:
        arc = _arc((0.0, R), R, -np.pi / 2, sweep)
    else:
        arc = _arc((0.0, -R), R, np.pi / 2, sweep)
    tail_dir = arc[-1] - arc[-2]
    tail_dir /= np.hypot(*tail_dir)
    pts = np.vstack([_line((-lead, 0), (0, 0), 6)[:-1], arc, arc[-1] + 100.0 * k * tail_dir])
    return MapSource([Lane("c0", pts)]), {"c0": [(["c0"], 1.0)]}, {}


def _with_tail(arc: np.ndarray, length: float) -> np.ndarray:
    d = arc[-1] - arc[-2]
    return np.vstack([arc, arc[-1] + length * d / np.hypot(*d)])


def _template_fork(rng, k, mix):
    trunk_len = rng.uniform(70.0, 90.0) * k
    r_left = rng.uniform(35.0, 50.0) * k
    r_right = rng.uniform(150.0, 250.0) * k
    len_branch = rng.uniform(40.0, 50.0) * k
    tail = 70.0 * k
    trunk = Lane("trunk", _line((-trunk_len, 0), (0, 0), 8), successors=["left", "right"], speed_limit=30.0)
    left = Lane("left", _with_tail(_arc((0.0, r_left), r_left, -np.pi / 2, len_branch / r_left), tail),
                predecessors=["trunk"], speed_limit=30.0)
    right = Lane("right", _with_tail(_arc((0.0, -r_right), r_right, np.pi / 2, -len_branch / r_right), tail),
                 predecessors=["trunk"], speed_limit=30.0)
    routes = {"trunk": [(["trunk", "left"], mix.fork_left), (["trunk", "right"], 1.0 - mix.fork_left)]}
    spare = {"left": [(["left"], 1.0)], "right": [(["right"], 1.0)]}
    return MapSource([trunk, left, right]), routes, spare


def _template_merge(rng, k, mix):
    main_len = 110.0 * k
    r = rng.uniform(60.0, 90.0) * k
    sweep = 0.5
    arc = _arc((0.0, -r), r, np.pi / 2 + sweep, -sweep)   # ends at the origin heading +x
    lead = arc[0] - arc[1]
    ramp = np.vstack([arc[0] + 40.0 * k * lead / np.hypot(*lead), arc])
    main_in = Lane("main", _line((-main_len, 0), (0, 0), 8), successors=["out"])
    ramp_in = Lane("ramp", ramp, successors=["out"])
    out = Lane("out", _line((0, 0), (100.0 * k, 0), 8), predecessors=["main", "ramp"])
    routes = {"main": [(["main", "out"], 1.0)], "ramp": [(["ramp", "out"], 1.0)]}
    return MapSource([main_in, ramp_in, out]), routes, {"out": [(["out"], 1.0)]}


def _template_intersection(rng, k, mix):
    hw = 8.0 * k                        # stop line distance from the centre
    arm = rng.uniform(40.0, 50.0) * k
    off = LANE_WIDTH / 2
    lanes: list[Lane] = []
    ends, starts = {}, {}
    for a in range(4):
        th = a * np.pi / 2
        o = np.array([np.cos(th), np.sin(th)])
        u = -o
        n_in = np.array([u[1], -u[0]])
        p_in0, p_in1 = o * (hw + arm) + n_in * off, o * hw + n_in * off
        # exits run longer than approaches so a turning agent's future stays on the map
        p_out0, p_out1 = o * hw - n_in * off, o * (hw + arm + 30.0 * k) - n_in * off
        lanes.append(Lane(f"in{a}", _line(p_in0, p_in1, 8), successors=[]))
        lanes.append(Lane(f"out{a}", _line(p_out0, p_out1, 8), predecessors=[]))
        ends[a], starts[a] = (p_in1, u), (p_out0, o)
    by_id = {lane.id: lane for lane in lanes}
    routes: RouteTable = {}
    for a in range(4):
        options = []
        for turn, b, w in (("r", (a + 1) % 4, mix.turn_right), ("s", (a + 2) % 4, 1.0 - mix.turn_left - mix.turn_right),
                           ("l", (a + 3) % 4, mix.turn_left)):
            p0, d0 = ends[a]
            p2, d2 = starts[b]
            if turn == "s":
                pts = _line(p0, p2, 6)
            else:
                # control point where the two lane lines meet
                A = np.c_[d0, -d2]
                t = np.linalg.solve(A, p2 - p0)
                pts = _bezier(p0, p0 + t[0] * d0, p2)
            cid = f"x{a}{b}"
            lanes.append(Lane(cid, pts, in_intersection=True, predecessors=[f"in{a}"], successors=[f"out{b}"],
                              left_boundary=("none", "none"), right_boundary=("none", "none")))
            by_id[f"in{a}"].successors.append(cid)
            by_id[f"out{b}"].predecessors.append(cid)
            options.append(([f"in{a}", cid, f"out{b}"], w))
        routes[f"in{a}"] = options
    return MapSource(lanes), routes, {f"out{a}": [([f"out{a}"], 1.0)] for a in range(4)}


def _template_crosswalk(rng, k, mix):
    L = 110.0 * k
    east = Lane("east", _line((-L, -LANE_WIDTH / 2), (L, -LANE_WIDTH / 2), 9), left_boundary=("double", "yellow"))
    west = Lane("west", _line((L, LANE_WIDTH / 2), (-L, LANE_WIDTH / 2), 9), left_boundary=("double", "yellow"))
    x0 = rng.uniform(-10.0, 10.0)
    half = LANE_WIDTH + 1.5
    cw = Crosswalk("cw", [[x0 - 2.0, -half], [x0 + 2.0, -half], [x0 + 2.0, half], [x0 - 2.0, half]])
    routes = {"east": [(["east"], 1.0)], "west": [(["west"], 1.0)], "cw": [(["cw"], 1.0)]}
    return MapSource([east, west], [cw]), routes, {}


_TEMPLATE_FNS = {
    "straight": _template_straight,
    "curve": _template_curve,
    "fork": _template_fork,
    "merge": _template_merge,
    "intersection": _template_intersection,
    "crosswalk": _template_crosswalk,
}


def build_template(template: str, rng: np.random.Generator, domain: Domain = DOMAINS["urban"],
                   mix: BehaviorMix = BehaviorMix()) -> tuple[MapSource, RouteTable, RouteTable]:
    if template not in _TEMPLATE_FNS:
        raise ScenarioError(f"unknown template {template!r}; choose from {TEMPLATES}")
    m, routes, spare = _TEMPLATE_FNS[template](rng, domain.geometry_scale, mix)
    m.validate()
    return m, routes, spare


# --------------------------------------------------------------------------
# rollouts

@dataclass
class _Agent:
    cls: str
    path: Path2
    route: list[str]
    lane_spans: dict[str, tuple[float, float]]   # lane -> (start, end) arclength on the path
    s: float
    v: float
    v_des: float
    cap: np.ndarray
    lateral: tuple[float, float, np.ndarray] | None = None   # lane change: (start s, length, offset)
    idm: bool = True
    change: tuple[str, str] | None = None    # lane change: (from lane, to lane)
    gate: tuple[str, float, float] | None = None  # junction connector: (lane, start s, end s)
    trace_s: list[float] = field(default_factory=list)
    trace_v: list[float] = field(default_factory=list)


def _lane_spans(lanes: dict[str, Lane], route: list[str], origin: float) -> dict[str, tuple[float, float]]:
    spans = {}
    s = origin
    for lid in route:
        L = float(np.sum(np.hypot(*np.diff(lanes[lid].centerline, axis=0).T)))
        spans[lid] = (s, s + L)
        s += L
    return spans


def _project(follower: _Agent, other: _Agent) -> float | None:
    """Position of ``other`` on the follower's path, via the first lane both still share.

    A vehicle heading for the same downstream lane from another branch thus acts as a
    virtual leader before the two paths meet.
    """
    for lid, (a, b) in other.lane_spans.items():
        if b <= other.s or lid not in follower.lane_spans:
            continue
        if other.change is not None:
            start, length = other.lateral[0], other.lateral[1]
            if lid == other.change[1] and other.s < start:
                continue
            if lid == other.change[0] and other.s >= start + length:
                continue
        return follower.lane_spans[lid][0] + (other.s - a)
    return None


def _idm_accel(v, v0, gap, dv, a_max=1.5, b=2.0, T=1.2, s0=4.0):
    s_star = s0 + max(0.0, v * T + v * dv / (2 * np.sqrt(a_max * b)))
    free = 1.0 - (v / max(v0, 0.1)) ** 4
    inter = (s_star / max(gap, 0.1)) ** 2 if gap is not None else 0.0
    return a_max * (free - inter)


def _densify(points: np.ndarray, step: float = 0.5) -> np.ndarray:
    seg = np.hypot(*np.diff(points, axis=0).T)
    s = np.r_[0.0, np.cumsum(seg)]
    q = np.linspace(0.0, s[-1], max(2, int(np.ceil(s[-1] / step)) + 1))
    return np.c_[np.interp(q, s, points[:, 0]), np.interp(q, s, points[:, 1])]


def _connector_conflicts(lanes: dict[str, Lane], clearance: float = 2.5) -> set[frozenset]:
    """Pairs of junction connectors whose centrelines pass within ``clearance``."""
    ids = sorted(k for k, lane in lanes.items() if lane.in_intersection)
    dense = {k: _densify(lanes[k].centerline) for k in ids}
    out = set()
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            d = np.hypot(*(dense[a][:, None, :] - dense[b][None, :, :]).transpose(2, 0, 1))
            if d.min() < clearance:
                out.add(frozenset((a, b)))
    return out


_GATE_DECEL = 4.0       # braking a vehicle needs to stop at its line; below this it is committed
_GATE_HORIZON = 40.0    # vehicles farther than this from their line claim no priority


def _gate_state(a: _Agent, length: float) -> tuple[float, bool, bool]:
    """Distance from front bumper to the stop line, committed flag, cleared flag."""
    _, start, end = a.gate
    dist = start - (a.s + 0.5 * length)
    committed = dist <= a.v * a.v / (2 * _GATE_DECEL)
    cleared = a.s - 0.5 * length >= end
    return dist, committed, cleared


def _must_yield(i: int, agents: list[_Agent], lengths: list[float], conflicts: set[frozenset]) -> bool:
    a = agents[i]
    dist, committed, cleared = _gate_state(a, lengths[i])
    if committed or cleared:
        return False
    for j, b in enumerate(agents):
        if j == i or b.gate is None or frozenset((a.gate[0], b.gate[0])) not in conflicts:
            continue
        d_b, c_b, cl_b = _gate_state(b, lengths[j])
        if cl_b:
            continue
        if c_b or (d_b < _GATE_HORIZON and (d_b, j) < (dist, i)):
            return True
    return False


def _simulate(agents: list[_Agent], steps: int, lengths: list[float],
              conflicts: set[frozenset] = frozenset()) -> None:
    for a in agents:
        a.trace_s = [a.s]
        a.trace_v = [a.v]
    for _ in range(steps):
        new = []
        for i, a in enumerate(agents):
            if not a.idm:
                new.append((a.s + a.v * SIM_DT, a.v))
                continue
            cap = float(np.interp(a.s, a.path.s, a.cap))
            gap, dv, lead = None, 0.0, None
            for j, b in enumerate(agents):
                if j == i:
                    continue
                pos = _project(a, b)
                if pos is None or pos <= a.s:
                    continue
                g = pos - a.s - 0.5 * (lengths[i] + lengths[j])
                if gap is None or g < gap:
                    gap, dv, lead = g, a.v - b.v, (pos, 0.5 * (lengths[i] + lengths[j]) + MIN_GAP)
            if a.gate is not None and _must_yield(i, agents, lengths, conflicts):
                # a stopped virtual obstacle on the stop line
                g = a.gate[1] - a.s - 0.5 * lengths[i]
                if gap is None or g < gap:
                    gap, dv, lead = g, a.v, (a.gate[1], 0.5 * lengths[i])
            acc = max(_idm_accel(a.v, cap, gap, dv), -6.0)
            v = max(0.0, a.v + acc * SIM_DT)
            s = a.s + v * SIM_DT
            if lead is not None:
                # hard floor on the gap, using the leader's previous position
                limit = lead[0] - lead[1] - 0.05
                if s > limit:
                    s = max(a.s, limit)
                    v = (s - a.s) / SIM_DT
            new.append((s, v))
        for a, (s, v) in zip(agents, new):
            a.s, a.v = s, v
            a.trace_s.append(s)
            a.trace_v.append(v)


def _agent_states(a: _Agent) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s = np.asarray(a.trace_s)
    v = np.asarray(a.trace_v)
    p, t = a.path.at(s)
    dpds = t.copy()
    if a.lateral is not None:
        s0, length, offset = a.lateral
        u = np.clip((s - s0) / length, 0.0, 1.0)
        w = u * u * (3 - 2 * u)
        dw = np.where((u > 0) & (u < 1), 6 * u * (1 - u) / length, 0.0)
        p = p + w[:, None] * offset
        dpds = dpds + dw[:, None] * offset
    heading = dpds / np.linalg.norm(dpds, axis=1, keepdims=True)
    vel = v[:, None] * dpds
    return p, heading, vel


_PLACEMENT_RETRIES = 30


def generate(template: str, n_agents: int, behavior_mix: BehaviorMix | dict | None = None, seed: int = 0,
             domain: str = "urban", scenario_id: str | None = None) -> Scenario:
    """One scenario with ``n_agents`` agents; deterministic per seed."""
    if n_agents < 1:
        raise ValueError("n_agents must be >= 1")
    if domain not in DOMAINS:
        raise ScenarioError(f"unknown domain {domain!r}")
    mix = behavior_mix if isinstance(behavior_mix, BehaviorMix) else BehaviorMix.from_dict(behavior_mix or {})
    dom = DOMAINS[domain]
    rng = np.random.default_rng(seed)
    m, routes, spare = build_template(template, rng, dom, mix)
    lanes = m.lane_by_id()
    entries = sorted(routes)
    routes = {**spare, **routes}
    total = dom.history_steps + dom.future_steps * dom.future_stride
    t_hist = dom.history_steps * SIM_DT

    conflicts = _connector_conflicts(lanes)
    lane_len = {k: float(np.sum(np.hypot(*np.diff(lane.centerline, axis=0).T))) for k, lane in lanes.items()}
    reach = {e: min(sum(lane_len[lid] for lid in r) for r, _ in opts) for e, opts in routes.items() if e != "cw"}
    travel = dom.speed_range[1] * dom.future_steps * dom.future_dt + 5.0
    for _retry in range(_PLACEMENT_RETRIES):
        # resample when the gap check pushed someone back off the start of the map
        agents: list[_Agent] = []
        lengths: list[float] = []
        classes: list[str] = []
        placed: dict[str, list[float]] = {e: [] for e in routes}
        for i in range(n_agents):
            for attempt in range(400):
                pool = entries if attempt < 200 or not spare else sorted(spare)
                entry = pool[rng.integers(len(pool))]
                if entry == "cw":
                    break
                span = lane_len[entry]
                # leave enough road ahead for the whole future at top speed
                hi = min(0.9, (reach[entry] - travel) / span)
                if hi <= 0.1:
                    continue
                frac = rng.uniform(0.1, hi)
                if all(abs(frac * span - q) >= 14.0 for q in placed[entry]):
                    break
            else:
                raise ScenarioError(f"cannot place {n_agents} agents on template {template!r}")
            if entry == "cw":
                cw = m.crosswalks[0].polygon
                x0 = cw[:, 0].mean()
                d = 1.0 if rng.random() < 0.5 else -1.0
                path = Path2([[x0 + rng.uniform(-1, 1), -d * 12.0], [x0 + rng.uniform(-1, 1), d * 12.0]])
                speed = rng.uniform(1.1, 1.6)
                s_now = path.origin + rng.uniform(0.0, 6.0)
                agents.append(_Agent("pedestrian", path, [], {}, s_now - speed * t_hist, speed, speed,
                                     np.full(len(path.s), speed), idm=False))
                classes.append("pedestrian")
                lengths.append(_BOX["pedestrian"][0])
                continue
            placed[entry].append(frac * span)
            opts = routes[entry]
            w = np.array([o[1] for o in opts])
            route = opts[int(rng.choice(len(opts), p=w / w.sum()))][0]
            path = Path2(_route_points(lanes, route))
            spans = _lane_spans(lanes, route, path.origin)
            cls = "vehicle"
            if template in ("straight", "curve") and rng.random() < mix.two_wheeler:
                cls = ["cyclist", "motorcycle"][int(rng.integers(2))]
            lo, hi = dom.speed_range
            if cls == "cyclist":
                lo, hi = 4.0, 7.0
            v_des = float(rng.uniform(lo, hi))
            cap = path.speed_cap(v_des)
            s_now = spans[entry][0] + frac * span
            # start the history roughly one history window earlier at the capped speed
            v0 = float(min(v_des, np.interp(s_now, path.s, cap)))
            s_start = s_now - v0 * t_hist
            lateral = change = None
            if template == "straight" and rng.random() < mix.lane_change:
                other = "s1" if entry == "s0" else "s0"
                offset = lanes[other].centerline[0] - lanes[entry].centerline[0]
                lateral = (s_now + rng.uniform(0.0, 20.0), rng.uniform(30.0, 50.0), offset)
                spans = {**spans, other: spans[entry]}
                change = (entry, other)
            gate = next(((lid, *spans[lid]) for lid in route if lanes[lid].in_intersection), None)
            agents.append(_Agent(cls, path, route, spans, s_start, v0, v_des, cap, lateral, change=change,
                                 gate=gate))
            classes.append(cls)
            lengths.append(_BOX[cls][0])

        _check_initial_gaps(agents, lengths)
        _simulate(agents, total, lengths, conflicts)
        if all(a.trace_s[dom.history_steps] >= a.lane_spans[a.route[0]][0] for a in agents if a.idm):
            break

    tracks = []
    cur = dom.history_steps
    for i, a in enumerate(agents):
        p, h, v = _agent_states(a)
        observed = np.ones(cur + 1, dtype=bool)
        if rng.random() < mix.occlusion:
            observed[: int(rng.integers(1, max(2, cur // 2 + 1)))] = False
        future = p[cur + dom.future_stride::dom.future_stride][: dom.future_steps]
        tracks.append(AgentTrack(f"a{i}", classes[i], p[: cur + 1], h[: cur + 1], v[: cur + 1],
                                 _BOX[classes[i]], observed, future))
    sid = scenario_id if scenario_id is not None else f"{template}-{seed}"
    return Scenario(sid, domain, template, m, tracks, dom.future_dt)


def _check_initial_gaps(agents: list[_Agent], lengths: list[float]) -> None:
    """Push followers back so every starting bumper gap is at least a safe distance."""
    changed = True
    while changed:
        changed = False
        for i, a in enumerate(agents):
            if not a.idm:
                continue
            for j, b in enumerate(agents):
                if i == j:
                    continue
                pos = _project(a, b)
                if pos is None or pos < a.s:
                    continue
                need = pos - 0.5 * (lengths[i] + lengths[j]) - (MIN_GAP + 4.0 + a.v)
                if a.s > need:
                    a.s = need
                    changed = True


def min_following_gap(scenario: Scenario, domain: Domain | None = None) -> float:
    """Smallest bumper gap between vehicles sharing a lane centreline point, over the future.

    Approximates "same lane" by heading agreement and lateral offset below half a lane.
    """
    best = np.inf
    ag = [a for a in scenario.agents if a.agent_class != "pedestrian" and a.future is not None]
    for i, a in enumerate(ag):
        for b in ag[i + 1:]:
            for t in range(1, len(a.future)):
                da = a.future[t] - a.future[t - 1]
                if np.hypot(*da) < 1e-6:
                    continue
                h = da / np.hypot(*da)
                db = b.future[t] - b.future[t - 1]
                if h @ db < np.cos(np.radians(30.0)) * np.hypot(*db):
                    continue
                rel = b.future[t] - a.future[t]
                lat = abs(h[0] * rel[1] - h[1] * rel[0])
                if lat < LANE_WIDTH / 2:
                    gap = abs(h @ rel) - 0.5 * (a.box[0] + b.box[0])
                    best = min(best, gap)
    return float(best)


# --------------------------------------------------------------------------
# datasets

def scenario_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_dataset(count: int, templates: Iterable[str], n_agents: int | tuple[int, int] = 3, seed: int = 0,
                     domain: str = "urban", behavior_mix: BehaviorMix | dict | None = None) -> Iterator[Scenario]:
    """Stream ``count`` scenarios cycling through ``templates``."""
    templates = list(templates)
    if not templates:
        raise ValueError("need at least one template")
    for i in range(count):
        s = scenario_seed(seed, i)
        rng = np.random.default_rng(s)
        n = n_agents if isinstance(n_agents, int) else int(rng.integers(n_agents[0], n_agents[1] + 1))
        yield generate(templates[i % len(templates)], n, behavior_mix, s, domain, scenario_id=f"{seed}-{i:05d}")


def _arr(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def scenario_to_record(sc: Scenario) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "id": sc.id,
        "domain": sc.domain,
        "template": sc.template,
        "future_dt": sc.future_dt,
        "map": map_to_records(sc.map),
        "agents": [{
            "id": a.id, "class": a.agent_class, "box": list(map(float, a.box)),
            "positions": _arr(a.positions), "headings": _arr(a.headings), "velocities": _arr(a.velocities),
            "observed": a.observed.astype(int).tolist(),
            "future": None if a.future is None else _arr(a.future),
        } for a in sc.agents],
    }


def scenario_from_record(rec: dict) -> Scenario:
    if rec.get("schema") != SCHEMA_VERSION:
        raise ScenarioError(f"schema version {rec.get('schema')!r} != {SCHEMA_VERSION}")
    agents = [AgentTrack(a["id"], a["class"], a["positions"], a["headings"], a["velocities"], tuple(a["box"]),
                         np.asarray(a["observed"], dtype=bool), a["future"]) for a in rec["agents"]]
    return Scenario(rec["id"], rec["domain"], rec["template"], map_from_records(rec["map"]), agents,
                    float(rec["future_dt"]))


def write_scenarios(path, scenarios: Iterable[Scenario]) -> int:
    """Stream scenarios to a JSONL file (one scenario per line); returns the count."""
    n = 0
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for sc in scenarios:
            f.write(json.dumps(scenario_to_record(sc), separators=(",", ":")) + "\n")
            n += 1
    return n


def iter_scenarios(path) -> Iterator[Scenario]:
    """Lazily read a scenario file; errors name the offending line."""
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield scenario_from_record(rec)
            except ScenarioError as e:
                raise ScenarioError(f"{path}:{lineno}: {e}") from None
            except (ValueError, KeyError, TypeError) as e:
                raise ScenarioError(f"{path}:{lineno}: malformed scenario record ({e})") from None


def read_scenarios(path) -> list[Scenario]:
    return list(iter_scenarios(path))
