"""Goal decoding: goal-graph assembly, goal heads, greedy sampling, trajectory completion."""

from __future__ import annotations

import json
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np

from . import diffmath as dm
from .geometry import goal_geom_arrays, local_to_world, rel_geom_width, world_to_local
from .hmp import EdgeSet, HeteroGraph, HMPLayer, hmp_stack
from .lanegraph import EDGE_TYPES

GOAL_EDGE_CLASSES = {**{et: ("map", "map") for et in EDGE_TYPES},
                     "a2m": ("agent", "map"), "m2a": ("map", "agent")}


@dataclass(frozen=True)
class SamplerConfig:
    k: int = 6
    gamma: float = 2.0
    nu: float = 4.0
    tau: float = 10.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (self.nu > self.gamma > 0):
            raise ValueError("need nu > gamma > 0")
        if self.tau <= 1:
            raise ValueError("tau must exceed 1")


def greedy_sample(probs, points, cfg: SamplerConfig = SamplerConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Pick ``cfg.k`` diverse goal nodes.

    Each round takes the argmax of the surviving scores (lowest index on
    ties), deactivates every node closer than ``gamma`` to the pick and divides
    the scores of nodes closer than ``nu`` by ``tau``. If the active set runs
    out, the last pick is repeated. Returns picked indices and mode
    probabilities: the original mass of each pick, renormalised over the
    picks, with a repeated pick's mass split evenly between its copies.
    """
    p = np.asarray(probs, dtype=float).reshape(-1)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if p.size == 0:
        raise ValueError("empty score vector")
    if len(pts) != p.size:
        raise ValueError("one point per score required")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("scores must be finite and non-negative")
    scores = p.copy()
    active = np.ones(p.size, dtype=bool)
    picks: list[int] = []
    while len(picks) < cfg.k and active.any():
        i = int(np.argmax(np.where(active, scores, -np.inf)))
        picks.append(i)
        d = np.hypot(*(pts - pts[i]).T)
        active &= d >= cfg.gamma
        scores = np.where(d < cfg.nu, scores / cfg.tau, scores)
    n_unique = len(picks)
    picks += [picks[-1]] * (cfg.k - n_unique)
    idx = np.asarray(picks, dtype=np.int64)
    mass = p[idx].copy()
    dup = cfg.k - n_unique + 1
    mass[n_unique - 1:] /= dup
    total = mass.sum()
    mode_p = mass / total if total > 0 else np.full(cfg.k, 1.0 / cfg.k)
    return idx, mode_p


def node_goal_to_world(centroids, frame_headings, offsets) -> np.ndarray:
    """World goal = node centroid + node-frame offset rotated into the world."""
    return local_to_world(centroids, frame_headings, offsets)


def world_goal_to_node(centroids, frame_headings, goals) -> np.ndarray:
    return world_to_local(centroids, frame_headings, goals)


# --------------------------------------------------------------------------
# goal graph

@dataclass
class GoalGraphIndex:
    """Index layout of a goal graph: one component per agent, each with a full map copy.

    ``map_source[n]`` is the scene map node that goal-graph map node ``n``
    copies; ``component[n]`` is the agent owning it. Map edges of each class
    reference rows of the scene's edge list through ``edge_row``.
    """

    num_agents: int
    map_source: np.ndarray
    component: np.ndarray
    offsets: np.ndarray                      # first goal-map node of each component
    sizes: np.ndarray
    map_edges: dict[str, np.ndarray]         # (E, 2) goal-graph indices
    edge_row: dict[str, np.ndarray]          # (E,) rows into the scene edge arrays

    @property
    def num_map_nodes(self) -> int:
        return len(self.map_source)


def goal_graph_index(agent_scene: np.ndarray, scene_map_offset: np.ndarray, scene_map_size: np.ndarray,
                     scene_edges: list[dict[str, np.ndarray]],
                     scene_edge_offset: list[dict[str, int]]) -> GoalGraphIndex:
    """Lay out goal-graph components for agents drawn from one or more scenes.

    ``agent_scene[i]`` is the scene of agent ``i``; map node and edge indices
    of scene ``s`` start at ``scene_map_offset[s]`` and ``scene_edge_offset[s]``
    in the (possibly batched) scene arrays.
    """
    agent_scene = np.asarray(agent_scene, dtype=np.int64)
    A = len(agent_scene)
    sizes = np.asarray([scene_map_size[s] for s in agent_scene], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) if A else np.zeros(0, dtype=np.int64)
    src = [scene_map_offset[s] + np.arange(scene_map_size[s]) for s in agent_scene]
    comp = [np.full(n, i) for i, n in enumerate(sizes)]
    map_edges, edge_row = {}, {}
    for et in EDGE_TYPES:
        pairs, rows = [], []
        for i, s in enumerate(agent_scene):
            e = scene_edges[s][et]
            pairs.append(e + offsets[i])
            rows.append(scene_edge_offset[s][et] + np.arange(len(e)))
        map_edges[et] = np.concatenate(pairs).astype(np.int64).reshape(-1, 2) if pairs else np.zeros((0, 2), np.int64)
        edge_row[et] = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, np.int64)
    return GoalGraphIndex(
        num_agents=A,
        map_source=np.concatenate(src).astype(np.int64) if A else np.zeros(0, np.int64),
        component=np.concatenate(comp).astype(np.int64) if A else np.zeros(0, np.int64),
        offsets=offsets, sizes=sizes, map_edges=map_edges, edge_row=edge_row,
    )


class GoalDecoder:
    def __init__(self, store: dm.ParamStore, cfg):
        w = rel_geom_width(cfg.n_freq)
        H = cfg.hidden
        self.pp = dm.MLP(store, "goal.pp", w, [cfg.pos_dim, cfg.pos_dim])
        self.layers = [HMPLayer(store, f"goal.hmp{k}", {"agent": H, "map": H}, GOAL_EDGE_CLASSES, cfg.pos_dim, H)
                       for k in range(cfg.goal_layers)]
        self.logit = dm.MLP(store, "goal.logit", H, [H, 1])
        self.offset = dm.MLP(store, "goal.offset", H, [H, 2])


def build_goal_graph(index: GoalGraphIndex, agent_emb: dm.Tensor, map_emb: dm.Tensor,
                     map_edge_raw: dict[str, np.ndarray], a2m_raw: np.ndarray, m2a_raw: np.ndarray,
                     pp: dm.MLP, dtype) -> HeteroGraph:
    """Materialise the goal graph from scene-encoder outputs.

    ``map_edge_raw[et]`` holds one raw geometry row per scene edge;
    ``a2m_raw``/``m2a_raw`` one row per goal-graph map node (its agent to it,
    and back).
    """
    if index.num_agents != agent_emb.shape[0]:
        raise ValueError("one agent embedding per component required")
    feats = {"agent": agent_emb, "map": dm.gather_rows(map_emb, index.map_source)}
    edges = {}
    for et in EDGE_TYPES:
        e = index.map_edges[et]
        attr = pp(dm.Tensor(map_edge_raw[et], dtype=dtype))
        edges[et] = EdgeSet("map", "map", e[:, 0], e[:, 1], attr, attr_index=index.edge_row[et])
    nodes = np.arange(index.num_map_nodes)
    edges["a2m"] = EdgeSet("agent", "map", index.component, nodes, pp(dm.Tensor(a2m_raw, dtype=dtype)))
    edges["m2a"] = EdgeSet("map", "agent", nodes, index.component, pp(dm.Tensor(m2a_raw, dtype=dtype)))
    return HeteroGraph(feats, edges)


@dataclass
class GoalField:
    logits: dm.Tensor        # (N,) one per goal-graph map node
    offsets: dm.Tensor       # (N, 2) node frame, metres
    agent_emb: dm.Tensor     # (A, H) agent nodes after the goal stack
    index: GoalGraphIndex

    def probabilities(self) -> np.ndarray:
        """Softmax of the logits within each agent component."""
        z = self.logits.data.astype(float)
        comp = self.index.component
        zmax = np.full(self.index.num_agents, -np.inf)
        np.maximum.at(zmax, comp, z)
        e = np.exp(z - zmax[comp])
        denom = np.zeros(self.index.num_agents)
        np.add.at(denom, comp, e)
        return e / denom[comp]


def predict_goals(goal_graph: HeteroGraph, index: GoalGraphIndex, dec: GoalDecoder, coord_scale: float) -> GoalField:
    out = hmp_stack(goal_graph, dec.layers)
    logits = dec.logit(out["map"]).reshape(-1)
    offsets = dec.offset(out["map"]) * coord_scale
    return GoalField(logits, offsets, out["agent"], index)


# --------------------------------------------------------------------------
# trajectory completion

class TrajectoryCompleter:
    def __init__(self, store: dm.ParamStore, cfg):
        H = cfg.hidden
        din = H + rel_geom_width(cfg.n_freq) + 2
        self.mlp = dm.MLP(store, "complete", din, [H, H, 2 * cfg.future_steps])
        self.future_steps = cfg.future_steps
        self.coord_scale = cfg.coord_scale
        self.n_freq = cfg.n_freq
        self.sign = cfg.freq_sign


def complete_local(agent_emb: dm.Tensor, pose_c, frame_h, goals, comp: TrajectoryCompleter, dtype) -> dm.Tensor:
    """Waypoints ``(R, T_f, 2)`` in each row's agent frame.

    Rows pair an agent embedding with one goal; repeat embedding rows to
    complete several goals per agent in one call.
    """
    goals = np.asarray(goals, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(goals)):
        raise ValueError("goal must be finite")
    enc = goal_geom_arrays(goals, pose_c, frame_h, comp.n_freq, comp.sign, comp.coord_scale)
    x = dm.concat([agent_emb, dm.Tensor(enc, dtype=dtype)], axis=1)
    out = comp.mlp(x) * comp.coord_scale
    return out.reshape(goals.shape[0], comp.future_steps, 2)


def complete_trajectory(agent_emb: dm.Tensor, pose_c, frame_h, goals, comp: TrajectoryCompleter, dtype) -> np.ndarray:
    """World-frame waypoints ``(R, T_f, 2)``."""
    local = complete_local(agent_emb, pose_c, frame_h, goals, comp, dtype).data.astype(float)
    c = np.asarray(pose_c, dtype=float).reshape(-1, 1, 2)
    h = np.asarray(frame_h, dtype=float).reshape(-1, 1, 2)
    return local_to_world(c, h, local)


# --------------------------------------------------------------------------
# forecasts

@dataclass
class AgentForecast:
    agent_id: str
    goals: np.ndarray            # (K, 2) world
    probs: np.ndarray            # (K,)
    trajectories: np.ndarray     # (K, T_f, 2) world
    goal_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


@dataclass
class ForecastSet:
    scenario_id: str
    agents: list[AgentForecast]

    def to_records(self) -> list[dict]:
        return [{"scenario_id": self.scenario_id, "agent_id": a.agent_id,
                 "modes": [{"probability": float(p), "goal": g.tolist(), "waypoints": t.tolist()}
                           for p, g, t in zip(a.probs, a.goals, a.trajectories)]}
                for a in self.agents]


def write_forecasts_jsonl(path, forecasts) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for fs in forecasts:
            for rec in fs.to_records():
                f.write(json.dumps(rec, separators=(",", ":")) + "\n")


def sample_goals(field_: GoalField, goal_c: np.ndarray, goal_h: np.ndarray, cfg: SamplerConfig):
    """Greedy-sample every component. Returns world goals (A, K, 2), probs (A, K), local nodes (A, K)."""
    probs = field_.probabilities()
    offsets = field_.offsets.data.astype(float)
    idx = field_.index
    goals = np.zeros((idx.num_agents, cfg.k, 2))
    mode_p = np.zeros((idx.num_agents, cfg.k))
    nodes = np.zeros((idx.num_agents, cfg.k), dtype=np.int64)
    for a in range(idx.num_agents):
        lo, hi = idx.offsets[a], idx.offsets[a] + idx.sizes[a]
        picks, p = greedy_sample(probs[lo:hi], goal_c[lo:hi], cfg)
        g = lo + picks
        goals[a] = node_goal_to_world(goal_c[g], goal_h[g], offsets[g])
        mode_p[a] = p
        nodes[a] = picks
    return goals, mode_p, nodes
