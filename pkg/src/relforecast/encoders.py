"""Agent history, lane-graph and scene encoders, and scene-graph assembly.

Everything geometric is reduced to pair-wise relative geometry in numpy
first (``*_raw`` arrays); the learned stages only ever see those, so their
outputs do not depend on the world frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffmath as dm
from .geometry import rel_geom_arrays, rel_geom_width, world_to_local
from .hmp import EdgeSet, HeteroGraph, HMPLayer, hmp_stack
from .lanegraph import EDGE_TYPES, LaneGraph, MapError, nearest_node

AGENT_CLASSES = ("vehicle", "pedestrian", "cyclist", "motorcycle")
AGENT_RADIUS = 100.0
SCENE_EDGE_CLASSES = {**{et: ("map", "map") for et in EDGE_TYPES},
                      "a2a": ("agent", "agent"), "a2m": ("agent", "map"), "m2a": ("map", "agent")}
MAP_EDGE_CLASSES = {et: ("map", "map") for et in EDGE_TYPES}

_VEL_SCALE = 10.0
_BOX_SCALE = 5.0
_ABS_SCALE = 100.0


@dataclass
class AgentTrack:
    """Past states at 10 Hz; index -1 is the current time t=0."""

    id: str
    agent_class: str
    positions: np.ndarray
    headings: np.ndarray
    velocities: np.ndarray
    box: tuple[float, float]
    observed: np.ndarray
    future: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.headings = np.asarray(self.headings, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        self.observed = np.asarray(self.observed, dtype=bool).reshape(-1)
        if self.future is not None:
            self.future = np.asarray(self.future, dtype=float).reshape(-1, 2)
        n = len(self.positions)
        if not (len(self.headings) == len(self.velocities) == len(self.observed) == n):
            raise ValueError(f"agent {self.id}: history arrays differ in length")
        if self.agent_class not in AGENT_CLASSES:
            raise ValueError(f"agent {self.id}: unknown class {self.agent_class!r}")

    @property
    def horizon(self) -> int:
        return len(self.positions) - 1

    @property
    def pose0(self) -> tuple[np.ndarray, np.ndarray]:
        return self.positions[-1], self.headings[-1]


# --------------------------------------------------------------------------
# raw (numpy) features

def edge_geometry(src_c, src_h, dst_c, dst_h, cfg) -> np.ndarray:
    """Edge input geometry: relative geometry, or zeros for the global-frame ablation."""
    src_c = np.asarray(src_c, dtype=float)
    if cfg.relpose:
        return rel_geom_arrays(src_c, src_h, dst_c, dst_h, cfg.n_freq, cfg.freq_sign)
    shape = np.broadcast_shapes(src_c.shape[:-1], np.shape(dst_c)[:-1])
    return np.zeros(shape + (rel_geom_width(cfg.n_freq),))


def frame_headings(headings, cfg) -> np.ndarray:
    """Axis used for node-frame offsets and agent-frame trajectories."""
    h = np.asarray(headings, dtype=float)
    if cfg.relpose:
        return h
    return np.broadcast_to(np.array([1.0, 0.0]), h.shape).copy()


def history_inputs(tracks: list[AgentTrack], cfg) -> dict[str, np.ndarray]:
    """Per-step raw features for a list of tracks with a common horizon."""
    if not tracks:
        w = rel_geom_width(cfg.n_freq)
        T1 = cfg.history_steps + 1
        return {"raw": np.zeros((0, T1, w)), "obs": np.zeros((0, T1)), "vel": np.zeros((0, T1, 2)),
                "static": np.zeros((0, 2 + len(AGENT_CLASSES)))}
    T1 = {len(t.positions) for t in tracks}
    if len(T1) != 1:
        raise ValueError("all tracks must share the history horizon")
    raws, obs, vels, static = [], [], [], []
    for t in tracks:
        if not t.observed[-1]:
            raise ValueError(f"agent {t.id}: current pose is not observed")
        c0, h0 = t.pose0
        if cfg.relpose:
            raw = rel_geom_arrays(t.positions, t.headings, c0, h0, cfg.n_freq, cfg.freq_sign)
            vel = world_to_local(np.zeros(2), h0, t.velocities)
        else:
            raw = np.zeros((len(t.positions), rel_geom_width(cfg.n_freq)))
            raw[:, 0:2] = t.positions / _ABS_SCALE
            raw[:, 2:4] = t.headings
            raw[:, 4:6] = (t.positions - c0) / cfg.coord_scale
            vel = t.velocities.copy()
        raw[~t.observed] = 0.0
        vel[~t.observed] = 0.0
        raws.append(raw)
        obs.append(t.observed.astype(float))
        vels.append(vel / _VEL_SCALE)
        onehot = [1.0 if t.agent_class == c else 0.0 for c in AGENT_CLASSES]
        static.append([t.box[0] / _BOX_SCALE, t.box[1] / _BOX_SCALE] + onehot)
    return {"raw": np.stack(raws), "obs": np.stack(obs), "vel": np.stack(vels), "static": np.asarray(static)}


def map_inputs(g: LaneGraph, cfg) -> np.ndarray:
    feats = g.features
    if not cfg.relpose:
        feats = np.hstack([feats, g.centroids / _ABS_SCALE, g.headings])
    return feats


def map_edge_raw(g: LaneGraph, cfg) -> dict[str, np.ndarray]:
    out = {}
    for et in EDGE_TYPES:
        e = g.edges[et]
        out[et] = edge_geometry(g.centroids[e[:, 0]], g.headings[e[:, 0]],
                                g.centroids[e[:, 1]], g.headings[e[:, 1]], cfg)
    return out


@dataclass
class SceneGraphSpec:
    """Index structure and raw geometry of the agent + map scene graph."""

    anchor: np.ndarray          # nearest map node per agent
    a2a: np.ndarray             # (P, 2) agent pairs within the radius, both directions
    a2a_raw: np.ndarray
    a2m_raw: np.ndarray         # agent -> anchor
    m2a_raw: np.ndarray         # anchor -> agent


def assemble_scene_graph(agent_c, agent_h, g: LaneGraph, cfg, radius: float = AGENT_RADIUS) -> SceneGraphSpec:
    if radius <= 0:
        raise ValueError("radius must be positive")
    if g.num_nodes == 0:
        raise MapError("cannot anchor agents to an empty lane graph")
    agent_c = np.asarray(agent_c, dtype=float).reshape(-1, 2)
    agent_h = np.asarray(agent_h, dtype=float).reshape(-1, 2)
    A = len(agent_c)
    anchor = nearest_node(g.centroids, agent_c) if A else np.zeros(0, dtype=np.int64)
    if A:
        d = np.hypot(*(agent_c[:, None, :] - agent_c[None, :, :]).transpose(2, 0, 1))
        i, j = np.nonzero((d < radius) & ~np.eye(A, dtype=bool))
        a2a = np.stack([i, j], axis=1)
    else:
        a2a = np.zeros((0, 2), dtype=np.int64)
    a2a_raw = edge_geometry(agent_c[a2a[:, 0]], agent_h[a2a[:, 0]], agent_c[a2a[:, 1]], agent_h[a2a[:, 1]], cfg)
    mc, mh = g.centroids[anchor], g.headings[anchor]
    return SceneGraphSpec(
        anchor=anchor,
        a2a=a2a.astype(np.int64),
        a2a_raw=a2a_raw,
        a2m_raw=edge_geometry(agent_c, agent_h, mc, mh, cfg),
        m2a_raw=edge_geometry(mc, mh, agent_c, agent_h, cfg),
    )


# --------------------------------------------------------------------------
# learned stages

class HistoryEncoder:
    def __init__(self, store: dm.ParamStore, cfg):
        w = rel_geom_width(cfg.n_freq)
        self.pp = dm.MLP(store, "hist.pp", w, [cfg.pos_dim, cfg.pos_dim])
        din = 2 * cfg.pos_dim + 2 + 1 + 2 + len(AGENT_CLASSES)
        self.convs = []
        for k in range(cfg.conv_blocks):
            self.convs.append(dm.Conv1dResidual(store, f"hist.conv{k}", din if k == 0 else cfg.hidden,
                                                cfg.hidden, cfg.conv_width, "relu"))
        self.gru = dm.GRUCell(store, "hist.gru", cfg.hidden, cfg.hidden)
        self.hidden = cfg.hidden

    def __call__(self, inputs: dict[str, np.ndarray], dtype) -> dm.Tensor:
        raw, obs = inputs["raw"], inputs["obs"]
        A, T1, w = raw.shape
        if A == 0:
            return dm.Tensor(np.zeros((0, self.hidden), dtype=dtype))
        e = self.pp(dm.Tensor(raw.reshape(A * T1, w), dtype=dtype)).reshape(A, T1, -1)
        mask = dm.Tensor(obs[:, :, None], dtype=dtype)
        e = dm.mul(e, mask)
        prev = dm.pad_time(dm.take(e, (slice(None), slice(0, T1 - 1), slice(None))), 1, 0)
        both = obs * np.concatenate([np.zeros((A, 1)), obs[:, :-1]], axis=1)
        diff = dm.mul(dm.sub(e, prev), dm.Tensor(both[:, :, None], dtype=dtype))
        static = np.broadcast_to(inputs["static"][:, None, :], (A, T1, inputs["static"].shape[1]))
        extra = np.concatenate([inputs["vel"], obs[:, :, None], static], axis=2)
        x = dm.concat([e, diff, dm.Tensor(extra, dtype=dtype)], axis=2)
        for conv in self.convs:
            x = conv(x)
        h = dm.Tensor(np.zeros((A, self.hidden), dtype=dtype))
        for t in range(T1):
            h = self.gru(h, dm.take(x, (slice(None), t, slice(None))))
        return h


class LaneGraphEncoder:
    def __init__(self, store: dm.ParamStore, cfg, map_width: int):
        w = rel_geom_width(cfg.n_freq)
        self.inp = dm.MLP(store, "lane.in", map_width, [cfg.hidden, cfg.hidden], ["relu", "relu"])
        self.pp = dm.MLP(store, "lane.pp", w, [cfg.pos_dim, cfg.pos_dim])
        self.layers = [HMPLayer(store, f"lane.hmp{k}", {"map": cfg.hidden}, MAP_EDGE_CLASSES, cfg.pos_dim, cfg.hidden)
                       for k in range(cfg.lane_layers)]

    def __call__(self, feats: np.ndarray, edges: dict[str, np.ndarray], edge_raw: dict[str, np.ndarray],
                 dtype) -> dm.Tensor:
        x = self.inp(dm.Tensor(feats, dtype=dtype))
        es = {}
        for et in EDGE_TYPES:
            e = edges[et]
            es[et] = EdgeSet("map", "map", e[:, 0], e[:, 1], self.pp(dm.Tensor(edge_raw[et], dtype=dtype)))
        return hmp_stack(HeteroGraph({"map": x}, es), self.layers)["map"]


class SceneEncoder:
    def __init__(self, store: dm.ParamStore, cfg):
        w = rel_geom_width(cfg.n_freq)
        self.pp = dm.MLP(store, "scene.pp", w, [cfg.pos_dim, cfg.pos_dim])
        widths = {"agent": cfg.hidden, "map": cfg.hidden}
        self.layers = [HMPLayer(store, f"scene.hmp{k}", widths, SCENE_EDGE_CLASSES, cfg.pos_dim, cfg.hidden)
                       for k in range(cfg.scene_layers)]

    def __call__(self, agent_emb: dm.Tensor, map_emb: dm.Tensor, map_edges: dict[str, np.ndarray],
                 map_edge_raw: dict[str, np.ndarray], scene: dict[str, np.ndarray], dtype):
        """``scene`` holds ``a2a``, ``anchor`` (agent -> map node) and the three raw arrays."""
        es = {}
        for et in EDGE_TYPES:
            e = map_edges[et]
            es[et] = EdgeSet("map", "map", e[:, 0], e[:, 1], self.pp(dm.Tensor(map_edge_raw[et], dtype=dtype)))
        a2a = scene["a2a"]
        es["a2a"] = EdgeSet("agent", "agent", a2a[:, 0], a2a[:, 1], self.pp(dm.Tensor(scene["a2a_raw"], dtype=dtype)))
        agents = np.arange(len(scene["anchor"]))
        es["a2m"] = EdgeSet("agent", "map", agents, scene["anchor"], self.pp(dm.Tensor(scene["a2m_raw"], dtype=dtype)))
        es["m2a"] = EdgeSet("map", "agent", scene["anchor"], agents, self.pp(dm.Tensor(scene["m2a_raw"], dtype=dtype)))
        out = hmp_stack(HeteroGraph({"agent": agent_emb, "map": map_emb}, es), self.layers)
        return out["agent"], out["map"]


@dataclass
class SceneEmbedding:
    agents: dm.Tensor
    map: dm.Tensor


def encode_history(tracks: list[AgentTrack], model) -> dm.Tensor:
    """Embeddings for all ``tracks`` in one batched pass."""
    return model.history(history_inputs(tracks, model.cfg), model.dtype)


def encode_lane_graph(g: LaneGraph, model) -> dm.Tensor:
    if g.num_nodes == 0:
        raise MapError("lane graph is empty")
    return model.lane(map_inputs(g, model.cfg), g.edges, map_edge_raw(g, model.cfg), model.dtype)


def encode_scene(layout: SceneGraphSpec, g: LaneGraph, agent_emb: dm.Tensor, map_emb: dm.Tensor, model) -> SceneEmbedding:
    if agent_emb.shape[1] != map_emb.shape[1]:
        raise ValueError("agent and map embeddings must share a width")
    scene = {"a2a": layout.a2a, "a2a_raw": layout.a2a_raw, "anchor": layout.anchor,
             "a2m_raw": layout.a2m_raw, "m2a_raw": layout.m2a_raw}
    a, m = model.scene(agent_emb, map_emb, g.edges, map_edge_raw(g, model.cfg), scene, model.dtype)
    return SceneEmbedding(a, m)
