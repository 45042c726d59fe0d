"""The full forecasting model: configuration, parameters, scene preparation and batching.

A scene is *prepared* once in numpy (relative geometry of every edge, history
features, goal-graph geometry). Batches are disjoint unions of prepared
scenes, so one forward pass serves many scenarios.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import diffmath as dm
from .decoder import (
    ForecastSet,
    AgentForecast,
    GoalDecoder,
    GoalField,
    SamplerConfig,
    TrajectoryCompleter,
    build_goal_graph,
    complete_local,
    goal_graph_index,
    predict_goals,
    sample_goals,
)
from .diffmath import checkpoint
from .encoders import (
    AgentTrack,
    HistoryEncoder,
    LaneGraphEncoder,
    SceneEncoder,
    SceneGraphSpec,
    assemble_scene_graph,
    edge_geometry,
    frame_headings,
    history_inputs,
    map_edge_raw,
    map_inputs,
)
from .geometry import local_to_world
from .lanegraph import EDGE_TYPES, NUM_FEATURES, LaneGraph, MapError

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 128
    pos_dim: int = 64
    n_freq: int = 16
    freq_sign: float = -1.0
    lane_layers: int = 4
    scene_layers: int = 2
    goal_layers: int = 2
    conv_blocks: int = 2
    conv_width: int = 3
    coord_scale: float = 10.0
    history_steps: int = 50
    future_steps: int = 60
    agent_radius: float = 100.0
    relpose: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
        if min(self.hidden, self.pos_dim, self.n_freq, self.future_steps, self.history_steps) < 1:
            raise ValueError("widths and horizons must be positive")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class PreparedScene:
    scenario_id: str
    agent_ids: list[str]
    graph: LaneGraph
    map_feats: np.ndarray
    map_edge_raw: dict[str, np.ndarray]
    hist: dict[str, np.ndarray]
    scene: SceneGraphSpec
    agent_c: np.ndarray
    agent_h: np.ndarray
    agent_frame_h: np.ndarray
    map_frame_h: np.ndarray
    goal_a2m_raw: np.ndarray | None     # (A, M, w); None when only the encoders will run
    goal_m2a_raw: np.ndarray | None

    @property
    def num_agents(self) -> int:
        return len(self.agent_ids)

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes


def prepare_scene(g: LaneGraph, tracks: list[AgentTrack], cfg: ModelConfig, scenario_id: str = "",
                  goal_features: bool = True) -> PreparedScene:
    """Model inputs for one scene; ``goal_features=False`` skips the agent-by-node decoder geometry."""
    if g.num_nodes == 0:
        raise MapError("lane graph is empty")
    for t in tracks:
        if t.horizon != cfg.history_steps:
            raise ValueError(f"agent {t.id}: history has {t.horizon} steps, model expects {cfg.history_steps}")
    agent_c = np.array([t.pose0[0] for t in tracks]).reshape(-1, 2)
    agent_h = np.array([t.pose0[1] for t in tracks]).reshape(-1, 2)
    layout = assemble_scene_graph(agent_c, agent_h, g, cfg, cfg.agent_radius)
    a2m = m2a = None
    if goal_features:
        a2m = edge_geometry(agent_c[:, None, :], agent_h[:, None, :], g.centroids[None], g.headings[None], cfg)
        m2a = edge_geometry(g.centroids[None], g.headings[None], agent_c[:, None, :], agent_h[:, None, :], cfg)
    return PreparedScene(
        scenario_id=scenario_id,
        agent_ids=[t.id for t in tracks],
        graph=g,
        map_feats=map_inputs(g, cfg),
        map_edge_raw=map_edge_raw(g, cfg),
        hist=history_inputs(tracks, cfg),
        scene=layout,
        agent_c=agent_c,
        agent_h=agent_h,
        agent_frame_h=frame_headings(agent_h, cfg),
        map_frame_h=frame_headings(g.headings, cfg),
        goal_a2m_raw=a2m,
        goal_m2a_raw=m2a,
    )


@dataclass
class SceneBatch:
    """Disjoint union of prepared scenes."""

    scenes: list[PreparedScene]
    agent_offset: np.ndarray
    map_offset: np.ndarray
    edge_offset: list[dict[str, int]]
    agent_scene: np.ndarray
    map_feats: np.ndarray
    map_edges: dict[str, np.ndarray]
    map_edge_raw: dict[str, np.ndarray]
    hist: dict[str, np.ndarray]
    scene: dict[str, np.ndarray]
    agent_c: np.ndarray
    agent_frame_h: np.ndarray
    map_c: np.ndarray
    map_frame_h: np.ndarray

    @property
    def num_agents(self) -> int:
        return len(self.agent_scene)


def make_batch(scenes: list[PreparedScene]) -> SceneBatch:
    if not scenes:
        raise ValueError("empty batch")
    n_agents = [s.num_agents for s in scenes]
    n_nodes = [s.num_nodes for s in scenes]
    a_off = np.concatenate([[0], np.cumsum(n_agents)[:-1]]).astype(np.int64)
    m_off = np.concatenate([[0], np.cumsum(n_nodes)[:-1]]).astype(np.int64)
    edges, raws, e_off = {}, {}, [dict() for _ in scenes]
    for et in EDGE_TYPES:
        count = 0
        parts = []
        for i, s in enumerate(scenes):
            e_off[i][et] = count
            count += len(s.graph.edges[et])
            parts.append(s.graph.edges[et] + m_off[i])
        edges[et] = np.concatenate(parts).reshape(-1, 2)
        raws[et] = np.concatenate([s.map_edge_raw[et] for s in scenes])
    hist = {k: np.concatenate([s.hist[k] for s in scenes]) for k in scenes[0].hist}
    scene = {
        "a2a": np.concatenate([s.scene.a2a + a_off[i] for i, s in enumerate(scenes)]).reshape(-1, 2),
        "a2a_raw": np.concatenate([s.scene.a2a_raw for s in scenes]),
        "anchor": np.concatenate([s.scene.anchor + m_off[i] for i, s in enumerate(scenes)]).astype(np.int64),
        "a2m_raw": np.concatenate([s.scene.a2m_raw for s in scenes]),
        "m2a_raw": np.concatenate([s.scene.m2a_raw for s in scenes]),
    }
    return SceneBatch(
        scenes=scenes, agent_offset=a_off, map_offset=m_off, edge_offset=e_off,
        agent_scene=np.repeat(np.arange(len(scenes)), n_agents).astype(np.int64),
        map_feats=np.concatenate([s.map_feats for s in scenes]),
        map_edges=edges, map_edge_raw=raws, hist=hist, scene=scene,
        agent_c=np.concatenate([s.agent_c for s in scenes]).reshape(-1, 2),
        agent_frame_h=np.concatenate([s.agent_frame_h for s in scenes]).reshape(-1, 2),
        map_c=np.concatenate([s.graph.centroids for s in scenes]),
        map_frame_h=np.concatenate([s.map_frame_h for s in scenes]),
    )


@dataclass
class BatchOutput:
    batch: SceneBatch
    lane_emb: dm.Tensor
    agent_emb: dm.Tensor
    map_emb: dm.Tensor
    goals: GoalField | None
    goal_c: np.ndarray
    goal_frame_h: np.ndarray


class ForecastModel:
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0):
        self.cfg = cfg
        self.dtype = cfg.np_dtype
        self.store = dm.ParamStore(seed=seed, dtype=self.dtype)
        map_width = NUM_FEATURES + (0 if cfg.relpose else 4)
        self.history = HistoryEncoder(self.store, cfg)
        self.lane = LaneGraphEncoder(self.store, cfg, map_width)
        self.scene = SceneEncoder(self.store, cfg)
        self.goal = GoalDecoder(self.store, cfg)
        self.complete = TrajectoryCompleter(self.store, cfg)

    # -- parameters ---------------------------------------------------------

    def checkpoint_hash(self) -> str:
        return checkpoint.params_hash(self.store)

    def load_params(self, other: dm.ParamStore) -> None:
        if set(other.names()) != set(self.store.names()):
            raise checkpoint.CheckpointError("checkpoint parameters do not match the model")
        for name, p in self.store.items():
            src = other[name].data
            if src.shape != p.data.shape:
                raise checkpoint.CheckpointError(f"shape mismatch for {name}")
            p.data[...] = src.astype(self.dtype)
        self.store.m = {k: v.astype(self.dtype) for k, v in other.m.items()}
        self.store.v = {k: v.astype(self.dtype) for k, v in other.v.items()}
        self.store.step_count = other.step_count

    def save(self, path, extra: dict | None = None, optimizer: bool = True) -> None:
        meta = {"model": self.cfg.to_dict(), **(extra or {})}
        checkpoint.save(path, self.store, meta, optimizer)

    @classmethod
    def load(cls, path) -> tuple["ForecastModel", dict]:
        store, meta = checkpoint.load(path)
        if "model" not in meta:
            raise checkpoint.CheckpointError("checkpoint lacks a model config")
        model = cls(ModelConfig.from_dict(meta["model"]))
        model.load_params(store)
        return model, meta

    # -- forward ------------------------------------------------------------

    def prepare(self, g: LaneGraph, tracks: list[AgentTrack], scenario_id: str = "") -> PreparedScene:
        return prepare_scene(g, tracks, self.cfg, scenario_id)

    def encode_map(self, scene: PreparedScene) -> dm.Tensor:
        return self.lane(scene.map_feats, scene.graph.edges, scene.map_edge_raw, self.dtype)

    def forward(self, batch: SceneBatch, map_embeddings: list[np.ndarray] | None = None) -> BatchOutput:
        """Encode every scene and score goals for every agent.

        ``map_embeddings`` (one array per scene) replaces the lane-graph
        encoder, e.g. with cached activations.
        """
        dtype = self.dtype
        agent0 = self.history(batch.hist, dtype)
        if map_embeddings is not None:
            if len(map_embeddings) != len(batch.scenes):
                raise ValueError("one map embedding array per scene required")
            lane = dm.Tensor(np.concatenate(map_embeddings), dtype=dtype)
        else:
            lane = self.lane(batch.map_feats, batch.map_edges, batch.map_edge_raw, dtype)
        agent, mapemb = self.scene(agent0, lane, batch.map_edges, batch.map_edge_raw, batch.scene, dtype)
        if batch.num_agents == 0:
            return BatchOutput(batch, lane, agent, mapemb, None, np.zeros((0, 2)), np.zeros((0, 2)))
        if any(s.goal_a2m_raw is None for s in batch.scenes):
            raise ValueError("scene was prepared without goal features")
        index = goal_graph_index(batch.agent_scene, batch.map_offset, [s.num_nodes for s in batch.scenes],
                                 [s.graph.edges for s in batch.scenes], batch.edge_offset)
        a2m = np.concatenate([s.goal_a2m_raw.reshape(-1, s.goal_a2m_raw.shape[-1]) for s in batch.scenes])
        m2a = np.concatenate([s.goal_m2a_raw.reshape(-1, s.goal_m2a_raw.shape[-1]) for s in batch.scenes])
        gg = build_goal_graph(index, agent, mapemb, batch.map_edge_raw, a2m, m2a, self.goal.pp, dtype)
        field_ = predict_goals(gg, index, self.goal, self.cfg.coord_scale)
        return BatchOutput(batch, lane, agent, mapemb, field_, batch.map_c[index.map_source],
                           batch.map_frame_h[index.map_source])

    def complete_local(self, out: BatchOutput, agent_rows, goals) -> dm.Tensor:
        """Agent-frame waypoints for ``(agent row, world goal)`` pairs."""
        rows = np.asarray(agent_rows, dtype=np.int64)
        emb = dm.gather_rows(out.goals.agent_emb, rows)
        return complete_local(emb, out.batch.agent_c[rows], out.batch.agent_frame_h[rows], goals, self.complete,
                              self.dtype)

    def forecast_batch(self, batch: SceneBatch, sampler: SamplerConfig = SamplerConfig(),
                       map_embeddings: list[np.ndarray] | None = None) -> list[ForecastSet]:
        with dm.no_grad():
            out = self.forward(batch, map_embeddings)
            results = [ForecastSet(s.scenario_id, []) for s in batch.scenes]
            if out.goals is None:
                return results
            goals, probs, nodes = sample_goals(out.goals, out.goal_c, out.goal_frame_h, sampler)
            A, K = probs.shape
            rows = np.repeat(np.arange(A), K)
            local = self.complete_local(out, rows, goals.reshape(-1, 2)).data.astype(float)
        c = batch.agent_c[rows][:, None, :]
        h = batch.agent_frame_h[rows][:, None, :]
        world = local_to_world(c, h, local).reshape(A, K, -1, 2)
        for i in range(A):
            s = batch.agent_scene[i]
            aid = batch.scenes[s].agent_ids[i - batch.agent_offset[s]]
            results[s].agents.append(AgentForecast(aid, goals[i], probs[i], world[i], nodes[i]))
        return results

    def forecast(self, scene: PreparedScene, sampler: SamplerConfig = SamplerConfig(),
                 map_embedding: np.ndarray | None = None) -> ForecastSet:
        embs = None if map_embedding is None else [map_embedding]
        return self.forecast_batch(make_batch([scene]), sampler, embs)[0]
