"""Forecast metrics, the constant-velocity baseline, and experiment harnesses.

Brier and miss-rate definitions follow the public Argoverse 2 convention:
``brier = minFDE + (1 - p_best)^2`` with the best mode chosen by endpoint
error, and a miss when that endpoint error exceeds 2 m.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffmath as dm
from .decoder import AgentForecast, ForecastSet, SamplerConfig
from .encoders import AgentTrack
from .geometry import SE2
from .lanegraph import LaneGraph, build_lane_graph
from .model import ForecastModel, ModelConfig, make_batch, prepare_scene
from .scenarios import DOMAINS, Scenario

MISS_THRESHOLD = 2.0
METRIC_KEYS = ("minADE@1", "minFDE@1", "brierFDE@1", "MR@1", "minADE@6", "minFDE@6", "brierFDE@6", "MR@6",
               "ATE@1", "CTE@1", "brierATE@6", "brierCTE@6")


def gt_tangents(gt: np.ndarray) -> np.ndarray:
    """Unit tangent per waypoint: central differences inside, one-sided at the ends.

    Zero-length differences fall back to the nearest defined tangent, or +x
    when the whole track is stationary.
    """
    gt = np.asarray(gt, dtype=float)
    T = len(gt)
    d = np.zeros_like(gt)
    if T >= 2:
        d[0] = gt[1] - gt[0]
        d[-1] = gt[-1] - gt[-2]
        if T > 2:
            d[1:-1] = (gt[2:] - gt[:-2]) / 2.0
    n = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])
    ok = n > 1e-9
    if not ok.any():
        return np.tile([1.0, 0.0], (T, 1))
    out = np.zeros_like(gt)
    out[ok] = d[ok] / n[ok, None]
    good = np.flatnonzero(ok)
    for i in np.flatnonzero(~ok):
        out[i] = out[good[np.argmin(np.abs(good - i))]]
    return out


def along_cross(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Signed along-track and cross-track error at every waypoint."""
    t = gt_tangents(gt)
    e = np.asarray(pred, dtype=float) - gt
    along = e[:, 0] * t[:, 0] + e[:, 1] * t[:, 1]
    cross = t[:, 0] * e[:, 1] - t[:, 1] * e[:, 0]
    return along, cross


def agent_metrics(trajs: np.ndarray, probs: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    """Metrics for one agent from K ranked modes (mode 0 = most likely)."""
    trajs = np.asarray(trajs, dtype=float)
    probs = np.asarray(probs, dtype=float)
    gt = np.asarray(gt, dtype=float)
    if trajs.ndim != 3 or trajs.shape[1:] != gt.shape:
        raise ValueError(f"trajectory shape {trajs.shape} does not match ground truth {gt.shape}")
    if len(probs) != len(trajs):
        raise ValueError("one probability per mode required")
    e = trajs - gt[None]
    err = np.sqrt(e[..., 0] * e[..., 0] + e[..., 1] * e[..., 1])     # (K, T)
    fde = err[:, -1]
    # left-to-right sum keeps results bit-identical to a plain loop
    ade = np.add.accumulate(err, axis=1)[:, -1] / err.shape[1]
    out = {}
    for k in (1, 6):
        if k > len(trajs):
            raise ValueError(f"K={k} metrics need at least {k} modes, got {len(trajs)}")
        if k == 1:
            best, p = 0, 1.0
        else:
            best = int(np.argmin(fde[:k]))
            p = probs[best] / np.add.accumulate(probs[:k])[-1]
        penalty = (1.0 - p) * (1.0 - p)
        out[f"minADE@{k}"] = float(ade[:k].min())
        out[f"minFDE@{k}"] = float(fde[best])
        out[f"brierFDE@{k}"] = float(fde[best] + penalty)
        out[f"MR@{k}"] = float(fde[best] > MISS_THRESHOLD)
        if k == 1:
            a, c = along_cross(trajs[0], gt)
            out["ATE@1"], out["CTE@1"] = float(abs(a[-1])), float(abs(c[-1]))
        else:
            a, c = along_cross(trajs[best], gt)
            out["brierATE@6"] = float(abs(a[-1]) + penalty)
            out["brierCTE@6"] = float(abs(c[-1]) + penalty)
    return out


@dataclass
class MetricReport:
    aggregate: dict[str, float]
    per_scenario: dict[str, dict[str, float]] = field(default_factory=dict)
    count: int = 0

    def row(self) -> dict[str, float]:
        return {**self.aggregate, "agents": self.count}


def scored_agents(sc: Scenario, g: LaneGraph | None = None, margin: float = 10.0) -> list[int]:
    """Agents with a complete future (and, given a graph, inside the lane-graph margin)."""
    from .lanegraph import distance_to_lane_graph

    out = []
    for i, a in enumerate(sc.agents):
        if a.future is None or not np.all(np.isfinite(a.future)):
            continue
        if g is not None and np.max(distance_to_lane_graph(g, a.future)) > margin:
            continue
        out.append(i)
    return out


def metrics(forecasts: list[ForecastSet], scenarios: list[Scenario],
            scored: list[list[int]] | None = None) -> MetricReport:
    """Mean of per-agent metrics over the scored agents of every scenario."""
    if len(forecasts) != len(scenarios):
        raise ValueError("one forecast set per scenario required")
    rows, per = [], {}
    for j, (fs, sc) in enumerate(zip(forecasts, scenarios)):
        by_id = {a.agent_id: a for a in fs.agents}
        idx = scored[j] if scored is not None else scored_agents(sc)
        sc_rows = []
        for i in idx:
            a = sc.agents[i]
            f = by_id[a.id]
            sc_rows.append(agent_metrics(f.trajectories, f.probs, a.future))
        if sc_rows:
            per[sc.id] = {k: float(np.mean([r[k] for r in sc_rows])) for k in METRIC_KEYS}
        rows += sc_rows
    agg = {k: float(np.mean([r[k] for r in rows])) if rows else float("nan") for k in METRIC_KEYS}
    return MetricReport(agg, per, len(rows))


# --------------------------------------------------------------------------
# baselines

def constant_velocity(track: AgentTrack, future_steps: int, dt: float) -> np.ndarray:
    """Extrapolate the current velocity; returns ``(T_f, 2)`` world waypoints."""
    c0 = track.positions[-1]
    v0 = track.velocities[-1]
    t = dt * np.arange(1, future_steps + 1)
    return c0[None, :] + t[:, None] * v0[None, :]


def cv_forecasts(scenarios: list[Scenario], k: int = 6) -> list[ForecastSet]:
    out = []
    for sc in scenarios:
        agents = []
        for a in sc.agents:
            T = len(a.future) if a.future is not None else DOMAINS[sc.domain].future_steps
            traj = constant_velocity(a, T, sc.future_dt)
            trajs = np.repeat(traj[None], k, axis=0)
            agents.append(AgentForecast(a.id, trajs[:, -1], np.full(k, 1.0 / k), trajs))
        out.append(ForecastSet(sc.id, agents))
    return out


# --------------------------------------------------------------------------
# model evaluation

def forecast_samples(model: ForecastModel, samples, sampler: SamplerConfig = SamplerConfig(),
                     batch_size: int = 8) -> list[ForecastSet]:
    out = []
    for b in range(0, len(samples), batch_size):
        chunk = samples[b:b + batch_size]
        scenes = [prepare_scene(s.graph, s.scenario.agents, model.cfg, s.scenario.id) for s in chunk]
        out += model.forecast_batch(make_batch(scenes), sampler)
    return out


def evaluate_model(model: ForecastModel, samples, sampler: SamplerConfig = SamplerConfig(),
                   margin: float = 10.0) -> MetricReport:
    fc = forecast_samples(model, samples, sampler)
    scs = [s.scenario for s in samples]
    return metrics(fc, scs, [scored_agents(s.scenario, s.graph, margin) for s in samples])


def holdout_metrics(model: ForecastModel, samples) -> dict:
    """Compact column set for the training history."""
    r = evaluate_model(model, samples).aggregate
    return {"eval_minFDE@1": r["minFDE@1"], "eval_minFDE@6": r["minFDE@6"], "eval_brierFDE@6": r["brierFDE@6"],
            "eval_MR@6": r["MR@6"]}


# --------------------------------------------------------------------------
# viewpoint sweep

def scenario_pivot(sc: Scenario) -> np.ndarray:
    """Centre of the bounding box of the map and all agent positions."""
    pts = [sc.map.points()] + [a.positions for a in sc.agents]
    pts = np.vstack(pts)
    return 0.5 * (pts.min(axis=0) + pts.max(axis=0))


def rotate_about(sc: Scenario, angle: float, pivot) -> Scenario:
    pivot = np.asarray(pivot, dtype=float)
    T = SE2(0.0, pivot).compose(SE2(angle, (0.0, 0.0))).compose(SE2(0.0, -pivot))
    return sc.transformed(T)


def viewpoint_sweep(model: ForecastModel, scenarios: list[Scenario], n_buckets: int = 8, seed: int = 0,
                    sampler: SamplerConfig = SamplerConfig(), interval: float | None = None) -> list[dict]:
    """Evaluate every scenario rotated by a random angle inside each bucket.

    Bucket ``b`` covers ``[b, b+1) * 360 / n_buckets`` degrees; each scenario
    draws its own angle. Returns one row per bucket with BrierMinFDE@6.
    """
    from .training import Sample

    rng = np.random.default_rng(seed)
    width = 2 * np.pi / n_buckets
    rows = []
    for b in range(n_buckets):
        rotated = []
        for sc in scenarios:
            ang = (b + rng.uniform(0.0, 1.0)) * width
            rotated.append(rotate_about(sc, ang, scenario_pivot(sc)))
        samples = [Sample(sc, build_lane_graph(sc.map, interval or DOMAINS[sc.domain].interval)) for sc in rotated]
        rep = evaluate_model(model, samples, sampler)
        rows.append({"bucket": b, "deg_lo": b * 360 / n_buckets, "deg_hi": (b + 1) * 360 / n_buckets,
                     "brierFDE@6": rep.aggregate["brierFDE@6"], "minFDE@6": rep.aggregate["minFDE@6"],
                     "agents": rep.count})
    return rows


def sweep_variance(rows: list[dict], key: str = "brierFDE@6") -> tuple[float, float]:
    v = np.array([r[key] for r in rows])
    return float(v.var()), float(v.mean())


# --------------------------------------------------------------------------
# runtime scaling

def synthetic_bench_scene(n_agents: int, n_nodes: int, cfg: ModelConfig, seed: int = 0):
    """A grid of parallel straight lanes with ``n_nodes`` nodes and agents placed along them."""
    from .lanegraph import Lane, MapSource

    rng = np.random.default_rng(seed)
    per_lane = 10
    n_lanes = max(1, int(np.ceil(n_nodes / per_lane)))
    lanes = []
    for i in range(n_lanes):
        count = min(per_lane, n_nodes - i * per_lane)
        y = 3.7 * i
        lanes.append(Lane(f"l{i}", [[0.0, y], [3.0 * count, y]]))
    g = build_lane_graph(MapSource(lanes), 3.0)
    tracks = []
    T1 = cfg.history_steps + 1
    for a in range(n_agents):
        lane = rng.integers(n_lanes)
        x = rng.uniform(5.0, 25.0)
        v = rng.uniform(3.0, 10.0)
        xs = x - v * 0.1 * np.arange(T1)[::-1]
        pos = np.c_[xs, np.full(T1, 3.7 * lane + rng.uniform(-0.3, 0.3))]
        tracks.append(AgentTrack(f"a{a}", "vehicle", pos, np.tile([1.0, 0.0], (T1, 1)), np.tile([v, 0.0], (T1, 1)),
                                 (4.6, 1.9), np.ones(T1, bool)))
    return g, tracks


def _agent_centric_scene(g: LaneGraph, tracks: list[AgentTrack], focus: int, cfg: ModelConfig):
    """The scene re-expressed in agent ``focus``'s frame, with that agent first."""
    c0, h0 = tracks[focus].pose0
    T = SE2(0.0, (0.0, 0.0)).compose(SE2(-np.arctan2(h0[1], h0[0]), (0.0, 0.0))).compose(SE2(0.0, -c0))
    gl = LaneGraph(T.apply_points(g.centroids), T.apply_vectors(g.headings), g.features, g.entity, g.widths,
                   g.edges, g.lane_of_node)
    moved = [AgentTrack(t.id, t.agent_class, T.apply_points(t.positions), T.apply_vectors(t.headings),
                        T.apply_vectors(t.velocities), t.box, t.observed) for t in tracks]
    order = [focus] + [i for i in range(len(tracks)) if i != focus]
    return prepare_scene(gl, [moved[i] for i in order], cfg, goal_features=False)


def encode_shared(model: ForecastModel, g: LaneGraph, tracks: list[AgentTrack]):
    """One pass through the encoders for all agents; returns agent embeddings."""
    scene = prepare_scene(g, tracks, model.cfg, goal_features=False)
    batch = make_batch([scene])
    with dm.no_grad():
        agent0 = model.history(batch.hist, model.dtype)
        lane = model.lane(batch.map_feats, batch.map_edges, batch.map_edge_raw, model.dtype)
        agent, _ = model.scene(agent0, lane, batch.map_edges, batch.map_edge_raw, batch.scene, model.dtype)
    return agent.data


def encode_per_agent(model: ForecastModel, g: LaneGraph, tracks: list[AgentTrack]):
    """One agent-centric copy of the scene per agent, batched; returns each focus agent's embedding."""
    scenes = [_agent_centric_scene(g, tracks, i, model.cfg) for i in range(len(tracks))]
    batch = make_batch(scenes)
    with dm.no_grad():
        agent0 = model.history(batch.hist, model.dtype)
        lane = model.lane(batch.map_feats, batch.map_edges, batch.map_edge_raw, model.dtype)
        agent, _ = model.scene(agent0, lane, batch.map_edges, batch.map_edge_raw, batch.scene, model.dtype)
    return agent.data[batch.agent_offset]


def _median_time(fn, trials: int) -> float:
    times = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def runtime_bench(model: ForecastModel, agent_counts=(1, 5, 10, 20, 40), node_counts=(10, 50, 100, 250),
                  fixed_nodes: int = 250, fixed_agents: int = 40, trials: int = 20, seed: int = 0,
                  check_tol: float = 1e-9) -> list[dict]:
    """Median encoder wall time in shared and per-agent mode.

    Before timing each configuration the two modes must yield the same
    per-agent embeddings (within ``check_tol``); a mismatch raises.
    Relative times are against the smallest configuration of each sweep.
    """
    rows = []
    for sweep, values in (("agents", agent_counts), ("nodes", node_counts)):
        base = {}
        for v in values:
            A, M = (v, fixed_nodes) if sweep == "agents" else (fixed_agents, v)
            g, tracks = synthetic_bench_scene(A, M, model.cfg, seed)
            shared = encode_shared(model, g, tracks)
            per = encode_per_agent(model, g, tracks)
            if not np.allclose(shared, per, atol=check_tol, rtol=0):
                raise AssertionError(f"shared and per-agent encodings differ at agents={A}, nodes={M}")
            encode_shared(model, g, tracks)       # warm-up
            for mode, fn in (("shared", encode_shared), ("per_agent", encode_per_agent)):
                t = _median_time(lambda: fn(model, g, tracks), trials)
                base.setdefault(mode, t)
                rows.append({"sweep": sweep, "mode": mode, "agents": A, "nodes": g.num_nodes, "seconds": t,
                             "relative": t / base[mode]})
    return rows


# --------------------------------------------------------------------------
# sample efficiency

def sample_efficiency(train_samples, holdout, model_cfgs: dict[str, ModelConfig], train_cfg,
                      fractions=(0.1, 0.25, 0.5, 1.0)) -> list[dict]:
    """Train from scratch on growing prefixes of the training set; evaluate on the holdout."""
    from .training import train

    rows = []
    for frac in sorted(fractions):
        n = max(1, int(round(frac * len(train_samples))))
        for name, mcfg in model_cfgs.items():
            res = train(train_samples[:n], mcfg, train_cfg)
            rep = evaluate_model(res.model, holdout)
            rows.append({"model": name, "fraction": frac, "train_scenarios": n, **rep.row()})
    return rows


def write_csv(path, rows: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols: list[str] = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
