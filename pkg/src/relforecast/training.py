"""Supervision targets, the three-term objective, and the training loop."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import diffmath as dm
from .diffmath import checkpoint
from .encoders import AgentTrack
from .geometry import world_to_local
from .lanegraph import LaneGraph, MapError, build_lane_graph, distance_to_lane_graph, nearest_node
from .model import BatchOutput, ForecastModel, ModelConfig, make_batch, prepare_scene
from .scenarios import DOMAINS, Scenario

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    w_goal_cls: float = 1.0
    w_goal_reg: float = 1.0
    w_traj: float = 1.0
    focal_gamma: float = 2.0
    huber_delta: float = 1.0
    lr: float = 5e-4
    lr_step: int = 15
    lr_decay: float = 0.25
    epochs: int = 30
    batch_size: int = 8
    scale_min: float = 0.8
    scale_max: float = 1.2
    margin: float = 10.0
    seed: int = 0
    eval_every: int = 1
    # reference values at full scale; not used by the loop
    reference_batch_size: int = 64
    reference_epochs: int = 17

    def __post_init__(self):
        if min(self.w_goal_cls, self.w_goal_reg, self.w_traj) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 < self.scale_min <= self.scale_max:
            raise ValueError("need 0 < scale_min <= scale_max")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0 or self.margin < 0 or self.focal_gamma < 0:
            raise ValueError("lr must be positive; margin and focal_gamma non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path) -> tuple[ModelConfig | None, TrainConfig, dict]:
    """Read a JSON config with optional ``model``, ``train`` and ``data`` sections."""
    raw = json.loads(Path(path).read_text())
    unknown = set(raw) - {"model", "train", "data"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    model = ModelConfig.from_dict(raw["model"]) if "model" in raw else None
    return model, TrainConfig.from_dict(raw.get("train", {})), raw.get("data", {})


# --------------------------------------------------------------------------
# targets

@dataclass
class SupervisionMask:
    goal: np.ndarray            # (A,) bool
    traj: np.ndarray            # (A,) bool
    target_node: np.ndarray     # (A,) local node index (0 when unsupervised)
    target_offset: np.ndarray   # (A, 2) node frame
    target_local: np.ndarray    # (A, T_f, 2) agent frame
    gt_goal: np.ndarray         # (A, 2) world; NaN when absent

    @property
    def num_agents(self) -> int:
        return len(self.goal)


def _frame(h: np.ndarray, relpose: bool) -> np.ndarray:
    return h if relpose else np.broadcast_to(np.array([1.0, 0.0]), h.shape)


def make_targets(tracks: list[AgentTrack], g: LaneGraph, future_steps: int, margin: float = 10.0,
                 relpose: bool = True) -> SupervisionMask:
    """Goal node, node-frame offset and agent-frame waypoints for every agent.

    Agents whose future leaves the ``margin`` band around the lane graph, or
    whose future is missing, are unsupervised.
    """
    if g.num_nodes == 0:
        raise MapError("lane graph is empty")
    A = len(tracks)
    goal = np.zeros(A, dtype=bool)
    node = np.zeros(A, dtype=np.int64)
    offset = np.zeros((A, 2))
    local = np.zeros((A, future_steps, 2))
    gt_goal = np.full((A, 2), np.nan)
    node_frame = _frame(g.headings, relpose)
    for i, t in enumerate(tracks):
        fut = t.future
        if fut is None or len(fut) != future_steps or not np.all(np.isfinite(fut)):
            continue
        if np.max(distance_to_lane_graph(g, fut)) > margin:
            continue
        goal[i] = True
        gt_goal[i] = fut[-1]
        node[i] = nearest_node(g.centroids, fut[-1:])[0]
        offset[i] = world_to_local(g.centroids[node[i]], node_frame[node[i]], fut[-1])
        c0, h0 = t.pose0
        local[i] = world_to_local(c0, _frame(h0, relpose), fut)
    return SupervisionMask(goal, goal.copy(), node, offset, local, gt_goal)


def concat_masks(masks: list[SupervisionMask]) -> SupervisionMask:
    return SupervisionMask(*(np.concatenate([getattr(m, f.name) for m in masks])
                             for f in fields(SupervisionMask)))


# --------------------------------------------------------------------------
# objective

def teacher_force_goal(mask: SupervisionMask, out: BatchOutput, training: bool = True) -> np.ndarray:
    """Conditioning goal per agent (world frame, no gradient).

    Ground truth where available during training; otherwise the most likely
    predicted goal (argmax node plus its offset).
    """
    field_ = out.goals
    probs = field_.probabilities()
    idx = field_.index
    offsets = field_.offsets.data.astype(float)
    goals = np.zeros((idx.num_agents, 2))
    for a in range(idx.num_agents):
        if training and mask.goal[a]:
            goals[a] = mask.gt_goal[a]
            continue
        lo = idx.offsets[a]
        n = lo + int(np.argmax(probs[lo:lo + idx.sizes[a]]))
        goals[a] = out.goal_c[n] + _rotate(out.goal_frame_h[n], offsets[n])
    return goals


def _rotate(h, v):
    return np.array([v[0] * h[0] - v[1] * h[1], v[0] * h[1] + v[1] * h[0]])


@dataclass
class LossBreakdown:
    total: dm.Tensor | None
    goal_cls: float = 0.0
    goal_reg: float = 0.0
    traj: float = 0.0
    supervised: int = 0


def compute_loss(model: ForecastModel, out: BatchOutput, mask: SupervisionMask, cfg: TrainConfig) -> LossBreakdown:
    """Weighted sum of focal goal classification, node-frame offset Huber and agent-frame waypoint Huber.

    Each term is averaged over the agents it supervises. Returns ``total=None``
    when nothing in the batch is supervised.
    """
    n_goal = int(mask.goal.sum())
    n_traj = int(mask.traj.sum())
    if out.goals is None or (n_goal == 0 and n_traj == 0):
        return LossBreakdown(None)
    field_ = out.goals
    idx = field_.index
    dtype = model.dtype
    targets = idx.offsets + mask.target_node
    terms = []
    parts = {}
    if n_goal:
        gm = dm.Tensor(mask.goal.astype(dtype))
        cls = dm.segment_focal_loss(field_.logits, idx.component, targets, cfg.focal_gamma)
        cls = dm.mul(cls, gm).sum() * (1.0 / n_goal)
        off = dm.gather_rows(field_.offsets, targets)
        reg = dm.huber_elementwise(off, mask.target_offset.astype(dtype), cfg.huber_delta).sum(axis=1)
        reg = dm.mul(reg, gm).sum() * (1.0 / n_goal)
        terms += [cls * cfg.w_goal_cls, reg * cfg.w_goal_reg]
        parts["goal_cls"], parts["goal_reg"] = cls.item(), reg.item()
    if n_traj:
        goals = teacher_force_goal(mask, out, training=True)
        pred = model.complete_local(out, np.arange(idx.num_agents), goals)
        per = dm.huber_elementwise(pred, mask.target_local.astype(dtype), cfg.huber_delta).sum(axis=2).mean(axis=1)
        traj = dm.mul(per, dm.Tensor(mask.traj.astype(dtype))).sum() * (1.0 / n_traj)
        terms.append(traj * cfg.w_traj)
        parts["traj"] = traj.item()
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return LossBreakdown(total, supervised=max(n_goal, n_traj), **parts)


def scale_augment(scenario: Scenario, s: float) -> Scenario:
    """Scale every length (map, positions, velocities, boxes); headings stay."""
    return scenario.scaled(s)


# --------------------------------------------------------------------------
# data plumbing

@dataclass
class Sample:
    scenario: Scenario
    graph: LaneGraph


def build_samples(scenarios, interval: float | None = None) -> list[Sample]:
    out = []
    for sc in scenarios:
        iv = interval if interval is not None else DOMAINS[sc.domain].interval
        out.append(Sample(sc, build_lane_graph(sc.map, iv)))
    return out


def prepare_batch(model: ForecastModel, samples: list[Sample], margin: float, scales: list[float] | None = None):
    cfg = model.cfg
    scenes, masks = [], []
    for i, smp in enumerate(samples):
        sc, g = smp.scenario, smp.graph
        if scales is not None and scales[i] != 1.0:
            sc = scale_augment(sc, scales[i])
            g = g.scaled(scales[i])
        scenes.append(prepare_scene(g, sc.agents, cfg, sc.id))
        masks.append(make_targets(sc.agents, g, cfg.future_steps, margin * (scales[i] if scales else 1.0),
                                  cfg.relpose))
    return make_batch(scenes), concat_masks(masks)


# --------------------------------------------------------------------------
# loop

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: ForecastModel
    history: list[dict] = field(default_factory=list)


HISTORY_FIELDS = ["epoch", "lr", "loss", "goal_cls", "goal_reg", "traj", "skipped_batches"]


def train(samples: list[Sample], model_cfg: ModelConfig, cfg: TrainConfig = TrainConfig(),
          holdout: list[Sample] | None = None, out_dir=None,
          evaluate: Callable[[ForecastModel, list[Sample]], dict] | None = None) -> TrainResult:
    """Adam with a step schedule; one checkpoint per epoch when ``out_dir`` is given.

    ``evaluate(model, holdout)`` returns metric columns appended to each
    history row. A non-finite loss restores the last good parameters and
    raises ``TrainingDiverged``.
    """
    if not samples:
        raise ValueError("empty training set")
    model = ForecastModel(model_cfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    sched = dm.StepLR(cfg.lr, cfg.lr_step, cfg.lr_decay)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    good = checkpoint.dumps(model.store, {"model": model_cfg.to_dict(), "epoch": -1})
    history: list[dict] = []
    for epoch in range(cfg.epochs):
        lr = sched.lr_at(epoch)
        order = rng.permutation(len(samples))
        sums = {"loss": 0.0, "goal_cls": 0.0, "goal_reg": 0.0, "traj": 0.0}
        steps = skipped = 0
        for b in range(0, len(order), cfg.batch_size):
            chosen = [samples[i] for i in order[b:b + cfg.batch_size]]
            scales = rng.uniform(cfg.scale_min, cfg.scale_max, size=len(chosen)).tolist()
            batch, mask = prepare_batch(model, chosen, cfg.margin, scales)
            try:
                out = model.forward(batch)
                parts = compute_loss(model, out, mask, cfg)
                if parts.total is None:
                    log.warning("epoch %d batch %d: no supervised agents, step skipped", epoch, b // cfg.batch_size)
                    skipped += 1
                    continue
                value = parts.total.item()
                if not math.isfinite(value):
                    raise FloatingPointError("non-finite loss")
                model.store.zero_grad()
                parts.total.backward()
                dm.adam_step(model.store, lr)
            except FloatingPointError as e:
                store, _ = checkpoint.loads(good)
                model.load_params(store)
                if out_dir is not None:
                    checkpoint.atomic_write(out_dir / "last_good.ckpt", good)
                raise TrainingDiverged(f"epoch {epoch}: {e}; parameters restored to the last good checkpoint") from e
            sums["loss"] += value
            sums["goal_cls"] += parts.goal_cls
            sums["goal_reg"] += parts.goal_reg
            sums["traj"] += parts.traj
            steps += 1
        row = {"epoch": epoch, "lr": lr, **{k: v / max(steps, 1) for k, v in sums.items()},
               "skipped_batches": skipped}
        if evaluate is not None and holdout and cfg.eval_every and (
                (epoch + 1) % cfg.eval_every == 0 or epoch == cfg.epochs - 1):
            row.update(evaluate(model, holdout))
        history.append(row)
        good = checkpoint.dumps(model.store, {"model": model_cfg.to_dict(), "train": cfg.to_dict(), "epoch": epoch})
        if out_dir is not None:
            checkpoint.atomic_write(out_dir / f"epoch_{epoch:03d}.ckpt", good)
            checkpoint.atomic_write(out_dir / "last_good.ckpt", good)
            write_history(out_dir / "history.csv", history)
        log.info("epoch %d %s", epoch, {k: round(v, 4) if isinstance(v, float) else v for k, v in row.items()})
    return TrainResult(model, history)


def write_history(path, history: list[dict]) -> None:
    cols = list(HISTORY_FIELDS)
    for row in history:
        cols += [k for k in row if k not in cols]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
