"""Small models and scenes shared by the tests."""

import numpy as np

from relforecast.encoders import AgentTrack
from relforecast.lanegraph import build_lane_graph
from relforecast.model import ForecastModel, ModelConfig
from relforecast.scenarios import generate

HIST = 6
FUT = 8


def tiny_config(**kw) -> ModelConfig:
    base = dict(hidden=8, pos_dim=6, n_freq=4, lane_layers=2, scene_layers=1, goal_layers=1, conv_blocks=1,
                history_steps=HIST, future_steps=FUT)
    base.update(kw)
    return ModelConfig(**base)


def tiny_model(seed=0, **kw) -> ForecastModel:
    return ForecastModel(tiny_config(**kw), seed=seed)


def track(agent_id, start, heading_yaw, speed, steps=HIST, cls="vehicle", future=None, rng=None):
    """Straight-line track ending at ``start``; optional small heading noise."""
    h = np.array([np.cos(heading_yaw), np.sin(heading_yaw)])
    t = np.arange(-steps, 1) * 0.1
    pos = np.asarray(start, float) + t[:, None] * speed * h
    heads = np.tile(h, (steps + 1, 1))
    if rng is not None:
        yaw = heading_yaw + rng.normal(scale=0.05, size=steps + 1)
        heads = np.c_[np.cos(yaw), np.sin(yaw)]
        pos = pos + rng.normal(scale=0.1, size=pos.shape)
        pos[-1] = start
    vel = heads * speed
    if future is None:
        future = np.asarray(start, float) + (np.arange(1, FUT + 1) * 0.5)[:, None] * speed * h
    return AgentTrack(agent_id, cls, pos, heads, vel, (4.6, 1.9), np.ones(steps + 1, bool), future)


def random_scene(rng, template=None, n_agents=3):
    """A generated scenario cut down to the tiny model's horizons."""
    from relforecast.scenarios import TEMPLATES, Scenario

    template = template or TEMPLATES[int(rng.integers(len(TEMPLATES)))]
    sc = generate(template, n_agents, None, seed=int(rng.integers(1 << 30)), domain="urban")
    agents = []
    for a in sc.agents:
        fut = a.future[4::5][:FUT] if a.future is not None else None
        agents.append(AgentTrack(a.id, a.agent_class, a.positions[-HIST - 1:], a.headings[-HIST - 1:],
                                 a.velocities[-HIST - 1:], a.box, a.observed[-HIST - 1:] | _current(HIST), fut))
    return Scenario(sc.id, sc.domain, sc.template, sc.map, agents, 0.5)


def _current(steps):
    m = np.zeros(steps + 1, bool)
    m[-1] = True
    return m


def graph_of(sc, interval=3.0):
    return build_lane_graph(sc.map, interval)
