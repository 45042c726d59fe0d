import csv

import numpy as np
import pytest

from relforecast import evaluation
from relforecast.decoder import AgentForecast, ForecastSet
from relforecast.evaluation import (
    METRIC_KEYS,
    agent_metrics,
    along_cross,
    constant_velocity,
    cv_forecasts,
    encode_per_agent,
    encode_shared,
    evaluate_model,
    gt_tangents,
    metrics,
    rotate_about,
    runtime_bench,
    sample_efficiency,
    scenario_pivot,
    scored_agents,
    sweep_variance,
    synthetic_bench_scene,
    viewpoint_sweep,
    write_csv,
)
from relforecast.lanegraph import MapSource
from relforecast.scenarios import Scenario
from relforecast.training import TrainConfig, build_samples, train
from metric_oracle import naive_agent_metrics
from scenes import FUT, random_scene, tiny_config, tiny_model, track


def random_forecast(rng, T=12, K=6):
    gt = np.cumsum(rng.normal(size=(T, 2)) + [1.5, 0.0], axis=0)
    trajs = gt[None] + rng.normal(scale=rng.uniform(0.2, 4.0), size=(K, T, 2))
    probs = rng.dirichlet(np.ones(K))
    return trajs, probs, gt


class TestAgentMetrics:
    def test_matches_loop_oracle(self, rng):
        for _ in range(100):
            trajs, probs, gt = random_forecast(rng, T=int(rng.integers(2, 30)))
            got = agent_metrics(trajs, probs, gt)
            ref = naive_agent_metrics(trajs.tolist(), probs.tolist(), gt.tolist())
            for k in METRIC_KEYS:
                assert got[k] == ref[k], k

    def test_perfect_forecast_is_zero(self):
        gt = np.c_[np.arange(1.0, 9.0), np.zeros(8)]
        trajs = np.repeat(gt[None], 6, axis=0)
        m = agent_metrics(trajs, [1, 0, 0, 0, 0, 0], gt)
        assert all(v == 0.0 for v in m.values())

    def test_three_metres_off_with_half_probability(self):
        gt = np.c_[np.arange(1.0, 9.0), np.zeros(8)]
        trajs = np.repeat(gt[None], 6, axis=0) + 50.0
        trajs[2] = gt
        trajs[2, -1] += [0.0, 3.0]
        probs = np.array([0.3, 0.1, 0.5, 0.05, 0.03, 0.02])
        m = agent_metrics(trajs, probs, gt)
        assert m["minFDE@6"] == pytest.approx(3.0)
        assert m["brierFDE@6"] == pytest.approx(3.25)
        assert m["MR@6"] == 1.0

    def test_lateral_offset_is_pure_cross_track(self):
        gt = np.c_[np.arange(1.0, 9.0), np.zeros(8)]
        trajs = np.repeat(gt[None] + [0.0, 1.0], 6, axis=0)
        m = agent_metrics(trajs, np.full(6, 1 / 6), gt)
        assert m["ATE@1"] == pytest.approx(0.0, abs=1e-12)
        assert m["CTE@1"] == pytest.approx(1.0)

    def test_endpoint_decomposition(self, rng):
        for _ in range(100):
            trajs, _, gt = random_forecast(rng)
            a, c = along_cross(trajs[0], gt)
            e = np.sum((trajs[0, -1] - gt[-1]) ** 2)
            assert a[-1] ** 2 + c[-1] ** 2 == pytest.approx(e, abs=1e-9)

    def test_invariants(self, rng):
        for _ in range(100):
            m = agent_metrics(*random_forecast(rng))
            assert m["minFDE@6"] <= m["minFDE@1"] and m["minADE@6"] <= m["minADE@1"]
            for base in ("minFDE@1", "minFDE@6"):
                assert m["brier" + base[3:]] >= m[base]
            assert m["MR@6"] in (0.0, 1.0)

    def test_shape_errors(self):
        gt = np.zeros((8, 2))
        with pytest.raises(ValueError):
            agent_metrics(np.zeros((3, 8, 2)), np.full(3, 1 / 3), gt)
        with pytest.raises(ValueError):
            agent_metrics(np.zeros((6, 7, 2)), np.full(6, 1 / 6), gt)
        with pytest.raises(ValueError):
            agent_metrics(np.zeros((6, 8, 2)), np.full(5, 0.2), gt)


def test_tangents_central_and_one_sided():
    gt = np.array([[0.0, 0], [1, 0], [2, 1], [2, 3]])
    t = gt_tangents(gt)
    np.testing.assert_allclose(t[0], [1, 0])
    np.testing.assert_allclose(t[1], np.array([2, 1]) / np.sqrt(5))
    np.testing.assert_allclose(t[-1], [0, 1])
    still = gt_tangents(np.zeros((4, 2)))
    np.testing.assert_array_equal(still, np.tile([1.0, 0.0], (4, 1)))


def _scene(tracks):
    return Scenario("s", "urban", "x", MapSource(), tracks, 0.5)


class TestAggregation:
    def test_metrics_average_over_scored_agents(self, rng):
        scs, fcs, rows = [], [], []
        for j in range(5):
            tracks, agents = [], []
            for i in range(3):
                trajs, probs, gt = random_forecast(rng, T=FUT)
                t = track(f"a{i}", [0.0, 0.0], 0.0, 1.0, future=gt)
                tracks.append(t)
                agents.append(AgentForecast(t.id, trajs[:, -1], probs, trajs))
                rows.append(naive_agent_metrics(trajs.tolist(), probs.tolist(), gt.tolist()))
            scs.append(Scenario(f"s{j}", "urban", "x", MapSource(), tracks, 0.5))
            fcs.append(ForecastSet(f"s{j}", agents))
        rep = metrics(fcs, scs)
        assert rep.count == 15 and len(rep.per_scenario) == 5
        for k in METRIC_KEYS:
            assert rep.aggregate[k] == pytest.approx(np.mean([r[k] for r in rows]), rel=1e-12)

    def test_scored_agents_skip_missing_futures(self):
        a = track("a", [0, 0], 0.0, 1.0)
        b = track("b", [0, 0], 0.0, 1.0)
        b.future = None
        assert scored_agents(_scene([a, b])) == [0]

    def test_constant_velocity(self):
        t = track("a", [2.0, 1.0], np.pi / 4, 4.0)
        cv = constant_velocity(t, FUT, 0.5)
        np.testing.assert_allclose(cv, t.future, atol=1e-12)
        fs = cv_forecasts([_scene([t])])
        assert fs[0].agents[0].trajectories.shape == (6, FUT, 2)
        assert metrics(fs, [_scene([t])]).aggregate["minFDE@1"] == pytest.approx(0.0, abs=1e-12)


class TestViewpoint:
    def test_zero_rotation_equals_plain_evaluation(self, rng):
        m = tiny_model()
        scs = [random_scene(rng, "fork"), random_scene(rng, "intersection")]
        base = evaluate_model(m, build_samples(scs, 3.0)).aggregate
        same = [rotate_about(s, 0.0, scenario_pivot(s)) for s in scs]
        rot = evaluate_model(m, build_samples(same, 3.0)).aggregate
        for k in METRIC_KEYS:
            assert rot[k] == pytest.approx(base[k], abs=1e-9)

    def test_pivot_is_fixed_point(self, rng):
        sc = random_scene(rng)
        p = scenario_pivot(sc)
        moved = rotate_about(sc, 1.1, p)
        d0 = np.hypot(*(sc.agents[0].positions[-1] - p))
        d1 = np.hypot(*(moved.agents[0].positions[-1] - p))
        assert d1 == pytest.approx(d0, rel=1e-12)

    def test_sweep_of_invariant_model_is_flat(self, rng):
        m = tiny_model()
        scs = [random_scene(rng, "fork") for _ in range(2)]
        rows = viewpoint_sweep(m, scs, n_buckets=4, seed=1, interval=3.0)
        assert [r["bucket"] for r in rows] == [0, 1, 2, 3]
        var, mean = sweep_variance(rows)
        assert var <= 1e-6 * mean

    def test_global_frame_ablation_depends_on_view(self, rng):
        m = tiny_model(relpose=False)
        scs = [random_scene(rng, "fork") for _ in range(2)]
        rows = viewpoint_sweep(m, scs, n_buckets=4, seed=1, interval=3.0)
        var, mean = sweep_variance(rows)
        assert var > 1e-6 * mean


class TestRuntime:
    def test_shared_equals_per_agent(self):
        m = tiny_model()
        g, tracks = synthetic_bench_scene(5, 40, m.cfg, seed=2)
        np.testing.assert_allclose(encode_per_agent(m, g, tracks), encode_shared(m, g, tracks), atol=1e-9, rtol=0)

    def test_bench_rows_and_gate(self, monkeypatch):
        m = tiny_model()
        rows = runtime_bench(m, agent_counts=(1, 3), node_counts=(10, 20), fixed_nodes=20, fixed_agents=3,
                             trials=2)
        assert len(rows) == 8
        assert {r["mode"] for r in rows} == {"shared", "per_agent"}
        assert all(r["relative"] > 0 for r in rows)
        firsts = [r for r in rows if r["agents"] == 1 and r["sweep"] == "agents"]
        assert all(r["relative"] == 1.0 for r in firsts)

        real = evaluation.encode_per_agent
        monkeypatch.setattr(evaluation, "encode_per_agent", lambda *a: real(*a) + 1e-6)
        with pytest.raises(AssertionError, match="differ"):
            runtime_bench(m, agent_counts=(1,), node_counts=(10,), fixed_nodes=10, fixed_agents=1, trials=1)

    def test_synthetic_scene_sizes(self):
        g, tracks = synthetic_bench_scene(7, 250, tiny_config())
        assert g.num_nodes == 250 and len(tracks) == 7


class TestSampleEfficiency:
    def test_sizes_monotone_and_full_fraction_equals_train(self, rng):
        samples = build_samples([random_scene(rng, t) for t in ("fork", "intersection", "fork", "intersection")],
                                3.0)
        holdout = samples[:1]
        cfg = TrainConfig(epochs=1, batch_size=2)
        rows = sample_efficiency(samples, holdout, {"relpose": tiny_config()}, cfg, fractions=(0.5, 0.25, 1.0))
        sizes = [r["train_scenarios"] for r in rows]
        assert sizes == sorted(sizes) == [1, 2, 4]
        plain = evaluate_model(train(samples, tiny_config(), cfg).model, holdout).aggregate
        for k in METRIC_KEYS:
            assert rows[-1][k] == plain[k]


def test_write_csv(tmp_path):
    write_csv(tmp_path / "x" / "r.csv", [{"a": 1, "b": 0.1}, {"a": 2, "c": "z"}])
    with open(tmp_path / "x" / "r.csv") as f:
        rows = list(csv.DictReader(f))
    assert rows[0]["b"] == "0.1" and rows[1]["c"] == "z" and rows[1]["b"] == ""
