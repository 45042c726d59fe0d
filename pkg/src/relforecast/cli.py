"""Command-line entry point: ``relforecast <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import diffmath as dm
from .decoder import SamplerConfig, write_forecasts_jsonl
from .evaluation import (
    cv_forecasts,
    evaluate_model,
    holdout_metrics,
    metrics,
    runtime_bench,
    sample_efficiency,
    scored_agents,
    sweep_variance,
    viewpoint_sweep,
    write_csv,
)
from .lanegraph import build_lane_graph, cache_load, cache_store
from .model import ForecastModel, ModelConfig
from .scenarios import (DOMAINS, TEMPLATES, BehaviorMix, generate_dataset, iter_scenarios, read_scenarios,
                        write_scenarios)
from .training import TrainConfig, build_samples, load_config, train

log = logging.getLogger("relforecast")


def _config(args) -> tuple[ModelConfig | None, TrainConfig, dict]:
    if args.config is None:
        return None, TrainConfig(seed=args.seed), {}
    mcfg, tcfg, data = load_config(args.config)
    return mcfg, dataclasses.replace(tcfg, seed=args.seed), data


def _model_config_for(scenarios, mcfg: ModelConfig | None) -> ModelConfig:
    """The configured model, with horizons taken from the data when not configured."""
    dom = DOMAINS[scenarios[0].domain]
    if mcfg is None:
        return ModelConfig(history_steps=dom.history_steps, future_steps=dom.future_steps)
    return mcfg


def _agents_arg(text: str) -> int | tuple[int, int]:
    if "-" in text:
        lo, hi = text.split("-", 1)
        return int(lo), int(hi)
    return int(text)


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(args) -> None:
    _, _, data = _config(args)
    templates = args.template or data.get("templates") or list(TEMPLATES)
    mix = BehaviorMix.from_dict(data.get("behavior_mix", {}))
    n = write_scenarios(args.out, generate_dataset(args.count, templates, _agents_arg(args.agents), args.seed,
                                                   args.domain, mix))
    log.info("wrote %d scenarios to %s", n, args.out)


def cmd_train(args) -> None:
    mcfg, tcfg, _ = _config(args)
    if args.epochs is not None:
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
    scenarios = read_scenarios(args.data)
    if not scenarios:
        raise ValueError(f"{args.data} holds no scenarios")
    mcfg = _model_config_for(scenarios, mcfg)
    holdout = build_samples(read_scenarios(args.holdout)) if args.holdout else None
    out = Path(args.out)
    res = train(build_samples(scenarios), mcfg, tcfg, holdout, out, holdout_metrics if holdout else None)
    res.model.save(out / "model.ckpt", {"train": tcfg.to_dict(), "epoch": tcfg.epochs - 1})
    _write_json(out / "config.json", {"model": mcfg.to_dict(), "train": tcfg.to_dict()})
    log.info("saved %s", out / "model.ckpt")


def cmd_eval(args) -> None:
    samples = build_samples(read_scenarios(args.data))
    if args.baseline == "cv":
        scs = [s.scenario for s in samples]
        report = metrics(cv_forecasts(scs), scs, [scored_agents(s.scenario, s.graph) for s in samples])
    else:
        model, _ = ForecastModel.load(args.checkpoint)
        report = evaluate_model(model, samples, SamplerConfig(k=args.k))
    out = Path(args.out)
    _write_json(out, {"aggregate": report.aggregate, "agents": report.count})
    write_csv(out.with_suffix(".per_scenario.csv"), [{"scenario": k, **v} for k, v in report.per_scenario.items()])
    print(json.dumps(report.aggregate, sort_keys=True))


def cmd_predict(args) -> None:
    model, _ = ForecastModel.load(args.checkpoint)
    sampler = SamplerConfig(k=args.k)
    chash = model.checkpoint_hash()
    results, hits, total = [], 0, 0
    for sc in iter_scenarios(args.data):
        g = build_lane_graph(sc.map, DOMAINS[sc.domain].interval)
        emb = None
        if args.cache_dir:
            path = Path(args.cache_dir) / f"{g.content_hash()}.mapcache"
            if path.exists():
                emb = cache_load(path, g, chash)
        hits += emb is not None
        total += 1
        scene = model.prepare(g, sc.agents, sc.id)
        results.append(model.forecast(scene, sampler, emb))
    write_forecasts_jsonl(args.out, results)
    log.info("forecast %d scenarios (%d from cached map embeddings)", total, hits)


def cmd_cache_map(args) -> None:
    model, _ = ForecastModel.load(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seen = set()
    for sc in iter_scenarios(args.data):
        g = build_lane_graph(sc.map, DOMAINS[sc.domain].interval)
        key = g.content_hash()
        if key in seen:
            continue
        seen.add(key)
        scene = model.prepare(g, [], sc.id)
        with dm.no_grad():
            emb = model.encode_map(scene).data
        cache_store(out / f"{key}.mapcache", g, emb, model.checkpoint_hash())
    log.info("cached %d lane graphs in %s", len(seen), out)


def cmd_bench_runtime(args) -> None:
    if args.checkpoint:
        model, _ = ForecastModel.load(args.checkpoint)
    else:
        mcfg, _, _ = _config(args)
        model = ForecastModel(mcfg or ModelConfig(), seed=args.seed)
    rows = runtime_bench(model, trials=args.trials, seed=args.seed)
    write_csv(args.out, rows)
    for r in rows:
        print(f"{r['sweep']:6s} {r['mode']:9s} agents={r['agents']:3d} nodes={r['nodes']:4d} "
              f"median={r['seconds']:.4f}s relative={r['relative']:.2f}")


def cmd_sweep_viewpoint(args) -> None:
    model, _ = ForecastModel.load(args.checkpoint)
    scenarios = read_scenarios(args.data)
    rows = viewpoint_sweep(model, scenarios, args.buckets, args.seed)
    var, mean = sweep_variance(rows)
    write_csv(args.out, rows)
    _write_json(Path(args.out).with_suffix(".summary.json"), {"variance": var, "mean": mean,
                                                              "relative_variance": var / mean if mean else None})
    print(f"brierFDE@6 mean={mean:.6f} variance={var:.3e}")


def cmd_sample_efficiency(args) -> None:
    mcfg, tcfg, _ = _config(args)
    train_s = read_scenarios(args.data)
    mcfg = _model_config_for(train_s, mcfg)
    cfgs = {"relative": mcfg, "global_frame": dataclasses.replace(mcfg, relpose=False)}
    rows = sample_efficiency(build_samples(train_s), build_samples(read_scenarios(args.holdout)), cfgs, tcfg,
                             tuple(float(f) for f in args.fractions.split(",")))
    write_csv(args.out, rows)


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--config", type=Path, help="JSON config with model/train/data sections")
    common.add_argument("--out", type=Path, required=True, help="output file or directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="relforecast", description="Viewpoint-invariant motion forecasting toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="generate a synthetic scenario file (JSONL)")
    s.add_argument("--template", action="append", choices=TEMPLATES, help="repeatable; default: all templates")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--agents", default="2-4", help="agents per scenario, N or LO-HI")
    s.add_argument("--domain", choices=sorted(DOMAINS), default="urban")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train", parents=[common], help="train a model; writes checkpoints and history.csv")
    s.add_argument("--data", required=True)
    s.add_argument("--holdout")
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="metrics of a checkpoint (or a baseline) on a dataset")
    s.add_argument("--data", required=True)
    group = s.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--baseline", choices=["cv"])
    s.add_argument("--k", type=int, default=6)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", parents=[common], help="write multi-modal forecasts as JSONL")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--cache-dir", help="directory of map-embedding caches from cache-map")
    s.add_argument("--k", type=int, default=6)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("cache-map", parents=[common], help="precompute lane-graph embeddings for a dataset's maps")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_cache_map)

    s = sub.add_parser("bench-runtime", parents=[common], help="shared vs per-agent encoder timing (CSV)")
    s.add_argument("--checkpoint")
    s.add_argument("--trials", type=int, default=20)
    s.set_defaults(func=cmd_bench_runtime)

    s = sub.add_parser("sweep-viewpoint", parents=[common], help="metrics per rotation bucket (CSV)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--buckets", type=int, default=8)
    s.set_defaults(func=cmd_sweep_viewpoint)

    s = sub.add_parser("sample-efficiency", parents=[common], help="holdout metrics vs training-set fraction")
    s.add_argument("--data", required=True)
    s.add_argument("--holdout", required=True)
    s.add_argument("--fractions", default="0.1,0.25,0.5,1.0")
    s.set_defaults(func=cmd_sample_efficiency)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as e:      # every failure becomes a message and a nonzero exit code
        if args.verbose:
            log.exception("command failed")
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
