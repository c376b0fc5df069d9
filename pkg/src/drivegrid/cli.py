"""Command-line entry points: run, eval, bench, sysid, friction-table, forge."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import build_engine, load_scene_pool, parse_config
from .friction import SURFACE_ORDER, assign_friction
from .metrics import episode_metrics, run_bench, write_bench_csv
from .policies import LaneFollower, ReplayPolicy, ZeroPolicy
from .sysid import CEMConfig, run_cem
from .vehicle import (TUNABLE_PARAMS, VehicleParams, params_from_vector,
                      params_to_vector, save_params)
from .world import build_world_batch, export_world_batch


def _add_common(p):
    p.add_argument("--config", default=None, help="YAML config file (defaults when omitted)")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="output path")


def cmd_run(args) -> int:
    if getattr(args, "eval", False):
        for name, default in (("actions", None), ("zero_policy", False),
                              ("random_goals", False), ("record", None)):
            if not hasattr(args, name):
                setattr(args, name, default)
        return cmd_eval(args)
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    engine = build_engine(cfg)
    policy = LaneFollower(obs_config=engine.obs_config)
    log = engine.run_episode(policy, record=bool(args.out), max_steps=args.steps)
    print(f"ran {engine.step_count} control steps, "
          f"{int(engine.valid.sum())} agents, "
          f"{int(engine.event_seen['goal'].sum())} goals")
    if args.out:
        log.to_jsonl(args.out)
        print(f"trajectory log -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.invincible:
        cfg.eval.invincible = True
    if args.random_goals:
        cfg.eval.random_goals = True
    engine = build_engine(cfg)

    if args.actions:
        policy = ReplayPolicy.from_jsonl(args.actions, cfg.env.num_envs,
                                         cfg.env.num_agents_per_env)
    elif args.zero_policy:
        policy = ZeroPolicy()
    else:
        policy = LaneFollower(obs_config=engine.obs_config)

    record_steps = []
    if args.record:
        obs = engine.observe()
        for _ in range(args.steps or cfg.env.episode_len):
            out = engine.step(policy(obs))
            record_steps.append((out.obs, out.rewards, out.dones))
            obs = out.obs
            if not out.info["alive"].any():
                break
        np.savez_compressed(
            args.record,
            obs=np.stack([r[0] for r in record_steps]),
            rewards=np.stack([r[1] for r in record_steps]),
            dones=np.stack([r[2] for r in record_steps]),
        )
        print(f"step record -> {args.record}")
        # rebuild for clean metrics pass below
        engine = build_engine(cfg)
        if isinstance(policy, ReplayPolicy):
            policy.t = 0

    log = engine.run_episode(policy, record=True, max_steps=args.steps)
    m = episode_metrics(log, engine.valid, engine.length, engine.width,
                        wheelbase=engine.params.wheelbase)
    payload = m.to_dict()
    payload["invincible"] = cfg.eval.invincible
    text = json.dumps(payload, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_bench(args) -> int:
    grid = []
    for chunk in args.grid.split(","):
        w, m = chunk.lower().split("x")
        grid.append((int(w), int(m)))
    paths = ("vectorized",) if args.vectorized_only else ("vectorized", "reference")
    reports = run_bench(grid, steps=args.steps, warmup=args.warmup,
                        mode=args.mode, paths=paths, seed=args.seed or 42)
    for r in reports:
        print(f"{r.num_envs}x{r.num_agents} {r.backend:8s} {r.path:10s} "
              f"CASPS={r.casps:10.1f}  " +
              " ".join(f"{k}={v:.2f}ms" for k, v in r.phase_ms.items()))
    if args.out:
        write_bench_csv(reports, args.out)
        print(f"bench csv -> {args.out}")
    return 0


def cmd_sysid(args) -> int:
    base = VehicleParams()
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([args.seed or 0, 7])))
    if args.perturb > 0:
        signs = np.where(rng.random(len(params_to_vector(base))) < 0.5, -1.0, 1.0)
        teacher_vec = params_to_vector(base) * (1.0 + args.perturb * signs)
        teacher = params_from_vector(teacher_vec, base)
    else:
        teacher = base
    cem = CEMConfig(total_trials=args.trials)
    result = run_cem(teacher, cem, base=base, scale=args.scale, seed=args.seed or 0)
    report = result.to_dict()
    report["teacher_params"] = {k: float(v) for k, v in
                                zip(TUNABLE_PARAMS, params_to_vector(teacher))}
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"sysid report -> {args.out}")
    else:
        print(text)
    if args.params_out:
        save_params(result.best_params, args.params_out)
        print(f"fitted params -> {args.params_out}")
    return 0


def cmd_friction_table(args) -> int:
    films = [float(x) for x in args.films.split(",")]
    rows = []
    for name in SURFACE_ORDER:
        for h in films:
            a = assign_friction(name, h)
            rows.append({"surface": name, "h_mm": h,
                         "mu_static": f"{a.mu_static:.6f}",
                         "mu_dynamic": f"{a.mu_dynamic:.6f}"})
    out = args.out
    writer_target = open(out, "w", newline="", encoding="utf-8") if out else sys.stdout
    try:
        writer = csv.DictWriter(writer_target, fieldnames=["surface", "h_mm", "mu_static", "mu_dynamic"])
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if out:
            writer_target.close()
            print(f"friction table -> {out}")
    return 0


def cmd_forge(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scenes:
        cfg.scene_factory.config_path = args.scenes
    pool = load_scene_pool(cfg.scene_factory)
    worlds, assignment = build_world_batch(
        pool, args.worlds, mode=cfg.scene_factory.assignment_mode, seed=cfg.seed,
        gap=cfg.scene_factory.segment_gap, bbox_half=cfg.scene_factory.bbox_half)
    out = args.out or "worlds.bin"
    export_world_batch(worlds, out)
    meta = {
        "num_worlds": worlds.num_worlds,
        "p_max": worlds.p_max,
        "scenario_ids": worlds.scenario_ids,
        "assignment": assignment.tolist(),
    }
    Path(str(out) + ".meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")
    print(f"world batch ({worlds.num_worlds} worlds, P_max={worlds.p_max}) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivegrid",
        description="Batched multi-world driving simulation engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="roll a scripted-policy episode")
    _add_common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eval", action="store_true",
                   help="evaluation mode: emit metrics instead of a rollout log")
    p.add_argument("--invincible", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("eval", help="evaluate a policy / action stream, emit metrics JSON")
    _add_common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--invincible", action="store_true",
                   help="log safety events without terminating agents")
    p.add_argument("--random-goals", action="store_true", dest="random_goals")
    p.add_argument("--actions", default=None, help="JSONL action stream to replay")
    p.add_argument("--zero-policy", action="store_true", dest="zero_policy")
    p.add_argument("--record", default=None, help="write per-step obs/rewards/dones npz")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="CASPS throughput benchmark")
    p.add_argument("--grid", default="8x4,64x16")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--warmup", type=int, default=8)
    p.add_argument("--mode", default="dynamic", choices=("dynamic", "bicycle"))
    p.add_argument("--vectorized-only", action="store_true", dest="vectorized_only")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sysid", help="CEM parameter identification against a teacher")
    p.add_argument("--trials", type=int, default=320)
    p.add_argument("--scale", type=float, default=0.2, help="maneuver suite scale")
    p.add_argument("--perturb", type=float, default=0.15,
                   help="relative perturbation of the hidden teacher")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--params-out", default=None, dest="params_out")
    p.set_defaults(fn=cmd_sysid)

    p = sub.add_parser("friction-table", help="surface/film friction coefficient table")
    p.add_argument("--films", default="0.0,0.3,0.5,1.0,2.0")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_friction_table)

    p = sub.add_parser("forge", help="build and export the padded world batch")
    _add_common(p)
    p.add_argument("--scenes", default=None, help="scenario JSON directory")
    p.add_argument("--worlds", type=int, default=4)
    p.set_defaults(fn=cmd_forge)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
