"""Safety metrics (SR, CR, DRAC) and the throughput benchmark harness.

Throughput is reported as controlled-agent steps per second (CASPS):
policy-controlled agents completing one 30 Hz control tick per wall-clock
second, measured after a warmup window, for both the vectorized and the
per-agent reference paths.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import PHASES, Engine, EpisodeLog, SimConfig
from .observation import circle_layout
from .policies import LaneFollower

DRAC_THRESHOLD = 3.4  # m/s^2, standard highway alert level


def drac(v_rel_closing: float, gap: float) -> float:
    """Deceleration needed to avoid a neighbor: v_r^2 / (2 d) when closing."""
    if gap <= 0:
        raise ValueError("gap must be positive")
    if v_rel_closing <= 0:
        return 0.0
    return v_rel_closing**2 / (2.0 * gap)


def pairwise_drac(pos, yaw, vel_world, r_hull, d_hull, alive):
    """Per-agent max DRAC against alive neighbors for one state snapshot.

    Gap is the nearest circle-pair clearance of the three-circle hulls;
    closing speed is the decay rate of the center distance.
    """
    W, M = alive.shape
    out = np.zeros((W, M))
    if M < 2:
        return out
    dx = pos[:, None, :, 0] - pos[:, :, None, 0]
    dy = pos[:, None, :, 1] - pos[:, :, None, 1]
    dist = np.sqrt(dx * dx + dy * dy)
    ux = vel_world[:, None, :, 0] - vel_world[:, :, None, 0]
    uy = vel_world[:, None, :, 1] - vel_world[:, :, None, 1]
    closing = -(dx * ux + dy * uy) / np.maximum(dist, 1e-9)

    # nearest circle-pair clearance
    offs = np.array([-1.0, 0.0, 1.0])
    cxa = pos[:, :, None, 0, None, None] + offs[None, None, None, :, None] * (d_hull[:, :, None] * np.cos(yaw)[:, :, None])[..., None, None]
    cya = pos[:, :, None, 1, None, None] + offs[None, None, None, :, None] * (d_hull[:, :, None] * np.sin(yaw)[:, :, None])[..., None, None]
    cxb = pos[:, None, :, 0, None, None] + offs[None, None, None, None, :] * (d_hull[:, None, :] * np.cos(yaw)[:, None, :])[..., None, None]
    cyb = pos[:, None, :, 1, None, None] + offs[None, None, None, None, :] * (d_hull[:, None, :] * np.sin(yaw)[:, None, :])[..., None, None]
    pair_d = np.sqrt((cxa - cxb) ** 2 + (cya - cyb) ** 2)
    clearance = pair_d.min(axis=(-2, -1)) - (r_hull[:, :, None] + r_hull[:, None, :])

    ok = alive[:, :, None] & alive[:, None, :] & ~np.eye(M, dtype=bool)[None]
    ok &= (closing > 0.0) & (clearance > 1e-2)
    vals = np.where(ok, closing**2 / (2.0 * np.maximum(clearance, 1e-2)), 0.0)
    return vals.max(axis=-1)


@dataclass(frozen=True)
class EpisodeMetrics:
    sr: float
    cr: float
    mean_max_drac: float
    valid_agents: int
    goals: int
    collisions: int
    per_agent_max_drac: np.ndarray

    def to_dict(self) -> dict:
        return {
            "sr": self.sr,
            "cr": self.cr,
            "mean_max_drac": self.mean_max_drac,
            "valid_agents": self.valid_agents,
            "goals": self.goals,
            "collisions": self.collisions,
        }


def episode_metrics(log: EpisodeLog, valid: np.ndarray, length=None, width=None,
                    wheelbase: float = 2.6, threshold: float = DRAC_THRESHOLD) -> EpisodeMetrics:
    """Aggregate an episode log into SR / CR / mean peak DRAC.

    SR and CR count agents whose goal or collision event fired at least once,
    over valid spawns only.  DRAC averages per-agent episode maxima among
    agents exceeding ``threshold``.
    """
    W, M = valid.shape
    goal_seen = np.zeros((W, M), dtype=bool)
    coll_seen = np.zeros((W, M), dtype=bool)
    max_drac = np.zeros((W, M))
    length = length if length is not None else np.full((W, M), 4.0)
    width = width if width is not None else np.full((W, M), 2.0)
    r_hull, d_hull = circle_layout(length, width, wheelbase)

    for rec in log.steps:
        goal_seen |= rec["events"]["goal"]
        coll_seen |= rec["events"]["collision"]
        st = rec["state"]
        pos = np.stack([st["x"], st["y"]], axis=-1)
        c, s = np.cos(st["yaw"]), np.sin(st["yaw"])
        vel_world = np.stack([st["v_x"] * c - st["v_y"] * s,
                              st["v_x"] * s + st["v_y"] * c], axis=-1)
        step_drac = pairwise_drac(pos, st["yaw"], vel_world, r_hull, d_hull, rec["alive_pre"])
        max_drac = np.maximum(max_drac, step_drac)

    n_valid = int(valid.sum())
    goals = int((goal_seen & valid).sum())
    colls = int((coll_seen & valid).sum())
    over = max_drac[valid & (max_drac > threshold)]
    return EpisodeMetrics(
        sr=goals / n_valid if n_valid else 0.0,
        cr=colls / n_valid if n_valid else 0.0,
        mean_max_drac=float(over.mean()) if over.size else 0.0,
        valid_agents=n_valid,
        goals=goals,
        collisions=colls,
        per_agent_max_drac=max_drac,
    )


# ---------- throughput ----------

@dataclass
class BenchReport:
    num_envs: int
    num_agents: int
    backend: str
    path: str            # vectorized | reference
    casps: float
    steps: int
    warmup_steps: int
    wall_seconds: float
    phase_ms: dict = field(default_factory=dict)
    workers: int = 1

    def to_row(self) -> dict:
        row = {
            "W": self.num_envs,
            "M": self.num_agents,
            "backend": self.backend,
            "path": self.path,
            "CASPS": round(self.casps, 1),
            "steps": self.steps,
            "wall_s": round(self.wall_seconds, 4),
        }
        for k in PHASES:
            row[f"{k}_ms"] = round(self.phase_ms.get(k, 0.0), 3)
        return row


def measure_engine(engine: Engine, policy, steps: int, warmup: int,
                   reference: bool = False) -> BenchReport:
    """Drive an engine for warmup + measured steps and report CASPS + phases."""
    obs = engine.observe()
    step_fn = engine.reference_step if reference else engine.step
    for _ in range(warmup):
        obs = step_fn(policy(obs)).obs
    engine.reset_phase_timers()
    agent_ticks = 0
    t0 = time.perf_counter()
    for _ in range(steps):
        agent_ticks += int(engine.alive.sum())
        obs = step_fn(policy(obs)).obs
    wall = time.perf_counter() - t0
    phase_ms = {k: engine.phase_seconds[k] * 1000.0 / steps for k in PHASES}
    return BenchReport(
        num_envs=engine.config.num_envs,
        num_agents=engine.config.num_agents,
        backend=engine.config.dynamics_mode,
        path="reference" if reference else "vectorized",
        casps=agent_ticks / wall if wall > 0 else 0.0,
        steps=steps,
        warmup_steps=warmup,
        wall_seconds=wall,
        phase_ms=phase_ms,
        workers=engine.config.effective_workers,
    )


def run_bench(
    grid: list[tuple[int, int]],
    steps: int = 40,
    warmup: int = 8,
    mode: str = "dynamic",
    paths: tuple[str, ...] = ("vectorized", "reference"),
    seed: int = 42,
    engine_factory=None,
    repeats: int = 1,
) -> list[BenchReport]:
    """Benchmark a (W, M) grid with the scripted lane follower on both paths.

    With ``repeats`` > 1 the measurements are interleaved across configs and
    the best CASPS per config is kept, suppressing OS scheduling noise.
    """
    if engine_factory is None:
        from .config import RootConfig, build_engine, prepare_scene
        from .synth import straight_scene

        def engine_factory(W, M):
            cfg = RootConfig()
            cfg.env.num_envs = W
            cfg.env.num_agents_per_env = M
            cfg.env.dynamics_mode = mode
            cfg.seed = seed
            # collision-free fixture so the alive population stays constant
            scene = prepare_scene(straight_scene(
                "bench", agent_count=M, agent_gap=8.0,
                lane_offsets=(0.0, 4.0, -4.0), goal_dist=60.0))
            return build_engine(cfg, scenes=[scene])

    best: dict[tuple, BenchReport] = {}
    for _ in range(repeats):
        for W, M in grid:
            for path in paths:
                engine = engine_factory(W, M)
                policy = LaneFollower(obs_config=engine.obs_config)
                # the reference path is slow by construction: smaller sample,
                # and each config's step budget targets similar wall time
                n = steps if path == "vectorized" else max(4, steps // 4)
                n = n * max(1, grid[-1][0] // max(W, 1)) if path == "vectorized" else n
                wu = warmup if path == "vectorized" else min(2, warmup)
                rep = measure_engine(engine, policy, n, wu,
                                     reference=(path == "reference"))
                key = (W, M, path)
                if key not in best or rep.casps > best[key].casps:
                    best[key] = rep
    return [best[(W, M, path)] for W, M in grid for path in paths]


def write_bench_csv(reports: list[BenchReport], path):
    rows = [r.to_row() for r in reports]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
