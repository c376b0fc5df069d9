"""Single hierarchical configuration surface and the engine builder.

Everything tunable is a YAML field; unknown keys are rejected with their
dotted path so typos fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .engine import Engine, SimConfig
from .friction import SURFACE_ORDER, assign_friction
from .observation import ObsConfig
from .rewards import RewardConfig
from .scenario import ScenarioSpec, load_scenario, reject_degenerate_scene
from .synth import default_scene_pool
from .vehicle import BicycleParams, VehicleParams, load_params
from .world import build_world_batch, flatten_z, recenter


@dataclass
class EnvConfig:
    num_envs: int = 256
    num_agents_per_env: int = 16
    dynamics_mode: str = "dynamic"
    episode_len: int = 1500
    num_workers: int = 0  # 0 = serial; >1 fans world chunks over threads


@dataclass
class ScenePoolConfig:
    config_path: str = ""          # directory of scenario JSONs; empty = built-in pool
    assignment_mode: str = "random_fill"
    bbox_half: float = 100.0
    goal_radius: float = 3.0
    segment_gap: float = 3.0
    max_scenes: int = 0            # 0 = no limit


@dataclass
class WeatherConfig:
    wet_fraction: float = 0.0
    surface_probs: dict = field(default_factory=lambda: {"AC": 1 / 3, "SMA": 1 / 3, "OGFC": 1 / 3})
    film_min_mm: float = 0.1
    film_max_mm: float = 0.8
    dry_surface: str = "AC"


@dataclass
class EvalConfig:
    invincible: bool = False
    random_goals: bool = False
    goal_min_m: float = 10.0
    goal_max_m: float = 100.0


@dataclass
class RootConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    scene_factory: ScenePoolConfig = field(default_factory=ScenePoolConfig)
    weather: WeatherConfig = field(default_factory=WeatherConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    obs: ObsConfig = field(default_factory=ObsConfig)
    bicycle: BicycleParams = field(default_factory=BicycleParams)
    vehicle_params_path: str = ""
    seed: int = 42
    eval: EvalConfig = field(default_factory=EvalConfig)


class ConfigError(ValueError):
    pass


def _from_dict(cls, raw: dict, path: str):
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(f"unknown config key: {where}")
        ftype = names[key].type
        current = value
        if dataclasses.is_dataclass(_resolve(ftype)) and isinstance(value, dict):
            current = _from_dict(_resolve(ftype), value, where)
        kwargs[key] = current
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_TYPE_MAP = {
    "EnvConfig": EnvConfig,
    "ScenePoolConfig": ScenePoolConfig,
    "WeatherConfig": WeatherConfig,
    "RewardConfig": RewardConfig,
    "ObsConfig": ObsConfig,
    "BicycleParams": BicycleParams,
    "EvalConfig": EvalConfig,
}


def _resolve(ftype):
    if isinstance(ftype, str):
        return _TYPE_MAP.get(ftype, str)
    return ftype


def config_from_dict(raw: dict | None) -> RootConfig:
    return _from_dict(RootConfig, raw or {}, "")


def parse_config(path: str | Path | None) -> RootConfig:
    """Load the YAML hierarchy; an empty or missing file yields full defaults."""
    if path is None:
        return RootConfig()
    text = Path(path).read_text(encoding="utf-8")
    raw = yaml.safe_load(text)
    if raw is None:
        return RootConfig()
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return config_from_dict(raw)


def config_to_dict(cfg: RootConfig) -> dict:
    return dataclasses.asdict(cfg)


def save_config(cfg: RootConfig, path):
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg)), encoding="utf-8")


# ---------- weather sampling ----------

def sample_weather(cfg: WeatherConfig, num_worlds: int, seed: int) -> list[tuple[str, float]]:
    """Per-world (surface, film mm), deterministic under the weather stream."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 2])))
    names = list(SURFACE_ORDER)
    probs = np.array([cfg.surface_probs.get(n, 0.0) for n in names], dtype=np.float64)
    if probs.sum() <= 0:
        raise ConfigError("weather.surface_probs must contain positive mass")
    probs = probs / probs.sum()
    out = []
    for _ in range(num_worlds):
        if rng.random() < cfg.wet_fraction:
            surface = names[rng.choice(len(names), p=probs)]
            film = rng.uniform(cfg.film_min_mm, cfg.film_max_mm)
            out.append((surface, float(film)))
        else:
            out.append((cfg.dry_surface, 0.0))
    return out


# ---------- scene pool & engine assembly ----------

def prepare_scene(spec: ScenarioSpec) -> ScenarioSpec | None:
    """Recenter + flatten + degeneracy filter; None when rejected."""
    if not reject_degenerate_scene(spec).accepted:
        return None
    centered, _ = recenter(spec)
    flat, _ = flatten_z(centered)
    return flat


def load_scene_pool(cfg: ScenePoolConfig) -> list[ScenarioSpec]:
    if not cfg.config_path:
        raw = default_scene_pool()
    else:
        root = Path(cfg.config_path)
        if root.is_dir():
            paths = sorted(root.glob("*.json"))
        else:
            paths = [root]
        if not paths:
            raise ConfigError(f"no scenario files under {root}")
        raw = [load_scenario(p) for p in paths]
    if cfg.max_scenes:
        raw = raw[: cfg.max_scenes]
    pool = [s for s in (prepare_scene(r) for r in raw) if s is not None]
    if not pool:
        raise ConfigError("every scene in the pool was rejected")
    return pool


def build_engine(cfg: RootConfig, scenes: list[ScenarioSpec] | None = None) -> Engine:
    """Wire the full pipeline: scenes -> worlds -> friction -> engine."""
    pool = scenes if scenes is not None else load_scene_pool(cfg.scene_factory)
    worlds, assignment = build_world_batch(
        pool, cfg.env.num_envs, mode=cfg.scene_factory.assignment_mode,
        seed=cfg.seed, gap=cfg.scene_factory.segment_gap,
        bbox_half=cfg.scene_factory.bbox_half)
    weather = sample_weather(cfg.weather, cfg.env.num_envs, cfg.seed)
    frictions = [assign_friction(surface, film) for surface, film in weather]
    sim = SimConfig(
        num_envs=cfg.env.num_envs,
        num_agents=cfg.env.num_agents_per_env,
        dynamics_mode=cfg.env.dynamics_mode,
        episode_len=cfg.env.episode_len,
        seed=cfg.seed,
        invincible=cfg.eval.invincible,
        bbox_half=cfg.scene_factory.bbox_half,
        goal_radius=cfg.scene_factory.goal_radius,
        num_workers=cfg.env.num_workers,
    )
    params = load_params(cfg.vehicle_params_path) if cfg.vehicle_params_path else VehicleParams()
    engine = Engine(worlds, pool, assignment, frictions, sim,
                    obs_config=cfg.obs, reward_config=cfg.reward,
                    params=params, bicycle=cfg.bicycle)
    if cfg.eval.random_goals:
        resample_engine_goals(engine, pool, assignment, cfg)
    return engine


# ---------- goal resampling ----------

def polyline_arc_point(points: np.ndarray, start_arc: float, distance: float):
    """Point at ``start_arc + distance`` along a polyline, or None past the end."""
    seg = np.diff(points[:, :2], axis=0)
    seg_len = np.sqrt((seg**2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    target = start_arc + distance
    if target < 0.0 or target > cum[-1]:
        return None
    i = int(np.searchsorted(cum, target, side="right") - 1)
    i = min(i, len(seg_len) - 1)
    frac = (target - cum[i]) / seg_len[i] if seg_len[i] > 0 else 0.0
    return points[i, :2] + frac * seg[i]


def resample_goal(start_xy, scene: ScenarioSpec, min_m: float, max_m: float, rng):
    """New goal on the nearest lane polyline at a travel distance in [min, max].

    Walks arc length along the lane (forward, falling back to backward);
    returns None when no reachable point exists in range.
    """
    lanes = scene.lane_polylines()
    if not lanes:
        return None
    best = None
    for poly in lanes:
        pts = poly.points[:, :2]
        d2 = ((pts - start_xy) ** 2).sum(axis=1)
        i = int(np.argmin(d2))
        if best is None or d2[i] < best[0]:
            seg = np.diff(pts, axis=0)
            seg_len = np.sqrt((seg**2).sum(axis=1))
            cum = np.concatenate([[0.0], np.cumsum(seg_len)])
            best = (d2[i], poly, cum[i])
    _, poly, start_arc = best
    dist = min_m if min_m == max_m else rng.uniform(min_m, max_m)
    for sign in (1.0, -1.0):
        pt = polyline_arc_point(poly.points, start_arc, sign * dist)
        if pt is not None:
            return pt
    return None


def resample_engine_goals(engine: Engine, pool, assignment, cfg: RootConfig):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 4])))
    W, M = engine.valid.shape
    for w in range(W):
        scene = pool[assignment[w]]
        off = engine.worlds.grid_offsets[w]
        for m in range(M):
            if not engine.valid[w, m]:
                continue
            local_start = engine.start_xy[w, m] - off
            goal = resample_goal(local_start, scene, cfg.eval.goal_min_m,
                                 cfg.eval.goal_max_m, rng)
            if goal is None:
                continue
            engine.goal_xy[w, m] = goal + off
