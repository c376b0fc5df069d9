"""Batched multi-world engine: structure-of-arrays state, decimated stepping,
teleport-only resets, and a deliberately per-agent scalar reference path.

The vectorized path advances all (W, M) agents with whole-array numpy
expressions; `reference_step` walks the identical math one agent at a time in
Python loops, reproducing the classic non-vectorized bottleneck for the
throughput study.  Both paths share kernels, so trajectories and event
streams agree to machine precision.

Geometry-heavy phases are partitioned into world chunks.  Chunks write
disjoint slices of preallocated outputs, so fanning them out across a thread
pool is deterministic: results are bit-identical at any worker count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import observation as obs_mod
from . import rewards as rw
from . import vehicle as vh
from .friction import FrictionAssignment, ground_material
from .scenario import ScenarioSpec, filter_agents
from .world import WorldBatch

OFFSTAGE_X = 1000.0  # parked agents sit this far from their world origin

PHASES = ("action", "physics", "observation", "reward_termination", "reset")

# geometry-heavy phases run over world chunks so their working set stays
# cache-resident; per-world results are independent, so the partition has no
# numerical effect
WORLD_CHUNK = 8


@dataclass(frozen=True)
class SimConfig:
    num_envs: int = 256
    num_agents: int = 16
    dynamics_mode: str = "dynamic"
    physics_dt: float = vh.PHYSICS_DT
    decimation: int = vh.DECIMATION
    episode_len: int = 1500
    seed: int = 42
    invincible: bool = False
    bbox_half: float = 100.0
    goal_radius: float = 3.0
    num_workers: int = 0  # 0 = serial; >1 fans world chunks over threads

    def __post_init__(self):
        if self.num_agents < 1 or self.num_agents > 16:
            raise ValueError("num_agents must lie in [1, 16]")
        if self.dynamics_mode not in ("dynamic", "bicycle"):
            raise ValueError(f"unknown dynamics_mode {self.dynamics_mode!r}")

    @property
    def control_dt(self) -> float:
        return self.physics_dt * self.decimation

    @property
    def effective_workers(self) -> int:
        return max(1, self.num_workers)


@dataclass
class StepOutput:
    obs: np.ndarray        # (W, M, obs_dim) float32
    rewards: np.ndarray    # (W, M) float64
    dones: np.ndarray      # (W, M) bool, one-shot at the terminating step
    events: dict           # event type -> (W, M) bool for this step
    info: dict


LOG_STATE_FIELDS = ("x", "y", "yaw", "v_x", "v_y", "yaw_rate",
                    "steer_angle", "wheel_front", "wheel_rear")


@dataclass
class EpisodeLog:
    """Control-rate record of an episode, JSONL-exportable.

    Per-step state snapshots are taken before the teleport writeback, so a
    replay of consecutive records reproduces the logged rewards exactly.
    """

    control_dt: float
    initial_state: dict | None = None
    steps: list = field(default_factory=list)

    def append(self, step: int, state: dict, actions, rewards, terms, events,
               dones, alive, alive_pre):
        self.steps.append({
            "step": step,
            "state": {k: state[k].copy() for k in LOG_STATE_FIELDS},
            "actions": np.array(actions, dtype=np.float64),
            "rewards": rewards.copy(),
            "terms": {k: v.copy() for k, v in terms.items()},
            "events": {k: v.copy() for k, v in events.items()},
            "dones": dones.copy(),
            "alive": alive.copy(),
            "alive_pre": alive_pre.copy(),
        })

    def __len__(self):
        return len(self.steps)

    def resample_60hz(self) -> list[dict]:
        """States at twice the control rate via midpoint interpolation."""
        out = []
        prev = self.initial_state
        for rec in self.steps:
            cur = rec["state"]
            if prev is not None:
                out.append({k: 0.5 * (prev[k] + cur[k]) for k in LOG_STATE_FIELDS})
            out.append({k: cur[k].copy() for k in LOG_STATE_FIELDS})
            prev = cur
        return out

    def to_jsonl(self, path):
        """One record per (step, world, agent); floats keep full precision."""
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.steps:
                W, M = rec["alive"].shape
                for w in range(W):
                    for m in range(M):
                        row = {
                            "step": rec["step"],
                            "world": w,
                            "agent": m,
                            "pose": [rec["state"]["x"][w, m], rec["state"]["y"][w, m],
                                     rec["state"]["yaw"][w, m]],
                            "vel": [rec["state"]["v_x"][w, m], rec["state"]["v_y"][w, m],
                                    rec["state"]["yaw_rate"][w, m]],
                            "action": rec["actions"][w, m].tolist(),
                            "reward": rec["rewards"][w, m],
                            "terms": {k: v[w, m] for k, v in rec["terms"].items()},
                            "events": [k for k, v in rec["events"].items() if v[w, m]],
                            "alive": bool(rec["alive"][w, m]),
                        }
                        fh.write(json.dumps(row) + "\n")


class Engine:
    """Owner of the (W, M) agent state over a world batch."""

    def __init__(
        self,
        worlds: WorldBatch,
        scenes: list[ScenarioSpec],
        assignment: np.ndarray,
        frictions: list[FrictionAssignment],
        config: SimConfig,
        obs_config: obs_mod.ObsConfig | None = None,
        reward_config: rw.RewardConfig | None = None,
        params: vh.VehicleParams | None = None,
        bicycle: vh.BicycleParams | None = None,
    ):
        W, M = config.num_envs, config.num_agents
        if worlds.num_worlds != W:
            raise ValueError(f"world batch has {worlds.num_worlds} worlds, config wants {W}")
        if len(frictions) != W:
            raise ValueError("need one friction assignment per world")
        self.config = config
        self.obs_config = obs_config or obs_mod.ObsConfig()
        self.reward_config = reward_config or rw.RewardConfig()
        self.params = params or vh.VehicleParams()
        self.bicycle = bicycle or vh.BicycleParams()
        self.worlds = worlds
        self.frictions = frictions

        # geometry in global coordinates, shaped for (W, M, P) broadcasting
        off = worlds.grid_offsets[:, None, :]
        self.seg_mid = (worlds.midpoints + off)[:, None, :, :]
        self.seg_dir = worlds.directions[:, None, :, :]
        self.seg_type = worlds.type_codes[:, None, :]
        self.seg_mask = worlds.mask[:, None, :]
        self.seg_half_len = worlds.half_lengths[:, None, :]
        self.seg_half_wid = worlds.half_widths[:, None, :]
        # static lane / road-edge subsets, compacted once for the hot queries
        self.lane = self._compact_subset(rw.lane_mask_of(worlds.type_codes, worlds.mask))
        self.edge = self._compact_subset(rw.edge_mask_of(worlds.type_codes, worlds.mask))

        ground_mu, _ = ground_material(1.0, self.params.f_lon_dry, self.params.f_lat_dry)
        self.mu_eff = np.array([min(f.mu_static, ground_mu) for f in frictions])
        self.weather = np.stack([f.weather_token for f in frictions], axis=0)

        # spawn table
        self.state = {k: np.zeros((W, M)) for k in vh.STATE_FIELDS}
        self.state["brake_sign_front"][:] = 1.0
        self.state["brake_sign_rear"][:] = 1.0
        self.valid = np.zeros((W, M), dtype=bool)
        self.alive = np.zeros((W, M), dtype=bool)
        self.reason = np.zeros((W, M), dtype=np.int8)
        self.spawn_step = np.zeros((W, M), dtype=np.int64)
        self.start_xy = np.zeros((W, M, 2))
        self.goal_xy = np.zeros((W, M, 2))
        self.length = np.full((W, M), 4.0)
        self.width = np.full((W, M), 2.0)
        self.event_seen = {k: np.zeros((W, M), dtype=bool) for k in rw.EVENT_TYPES}

        self.start_yaw = np.zeros((W, M))
        for w in range(W):
            scene = scenes[assignment[w]]
            agents = filter_agents(scene, bbox_half=config.bbox_half,
                                   goal_radius=config.goal_radius, cap=M)
            ox, oy = worlds.grid_offsets[w]
            for m, rec in enumerate(agents):
                self.valid[w, m] = True
                self.start_xy[w, m] = (rec.start[0] + ox, rec.start[1] + oy)
                self.goal_xy[w, m] = (rec.goal[0] + ox, rec.goal[1] + oy)
                self.start_yaw[w, m] = rec.start_heading
                self.state["x"][w, m] = rec.start[0] + ox
                self.state["y"][w, m] = rec.start[1] + oy
                self.state["yaw"][w, m] = rec.start_heading
                self.length[w, m] = rec.length
                self.width[w, m] = rec.width
            for m in range(len(agents), M):
                self.state["x"][w, m] = ox + OFFSTAGE_X
                self.state["y"][w, m] = oy
        self.alive = self.valid.copy()
        self.r_hull, self.d_hull = obs_mod.circle_layout(self.length, self.width,
                                                         self.params.wheelbase)
        self.step_count = 0
        self.phase_seconds = {k: 0.0 for k in PHASES}
        self._pool = None

    # ---------- helpers ----------

    def _compact_subset(self, keep: np.ndarray) -> dict[str, np.ndarray]:
        """Gather a per-world segment subset into dense (W, 1, K) arrays."""
        W = keep.shape[0]
        K = max(1, int(keep.sum(axis=1).max()))
        out = {
            "mid": np.zeros((W, K, 2)),
            "dir": np.zeros((W, K, 2)),
            "half_len": np.zeros((W, K)),
            "half_wid": np.zeros((W, K)),
            "mask": np.zeros((W, K), dtype=bool),
        }
        for w in range(W):
            idx = np.nonzero(keep[w])[0]
            n = len(idx)
            out["mid"][w, :n] = self.seg_mid[w, 0, idx]
            out["dir"][w, :n] = self.seg_dir[w, 0, idx]
            out["half_len"][w, :n] = self.seg_half_len[w, 0, idx]
            out["half_wid"][w, :n] = self.seg_half_wid[w, 0, idx]
            out["mask"][w, :n] = True
        return {k: v[:, None] for k, v in out.items()}

    def reset_phase_timers(self):
        self.phase_seconds = {k: 0.0 for k in PHASES}

    def _world_chunks(self) -> list[slice]:
        W = self.config.num_envs
        return [slice(c, min(c + WORLD_CHUNK, W)) for c in range(0, W, WORLD_CHUNK)]

    def _dispatch(self, fn, chunks: list[slice]):
        """Run a per-chunk function over all chunks, threaded when it pays."""
        if len(chunks) == 1 or self.config.effective_workers == 1:
            for s in chunks:
                fn(s)
            return
        if self._pool is None:
            self._pool = ThreadPoolExecutor(self.config.effective_workers)
        list(self._pool.map(fn, chunks))

    @property
    def pos(self) -> np.ndarray:
        return np.stack([self.state["x"], self.state["y"]], axis=-1)

    @property
    def vel_body(self) -> np.ndarray:
        return np.stack([self.state["v_x"], self.state["v_y"]], axis=-1)

    def vel_world(self) -> np.ndarray:
        c, s = np.cos(self.state["yaw"]), np.sin(self.state["yaw"])
        vx = self.state["v_x"] * c - self.state["v_y"] * s
        vy = self.state["v_x"] * s + self.state["v_y"] * c
        return np.stack([vx, vy], axis=-1)

    def _check_actions(self, actions) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.float64)
        expect = (self.config.num_envs, self.config.num_agents, 3)
        if actions.shape != expect:
            raise ValueError(f"actions shape {actions.shape}, expected {expect}")
        bad = ~np.isfinite(actions)
        if bad.any():
            w, m, _ = np.argwhere(bad)[0]
            raise ValueError(f"non-finite action for world {w} agent {m}")
        return actions

    def observe(self) -> np.ndarray:
        """Observations of the current state snapshot, (W, M, obs_dim) float32."""
        obs, _ = self._build_obs()
        return obs

    def _build_obs(self):
        cfg = self.obs_config
        W, M = self.alive.shape
        pos, yaw = self.pos, self.state["yaw"]
        vel_body, vel_world = self.vel_body, self.vel_world()
        obs = np.empty((W, M, cfg.obs_dim), dtype=np.float32)
        ttc_min = np.empty((W, M))

        d0 = cfg.ego_dim
        d1 = d0 + cfg.k_road * 5

        def chunk(s: slice):
            ego = obs_mod.ego_features(
                pos[s], yaw[s], vel_body[s], self.goal_xy[s], cfg,
                weather=self.weather[s, None, :] if cfg.include_weather else None)
            road = obs_mod.road_context(pos[s], yaw[s], self.seg_mid[s],
                                        self.seg_dir[s], self.seg_type[s],
                                        self.seg_mask[s], cfg)
            veh, tmin = obs_mod.neighbor_features_batch(
                pos[s], yaw[s], vel_world[s], vel_body[s], self.length[s],
                self.width[s], self.alive[s], cfg, wheelbase=self.params.wheelbase)
            block = obs[s]
            block[..., :d0] = ego
            block[..., d0:d1] = road.reshape(road.shape[:-2] + (-1,))
            block[..., d1:] = veh.reshape(veh.shape[:-2] + (-1,))
            ttc_min[s] = tmin

        self._dispatch(chunk, self._world_chunks())
        return obs, ttc_min

    # ---------- stepping ----------

    def step(self, actions) -> StepOutput:
        return self._step_impl(actions, reference=False)

    def reference_step(self, actions) -> StepOutput:
        return self._step_impl(actions, reference=True)

    def _step_impl(self, actions, reference: bool) -> StepOutput:
        cfg = self.config
        t0 = time.perf_counter()
        actions = self._check_actions(actions)
        decoded = vh.decode_action(actions)
        t1 = time.perf_counter()
        self.phase_seconds["action"] += t1 - t0

        prev_pos = self.pos
        if reference:
            self._physics_reference(decoded)
        else:
            self._physics_vectorized(decoded)
        t2 = time.perf_counter()
        self.phase_seconds["physics"] += t2 - t1

        if reference:
            obs, ttc_min = self._build_obs_reference()
        else:
            obs, ttc_min = self._build_obs()
        t3 = time.perf_counter()
        self.phase_seconds["observation"] += t3 - t2

        alive_pre = self.alive.copy()
        state_snapshot = {k: self.state[k].copy() for k in vh.STATE_FIELDS}
        rewards, dones, events, terms = self._rewards_and_events(
            prev_pos, ttc_min, reference)
        t4 = time.perf_counter()
        self.phase_seconds["reward_termination"] += t4 - t3

        self.step_count += 1
        timeout = np.zeros_like(self.alive)
        if self.step_count >= cfg.episode_len:
            timeout = self.alive.copy()

        newly_done = dones.copy()
        if timeout.any():
            newly_done |= timeout
            self.reason = np.where(timeout & (self.reason == rw.REASON_NONE),
                                   rw.REASON_TIMEOUT, self.reason)

        # teleport terminated agents off-stage (timeout simply ends the episode)
        park = dones & ~timeout
        if park.any():
            ox = self.worlds.grid_offsets[:, 0][:, None]
            oy = self.worlds.grid_offsets[:, 1][:, None]
            for k in vh.STATE_FIELDS:
                if k in ("brake_sign_front", "brake_sign_rear"):
                    self.state[k] = np.where(park, 1.0, self.state[k])
                else:
                    self.state[k] = np.where(park, 0.0, self.state[k])
            self.state["x"] = np.where(park, ox + OFFSTAGE_X, self.state["x"])
            self.state["y"] = np.where(park, oy, self.state["y"])
        self.alive &= ~newly_done
        t5 = time.perf_counter()
        self.phase_seconds["reset"] += t5 - t4

        info = {
            "alive": self.alive.copy(),
            "alive_pre": alive_pre,
            "state": state_snapshot,
            "reason": self.reason.copy(),
            "reward_terms": terms,
            "ttc_min": ttc_min,
            "step": self.step_count,
        }
        return StepOutput(obs=obs, rewards=rewards, dones=newly_done, events=events, info=info)

    # ---------- physics ----------

    def _physics_vectorized(self, decoded):
        cfg = self.config
        mu = self.mu_eff[:, None]
        state = self.state
        if cfg.dynamics_mode == "bicycle":
            new = vh.step_bicycle(state, decoded, self.params, self.bicycle, dt=cfg.control_dt)
        else:
            new = state
            for _ in range(cfg.decimation):
                new = vh.step_dynamic(new, decoded, mu, self.params, dt=cfg.physics_dt)
        for k in vh.STATE_FIELDS:
            self.state[k] = np.where(self.alive, new[k], state[k]) if new is not state else state[k]

    def _physics_reference(self, decoded):
        cfg = self.config
        W, M = self.alive.shape
        for w in range(W):
            mu = self.mu_eff[w]
            for m in range(M):
                if not self.alive[w, m]:
                    continue
                agent = {k: self.state[k][w, m] for k in vh.STATE_FIELDS}
                act = decoded[w, m]
                if cfg.dynamics_mode == "bicycle":
                    agent = vh.step_bicycle(agent, act, self.params, self.bicycle, dt=cfg.control_dt)
                else:
                    for _ in range(cfg.decimation):
                        agent = vh.step_dynamic(agent, act, mu, self.params, dt=cfg.physics_dt)
                for k in vh.STATE_FIELDS:
                    self.state[k][w, m] = agent[k]

    # ---------- observations (reference path) ----------

    def _build_obs_reference(self):
        cfg = self.obs_config
        W, M = self.alive.shape
        obs = np.zeros((W, M, cfg.obs_dim), dtype=np.float32)
        ttc_min = np.full((W, M), cfg.ttc_max)
        vel_world = self.vel_world()
        pos = self.pos
        for w in range(W):
            mid = self.seg_mid[w, 0]
            dirs = self.seg_dir[w, 0]
            types = self.seg_type[w, 0]
            mask = self.seg_mask[w, 0]
            for m in range(M):
                p = pos[w, m]
                yaw = self.state["yaw"][w, m]
                ego = obs_mod.ego_features(
                    p, yaw, self.vel_body[w, m], self.goal_xy[w, m], cfg,
                    weather=self.weather[w] if cfg.include_weather else None)
                road = obs_mod.road_context(p, np.float64(yaw), mid, dirs, types, mask, cfg)
                veh, tmin = obs_mod.neighbor_features(
                    m, pos[w], self.state["yaw"][w], vel_world[w], self.vel_body[w],
                    self.length[w], self.width[w], self.alive[w], cfg,
                    wheelbase=self.params.wheelbase)
                obs[w, m] = obs_mod.assemble(ego, road, veh).astype(np.float32)
                ttc_min[w, m] = tmin
        return obs, ttc_min

    # ---------- rewards & termination ----------

    def _rewards_and_events(self, prev_pos, ttc_min, reference: bool):
        cfg = self.reward_config
        pos, yaw = self.pos, self.state["yaw"]
        age = self.step_count - self.spawn_step

        if reference:
            terms = self._dense_reference(prev_pos, ttc_min)
            goal, collision, crash, lane_forbidden = self._events_reference(age)
        else:
            terms, goal, collision, crash, lane_forbidden = \
                self._dense_and_events_chunked(prev_pos, ttc_min, age)

        goal &= self.alive & ~self.event_seen["goal"]
        collision &= self.alive & ~self.event_seen["collision"]
        crash &= self.alive & ~self.event_seen["crash"]
        lane_forbidden &= self.alive & ~self.event_seen["lane_forbidden"]

        reason_now = rw.pick_reason(goal, crash, lane_forbidden, collision)
        events = {
            "goal": reason_now == rw.REASON_GOAL,
            "collision": reason_now == rw.REASON_COLLISION,
            "crash": reason_now == rw.REASON_CRASH,
            "lane_forbidden": reason_now == rw.REASON_LANE_FORBIDDEN,
        }
        for k in rw.EVENT_TYPES:
            self.event_seen[k] |= events[k]

        sparse = rw.sparse_reward(reason_now, cfg)
        rewards = np.where(self.alive, terms["total"] + sparse, 0.0)
        terms = {k: np.where(self.alive, v, 0.0) for k, v in terms.items()}

        if self.config.invincible:
            dones = np.zeros_like(self.alive)
        else:
            dones = reason_now != rw.REASON_NONE
            self.reason = np.where(dones & (self.reason == rw.REASON_NONE),
                                   reason_now, self.reason).astype(np.int8)
        return rewards, dones, events, terms

    def _dense_and_events_chunked(self, prev_pos, ttc_min, age):
        cfg = self.reward_config
        W, M = self.alive.shape
        pos, yaw = self.pos, self.state["yaw"]
        vel_body = self.vel_body
        terms = {k: np.empty((W, M)) for k in (*rw.DENSE_TERMS, "total")}
        goal = np.empty((W, M), dtype=bool)
        collision = np.empty((W, M), dtype=bool)
        crash = np.empty((W, M), dtype=bool)
        lane_forbidden = np.empty((W, M), dtype=bool)

        def chunk(s: slice):
            t = rw.dense_rewards(
                prev_pos[s], pos[s], yaw[s], vel_body[s], self.goal_xy[s],
                ttc_min[s],
                (self.lane["mid"][s], self.lane["dir"][s], self.lane["mask"][s],
                 self.lane["half_len"][s]),
                (self.edge["mid"][s], self.edge["mask"][s]), cfg)
            for k in terms:
                terms[k][s] = t[k]
            goal[s] = rw.detect_goal(pos[s], self.goal_xy[s], cfg)
            crash[s] = rw.detect_crash(pos[s], self.start_xy[s], vel_body[s], cfg=cfg)
            lane_forbidden[s] = rw.detect_lane_forbidden(
                pos[s], yaw[s], self.r_hull[s], self.d_hull[s],
                self.edge["mid"][s], self.edge["dir"][s], self.edge["mask"][s],
                self.edge["half_len"][s], self.edge["half_wid"][s])
            collision[s] = rw.detect_collision_batch(
                pos[s], yaw[s], self.r_hull[s], self.d_hull[s], self.alive[s],
                age[s], cfg.collision_warmup_steps)

        self._dispatch(chunk, self._world_chunks())
        return terms, goal, collision, crash, lane_forbidden

    def _dense_reference(self, prev_pos, ttc_min):
        cfg = self.reward_config
        W, M = self.alive.shape
        terms = {k: np.zeros((W, M)) for k in (*rw.DENSE_TERMS, "total")}
        pos = self.pos
        for w in range(W):
            lane_geom = (self.lane["mid"][w, 0], self.lane["dir"][w, 0],
                         self.lane["mask"][w, 0], self.lane["half_len"][w, 0])
            edge_geom = (self.edge["mid"][w, 0], self.edge["mask"][w, 0])
            for m in range(M):
                t = rw.dense_rewards(
                    prev_pos[w, m], pos[w, m], self.state["yaw"][w, m],
                    self.vel_body[w, m], self.goal_xy[w, m], ttc_min[w, m],
                    lane_geom, edge_geom, cfg)
                for k in terms:
                    terms[k][w, m] = t[k]
        return terms

    def _events_reference(self, age):
        cfg = self.reward_config
        W, M = self.alive.shape
        goal = np.zeros((W, M), dtype=bool)
        collision = np.zeros((W, M), dtype=bool)
        crash = np.zeros((W, M), dtype=bool)
        lane_forbidden = np.zeros((W, M), dtype=bool)
        pos = self.pos
        for w in range(W):
            mid = self.edge["mid"][w, 0]
            dirs = self.edge["dir"][w, 0]
            mask = self.edge["mask"][w, 0]
            hlen = self.edge["half_len"][w, 0]
            hwid = self.edge["half_wid"][w, 0]
            for m in range(M):
                p = pos[w, m]
                yaw = self.state["yaw"][w, m]
                goal[w, m] = rw.detect_goal(p, self.goal_xy[w, m], cfg)
                crash[w, m] = rw.detect_crash(p, self.start_xy[w, m], self.vel_body[w, m], cfg=cfg)
                lane_forbidden[w, m] = rw.detect_lane_forbidden(
                    p, np.float64(yaw), self.r_hull[w, m], self.d_hull[w, m],
                    mid, dirs, mask, hlen, hwid)
                hit = False
                for j in range(M):
                    if j == m or not self.alive[w, j] or not self.alive[w, m]:
                        continue
                    if rw.circle_pair_overlap(
                            p, np.float64(yaw), self.r_hull[w, m], self.d_hull[w, m],
                            pos[w, j], np.float64(self.state["yaw"][w, j]),
                            self.r_hull[w, j], self.d_hull[w, j]):
                        hit = True
                        break
                collision[w, m] = hit and age[w, m] >= cfg.collision_warmup_steps
        return goal, collision, crash, lane_forbidden

    # ---------- resets & episodes ----------

    def teleport_reset(self, mask, new_starts=None, new_goals=None, new_headings=None):
        """Reposition the masked agents in place: fresh pose, zero velocity,
        cleared latches, restarted collision warmup."""
        mask = np.asarray(mask, dtype=bool) & self.valid
        if new_starts is not None:
            self.start_xy = np.where(mask[..., None], new_starts, self.start_xy)
        if new_goals is not None:
            self.goal_xy = np.where(mask[..., None], new_goals, self.goal_xy)
        if new_headings is not None:
            self.start_yaw = np.where(mask, new_headings, self.start_yaw)
        for k in vh.STATE_FIELDS:
            default = 1.0 if k.startswith("brake_sign") else 0.0
            self.state[k] = np.where(mask, default, self.state[k])
        self.state["x"] = np.where(mask, self.start_xy[..., 0], self.state["x"])
        self.state["y"] = np.where(mask, self.start_xy[..., 1], self.state["y"])
        self.state["yaw"] = np.where(mask, self.start_yaw, self.state["yaw"])
        self.alive |= mask
        self.reason = np.where(mask, rw.REASON_NONE, self.reason).astype(np.int8)
        self.spawn_step = np.where(mask, self.step_count, self.spawn_step)
        for k in rw.EVENT_TYPES:
            self.event_seen[k] &= ~mask

    def run_episode(self, policy, record: bool = False, reference: bool = False,
                    max_steps: int | None = None) -> EpisodeLog:
        """Step until every valid agent terminated or the episode times out.

        ``policy`` maps an observation batch to raw actions (W, M, 3).
        """
        log = EpisodeLog(control_dt=self.config.control_dt)
        log.initial_state = {k: self.state[k].copy() for k in LOG_STATE_FIELDS}
        limit = max_steps if max_steps is not None else self.config.episode_len
        obs = self.observe()
        for _ in range(limit):
            actions = policy(obs)
            out = self.reference_step(actions) if reference else self.step(actions)
            if record:
                log.append(self.step_count, out.info["state"], actions, out.rewards,
                           out.info["reward_terms"], out.events, out.dones,
                           out.info["alive"], out.info["alive_pre"])
            obs = out.obs
            if not out.info["alive"].any():
                break
            if self.step_count >= self.config.episode_len:
                break
        return log
