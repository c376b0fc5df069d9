"""Scripted policies: goal seekers used for evaluation and benchmarking.

Policies read only the observation batch, like a trained network would, so
throughput measurements isolate simulator cost.
"""

from __future__ import annotations

import json

import numpy as np

from .observation import ObsConfig


class ZeroPolicy:
    def __call__(self, obs):
        return np.zeros(obs.shape[:-1] + (3,))


class LaneFollower:
    """Steer toward the goal bearing at fixed throttle.

    The bearing comes from the (sin, cos) heading-error features of the ego
    block; throttle eases off as the remaining distance shrinks.
    """

    def __init__(self, steer_gain: float = 2.0, throttle: float = 0.5,
                 obs_config: ObsConfig | None = None):
        self.steer_gain = steer_gain
        self.throttle = throttle
        self.cfg = obs_config or ObsConfig()

    def __call__(self, obs):
        sin_err = obs[..., 2].astype(np.float64)
        cos_err = obs[..., 3].astype(np.float64)
        dist = obs[..., 4].astype(np.float64) * self.cfg.bbox_half
        steer = np.clip(self.steer_gain * sin_err, -1.0, 1.0)
        # goal behind: commit to a full turn
        steer = np.where(cos_err < 0.0, np.where(sin_err >= 0.0, 1.0, -1.0), steer)
        throttle = np.where(dist > 5.0, self.throttle, self.throttle * 0.5)
        brake = np.zeros_like(throttle)
        return np.stack([throttle, steer, brake], axis=-1)


class ReplayPolicy:
    """Plays back a recorded (T, W, M, 3) action stream, zeros past the end."""

    def __init__(self, actions: np.ndarray):
        self.actions = np.asarray(actions, dtype=np.float64)
        self.t = 0

    @classmethod
    def from_jsonl(cls, path, num_envs: int, num_agents: int) -> "ReplayPolicy":
        """Load an action stream of {step, world, agent, action} records."""
        frames: dict[int, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                t = int(rec["step"])
                if t not in frames:
                    frames[t] = np.zeros((num_envs, num_agents, 3))
                frames[t][int(rec["world"]), int(rec["agent"])] = rec["action"]
        if not frames:
            raise ValueError(f"{path}: empty action stream")
        T = max(frames) + 1
        out = np.zeros((T, num_envs, num_agents, 3))
        for t, arr in frames.items():
            out[t] = arr
        return cls(out)

    def __call__(self, obs):
        if self.t < len(self.actions):
            act = self.actions[self.t]
        else:
            act = np.zeros(obs.shape[:-1] + (3,))
        self.t += 1
        return act
