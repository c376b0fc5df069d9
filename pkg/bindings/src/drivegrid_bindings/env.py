"""Thin array-I/O wrapper: reset/step over (W, M, ...) numpy batches."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from drivegrid.config import build_engine, parse_config


class EnvHandle:
    """Batched environment handle with gym-style reset/step semantics.

    Shapes are fixed for the handle's lifetime: observations are
    (W, M, obs_dim) float32, actions (W, M, 3), rewards and dones (W, M).
    Episode restarts use the engine's native teleport-only reset, so repeated
    resets under one seed reproduce identical observations.
    """

    def __init__(self, engine):
        self._engine = engine
        self.num_envs = engine.config.num_envs
        self.num_agents = engine.config.num_agents
        self.obs_dim = engine.obs_config.obs_dim
        self.action_dim = 3

    @property
    def shapes(self) -> dict:
        return {
            "obs": (self.num_envs, self.num_agents, self.obs_dim),
            "actions": (self.num_envs, self.num_agents, self.action_dim),
            "rewards": (self.num_envs, self.num_agents),
            "dones": (self.num_envs, self.num_agents),
        }

    def reset(self, return_info: bool = False):
        """Teleport every valid agent back to its spawn; observation of the
        fresh state, float32."""
        eng = self._engine
        eng.teleport_reset(eng.valid)
        eng.step_count = 0
        obs = eng.observe()
        if return_info:
            return obs, {"alive": eng.alive.copy(), "valid": eng.valid.copy()}
        return obs

    def step(self, actions):
        """One 30 Hz control tick; semantics identical to the engine step.

        Returns (obs, rewards, dones, info); terminated agents report zero
        reward and stay masked in ``info['alive']``.
        """
        actions = np.asarray(actions, dtype=np.float64)
        expect = self.shapes["actions"]
        if actions.shape != expect:
            raise ValueError(f"actions shape {actions.shape}, expected {expect}")
        out = self._engine.step(actions)
        info = {
            "alive": out.info["alive"],
            "reason": out.info["reason"],
            "events": out.events,
            "step": out.info["step"],
        }
        return out.obs, out.rewards, out.dones, info


def make_env(config_path: str | Path | None = None) -> EnvHandle:
    """Build an engine from a YAML config file and wrap it in a handle."""
    if config_path is not None and not Path(config_path).exists():
        raise FileNotFoundError(f"config file not found: {config_path}")
    cfg = parse_config(config_path)
    return EnvHandle(build_engine(cfg))
