import numpy as np
import pytest

from drivegrid.config import RootConfig, build_engine, prepare_scene
from drivegrid.synth import crossroads_scene, straight_scene, two_level_scene


@pytest.fixture
def straight():
    return straight_scene(agent_count=2, goal_dist=50.0)


@pytest.fixture
def straight_prepared(straight):
    return prepare_scene(straight)


@pytest.fixture
def two_level():
    return two_level_scene()


def small_engine(num_envs=2, num_agents=4, mode="dynamic", scenes=None, seed=42,
                 invincible=False, episode_len=1500, wet=None):
    """Engine over prepared synthetic scenes, small enough for fast tests."""
    cfg = RootConfig()
    cfg.env.num_envs = num_envs
    cfg.env.num_agents_per_env = num_agents
    cfg.env.dynamics_mode = mode
    cfg.env.episode_len = episode_len
    cfg.eval.invincible = invincible
    cfg.seed = seed
    if wet is not None:
        surface, film = wet
        cfg.weather.wet_fraction = 1.0
        cfg.weather.surface_probs = {surface: 1.0}
        cfg.weather.film_min_mm = film
        cfg.weather.film_max_mm = film
    cfg.scene_factory.assignment_mode = "fixed"
    if scenes is None:
        scenes = [prepare_scene(straight_scene(agent_count=num_agents, agent_gap=10.0,
                                               lane_offsets=(0.0, 4.0)))]
    return build_engine(cfg, scenes=scenes)


@pytest.fixture
def engine():
    return small_engine()


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))
