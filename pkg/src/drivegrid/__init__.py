"""drivegrid: batched multi-world driving simulation with weather-aware friction."""

from .config import RootConfig, build_engine, parse_config
from .engine import Engine, EpisodeLog, SimConfig, StepOutput
from .friction import (FrictionAssignment, HydroLiftModel, LuGreParams,
                       SurfacePreset, assign_friction, calibrate_hydro,
                       mu_effective, stribeck_speed)
from .observation import ObsConfig, swept_circle_ttc
from .rewards import RewardConfig
from .scenario import (AgentRecord, Polyline, ScenarioSpec, filter_agents,
                       load_scenario, reject_degenerate_scene)
from .sysid import CEMConfig, generate_maneuvers, run_cem, sysid_loss
from .vehicle import Action, AgentDynState, BicycleParams, VehicleParams
from .world import SegmentArray, WorldBatch, build_world_batch, segmentize

__version__ = "0.1.0"

__all__ = [
    "Action", "AgentDynState", "AgentRecord", "BicycleParams", "CEMConfig",
    "Engine", "EpisodeLog", "FrictionAssignment", "HydroLiftModel",
    "LuGreParams", "ObsConfig", "Polyline", "RewardConfig", "RootConfig",
    "ScenarioSpec", "SegmentArray", "SimConfig", "StepOutput", "SurfacePreset",
    "VehicleParams", "WorldBatch", "assign_friction", "build_engine",
    "build_world_batch", "calibrate_hydro", "filter_agents",
    "generate_maneuvers", "load_scenario", "mu_effective", "parse_config",
    "reject_degenerate_scene", "run_cem", "segmentize", "stribeck_speed",
    "swept_circle_ttc", "sysid_loss",
]
