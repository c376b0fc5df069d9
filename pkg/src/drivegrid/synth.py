"""Deterministic synthetic scenarios for benchmarks, demos and tests."""

from __future__ import annotations

import numpy as np

from .scenario import AgentRecord, Polyline, ScenarioSpec


def straight_scene(
    scenario_id: str = "straight",
    half_length: float = 80.0,
    lane_spacing: float = 2.0,
    lane_offsets: tuple[float, ...] = (0.0,),
    edge_offset: float = 6.0,
    agent_count: int = 1,
    agent_gap: float = 12.0,
    goal_dist: float = 50.0,
) -> ScenarioSpec:
    """Straight east-west road: lane centers plus two road edges.

    Agents start spaced along the road heading +x with goals ``goal_dist``
    ahead.
    """
    xs = np.arange(-half_length, half_length + 1e-9, lane_spacing)
    polylines = []
    for off in lane_offsets:
        pts = np.stack([xs, np.full_like(xs, off), np.zeros_like(xs)], axis=1)
        polylines.append(Polyline(1, pts))
    for sign in (1.0, -1.0):
        pts = np.stack([xs, np.full_like(xs, sign * edge_offset), np.zeros_like(xs)], axis=1)
        polylines.append(Polyline(15, pts))

    agents = []
    for i in range(agent_count):
        lane = lane_offsets[i % len(lane_offsets)]
        x0 = -half_length + 10.0 + i * agent_gap
        agents.append(AgentRecord(
            id=f"a{i}",
            start=(x0, lane),
            start_heading=0.0,
            goal=(x0 + goal_dist, lane),
        ))
    return ScenarioSpec(scenario_id, polylines, agents)


def crossroads_scene(
    scenario_id: str = "crossroads",
    half_length: float = 80.0,
    agent_count: int = 4,
    goal_dist: float = 40.0,
) -> ScenarioSpec:
    """Two perpendicular roads through the origin; agents on both arms."""
    xs = np.arange(-half_length, half_length + 1e-9, 2.0)
    ew = Polyline(1, np.stack([xs, np.zeros_like(xs), np.zeros_like(xs)], axis=1))
    ns = Polyline(2, np.stack([np.zeros_like(xs), xs, np.zeros_like(xs)], axis=1))
    edges = [
        Polyline(15, np.stack([xs, np.full_like(xs, off), np.zeros_like(xs)], axis=1))
        for off in (half_length * 0.9, -half_length * 0.9)
    ]
    agents = []
    for i in range(agent_count):
        if i % 2 == 0:
            x0 = -half_length + 15.0 + (i // 2) * 9.0
            agents.append(AgentRecord(f"a{i}", (x0, 0.0), 0.0, (x0 + goal_dist, 0.0)))
        else:
            y0 = -half_length + 15.0 + (i // 2) * 9.0
            agents.append(AgentRecord(f"a{i}", (0.0, y0), np.pi / 2, (0.0, y0 + goal_dist)))
    return ScenarioSpec(scenario_id, [ew, ns, *edges], agents)


def two_level_scene(scenario_id: str = "overpass", dz: float = 6.0) -> ScenarioSpec:
    """Two lane polylines coincident in XY but separated in z (an overpass)."""
    xs = np.arange(-40.0, 40.0 + 1e-9, 2.0)
    low = Polyline(1, np.stack([xs, np.zeros_like(xs), np.zeros_like(xs)], axis=1))
    high = Polyline(2, np.stack([xs, np.zeros_like(xs), np.full_like(xs, dz)], axis=1))
    agents = [AgentRecord("a0", (-30.0, 0.0), 0.0, (20.0, 0.0))]
    return ScenarioSpec(scenario_id, [low, high], agents)


def default_scene_pool(n: int = 4, agent_count: int = 16) -> list[ScenarioSpec]:
    """Built-in pool used when no scene directory is configured."""
    pool = []
    for i in range(n):
        if i % 2 == 0:
            pool.append(straight_scene(f"synth-straight-{i}", agent_count=agent_count,
                                       agent_gap=8.0, lane_offsets=(0.0, 4.0, -4.0)))
        else:
            pool.append(crossroads_scene(f"synth-cross-{i}", agent_count=agent_count))
    return pool
