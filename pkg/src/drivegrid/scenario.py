"""Scenario interchange schema: per-scenario JSON loading, validation and filters.

A scenario file carries typed road polylines (lane centers, road edges) plus
agent start/goal records.  Only endpoints are consumed; trajectory time series
are out of scope.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Waymo polyline feature codes.
LANE_CENTER_CODES = (1, 2)
ROAD_EDGE_CODES = (15, 16)

DEFAULT_AGENT_LENGTH = 4.0
DEFAULT_AGENT_WIDTH = 2.0


class ScenarioError(ValueError):
    """Raised when a scenario file fails schema validation."""


@dataclass(frozen=True)
class Polyline:
    """One typed road polyline with ordered 3D points."""

    type_code: int
    points: np.ndarray  # (N, 3) float64, meters

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ScenarioError(
                f"polyline needs >=2 points of (x, y, z); got shape {pts.shape}"
            )
        if not np.isfinite(pts).all():
            raise ScenarioError("polyline contains non-finite coordinates")


@dataclass(frozen=True)
class AgentRecord:
    """Start/goal assignment for one agent."""

    id: str
    start: tuple[float, float]
    start_heading: float
    goal: tuple[float, float]
    length: float = DEFAULT_AGENT_LENGTH
    width: float = DEFAULT_AGENT_WIDTH

    def __post_init__(self):
        vals = (*self.start, self.start_heading, *self.goal, self.length, self.width)
        if not all(math.isfinite(v) for v in vals):
            raise ScenarioError(f"agent {self.id!r} has non-finite fields")
        if self.length <= 0 or self.width <= 0:
            raise ScenarioError(f"agent {self.id!r} has non-positive dimensions")


@dataclass(frozen=True)
class ScenarioSpec:
    """One driving scenario: polylines plus agent records."""

    scenario_id: str
    polylines: list[Polyline]
    agents: list[AgentRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.scenario_id:
            raise ScenarioError("scenario_id must be non-empty")
        if not self.polylines:
            raise ScenarioError("scenario has no polylines")

    def lane_polylines(self) -> list[Polyline]:
        return [p for p in self.polylines if p.type_code in LANE_CENTER_CODES]

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "polylines": [
                {"type": int(p.type_code), "points": p.points.tolist()}
                for p in self.polylines
            ],
            "agents": [
                {
                    "id": a.id,
                    "start": list(a.start),
                    "start_heading": a.start_heading,
                    "goal": list(a.goal),
                    "length": a.length,
                    "width": a.width,
                }
                for a in self.agents
            ],
        }


def _require(cond: bool, msg: str):
    if not cond:
        raise ScenarioError(msg)


def scenario_from_dict(raw: dict) -> ScenarioSpec:
    """Build a validated ScenarioSpec from a parsed JSON dict.

    Unknown keys are ignored; ``length``/``width`` default to 4.0/2.0 m.
    """
    _require(isinstance(raw, dict), "scenario root must be a JSON object")
    _require("scenario_id" in raw, "missing field 'scenario_id'")
    _require("polylines" in raw, "missing field 'polylines'")
    sid = raw["scenario_id"]
    _require(isinstance(sid, str) and sid != "", "'scenario_id' must be a non-empty string")

    polylines = []
    for i, entry in enumerate(raw["polylines"]):
        _require(isinstance(entry, dict), f"polylines[{i}] must be an object")
        _require("type" in entry, f"polylines[{i}] missing field 'type'")
        _require("points" in entry, f"polylines[{i}] missing field 'points'")
        try:
            polylines.append(Polyline(int(entry["type"]), np.asarray(entry["points"], dtype=np.float64)))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"polylines[{i}]: {exc}") from exc

    agents = []
    for i, entry in enumerate(raw.get("agents", [])):
        _require(isinstance(entry, dict), f"agents[{i}] must be an object")
        for key in ("id", "start", "start_heading", "goal"):
            _require(key in entry, f"agents[{i}] missing field '{key}'")
        try:
            agents.append(
                AgentRecord(
                    id=str(entry["id"]),
                    start=(float(entry["start"][0]), float(entry["start"][1])),
                    start_heading=float(entry["start_heading"]),
                    goal=(float(entry["goal"][0]), float(entry["goal"][1])),
                    length=float(entry.get("length", DEFAULT_AGENT_LENGTH)),
                    width=float(entry.get("width", DEFAULT_AGENT_WIDTH)),
                )
            )
        except (TypeError, ValueError, IndexError) as exc:
            raise ScenarioError(f"agents[{i}]: {exc}") from exc

    return ScenarioSpec(scenario_id=sid, polylines=polylines, agents=agents)


def load_scenario(path: str | Path) -> ScenarioSpec:
    """Load and validate one scenario JSON file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    try:
        return scenario_from_dict(raw)
    except ScenarioError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def save_scenario(spec: ScenarioSpec, path: str | Path):
    Path(path).write_text(json.dumps(spec.to_dict()), encoding="utf-8")


def filter_agents(
    spec: ScenarioSpec,
    bbox_half: float = 100.0,
    goal_radius: float = 3.0,
    cap: int = 16,
) -> list[AgentRecord]:
    """Keep agents whose endpoints are in-bounds and usefully separated.

    Retains agents whose start and goal both lie inside ``±bbox_half`` of the
    (already re-centered) scene origin and whose start-goal distance exceeds
    ``goal_radius``; output preserves file order and is truncated to ``cap``.
    """
    kept = []
    for agent in spec.agents:
        sx, sy = agent.start
        gx, gy = agent.goal
        if max(abs(sx), abs(sy), abs(gx), abs(gy)) > bbox_half:
            continue
        if math.dist(agent.start, agent.goal) <= goal_radius:
            continue
        kept.append(agent)
        if len(kept) == cap:
            break
    return kept


@dataclass(frozen=True)
class SceneVerdict:
    accepted: bool
    reason: str = ""


def _polyline_segments_xy_z(poly: Polyline) -> tuple[np.ndarray, np.ndarray]:
    """Segment XY midpoints and original z midpoints of consecutive pairs."""
    pts = poly.points
    mids = 0.5 * (pts[:-1] + pts[1:])
    return mids[:, :2], mids[:, 2]


def reject_degenerate_scene(
    spec: ScenarioSpec,
    bbox_half: float = 100.0,
    goal_radius: float = 3.0,
    cap: int = 16,
    z_gap: float = 3.0,
    overlap_fraction: float = 0.20,
    overlap_radius: float = 1.0,
) -> SceneVerdict:
    """Accept or reject a scene before world construction.

    Rejection causes: no drivable lane-center polylines; a multi-level proxy
    (segments from different polylines coincident in XY but separated by more
    than ``z_gap`` in original z, over more than ``overlap_fraction`` of the
    coincident pairs); or no agent surviving the spawn filter.
    """
    if not spec.lane_polylines():
        return SceneVerdict(False, "no drivable lanes")

    # Multi-level proxy on the raw (pre-flattening) geometry.
    per_poly = [_polyline_segments_xy_z(p) for p in spec.polylines]
    overlapping = 0
    separated = 0
    for i in range(len(per_poly)):
        xy_i, z_i = per_poly[i]
        for j in range(i + 1, len(per_poly)):
            xy_j, z_j = per_poly[j]
            d2 = ((xy_i[:, None, :] - xy_j[None, :, :]) ** 2).sum(axis=2)
            close = d2 < overlap_radius**2
            if not close.any():
                continue
            dz = np.abs(z_i[:, None] - z_j[None, :])
            overlapping += int(close.sum())
            separated += int((close & (dz > z_gap)).sum())
    if overlapping > 0 and separated / overlapping > overlap_fraction:
        return SceneVerdict(
            False, f"multi-level overlap ({separated}/{overlapping} coincident pairs z-separated)"
        )

    from .world import recenter  # local import to avoid a cycle

    centered, _ = recenter(spec)
    if not filter_agents(centered, bbox_half=bbox_half, goal_radius=goal_radius, cap=cap):
        return SceneVerdict(False, "no valid agents after spawn filter")
    return SceneVerdict(True)


def shift_scenario(spec: ScenarioSpec, dx: float, dy: float) -> ScenarioSpec:
    """Translate all polyline points and agent endpoints in XY."""
    polylines = []
    for p in spec.polylines:
        pts = p.points.copy()
        pts[:, 0] += dx
        pts[:, 1] += dy
        polylines.append(Polyline(p.type_code, pts))
    agents = [
        replace(
            a,
            start=(a.start[0] + dx, a.start[1] + dy),
            goal=(a.goal[0] + dx, a.goal[1] + dy),
        )
        for a in spec.agents
    ]
    return ScenarioSpec(spec.scenario_id, polylines, agents)
