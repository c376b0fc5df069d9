"""Ten-term reward, sparse event detection and termination handling.

Four sparse events (goal, collision, crash, lane-forbidden) terminate an
agent and pay a one-shot reward; six dense terms shape every active step.
All geometry queries run against the padded segment arrays, so the same
functions serve the batched and the per-agent reference paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .observation import body_frame
from .scenario import LANE_CENTER_CODES, ROAD_EDGE_CODES

# termination reason codes
REASON_NONE = 0
REASON_GOAL = 1
REASON_COLLISION = 2
REASON_CRASH = 3
REASON_LANE_FORBIDDEN = 4
REASON_TIMEOUT = 5
REASON_NAMES = {
    REASON_NONE: "none",
    REASON_GOAL: "goal",
    REASON_COLLISION: "collision",
    REASON_CRASH: "crash",
    REASON_LANE_FORBIDDEN: "lane_forbidden",
    REASON_TIMEOUT: "timeout",
}

CRASH_SPEED_LIMIT = 100.0  # m/s divergence guard


@dataclass(frozen=True)
class RewardConfig:
    """Weights and thresholds of all ten terms (signs applied in code)."""

    goal_weight: float = 45.0
    goal_radius: float = 3.0
    collision_weight: float = 6.0
    collision_warmup_steps: int = 24
    crash_weight: float = 10.0
    crash_drift_limit: float = 100.0
    lane_forbidden_weight: float = 20.0
    progress_weight: float = 2.0
    progress_clamp: float = 2.0
    lane_weight: float = 0.08
    lane_sigma: float = 1.75
    lane_heading_weight: float = 0.8
    offroad_weight: float = 0.5
    offroad_lat_limit: float = 3.25
    offroad_dist_limit: float = 6.0
    idle_weight: float = 0.05
    idle_speed: float = 1.0
    ttc_vehicle_alpha: float = 0.10
    ttc_vehicle_pmax: float = 0.35
    ttc_edge_alpha: float = 0.07
    ttc_edge_pmax: float = 0.40
    ttc_floor: float = 0.5
    edge_range: float = 40.0


DENSE_TERMS = ("progress", "lane", "offroad", "idle", "ttc_vehicle", "ttc_edge")
EVENT_TYPES = ("goal", "collision", "crash", "lane_forbidden")


def lane_mask_of(type_codes, seg_mask):
    return seg_mask & ((type_codes == LANE_CENTER_CODES[0]) | (type_codes == LANE_CENTER_CODES[1]))


def edge_mask_of(type_codes, seg_mask):
    return seg_mask & ((type_codes == ROAD_EDGE_CODES[0]) | (type_codes == ROAD_EDGE_CODES[1]))


def nearest_lane(pos, midpoints, directions, lane_mask, half_lengths):
    """Nearest driving-lane segment (by point-to-segment distance).

    ``lane_mask`` selects the drivable segments (see ``lane_mask_of``); the
    arrays may be pre-compacted to the lane subset.  Returns (distance,
    signed lateral offset to the segment axis, direction xy).  Worlds without
    lane segments yield inf distance and a zero direction.
    """
    px = pos[..., 0, None] - midpoints[..., 0]
    py = pos[..., 1, None] - midpoints[..., 1]
    along = px * directions[..., 0] + py * directions[..., 1]
    lat = directions[..., 0] * py - directions[..., 1] * px
    over = np.maximum(np.abs(along) - half_lengths, 0.0)
    d2 = over * over + lat * lat
    d2 = np.where(lane_mask, d2, np.inf)

    idx = np.argmin(d2, axis=-1)
    dist = np.sqrt(np.take_along_axis(d2, idx[..., None], axis=-1)[..., 0])
    lat_sel = np.take_along_axis(lat, idx[..., None], axis=-1)[..., 0]
    dir_x = np.take_along_axis(np.broadcast_to(directions[..., 0], d2.shape), idx[..., None], axis=-1)[..., 0]
    dir_y = np.take_along_axis(np.broadcast_to(directions[..., 1], d2.shape), idx[..., None], axis=-1)[..., 0]
    none = ~np.isfinite(dist)
    lat_sel = np.where(none, 0.0, lat_sel)
    dir_x = np.where(none, 0.0, dir_x)
    dir_y = np.where(none, 0.0, dir_y)
    return dist, lat_sel, dir_x, dir_y


def dense_rewards(prev_pos, pos, yaw, vel_body, goal, ttc_min,
                  lane_geom: tuple, edge_geom: tuple, cfg: RewardConfig):
    """All six dense terms for the transition prev_pos -> pos.

    ``ttc_min`` is the minimum pairwise vehicle TTC (seconds) per agent.
    ``lane_geom`` is (midpoints, directions, mask, half_lengths) over lane
    segments; ``edge_geom`` is (midpoints, mask) over road-edge segments.
    Returns a dict of per-term arrays plus their sum under ``total``.
    """
    lane_dist, lat, dir_x, dir_y = nearest_lane(pos, *lane_geom)

    # tangent oriented toward the goal
    to_goal_x = goal[..., 0] - pos[..., 0]
    to_goal_y = goal[..., 1] - pos[..., 1]
    flip = np.where(dir_x * to_goal_x + dir_y * to_goal_y >= 0.0, 1.0, -1.0)
    tx, ty = dir_x * flip, dir_y * flip
    step_vec_x = pos[..., 0] - prev_pos[..., 0]
    step_vec_y = pos[..., 1] - prev_pos[..., 1]
    progress = np.clip(step_vec_x * tx + step_vec_y * ty,
                       -cfg.progress_clamp, cfg.progress_clamp) * cfg.progress_weight

    lane_yaw = np.arctan2(ty, tx)
    align = np.maximum(0.0, np.cos(yaw - lane_yaw))
    quality = np.exp(-((lat / cfg.lane_sigma) ** 2)) * (
        (1.0 - cfg.lane_heading_weight) + cfg.lane_heading_weight * align)
    has_lane = np.isfinite(lane_dist)
    lane_term = np.where(has_lane, cfg.lane_weight * quality, 0.0)
    progress = np.where(has_lane, progress, 0.0)

    offroad = np.where(
        has_lane & ((np.abs(lat) > cfg.offroad_lat_limit) | (lane_dist > cfg.offroad_dist_limit)),
        -cfg.offroad_weight, 0.0)

    speed = np.sqrt(vel_body[..., 0] ** 2 + vel_body[..., 1] ** 2)
    idle = np.where(speed < cfg.idle_speed, -cfg.idle_weight, 0.0)

    ttc_vehicle = -np.minimum(cfg.ttc_vehicle_alpha / np.maximum(ttc_min, cfg.ttc_floor),
                              cfg.ttc_vehicle_pmax)

    tau_edge = edge_time_to_boundary(pos, yaw, vel_body, *edge_geom, cfg=cfg)
    ttc_edge = np.where(
        np.isfinite(tau_edge),
        -np.minimum(cfg.ttc_edge_alpha / np.maximum(tau_edge, cfg.ttc_floor), cfg.ttc_edge_pmax),
        0.0)

    terms = {
        "progress": progress,
        "lane": lane_term,
        "offroad": offroad,
        "idle": idle,
        "ttc_vehicle": ttc_vehicle,
        "ttc_edge": ttc_edge,
    }
    terms["total"] = progress + lane_term + offroad + idle + ttc_vehicle + ttc_edge
    return terms


def edge_time_to_boundary(pos, yaw, vel_body, midpoints, edge_mask,
                          cfg: RewardConfig):
    """Time to the first road-edge segment ahead (inf when none in range).

    The first edge is the smallest body-frame forward offset in
    (0, edge_range]; approach time divides by the forward speed floored at
    0.1 m/s.
    """
    dx = midpoints[..., 0] - pos[..., 0, None]
    dy = midpoints[..., 1] - pos[..., 1, None]
    xb, _ = body_frame(dx, dy, np.asarray(yaw)[..., None])
    ahead = edge_mask & (xb > 0.0) & (xb <= cfg.edge_range)
    gap = np.min(np.where(ahead, xb, np.inf), axis=-1)
    return gap / np.maximum(vel_body[..., 0], 0.1)


# ---------- sparse events ----------

def detect_goal(pos, goal, cfg: RewardConfig):
    dx = goal[..., 0] - pos[..., 0]
    dy = goal[..., 1] - pos[..., 1]
    return np.sqrt(dx * dx + dy * dy) <= cfg.goal_radius


def detect_crash(pos, start, vel_body, extra_state=None, cfg: RewardConfig = RewardConfig()):
    """Drift beyond the limit, non-finite state, or runaway speed."""
    dx = pos[..., 0] - start[..., 0]
    dy = pos[..., 1] - start[..., 1]
    drift = np.sqrt(dx * dx + dy * dy)
    speed = np.sqrt(vel_body[..., 0] ** 2 + vel_body[..., 1] ** 2)
    bad = ~(np.isfinite(pos).all(axis=-1) & np.isfinite(vel_body).all(axis=-1))
    if extra_state is not None:
        bad = bad | ~np.isfinite(extra_state).all(axis=-1)
    return (drift > cfg.crash_drift_limit) | bad | (speed > CRASH_SPEED_LIMIT)


def three_circle_centers(pos, yaw, d):
    """Centers of the three-circle hull, shape (..., 3, 2)."""
    c, s = np.cos(yaw), np.sin(yaw)
    offs = np.array([-1.0, 0.0, 1.0]) * np.asarray(d)[..., None]
    cx = pos[..., 0, None] + offs * c[..., None]
    cy = pos[..., 1, None] + offs * s[..., None]
    return np.stack([cx, cy], axis=-1)


def detect_lane_forbidden(pos, yaw, radius, d,
                          midpoints, directions, edge_mask,
                          half_lengths, half_widths):
    """Any of the three bounding circles overlapping a road-edge oriented box."""
    centers = three_circle_centers(pos, yaw, d)            # (..., 3, 2)
    px = centers[..., 0, None] - midpoints[..., None, :, 0]  # (..., 3, P)
    py = centers[..., 1, None] - midpoints[..., None, :, 1]
    ax = directions[..., None, :, 0]
    ay = directions[..., None, :, 1]
    along = px * ax + py * ay
    lat = ax * py - ay * px
    du = along - np.clip(along, -half_lengths[..., None, :], half_lengths[..., None, :])
    dv = lat - np.clip(lat, -half_widths[..., None, :], half_widths[..., None, :])
    d2 = du * du + dv * dv
    hit = (d2 < np.asarray(radius)[..., None, None] ** 2) & edge_mask[..., None, :]
    return hit.any(axis=(-2, -1))


def circle_pair_overlap(pos_a, yaw_a, r_a, d_a, pos_b, yaw_b, r_b, d_b):
    """True when any of the 9 circle pairs of two hulls overlap."""
    ca = three_circle_centers(pos_a, yaw_a, d_a)  # (..., 3, 2)
    cb = three_circle_centers(pos_b, yaw_b, d_b)
    dx = ca[..., :, None, 0] - cb[..., None, :, 0]
    dy = ca[..., :, None, 1] - cb[..., None, :, 1]
    d2 = dx * dx + dy * dy
    rsum = (np.asarray(r_a) + np.asarray(r_b))[..., None, None]
    return (d2 < rsum * rsum).any(axis=(-2, -1))


def detect_collision_batch(pos, yaw, radius, d, alive, age, warmup: int):
    """Per-agent collision flags over a (W, M) batch.

    An agent is flagged when its hull overlaps any other alive agent's hull
    and its own post-spawn age has left the warmup window.
    """
    overlap = circle_pair_overlap(
        pos[:, :, None, :], yaw[:, :, None], radius[:, :, None], d[:, :, None],
        pos[:, None, :, :], yaw[:, None, :], radius[:, None, :], d[:, None, :],
    )
    M = pos.shape[1]
    eye = np.eye(M, dtype=bool)[None]
    pair_ok = alive[:, :, None] & alive[:, None, :] & ~eye
    return (overlap & pair_ok).any(axis=-1) & (age >= warmup)


def pick_reason(goal, crash, lane_forbidden, collision):
    """Priority when simultaneous: goal > crash > lane-forbidden > collision."""
    reason = np.where(collision, REASON_COLLISION, REASON_NONE)
    reason = np.where(lane_forbidden, REASON_LANE_FORBIDDEN, reason)
    reason = np.where(crash, REASON_CRASH, reason)
    reason = np.where(goal, REASON_GOAL, reason)
    return reason


def sparse_reward(reason, cfg: RewardConfig):
    out = np.zeros(np.shape(reason), dtype=np.float64)
    out = np.where(reason == REASON_GOAL, cfg.goal_weight, out)
    out = np.where(reason == REASON_COLLISION, -cfg.collision_weight, out)
    out = np.where(reason == REASON_CRASH, -cfg.crash_weight, out)
    out = np.where(reason == REASON_LANE_FORBIDDEN, -cfg.lane_forbidden_weight, out)
    return out
