"""Per-agent observation assembly: ego + weather, road context, neighbors.

Every function exists in two callable shapes: the batch engine passes arrays
with a leading (W, M) agent axis, the scalar reference path passes one agent
at a time.  Both run the same elementwise expressions so their outputs agree
to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU_MAX = 10.0


@dataclass(frozen=True)
class ObsConfig:
    k_road: int = 350
    road_radius: float = 10.0
    k_vehicles: int = 24
    ttc_max: float = TAU_MAX
    bbox_half: float = 100.0
    speed_norm: float = 10.0
    type_norm: float = 20.0
    include_weather: bool = True

    @property
    def ego_dim(self) -> int:
        return 7 + (4 if self.include_weather else 0)

    @property
    def obs_dim(self) -> int:
        return self.ego_dim + self.k_road * 5 + self.k_vehicles * 7


def body_frame(dx, dy, yaw):
    """Rotate a world-frame offset into the body frame (rotation by -yaw)."""
    c, s = np.cos(yaw), np.sin(yaw)
    return c * dx + s * dy, -s * dx + c * dy


def circle_layout(length, width, wheelbase: float):
    """Radius and longitudinal offset of the three-circle hull."""
    r = np.maximum(0.45, 0.55 * np.asarray(width, dtype=np.float64))
    d = np.minimum(wheelbase / 2.0, np.maximum(0.0, np.asarray(length, dtype=np.float64) / 2.0 - 0.8 * r))
    return r, d


def ego_features(pos, yaw, vel_body, goal, cfg: ObsConfig, weather=None):
    """Goal and velocity in body coordinates; weather token appended when given.

    ``pos``/``goal`` have trailing dim 2, ``vel_body`` is (v_x, v_y); leading
    axes broadcast.
    """
    dxb, dyb = body_frame(goal[..., 0] - pos[..., 0], goal[..., 1] - pos[..., 1], yaw)
    dpsi = np.arctan2(dyb, dxb)
    dist = np.sqrt(dxb * dxb + dyb * dyb)
    feats = [
        dxb / cfg.bbox_half,
        dyb / cfg.bbox_half,
        np.sin(dpsi),
        np.cos(dpsi),
        dist / cfg.bbox_half,
        vel_body[..., 0] / cfg.speed_norm,
        vel_body[..., 1] / cfg.speed_norm,
    ]
    out = np.stack(feats, axis=-1)
    if cfg.include_weather:
        if weather is None:
            raise ValueError("weather token required when include_weather is set")
        weather = np.broadcast_to(np.asarray(weather, dtype=np.float64), out.shape[:-1] + (4,))
        out = np.concatenate([out, weather], axis=-1)
    return out


def road_context(pos, yaw, midpoints, directions, type_codes, seg_mask, cfg: ObsConfig):
    """Nearby road segments as (..., K_r, 5) features.

    Candidates within ``road_radius`` are ordered by their original segment
    index (preserving road topology), truncated to K_r, zero-padded beyond.
    Geometry is either (P, ...) for a single agent or (W, 1, P, ...) against
    (W, M) agent arrays.
    """
    pos = np.asarray(pos, dtype=np.float64)
    yaw = np.asarray(yaw, dtype=np.float64)
    lead = pos.shape[:-1]
    P = midpoints.shape[-2]

    dx = midpoints[..., 0] - pos[..., 0, None]
    dy = midpoints[..., 1] - pos[..., 1, None]
    d2 = dx * dx + dy * dy
    cand = (d2 <= cfg.road_radius**2) & seg_mask

    # stable sort of the candidacy flag puts candidates first, each group in
    # original index order
    order = np.argsort(~cand, axis=-1, kind="stable")
    take = min(cfg.k_road, P)
    sel = order[..., :take]

    sel_valid = np.take_along_axis(cand, sel, axis=-1)
    dxb, dyb = body_frame(
        np.take_along_axis(dx, sel, axis=-1),
        np.take_along_axis(dy, sel, axis=-1),
        yaw[..., None],
    )
    if midpoints.ndim == 4:
        w_idx = np.arange(midpoints.shape[0])[:, None, None]
        dir_sel = directions[w_idx, 0, sel]
        types = type_codes[w_idx, 0, sel].astype(np.float64)
    else:
        dir_sel = directions[sel]
        types = type_codes[sel].astype(np.float64)
    ddxb, ddyb = body_frame(dir_sel[..., 0], dir_sel[..., 1], yaw[..., None])

    alloc = np.empty if take == cfg.k_road else np.zeros
    rows = alloc(lead + (cfg.k_road, 5))
    np.divide(dxb, cfg.road_radius, out=rows[..., :take, 0])
    np.divide(dyb, cfg.road_radius, out=rows[..., :take, 1])
    np.divide(types, cfg.type_norm, out=rows[..., :take, 2])
    rows[..., :take, 3] = ddxb
    rows[..., :take, 4] = ddyb
    rows[..., :take, :] *= sel_valid[..., None]
    return rows


def swept_circle_ttc(
    ego_pos, ego_yaw, ego_vel_world, ego_length, ego_width,
    nb_pos, nb_yaw, nb_vel_world, nb_length, nb_width,
    wheelbase: float = 2.6, ttc_max: float = TAU_MAX,
):
    """Constant-velocity closest-approach time over the 3x3 circle pairs.

    Each vehicle is three equal circles at offsets {-d, 0, +d} along its
    heading.  Neighbors behind the ego or on non-colliding trajectories get
    ``ttc_max``; already-overlapping pairs get 0.  All leading axes broadcast.
    """
    ego_pos = np.asarray(ego_pos, dtype=np.float64)
    nb_pos = np.asarray(nb_pos, dtype=np.float64)

    r_e, d_e = circle_layout(ego_length, ego_width, wheelbase)
    r_n, d_n = circle_layout(nb_length, nb_width, wheelbase)

    dx = nb_pos[..., 0] - ego_pos[..., 0]
    dy = nb_pos[..., 1] - ego_pos[..., 1]
    ux = nb_vel_world[..., 0] - ego_vel_world[..., 0]
    uy = nb_vel_world[..., 1] - ego_vel_world[..., 1]

    ce, se = np.cos(ego_yaw), np.sin(ego_yaw)
    cn, sn = np.cos(nb_yaw), np.sin(nb_yaw)

    offsets = np.array([-1.0, 0.0, 1.0])
    # circle-center separation for each of the 9 (ego i, neighbor j) pairs
    oe = offsets[:, None] * np.asarray(d_e)[..., None, None]   # (..., 3, 1)
    on = offsets[None, :] * np.asarray(d_n)[..., None, None]   # (..., 1, 3)
    px = dx[..., None, None] + on * cn[..., None, None] - oe * ce[..., None, None]
    py = dy[..., None, None] + on * sn[..., None, None] - oe * se[..., None, None]

    rsum = (np.asarray(r_e) + np.asarray(r_n))[..., None, None]
    a = (ux * ux + uy * uy)[..., None, None]
    b = 2.0 * (px * ux[..., None, None] + py * uy[..., None, None])
    c = px * px + py * py - rsum * rsum

    disc = b * b - 4.0 * a * c
    moving = a >= 1e-12  # relative speed above ~1e-6 m/s
    sqrt_disc = np.sqrt(np.maximum(disc, 0.0))
    safe_a = np.where(moving, a, 1.0)
    t_enter = (-b - sqrt_disc) / (2.0 * safe_a)
    t_exit = (-b + sqrt_disc) / (2.0 * safe_a)

    hit = moving & (disc >= 0.0) & (t_exit >= 0.0)
    ttc_pair = np.where(hit, np.maximum(t_enter, 0.0), ttc_max)
    # degenerate relative motion: overlapping now -> 0, else no collision
    ttc_pair = np.where(~moving & (c < 0.0), 0.0, ttc_pair)

    ttc = np.min(np.clip(ttc_pair, 0.0, ttc_max), axis=(-2, -1))

    # neighbors behind the ego carry no forward collision threat
    xb, _ = body_frame(dx, dy, ego_yaw)
    return np.where(xb < 0.0, ttc_max, ttc)


def neighbor_features(
    ego_idx: int,
    pos, yaw, vel_world, vel_body, length, width, alive,
    cfg: ObsConfig, wheelbase: float = 2.6,
):
    """Features of the K_v nearest alive agents for one ego agent.

    ``pos``/... are (M, ...) arrays over the agents of one world; returns
    (K_v, 7) zero-padded rows.
    """
    M = pos.shape[0]
    dx = pos[:, 0] - pos[ego_idx, 0]
    dy = pos[:, 1] - pos[ego_idx, 1]
    dist = np.sqrt(dx * dx + dy * dy)
    dist = np.where(alive, dist, np.inf)
    dist[ego_idx] = np.inf

    order = np.argsort(dist, kind="stable")
    take = min(cfg.k_vehicles, M)
    sel = order[:take]
    valid = np.isfinite(dist[sel])

    dxb, dyb = body_frame(dx[sel], dy[sel], yaw[ego_idx])
    dpsi_raw = yaw[sel] - yaw[ego_idx]
    dpsi = np.arctan2(np.sin(dpsi_raw), np.cos(dpsi_raw))
    speed = np.sqrt(vel_body[sel, 0] ** 2 + vel_body[sel, 1] ** 2)
    ttc = swept_circle_ttc(
        pos[ego_idx], yaw[ego_idx], vel_world[ego_idx], length[ego_idx], width[ego_idx],
        pos[sel], yaw[sel], vel_world[sel], length[sel], width[sel],
        wheelbase=wheelbase, ttc_max=cfg.ttc_max,
    )

    rows = np.stack(
        [
            dxb / cfg.bbox_half,
            dyb / cfg.bbox_half,
            length[sel] / cfg.bbox_half,
            width[sel] / cfg.bbox_half,
            dpsi / np.pi,
            speed / cfg.speed_norm,
            ttc / cfg.ttc_max,
        ],
        axis=-1,
    )
    rows = np.where(valid[:, None], rows, 0.0)
    ttc_min = np.min(np.where(valid, ttc, cfg.ttc_max), axis=-1) if take else np.float64(cfg.ttc_max)
    if take < cfg.k_vehicles:
        rows = np.concatenate([rows, np.zeros((cfg.k_vehicles - take, 7))], axis=0)
    return rows, ttc_min


def neighbor_features_batch(pos, yaw, vel_world, vel_body, length, width, alive,
                            cfg: ObsConfig, wheelbase: float = 2.6):
    """Vectorized neighbor block over a (W, M) agent batch -> (W, M, K_v, 7)."""
    W, M = pos.shape[:2]
    dx = pos[:, None, :, 0] - pos[:, :, None, 0]   # (W, ego, other)
    dy = pos[:, None, :, 1] - pos[:, :, None, 1]
    dist = np.sqrt(dx * dx + dy * dy)
    dist = np.where(alive[:, None, :], dist, np.inf)
    eye = np.eye(M, dtype=bool)
    dist = np.where(eye[None], np.inf, dist)

    order = np.argsort(dist, axis=-1, kind="stable")
    take = min(cfg.k_vehicles, M)
    sel = order[..., :take]                        # (W, M, take)
    valid = np.isfinite(np.take_along_axis(dist, sel, axis=-1))

    dxb, dyb = body_frame(
        np.take_along_axis(dx, sel, axis=-1),
        np.take_along_axis(dy, sel, axis=-1),
        yaw[:, :, None],
    )
    yaw_sel = np.take_along_axis(np.broadcast_to(yaw[:, None, :], dist.shape), sel, axis=-1)
    dpsi_raw = yaw_sel - yaw[:, :, None]
    dpsi = np.arctan2(np.sin(dpsi_raw), np.cos(dpsi_raw))

    def gather(arr):
        return np.take_along_axis(np.broadcast_to(arr[:, None, :], dist.shape), sel, axis=-1)

    vbx, vby = gather(vel_body[..., 0]), gather(vel_body[..., 1])
    speed = np.sqrt(vbx * vbx + vby * vby)
    len_sel, wid_sel = gather(length), gather(width)

    ttc = swept_circle_ttc(
        pos[:, :, None, :], yaw[:, :, None], vel_world[:, :, None, :],
        length[:, :, None], width[:, :, None],
        np.stack([gather(pos[..., 0]), gather(pos[..., 1])], axis=-1),
        yaw_sel,
        np.stack([gather(vel_world[..., 0]), gather(vel_world[..., 1])], axis=-1),
        len_sel, wid_sel,
        wheelbase=wheelbase, ttc_max=cfg.ttc_max,
    )

    rows = np.stack(
        [
            dxb / cfg.bbox_half,
            dyb / cfg.bbox_half,
            len_sel / cfg.bbox_half,
            wid_sel / cfg.bbox_half,
            dpsi / np.pi,
            speed / cfg.speed_norm,
            ttc / cfg.ttc_max,
        ],
        axis=-1,
    )
    rows = np.where(valid[..., None], rows, 0.0)
    ttc_min = np.min(np.where(valid, ttc, cfg.ttc_max), axis=-1) if take else np.full((W, M), cfg.ttc_max)
    if take < cfg.k_vehicles:
        rows = np.concatenate([rows, np.zeros((W, M, cfg.k_vehicles - take, 7))], axis=-2)
    return rows, ttc_min


def assemble(ego, road, vehicles):
    """Concatenate the groups into the flat observation vector."""
    lead = ego.shape[:-1]
    return np.concatenate(
        [ego, road.reshape(lead + (-1,)), vehicles.reshape(lead + (-1,))],
        axis=-1,
    )
