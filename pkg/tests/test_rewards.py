import math

import numpy as np
import pytest

from drivegrid.observation import circle_layout
from drivegrid.rewards import (REASON_COLLISION, REASON_CRASH, REASON_GOAL,
                               REASON_LANE_FORBIDDEN, REASON_NONE,
                               RewardConfig, circle_pair_overlap,
                               dense_rewards, detect_crash, detect_goal,
                               detect_lane_forbidden, detect_collision_batch,
                               edge_time_to_boundary, nearest_lane,
                               pick_reason, sparse_reward)

CFG = RewardConfig()


def test_config_matches_published_ledger():
    assert CFG.goal_weight == 45.0 and CFG.goal_radius == 3.0
    assert CFG.collision_weight == 6.0 and CFG.collision_warmup_steps == 24
    assert CFG.crash_weight == 10.0 and CFG.crash_drift_limit == 100.0
    assert CFG.lane_forbidden_weight == 20.0
    assert CFG.progress_weight == 2.0 and CFG.progress_clamp == 2.0
    assert CFG.lane_weight == 0.08 and CFG.lane_sigma == 1.75
    assert CFG.lane_heading_weight == 0.8
    assert CFG.offroad_weight == 0.5
    assert CFG.offroad_lat_limit == 3.25 and CFG.offroad_dist_limit == 6.0
    assert CFG.idle_weight == 0.05 and CFG.idle_speed == 1.0
    assert CFG.ttc_vehicle_alpha == 0.10 and CFG.ttc_vehicle_pmax == 0.35
    assert CFG.ttc_edge_alpha == 0.07 and CFG.ttc_edge_pmax == 0.40
    assert CFG.ttc_floor == 0.5 and CFG.edge_range == 40.0


def straight_lane(n=40, spacing=2.0, y=0.0):
    """Lane segments along +x with midpoints at (spacing*(i+0.5), y)."""
    mids = np.stack([spacing * (np.arange(n) + 0.5), np.full(n, y)], axis=1)
    dirs = np.tile([1.0, 0.0], (n, 1))
    mask = np.ones(n, dtype=bool)
    half = np.full(n, spacing / 2)
    return mids, dirs, mask, half


def edge_pack(y=6.0, n=40, spacing=2.0):
    mids = np.stack([spacing * (np.arange(n) + 0.5), np.full(n, y)], axis=1)
    dirs = np.tile([1.0, 0.0], (n, 1))
    mask = np.ones(n, dtype=bool)
    return mids, dirs, mask, np.full(n, spacing / 2), np.full(n, 0.05)


def dense(prev, pos, yaw=0.0, vel=(5.0, 0.0), goal=(60.0, 0.0), ttc_min=10.0,
          lane=None, edge=None, cfg=CFG):
    lane = lane if lane is not None else straight_lane()
    e = edge if edge is not None else edge_pack()
    return dense_rewards(np.asarray(prev, dtype=np.float64),
                         np.asarray(pos, dtype=np.float64),
                         np.float64(yaw), np.asarray(vel, dtype=np.float64),
                         np.asarray(goal, dtype=np.float64), np.float64(ttc_min),
                         lane, (e[0], e[2]), cfg)


def test_lane_quality_on_center():
    t = dense([10.0, 0.0], [10.2, 0.0])
    assert float(t["lane"]) == pytest.approx(0.08, abs=1e-12)


def test_lane_quality_at_sigma():
    t = dense([10.0, 1.75], [10.2, 1.75])
    assert float(t["lane"]) == pytest.approx(0.08 * math.exp(-1.0), abs=1e-9)
    assert float(t["lane"]) == pytest.approx(0.0294, abs=1e-4)


def test_lane_quality_heading_term():
    t = dense([10.0, 0.0], [10.0, 0.0], yaw=np.pi / 2)  # perpendicular to lane
    assert float(t["lane"]) == pytest.approx(0.08 * 0.2, abs=1e-12)


def test_progress_forward_and_clamp():
    t = dense([10.0, 0.0], [11.0, 0.0])
    assert float(t["progress"]) == pytest.approx(2.0 * 1.0)
    t = dense([10.0, 0.0], [15.0, 0.0])
    assert float(t["progress"]) == pytest.approx(2.0 * 2.0)  # clamped at 2 m


def test_progress_backward_negative():
    t = dense([11.0, 0.0], [10.0, 0.0])
    assert float(t["progress"]) == pytest.approx(-2.0)


def test_progress_oriented_toward_goal():
    # moving +x with the goal behind scores negative progress
    t = dense([10.0, 0.0], [11.0, 0.0], goal=(0.0, 0.0))
    assert float(t["progress"]) == pytest.approx(-2.0)


def test_offroad_lateral():
    t = dense([10.0, 3.5], [10.0, 3.5])
    assert float(t["offroad"]) == -0.5
    t = dense([10.0, 3.0], [10.0, 3.0])
    assert float(t["offroad"]) == 0.0


def test_idle_penalty():
    t = dense([10.0, 0.0], [10.0, 0.0], vel=(0.5, 0.0))
    assert float(t["idle"]) == -0.05
    t = dense([10.0, 0.0], [10.0, 0.0], vel=(1.5, 0.0))
    assert float(t["idle"]) == 0.0


def test_vehicle_ttc_penalty_floor():
    t = dense([10.0, 0.0], [10.0, 0.0], ttc_min=0.4)
    assert float(t["ttc_vehicle"]) == pytest.approx(-min(0.10 / 0.5, 0.35))
    assert float(t["ttc_vehicle"]) == pytest.approx(-0.20)


def test_vehicle_ttc_penalty_cap():
    t = dense([10.0, 0.0], [10.0, 0.0], ttc_min=10.0)
    assert float(t["ttc_vehicle"]) == pytest.approx(-0.01)
    assert abs(float(t["ttc_vehicle"])) <= 0.35


def test_edge_ttc_penalty():
    mids, dirs, mask, hlen, hwid = edge_pack()
    # edge 20 m ahead at 5 m/s: tau = 4 s -> alpha/4
    mids2 = np.array([[20.0, 0.0]])
    tau = edge_time_to_boundary(np.zeros(2), np.float64(0.0),
                                np.array([5.0, 0.0]), mids2,
                                np.ones(1, dtype=bool), cfg=CFG)
    assert float(tau) == pytest.approx(4.0)
    # penalty uses the floor and cap
    t = dense([0.0, 0.0], [0.0, 0.0], vel=(5.0, 0.0),
              edge=(mids2, None, np.ones(1, dtype=bool), None, None))
    assert float(t["ttc_edge"]) == pytest.approx(-min(0.07 / 4.0, 0.40))


def test_edge_ttc_out_of_range():
    mids2 = np.array([[50.0, 0.0]])  # beyond the 40 m window
    tau = edge_time_to_boundary(np.zeros(2), np.float64(0.0),
                                np.array([5.0, 0.0]), mids2,
                                np.ones(1, dtype=bool), cfg=CFG)
    assert np.isinf(float(tau))


def test_dense_bounds_random():
    g = np.random.Generator(np.random.Philox(13))
    for _ in range(100):
        prev = g.uniform(0, 60, 2)
        pos = prev + g.uniform(-3, 3, 2)
        t = dense(prev, pos, yaw=g.uniform(-np.pi, np.pi),
                  vel=g.uniform(-12, 12, 2), ttc_min=g.uniform(0, 10))
        assert abs(float(t["progress"])) <= 4.0
        assert 0.0 <= float(t["lane"]) <= 0.08
        assert -0.35 <= float(t["ttc_vehicle"]) <= 0.0
        assert -0.40 <= float(t["ttc_edge"]) <= 0.0


def test_detect_goal_threshold():
    goal = np.array([10.0, 0.0])
    assert detect_goal(np.array([7.01, 0.0]), goal, CFG)
    assert not detect_goal(np.array([6.99, 0.0]), goal, CFG)


def test_detect_crash_drift():
    start = np.zeros(2)
    vel = np.zeros(2)
    assert detect_crash(np.array([101.0, 0.0]), start, vel, cfg=CFG)
    assert not detect_crash(np.array([50.0, 0.0]), start, vel, cfg=CFG)


def test_detect_crash_guards():
    start = np.zeros(2)
    assert detect_crash(np.array([np.nan, 0.0]), start, np.zeros(2), cfg=CFG)
    assert detect_crash(np.zeros(2), start, np.array([120.0, 0.0]), cfg=CFG)


def test_lane_forbidden_overlap_oracle():
    # circle of r=1.10 placed 0.5 m from a thin edge box: the point-to-box
    # distance is 0.45 < 1.10, so the hull overlaps
    mids, dirs, mask, hlen, hwid = edge_pack(y=0.0, n=1)
    r, d = circle_layout(4.0, 2.0, 2.6)
    hit = detect_lane_forbidden(np.array([1.0, 0.5]), np.float64(0.0),
                                np.float64(r), np.float64(d),
                                mids, dirs, mask, hlen, hwid)
    assert bool(hit)
    far = detect_lane_forbidden(np.array([1.0, 8.0]), np.float64(0.0),
                                np.float64(r), np.float64(d),
                                mids, dirs, mask, hlen, hwid)
    assert not bool(far)


def test_lane_segments_never_trigger_forbidden():
    # lane-center geometry is excluded upstream: an empty edge set means no hit
    mids = np.zeros((0, 2))
    hit = detect_lane_forbidden(np.zeros(2), np.float64(0.0), np.float64(1.1),
                                np.float64(1.12), mids, np.zeros((0, 2)),
                                np.zeros(0, dtype=bool), np.zeros(0), np.zeros(0))
    assert not bool(hit)


def test_collision_batch_warmup():
    pos = np.array([[[0.0, 0.0], [1.0, 0.0]]])
    yaw = np.zeros((1, 2))
    r = np.full((1, 2), 1.10)
    d = np.full((1, 2), 1.12)
    alive = np.ones((1, 2), dtype=bool)
    young = np.full((1, 2), 10)
    old = np.full((1, 2), 30)
    assert not detect_collision_batch(pos, yaw, r, d, alive, young, 24).any()
    assert detect_collision_batch(pos, yaw, r, d, alive, old, 24).all()


def test_collision_requires_alive():
    pos = np.array([[[0.0, 0.0], [1.0, 0.0]]])
    yaw = np.zeros((1, 2))
    r = np.full((1, 2), 1.10)
    d = np.full((1, 2), 1.12)
    alive = np.array([[True, False]])
    age = np.full((1, 2), 30)
    assert not detect_collision_batch(pos, yaw, r, d, alive, age, 24).any()


def test_circle_pair_overlap_geometry():
    assert bool(circle_pair_overlap(np.zeros(2), np.float64(0.0), 1.1, 1.12,
                                    np.array([2.0, 0.0]), np.float64(0.0), 1.1, 1.12))
    assert not bool(circle_pair_overlap(np.zeros(2), np.float64(0.0), 1.1, 1.12,
                                        np.array([10.0, 0.0]), np.float64(0.0), 1.1, 1.12))


def test_priority_goal_wins():
    goal = np.array([True])
    crash = np.array([True])
    lane = np.array([True])
    coll = np.array([True])
    assert pick_reason(goal, crash, lane, coll)[0] == REASON_GOAL
    assert pick_reason(~goal, crash, lane, coll)[0] == REASON_CRASH
    assert pick_reason(~goal, ~crash, lane, coll)[0] == REASON_LANE_FORBIDDEN
    assert pick_reason(~goal, ~crash, ~lane, coll)[0] == REASON_COLLISION
    assert pick_reason(~goal, ~crash, ~lane, ~coll)[0] == REASON_NONE


def test_sparse_reward_signs():
    reasons = np.array([REASON_GOAL, REASON_COLLISION, REASON_CRASH,
                        REASON_LANE_FORBIDDEN, REASON_NONE])
    np.testing.assert_allclose(sparse_reward(reasons, CFG),
                               [45.0, -6.0, -10.0, -20.0, 0.0])


def test_nearest_lane_signed_offset():
    lane = straight_lane()
    dist, lat, dx, dy = nearest_lane(np.array([10.0, 2.0]), *lane)
    assert float(lat) == pytest.approx(2.0)   # left of the lane axis
    assert float(dist) == pytest.approx(2.0)
    dist, lat, _, _ = nearest_lane(np.array([10.0, -1.5]), *lane)
    assert float(lat) == pytest.approx(-1.5)
