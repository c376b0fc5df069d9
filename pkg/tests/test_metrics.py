import numpy as np
import pytest

from conftest import small_engine
from drivegrid.config import prepare_scene
from drivegrid.engine import PHASES, EpisodeLog
from drivegrid.metrics import (BenchReport, drac, episode_metrics,
                               measure_engine, pairwise_drac, run_bench,
                               write_bench_csv)
from drivegrid.policies import LaneFollower, ZeroPolicy
from drivegrid.synth import straight_scene


def test_drac_values():
    assert drac(10.0, 5.0) == pytest.approx(10.0)
    assert drac(0.0, 5.0) == 0.0
    assert drac(-3.0, 5.0) == 0.0  # opening gap
    with pytest.raises(ValueError):
        drac(5.0, 0.0)


def make_two_agent_log(v_closing=8.0, center_gap=12.0):
    """Hand-built snapshot: agent 1 drives straight at agent 0."""
    state = {
        "x": np.array([[center_gap, 0.0]]),
        "y": np.zeros((1, 2)),
        "yaw": np.array([[0.0, 0.0]]),
        "v_x": np.array([[0.0, v_closing]]),
        "v_y": np.zeros((1, 2)),
        "yaw_rate": np.zeros((1, 2)),
        "steer_angle": np.zeros((1, 2)),
        "wheel_front": np.zeros((1, 2)),
        "wheel_rear": np.zeros((1, 2)),
    }
    log = EpisodeLog(control_dt=1 / 30)
    zero = np.zeros((1, 2))
    alive = np.ones((1, 2), dtype=bool)
    events = {k: np.zeros((1, 2), dtype=bool) for k in
              ("goal", "collision", "crash", "lane_forbidden")}
    log.append(1, state, np.zeros((1, 2, 3)), zero, {"total": zero}, events,
               np.zeros((1, 2), dtype=bool), alive, alive)
    return log


def test_pairwise_drac_hand_case():
    # oracle: closing speed 8 m/s, hull gap = 12 - 2*1.12 - 2*1.10 = 7.56 m
    log = make_two_agent_log()
    rec = log.steps[0]
    pos = np.stack([rec["state"]["x"], rec["state"]["y"]], axis=-1)
    vel = np.stack([rec["state"]["v_x"], rec["state"]["v_y"]], axis=-1)
    r = np.full((1, 2), 1.10)
    d = np.full((1, 2), 1.12)
    vals = pairwise_drac(pos, rec["state"]["yaw"], vel, r, d, rec["alive_pre"])
    gap = 12.0 - 2 * 1.12 - 2 * 1.10
    np.testing.assert_allclose(vals[0], [8.0**2 / (2 * gap)] * 2, rtol=1e-12)


def test_episode_metrics_hand_log():
    log = make_two_agent_log()
    valid = np.ones((1, 2), dtype=bool)
    m = episode_metrics(log, valid)
    assert m.sr == 0.0 and m.cr == 0.0
    expected = 8.0**2 / (2 * (12.0 - 4.44))
    assert m.mean_max_drac == pytest.approx(expected)
    assert m.valid_agents == 2


def test_episode_metrics_all_goals():
    scene = prepare_scene(straight_scene(agent_count=2, agent_gap=12.0, goal_dist=20.0))
    eng = small_engine(num_envs=1, num_agents=2, scenes=[scene])
    log = eng.run_episode(LaneFollower(throttle=1.0, obs_config=eng.obs_config),
                          record=True)
    m = episode_metrics(log, eng.valid, eng.length, eng.width)
    assert m.sr == 1.0
    assert m.cr == 0.0


def test_measure_engine_report_fields():
    eng = small_engine(num_envs=2, num_agents=2)
    rep = measure_engine(eng, ZeroPolicy(), steps=6, warmup=2)
    assert rep.casps > 0
    assert rep.steps == 6
    assert set(rep.phase_ms) == set(PHASES)
    assert all(v >= 0 for v in rep.phase_ms.values())


def test_run_bench_small_grid(tmp_path):
    reports = run_bench([(2, 2)], steps=6, warmup=2)
    assert len(reports) == 2
    paths = {r.path for r in reports}
    assert paths == {"vectorized", "reference"}
    out = tmp_path / "bench.csv"
    write_bench_csv(reports, out)
    header = out.read_text().splitlines()[0]
    for phase in PHASES:
        assert f"{phase}_ms" in header
    assert "CASPS" in header


def test_bench_report_row():
    rep = BenchReport(num_envs=8, num_agents=4, backend="dynamic",
                      path="vectorized", casps=1234.5, steps=10,
                      warmup_steps=2, wall_seconds=0.5,
                      phase_ms={k: 1.0 for k in PHASES})
    row = rep.to_row()
    assert row["W"] == 8 and row["M"] == 4
    assert row["CASPS"] == 1234.5
