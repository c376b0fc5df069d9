import dataclasses
import json

import numpy as np
import pytest
import yaml

from drivegrid.cli import main
from drivegrid.config import (ConfigError, RootConfig, build_engine,
                              config_from_dict, config_to_dict, parse_config,
                              prepare_scene, resample_goal, sample_weather,
                              save_config)
from drivegrid.rewards import RewardConfig
from drivegrid.scenario import save_scenario
from drivegrid.synth import crossroads_scene, straight_scene
from drivegrid.world import import_world_batch


def test_empty_config_gives_paper_defaults(tmp_path):
    p = tmp_path / "empty.yaml"
    p.write_text("")
    cfg = parse_config(p)
    assert cfg.env.num_envs == 256
    assert cfg.env.num_agents_per_env == 16
    assert cfg.env.dynamics_mode == "dynamic"
    assert cfg.env.episode_len == 1500
    assert cfg.seed == 42


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError, match="env.num_env$"):
        config_from_dict({"env": {"num_env": 8}})
    with pytest.raises(ConfigError, match="rewward"):
        config_from_dict({"rewward": {}})


def test_config_roundtrip(tmp_path):
    cfg = RootConfig()
    cfg.env.num_envs = 12
    cfg.weather.wet_fraction = 0.3
    cfg.reward = dataclasses.replace(cfg.reward, goal_weight=50.0)
    path = tmp_path / "cfg.yaml"
    save_config(cfg, path)
    again = parse_config(path)
    assert config_to_dict(again) == config_to_dict(cfg)


def test_every_reward_field_reachable():
    for field in dataclasses.fields(RewardConfig):
        probe = 7.25 if field.type in ("float", float) else 7
        cfg = config_from_dict({"reward": {field.name: probe}})
        assert getattr(cfg.reward, field.name) == probe


def test_dynamics_mode_switches_backend():
    cfg = RootConfig()
    cfg.env.num_envs = 1
    cfg.env.num_agents_per_env = 1
    cfg.env.dynamics_mode = "bicycle"
    eng = build_engine(cfg, scenes=[prepare_scene(straight_scene(agent_count=1))])
    assert eng.config.dynamics_mode == "bicycle"


def test_weather_sampling_deterministic():
    wcfg = RootConfig().weather
    wcfg.wet_fraction = 0.5
    a = sample_weather(wcfg, 20, seed=9)
    b = sample_weather(wcfg, 20, seed=9)
    assert a == b
    assert any(h > 0 for _, h in a)
    assert any(h == 0 for _, h in a)
    for s, h in a:
        assert s in ("AC", "SMA", "OGFC")
        assert 0.0 <= h <= wcfg.film_max_mm


def test_resample_goal_exact_arc():
    scene = prepare_scene(straight_scene(agent_count=1))
    rng = np.random.Generator(np.random.Philox(0))
    start = np.array(scene.agents[0].start)
    goal = resample_goal(start, scene, 20.0, 20.0, rng)
    assert goal is not None
    assert np.hypot(*(goal - start)) == pytest.approx(20.0, abs=1e-9)


def test_resample_goal_no_room():
    scene = prepare_scene(straight_scene(agent_count=1))
    rng = np.random.Generator(np.random.Philox(0))
    start = np.array(scene.agents[0].start)
    assert resample_goal(start, scene, 1e5, 1e5, rng) is None


def test_resample_goal_seed_deterministic():
    scene = prepare_scene(straight_scene(agent_count=1))
    start = np.array(scene.agents[0].start)
    a = resample_goal(start, scene, 10.0, 60.0,
                      np.random.Generator(np.random.Philox(5)))
    b = resample_goal(start, scene, 10.0, 60.0,
                      np.random.Generator(np.random.Philox(5)))
    np.testing.assert_array_equal(a, b)


def small_config_file(tmp_path, **env):
    cfg = {"env": {"num_envs": 1, "num_agents_per_env": 2, **env},
           "scene_factory": {"assignment_mode": "fixed"}}
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def test_cli_friction_table_bit_stable(tmp_path, capsys):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["friction-table", "--out", str(out1)]) == 0
    assert main(["friction-table", "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = out1.read_text().splitlines()
    assert rows[0] == "surface,h_mm,mu_static,mu_dynamic"
    assert len(rows) == 1 + 3 * 5


def test_cli_forge_and_reimport(tmp_path):
    scene_dir = tmp_path / "scenes"
    scene_dir.mkdir()
    for i in range(2):
        save_scenario(straight_scene(f"s{i}", agent_count=2), scene_dir / f"s{i}.json")
    out = tmp_path / "worlds.bin"
    rc = main(["forge", "--scenes", str(scene_dir), "--worlds", "3", "--out", str(out)])
    assert rc == 0
    batch = import_world_batch(out)
    assert batch.num_worlds == 3
    meta = json.loads((tmp_path / "worlds.bin.meta.json").read_text())
    assert len(meta["assignment"]) == 3


def test_cli_run_writes_log(tmp_path):
    cfgp = small_config_file(tmp_path)
    out = tmp_path / "traj.jsonl"
    rc = main(["run", "--config", str(cfgp), "--steps", "5", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 5 * 1 * 2


def test_cli_eval_metrics_json(tmp_path):
    cfgp = small_config_file(tmp_path)
    out = tmp_path / "metrics.json"
    rc = main(["eval", "--config", str(cfgp), "--steps", "40", "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    for key in ("sr", "cr", "mean_max_drac", "valid_agents"):
        assert key in payload
    assert payload["invincible"] is False


def test_cli_eval_invincible_logs_without_termination(tmp_path):
    # two crossing agents collide at the intersection; invincible mode logs
    # the event but keeps them running
    scene_dir = tmp_path / "scenes"
    scene_dir.mkdir()
    save_scenario(crossroads_scene(agent_count=2, goal_dist=60.0),
                  scene_dir / "cross.json")
    cfg = {"env": {"num_envs": 1, "num_agents_per_env": 2},
           "scene_factory": {"assignment_mode": "fixed",
                             "config_path": str(scene_dir)}}
    cfgp = tmp_path / "cfg.yaml"
    cfgp.write_text(yaml.safe_dump(cfg))
    out = tmp_path / "metrics.json"
    rc = main(["eval", "--config", str(cfgp), "--invincible", "--steps", "400",
               "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["invincible"] is True
    assert payload["collisions"] >= 1
    assert payload["goals"] >= 1  # termination never blocked the goal


def test_cli_eval_replays_action_stream(tmp_path):
    cfgp = small_config_file(tmp_path)
    stream = tmp_path / "actions.jsonl"
    with open(stream, "w") as fh:
        for t in range(10):
            for m in range(2):
                fh.write(json.dumps({"step": t, "world": 0, "agent": m,
                                     "action": [1.0, 0.0, 0.0]}) + "\n")
    rc = main(["eval", "--config", str(cfgp), "--actions", str(stream),
               "--steps", "10", "--out", str(tmp_path / "m.json")])
    assert rc == 0


def test_cli_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    rc = main(["bench", "--grid", "2x2", "--steps", "4", "--warmup", "1",
               "--out", str(out)])
    assert rc == 0
    assert out.exists()


def test_cli_sysid_report(tmp_path):
    out = tmp_path / "sysid.json"
    rc = main(["sysid", "--trials", "40", "--scale", "0.05", "--seed", "1",
               "--out", str(out), "--params-out", str(tmp_path / "veh.params")])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["trial_split"] == [12, 8, 6, 8, 6]
    assert len(payload["stages"]) == 5
    assert (tmp_path / "veh.params").exists()


def test_random_goals_through_config(tmp_path):
    cfg = RootConfig()
    cfg.env.num_envs = 1
    cfg.env.num_agents_per_env = 1
    cfg.eval.random_goals = True
    cfg.eval.goal_min_m = 15.0
    cfg.eval.goal_max_m = 15.0
    scene = prepare_scene(straight_scene(agent_count=1))
    eng = build_engine(cfg, scenes=[scene])
    dist = np.hypot(*(eng.goal_xy[0, 0] - eng.start_xy[0, 0]))
    assert dist == pytest.approx(15.0, abs=1e-9)
