import numpy as np
import pytest

from cscp_engine import EpisodeConfig, build_scenario, initialize_episode, run_episode, tick
from harness import read_table
from snapshot_exporter import SnapshotError, belief_at, ego_at, export_field_snapshots, plan_at, sensor_positions_at


@pytest.fixture
def episode(small_cfg):
    return run_episode(small_cfg)


@pytest.fixture
def fast_cfg(small_cfg):
    """센서가 한 틱에 여러 번 도착하는 속도비"""
    return small_cfg.with_ratio(50.0)


def _tables(paths):
    return {p.rsplit("_", 1)[1][:-4]: read_table(p) for p in paths}


def test_initial_snapshot_reflects_initial_measurements(episode, tmp_path):
    tables = _tables(export_field_snapshots(episode, [0], str(tmp_path)))
    field = tables["field"]
    assert len(field) == 25
    assert episode.snapshots[0]["kind"] == "prior"
    snap = belief_at(episode, 0)
    assert snap is [s for s in episode.snapshots if s["t"] == 0][-1]
    assert snap["kind"] == "replan"
    scenario = build_scenario(EpisodeConfig.from_dict(episode.config))
    expected = 1.0 + scenario.grid_phi @ np.asarray(snap["mean"])
    np.testing.assert_allclose(field["c_est"], expected, rtol=1e-9)
    assert (field["c_true"] > 0).all()
    path = tables["path"]
    assert list(path["status"]) == ["traveled"] + ["planned"] * (len(path) - 1)
    assert list(path["vertex"]) == plan_at(episode, 0)
    assert path["vertex"].iloc[-1] == 25
    agents = tables["agents"]
    assert list(agents["kind"]) == ["ego", "sensor", "sensor"]


def test_final_snapshot_has_no_planned_vertices(episode, tmp_path):
    tables = _tables(export_field_snapshots(episode, [episode.ticks], str(tmp_path)))
    path = tables["path"]
    assert (path["status"] == "traveled").all()
    assert list(path["vertex"]) == list(episode.traveled_path.vertices)


def test_replan_snapshot_matches_logged_plan(episode, tmp_path):
    replan = next(r for r in episode.replans if r["t"] > 0)
    t = replan["t"]
    latest = [r for r in episode.replans if r["t"] == t][-1]
    tables = _tables(export_field_snapshots(episode, [t], str(tmp_path)))
    assert list(tables["path"]["vertex"]) == latest["path"]
    assert plan_at(episode, t) == latest["path"]
    assert belief_at(episode, t)["t"] == t


def test_belief_and_plan_agree_on_ticks_with_several_arrivals(fast_cfg):
    log = run_episode(fast_cfg)
    busy = sorted({r["t"] for r in log.replans if sum(q["t"] == r["t"] for q in log.replans) >= 2 and r["t"] > 0})
    assert busy
    for t in busy:
        replans = [r for r in log.replans if r["t"] == t]
        snaps = [s for s in log.snapshots if s["t"] == t and s["kind"] == "replan"]
        assert len(snaps) == len(replans)
        assert plan_at(log, t) == replans[-1]["path"]
        assert belief_at(log, t) is [s for s in log.snapshots if s["t"] == t][-1]
        assert belief_at(log, t)["mean"] == snaps[-1]["mean"]


@pytest.mark.parametrize("ratio", [5.0, 50.0])
def test_reconstructed_positions_match_simulation(small_cfg, ratio):
    cfg = small_cfg.with_ratio(ratio)
    state = initialize_episode(cfg)
    sensors = {0: [s.position.copy() for s in state.fleet.sensors]}
    ego = {0: state.ego.position.copy()}
    while not state.finished:
        tick(state)
        sensors[state.t] = [s.position.copy() for s in state.fleet.sensors]
        ego[state.t] = state.ego.position.copy()
    state.log.ticks, state.log.finished = state.t, True

    coords = state.scenario.grid.coords
    for t, expected in sensors.items():
        rows = sensor_positions_at(state.log, cfg, coords, t)
        got = [np.array([r["x"], r["y"]]) for r in rows]
        np.testing.assert_allclose(got, expected, atol=1e-9, err_msg=f"t={t}")
        np.testing.assert_allclose(ego_at(state.log, coords, t), ego[t], atol=1e-12)


def test_out_of_range_time(episode, tmp_path):
    with pytest.raises(SnapshotError):
        export_field_snapshots(episode, [episode.ticks + 1], str(tmp_path))
    with pytest.raises(SnapshotError):
        export_field_snapshots(episode, [-1], str(tmp_path))
