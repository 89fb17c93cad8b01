import json
import math
from dataclasses import replace

import numpy as np
import pytest

from cscp_engine import EpisodeConfig, EpisodeLog, Scenario, build_scenario, replay_truth, run_episode
from metrics import (
    DegenerateBenchmarkError, IncompleteLogError, MetricsError, benchmark_pair, efficiency, evaluate_episode,
    incurred_cost, mean_and_stderr, normalized_exposure, path_exposure, true_optimal_benchmark, worst_case_benchmark,
)
from planning import EdgeCostField
from threat import BasisSet, ThreatDynamics, grid_basis
from workspace import Path, build_grid


def _scenario(side, centers, widths, theta):
    g = build_grid(1.0, side)
    b = BasisSet(centers=np.asarray(centers, dtype=float), widths=np.asarray(widths, dtype=float))
    theta = np.asarray(theta, dtype=float)
    return Scenario(grid=g, basis=b, dynamics=ThreatDynamics(A=np.eye(len(theta)), sigma_P=0.0),
                    theta0=theta, grid_phi=grid_basis(b, g))


def _log(exposures, tick=0.5, finished=True):
    return EpisodeLog(tick=tick, finished=finished,
                      ego=[[t, 0.0, 0.0, v] for t, v in enumerate(exposures)])


def _simple_paths(g, start, goal):
    out = []

    def dfs(path):
        if path[-1] == goal:
            out.append(Path(tuple(path)))
            return
        for u in sorted(g.adjacency[path[-1] - 1]):
            if u not in path:
                dfs(path + [u])

    dfs([start])
    return out


@pytest.mark.parametrize("exposure, U, S, eta", [
    (0.8712, 27, 69, 0.3409),
    (0.9948, 34, 89, 0.3800),
    (0.8974, 29, 75, 0.3470),
    (0.9384, 29, 83, 0.3278),
])
def test_efficiency_reproduces_reported_pairings(exposure, U, S, eta):
    assert efficiency(exposure, U, S) == pytest.approx(eta, abs=1e-4)


def test_efficiency_edge_cases():
    assert efficiency(1.0, 12, 12) == 1.0
    with pytest.raises(MetricsError):
        efficiency(0.5, 0, 0)


def test_normalized_exposure():
    assert normalized_exposure(2.0, 5.0, 2.0) == 1.0
    assert normalized_exposure(5.0, 5.0, 2.0) == 0.0
    base = normalized_exposure(3.1, 5.0, 2.0)
    assert normalized_exposure(3.1 + 7.5, 5.0 + 7.5, 2.0 + 7.5) == pytest.approx(base, rel=1e-12)
    with pytest.raises(DegenerateBenchmarkError):
        normalized_exposure(1.0, 2.0, 2.0)


def test_incurred_cost_trivial_cases():
    assert incurred_cost(_log([0.0] * 9)) == 0.0
    assert incurred_cost(_log([0.7] * 9, tick=0.5)) == pytest.approx(0.7 * 8 * 0.5)
    with pytest.raises(IncompleteLogError):
        incurred_cost(_log([0.7] * 9, finished=False))
    with pytest.raises(IncompleteLogError):
        incurred_cost(_log([0.7]))


def test_gaussian_bump_line_integral():
    a = 0.3
    sc = _scenario(3, [[0.0, 0.0]], [a], [1.0])
    tpe = 2000
    got = path_exposure(sc, Path((4, 5)), sc.theta0[None, :], tpe, 1.0 / tpe)
    expected = math.sqrt(math.pi * a / 2.0) * math.erf(1.0 / math.sqrt(2.0 * a))
    assert got == pytest.approx(expected, rel=1e-4)


def test_true_optimal_uniform_field_is_manhattan(grid4):
    sc = _scenario(4, [[0.0, 0.0]], [0.5], [0.0])
    path = true_optimal_benchmark(sc, 1, 16)
    assert path.length == 6
    path.validate(sc.grid)


def test_true_optimal_avoids_bump_exhaustively():
    sc = _scenario(4, [[-1.0 / 3.0, -1.0 / 3.0]], [0.05], [20.0])
    costs = EdgeCostField(values=1.0 + sc.grid_phi @ sc.theta0, spacing=sc.grid.spacing)
    best = min(costs.path_cost(p) for p in _simple_paths(sc.grid, 1, 16))
    path = true_optimal_benchmark(sc, 1, 16)
    assert costs.path_cost(path) == pytest.approx(best, abs=1e-9)
    assert 6 not in path.vertices


def test_worst_case_passes_through_single_peak():
    sc = _scenario(3, [[0.0, 0.0]], [0.1], [5.0])
    wc = worst_case_benchmark(sc, 1, 9, 4)
    assert not wc.heuristic
    assert wc.path.length == 4
    assert 5 in wc.path.vertices


def test_worst_case_matches_exhaustive_maximum(grid4):
    rng = np.random.default_rng(12)
    sc = _scenario(4, rng.uniform(-1, 1, size=(3, 2)), [0.2, 0.2, 0.2], rng.uniform(0, 5, size=3))
    values = 1.0 + sc.grid_phi @ sc.theta0
    wc = worst_case_benchmark(sc, 1, 16, 6)
    best = max(sum(values[v - 1] for v in p.vertices[1:]) for p in _simple_paths(sc.grid, 1, 16) if p.length == 6)
    assert sum(values[v - 1] for v in wc.path.vertices[1:]) == pytest.approx(best, abs=1e-9)


def test_worst_case_length_adjusted_for_parity():
    sc = _scenario(3, [[0.0, 0.0]], [0.1], [5.0])
    events = []
    wc = worst_case_benchmark(sc, 1, 9, 5, events=events)
    assert wc.length_adjusted and wc.path.length in (4, 6)
    assert events[0]["type"] == "worst_case_length_adjusted"


def test_worst_case_heuristic_on_large_grid():
    rng = np.random.default_rng(13)
    centers = rng.uniform(-1, 1, size=(6, 2))
    sc = _scenario(11, centers, [0.05] * 6, rng.uniform(0, 5, size=6))
    wc = worst_case_benchmark(sc, 1, 121, 20)
    assert wc.heuristic
    assert wc.path.length == 20
    wc.path.validate(sc.grid)
    assert len(set(wc.path.vertices)) == len(wc.path.vertices)


def test_worst_case_heuristic_pads_longer_target():
    rng = np.random.default_rng(14)
    sc = _scenario(7, rng.uniform(-1, 1, size=(4, 2)), [0.1] * 4, rng.uniform(0, 5, size=4))
    wc = worst_case_benchmark(sc, 1, 49, 16)
    wc.path.validate(sc.grid)
    assert wc.path.start == 1 and wc.path.end == 49
    assert len(set(wc.path.vertices)) == len(wc.path.vertices)
    assert wc.path.length == 16 or wc.length_adjusted


def test_uniform_field_worst_equals_optimal_cost():
    sc = _scenario(3, [[0.0, 0.0]], [0.5], [0.0])
    pi_t = true_optimal_benchmark(sc, 1, 9)
    wc = worst_case_benchmark(sc, 1, 9, pi_t.length)
    thetas = sc.theta0[None, :]
    assert path_exposure(sc, wc.path, thetas, 4, 1.0) == path_exposure(sc, pi_t, thetas, 4, 1.0) == 0.0


def test_evaluate_episode_on_static_truth():
    cfg = EpisodeConfig(side_count=5, num_params=4, ticks_per_edge=1, sensor_count=2, ego_speed=0.01,
                        sensor_speed=0.1, rho=1.0, sigma_P=0.0, sigma_R=1e-3, seed=2)
    log = run_episode(cfg)
    events = []
    m = evaluate_episode(log, events=events)
    assert m.S == log.sensor_placements and m.U == log.unique_placements
    assert m.J == pytest.approx(log.summary["J"])
    assert m.L_t == m.L_w
    assert not m.heuristic
    assert m.J_w >= m.J_t - 1e-12
    if m.note != "degenerate_benchmark":
        assert m.exposure == pytest.approx((m.J_w - m.J) / (m.J_w - m.J_t))
        assert m.eta == pytest.approx(m.exposure * m.U / m.S)


def test_evaluation_is_deterministic(small_cfg):
    log = run_episode(small_cfg)
    first = json.dumps(evaluate_episode(log).to_dict(), sort_keys=True)
    assert json.dumps(evaluate_episode(log).to_dict(), sort_keys=True) == first


def test_time_varying_benchmark_runs(small_cfg):
    cfg = replace(small_cfg, benchmark_time_varying=True)
    m = evaluate_episode(run_episode(cfg))
    assert m.L_t == m.L_w


def test_mean_and_stderr():
    mean, se = mean_and_stderr([1.0, 2.0, 3.0, float("nan")])
    assert mean == pytest.approx(2.0)
    assert se == pytest.approx(1.0 / math.sqrt(3.0))
    assert mean_and_stderr([4.0]) == (4.0, 0.0)
    assert all(math.isnan(x) for x in mean_and_stderr([float("nan")]))


def test_benchmarks_start_when_the_ego_departs(small_cfg):
    cfg = small_cfg
    sc = build_scenario(cfg)
    thetas = replay_truth(cfg, sc, 8 + 24 * cfg.ticks_per_edge)[8:]
    pi_t = true_optimal_benchmark(sc, 1, 25, thetas=thetas)
    pair = benchmark_pair(cfg, sc, departure=8)
    assert pair.true_optimal == pi_t
    assert pair.J_t == pytest.approx(path_exposure(sc, pi_t, thetas, cfg.ticks_per_edge, cfg.tick))
    assert pair.J_t != benchmark_pair(cfg, sc, departure=0).J_t
    with pytest.raises(MetricsError):
        benchmark_pair(cfg, sc, departure=-1)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_static_truth_with_warmup_matches_true_optimal(seed):
    cfg = EpisodeConfig(side_count=5, num_params=4, ticks_per_edge=4, sensor_count=2, ego_speed=0.01,
                        sensor_speed=0.5, rho=1.0, sigma_P=0.0, sigma_R=1e-3, warmup_ticks=16, seed=seed)
    log = run_episode(cfg)
    m = evaluate_episode(log)
    assert log.departure == 16
    assert m.note == ""
    assert m.exposure >= 0.98
