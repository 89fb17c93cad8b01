import numpy as np
import pytest

from estimation import Belief
from planning import (
    EdgeCostField, PlanningError, build_cost_field, expected_path_cost, plan_optimal_path, replan_from,
)
from threat import BasisSet, ThreatDynamics, basis_vector
from workspace import Path, build_grid


def simple_paths(g, start, goal):
    """start -> goal 단순 경로 전수"""
    out = []

    def dfs(path):
        v = path[-1]
        if v == goal:
            out.append(Path(tuple(path)))
            return
        for u in sorted(g.adjacency[v - 1]):
            if u not in path:
                dfs(path + [u])

    dfs([start])
    return out


def walks(g, start, max_len):
    """길이 1..max_len 인 모든 walk"""
    frontier = [(start,)]
    for _ in range(max_len):
        frontier = [w + (u,) for w in frontier for u in sorted(g.adjacency[w[-1] - 1])]
        yield from frontier


def test_uniform_field_gives_manhattan_length(grid3):
    costs = EdgeCostField(values=np.ones(9), spacing=grid3.spacing)
    path = plan_optimal_path(grid3, costs, 1, 9)
    assert path.length == 4
    assert costs.path_cost(path) == pytest.approx(4.0)
    path.validate(grid3)


@pytest.mark.parametrize("side", [3, 4])
def test_frozen_planner_matches_exhaustive_search(side):
    g = build_grid(1.0, side)
    rng = np.random.default_rng(side)
    candidates = simple_paths(g, 1, g.num_vertices)
    for _ in range(20):
        costs = EdgeCostField(values=rng.uniform(1.0, 6.0, size=g.num_vertices), spacing=g.spacing)
        best = min(costs.path_cost(p) for p in candidates)
        planned = plan_optimal_path(g, costs, 1, g.num_vertices)
        assert planned.start == 1 and planned.end == g.num_vertices
        assert costs.path_cost(planned) == pytest.approx(best, abs=1e-9)


def test_propagated_planner_matches_walk_enumeration(grid3):
    rng = np.random.default_rng(21)
    layers = grid3.num_vertices - 1
    for _ in range(5):
        costs = EdgeCostField(values=rng.uniform(1.0, 8.0, size=(layers, 9)), spacing=grid3.spacing,
                              mode="propagated")
        best = min(costs.path_cost(Path(w)) for w in walks(grid3, 1, layers) if w[-1] == 9)
        planned = plan_optimal_path(grid3, costs, 1, 9)
        assert planned.end == 9
        assert costs.path_cost(planned) == pytest.approx(best, abs=1e-9)


def test_full_grid_path_length():
    g = build_grid(1.0, 11)
    rng = np.random.default_rng(0)
    costs = EdgeCostField(values=rng.uniform(1.0, 5.0, size=121), spacing=g.spacing)
    path = plan_optimal_path(g, costs, 1, 121)
    assert path.length >= 20
    path.validate(g)


def test_negative_weights_are_clamped_and_reported(grid3):
    b = BasisSet(centers=np.array([[0.0, 0.0]]), widths=np.array([0.5]))
    bel = Belief(mean=np.array([-50.0]), cov=np.eye(1))
    d = ThreatDynamics(A=np.eye(1), sigma_P=0.0)
    events = []
    costs = build_cost_field(b, bel, d, grid3, events=events)
    assert 5 in costs.clamped
    assert np.all(costs.weights >= 0.0)
    assert events[0]["type"] == "clamped_weight"
    assert plan_optimal_path(grid3, costs, 1, 9).end == 9


def test_expected_path_cost_examples(grid3):
    b = BasisSet(centers=np.array([[0.0, 0.0], [1.0, 1.0]]), widths=np.array([0.5, 0.5]))
    d = ThreatDynamics(A=0.5 * np.eye(2), sigma_P=0.0)
    path = Path((1, 2, 5, 6))

    zero = Belief(mean=np.zeros(2), cov=np.eye(2))
    assert expected_path_cost(b, zero, d, path, grid3) == pytest.approx(3.0)

    bel = Belief(mean=np.array([1.0, 2.0]), cov=np.eye(2))
    single = Path((1, 2))
    phi2 = basis_vector(b, grid3.coord(2))
    assert expected_path_cost(b, bel, d, single, grid3) == pytest.approx(1.0 + grid3.spacing * phi2 @ bel.mean)

    steps = 2
    expected = 3.0 + grid3.spacing * sum(
        basis_vector(b, grid3.coord(v)) @ (0.5 ** (ell * steps) * bel.mean)
        for ell, v in enumerate(path.vertices[1:], start=1)
    )
    got = expected_path_cost(b, bel, d, path, grid3, mode="propagated", steps_per_edge=steps)
    assert got == pytest.approx(expected, rel=1e-12)


def test_expected_cost_equals_field_path_cost(grid3):
    b = BasisSet(centers=np.array([[0.0, 0.0], [1.0, 1.0]]), widths=np.array([0.5, 0.5]))
    d = ThreatDynamics(A=0.9 * np.eye(2), sigma_P=0.0)
    bel = Belief(mean=np.array([1.0, 2.0]), cov=np.eye(2))
    for mode in ("frozen", "propagated"):
        costs = build_cost_field(b, bel, d, grid3, mode=mode, steps_per_edge=3)
        path = plan_optimal_path(grid3, costs, 1, 9)
        assert costs.path_cost(path) == pytest.approx(
            expected_path_cost(b, bel, d, path, grid3, mode=mode, steps_per_edge=3), rel=1e-12)


def test_start_equals_goal_rejected(grid3):
    costs = EdgeCostField(values=np.ones(9), spacing=grid3.spacing)
    with pytest.raises(PlanningError):
        plan_optimal_path(grid3, costs, 5, 5)


def test_replan_from_examples(grid4):
    rng = np.random.default_rng(3)
    costs = EdgeCostField(values=rng.uniform(1.0, 6.0, size=16), spacing=grid4.spacing)

    assert replan_from(grid4, costs, 1, 16, None).vertices == plan_optimal_path(grid4, costs, 1, 16).vertices

    done = Path((1, 2, 3, 4, 8, 12, 16))
    assert replan_from(grid4, costs, 16, 16, done) is done

    traveled = Path((1, 2, 6))
    out = replan_from(grid4, costs, 6, 16, traveled)
    assert out.vertices[:3] == traveled.vertices
    future = out.suffix(2)
    best = min(costs.path_cost(p) for p in simple_paths(grid4, 6, 16))
    assert costs.path_cost(future) == pytest.approx(best, abs=1e-9)

    with pytest.raises(PlanningError):
        replan_from(grid4, costs, 7, 16, traveled)


def test_replan_with_unchanged_costs_keeps_remaining_cost(grid4):
    rng = np.random.default_rng(6)
    costs = EdgeCostField(values=rng.uniform(1.0, 6.0, size=16), spacing=grid4.spacing)
    plan = plan_optimal_path(grid4, costs, 1, 16)
    nxt = plan.vertices[1]
    again = replan_from(grid4, costs, nxt, 16, Path(plan.vertices[:2]))
    assert costs.path_cost(again.suffix(1)) == pytest.approx(costs.path_cost(plan.suffix(1)), abs=1e-9)


def test_bad_mode_and_shape():
    with pytest.raises(PlanningError):
        EdgeCostField(values=np.ones(4), spacing=1.0, mode="other")
    with pytest.raises(PlanningError):
        EdgeCostField(values=np.ones(4), spacing=1.0, mode="propagated")
    with pytest.raises(PlanningError):
        EdgeCostField(values=np.array([1.0, np.nan]), spacing=1.0)

