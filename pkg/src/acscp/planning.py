"""
Planning - 기대 위협 노출 최소 경로 탐색

- 간선 가중치 w(i, j) = 1 + delta * (c_hat(x_j) - 1) 로 경로 길이 항을 간선에 포함
- frozen: 계획 시점의 추정치 하나로 Dijkstra
- propagated: hop 마다 A 로 전파된 평균을 쓰므로 layered (time-expanded) DP
"""
import heapq
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from estimation import Belief
from sim_logger import get_logger
from threat import BasisSet, ThreatDynamics, grid_basis
from workspace import GridWorld, InvalidPathError, Path

logger = get_logger("planning")

PLAN_MODES = ("frozen", "propagated")
_TIE_EPS = 1e-12


class PlanningError(ValueError):
    """계획 불가 (start == goal, 잘못된 모드 등)"""


@dataclass(frozen=True)
class EdgeCostField:
    """
    정점별 기대 위협 c_hat

    values: frozen 이면 (N_g,), propagated 이면 (layers, N_g): layer l 은 l 번째 hop 에 진입하는 정점 값
    """
    values: np.ndarray
    spacing: float
    mode: str = "frozen"
    weights: np.ndarray = field(init=False, repr=False)
    clamped: Tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.mode not in PLAN_MODES:
            raise PlanningError(f"알 수 없는 plan mode: {self.mode}")
        values = np.asarray(self.values, dtype=float)
        if self.mode == "frozen" and values.ndim != 1:
            raise PlanningError(f"frozen 모드는 1차원 값이 필요합니다: {values.shape}")
        if self.mode == "propagated" and values.ndim != 2:
            raise PlanningError(f"propagated 모드는 (layers, N_g) 값이 필요합니다: {values.shape}")
        if not np.all(np.isfinite(values)):
            raise PlanningError("비용장에 유한하지 않은 값이 있습니다")

        raw = 1.0 + self.spacing * (values - 1.0)
        negative = raw < 0.0
        flat = negative if negative.ndim == 1 else negative.any(axis=0)
        clamped = tuple(int(v) + 1 for v in np.flatnonzero(flat))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", np.where(negative, 0.0, raw))
        object.__setattr__(self, "clamped", clamped)

    @property
    def num_vertices(self) -> int:
        return self.values.shape[-1]

    @property
    def num_layers(self) -> int:
        return 1 if self.mode == "frozen" else self.values.shape[0]

    def weight(self, vertex: int, hop: int = 1) -> float:
        """hop 번째 간선으로 vertex 에 진입하는 가중치"""
        if self.mode == "frozen":
            return float(self.weights[vertex - 1])
        layer = min(hop, self.num_layers) - 1
        return float(self.weights[layer, vertex - 1])

    def path_cost(self, path: Path) -> float:
        """sum of (clamp 된) 간선 가중치 = 이 비용장 기준 J_hat"""
        return float(sum(self.weight(v, hop) for hop, v in enumerate(path.vertices[1:], start=1)))


def build_cost_field(b: BasisSet, bel: Belief, d: ThreatDynamics, g: GridWorld,
                     mode: str = "frozen", steps_per_edge: int = 1,
                     layers: Optional[int] = None,
                     events: Optional[list] = None) -> EdgeCostField:
    """현재 추정치로 비용장 구성 (clamp 된 정점은 clamped_weight 이벤트로 기록)"""
    phi = grid_basis(b, g)
    if mode == "frozen":
        values = 1.0 + phi @ bel.mean
    elif mode == "propagated":
        n_layers = layers if layers is not None else g.num_vertices - 1
        power, _ = d.multi_step(steps_per_edge)
        mean = bel.mean
        rows = []
        for _ in range(n_layers):
            mean = power @ mean
            rows.append(1.0 + phi @ mean)
        values = np.vstack(rows)
    else:
        raise PlanningError(f"알 수 없는 plan mode: {mode}")

    costs = EdgeCostField(values=values, spacing=g.spacing, mode=mode)
    if costs.clamped:
        logger.info(f"간선 가중치 clamp: {len(costs.clamped)}개 정점 (k={bel.k})")
        if events is not None:
            events.append({"type": "clamped_weight", "k": bel.k, "vertices": list(costs.clamped)})
    return costs


def expected_path_cost(b: BasisSet, bel: Belief, d: ThreatDynamics, path: Path, g: GridWorld,
                       mode: str = "frozen", steps_per_edge: int = 1) -> float:
    """J_hat(pi) = L + delta * sum_l Phi(x_l)^T Theta_hat_l"""
    path.validate(g)
    phis = b.matrix(g.coords[[v - 1 for v in path.vertices[1:]]])
    if mode == "frozen":
        terms = phis @ bel.mean
    elif mode == "propagated":
        power, _ = d.multi_step(steps_per_edge)
        mean = bel.mean
        terms = np.empty(path.length)
        for ell in range(path.length):
            mean = power @ mean
            terms[ell] = phis[ell] @ mean
    else:
        raise PlanningError(f"알 수 없는 plan mode: {mode}")
    return float(path.length + g.spacing * np.sum(terms))


def _dijkstra(g: GridWorld, costs: EdgeCostField, start: int, goal: int) -> Path:
    n = g.num_vertices
    dist = np.full(n + 1, np.inf)
    pred = np.zeros(n + 1, dtype=int)
    done = np.zeros(n + 1, dtype=bool)
    dist[start] = 0.0
    heap = [(0.0, start)]

    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == goal:
            break
        for v in sorted(g.adjacency[u - 1]):
            if done[v]:
                continue
            alt = du + costs.weight(v)
            if alt < dist[v] - _TIE_EPS:
                dist[v] = alt
                pred[v] = u
                heapq.heappush(heap, (alt, v))
            elif abs(alt - dist[v]) <= _TIE_EPS and u < pred[v]:
                pred[v] = u

    if not np.isfinite(dist[goal]):
        raise PlanningError(f"goal {goal} 에 도달할 수 없습니다")
    vertices = [goal]
    while vertices[-1] != start:
        vertices.append(int(pred[vertices[-1]]))
    return Path(tuple(reversed(vertices)))


def _neighbor_table(g: GridWorld) -> np.ndarray:
    """(N_g, 4) 인접 정점 0-based index, 빈 칸은 N_g (패딩), 행마다 오름차순"""
    n = g.num_vertices
    table = np.full((n, 4), n, dtype=int)
    for v in g.vertices:
        nbrs = sorted(g.adjacency[v - 1])
        table[v - 1, :len(nbrs)] = [u - 1 for u in nbrs]
    return table


def _layered(g: GridWorld, costs: EdgeCostField, start: int, goal: int) -> Path:
    n = g.num_vertices
    table = _neighbor_table(g)
    prev = np.full(n + 1, np.inf)
    prev[start - 1] = 0.0
    preds: List[np.ndarray] = []
    best_cost, best_layer = np.inf, -1

    for hop in range(1, costs.num_layers + 1):
        cand = prev[table]                              # (N_g, 4)
        choice = np.argmin(cand, axis=1)                # 첫 최솟값 = 가장 작은 선행 정점
        reach = cand[np.arange(n), choice]
        cur = np.full(n + 1, np.inf)
        cur[:n] = reach + costs.weights[hop - 1]
        preds.append(table[np.arange(n), choice])
        if cur[goal - 1] < best_cost - _TIE_EPS:
            best_cost, best_layer = cur[goal - 1], hop
        prev = cur

    if best_layer < 0:
        raise PlanningError(f"{costs.num_layers} hop 안에 goal {goal} 에 도달할 수 없습니다")
    vertices = [goal - 1]
    for hop in range(best_layer, 0, -1):
        vertices.append(int(preds[hop - 1][vertices[-1]]))
    return Path(tuple(v + 1 for v in reversed(vertices)))


def plan_optimal_path(g: GridWorld, costs: EdgeCostField, start: int, goal: int) -> Path:
    """arg min J_hat(pi): frozen 은 Dijkstra, propagated 는 layered DP"""
    start, goal = g.validate_vertex(start), g.validate_vertex(goal)
    if start == goal:
        raise PlanningError(f"start 와 goal 이 같습니다: {start}")
    if costs.num_vertices != g.num_vertices:
        raise PlanningError(f"비용장 크기 불일치: {costs.num_vertices} vs N_g={g.num_vertices}")
    if costs.mode == "frozen":
        return _dijkstra(g, costs, start, goal)
    return _layered(g, costs, start, goal)


def replan_from(g: GridWorld, costs: EdgeCostField, current_vertex: int, goal: int,
                already_traveled: Optional[Path] = None) -> Path:
    """이미 지나온 경로는 고정하고 current_vertex 이후만 재최적화"""
    traveled = already_traveled if already_traveled is not None and len(already_traveled) else Path((current_vertex,))
    if traveled.end != current_vertex:
        raise PlanningError(f"current_vertex {current_vertex} 가 지나온 경로의 끝({traveled.end})이 아닙니다")
    if current_vertex == goal:
        return traveled
    future = plan_optimal_path(g, costs, current_vertex, goal)
    try:
        return traveled.concat(future)
    except InvalidPathError as e:
        raise PlanningError(str(e)) from e
