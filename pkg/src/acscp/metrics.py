"""
Metrics - 에피소드 사후 평가

- incurred cost J: ego 연속 위치에서의 참 위협 Phi^T Theta 를 틱 샘플로 사다리꼴 적분
- 벤치마크: true-optimal (완전 정보 Dijkstra) / worst-case (같은 길이의 최대 비용 경로)
- normalized exposure = (J_w - J) / (J_w - J_t),  efficiency eta = exposure * U / S
"""
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid

from config import WORST_CASE_EXHAUSTIVE_MAX_VERTICES
from cscp_engine import EpisodeConfig, EpisodeLog, Scenario, build_scenario, replay_truth
from planning import EdgeCostField, plan_optimal_path
from sim_logger import get_logger
from threat import field_on_grid
from workspace import GridWorld, Path

logger = get_logger("metrics")

_DEGENERATE_EPS = 1e-12


class MetricsError(ValueError):
    """지표 계산 불가"""


class IncompleteLogError(MetricsError):
    """완료되지 않았거나 샘플이 부족한 로그"""


class DegenerateBenchmarkError(MetricsError):
    """J_w == J_t 인 벤치마크 (정규화 불가)"""


@dataclass(frozen=True)
class WorstCasePath:
    path: Path
    heuristic: bool
    length_adjusted: bool = False


@dataclass(frozen=True)
class BenchmarkPair:
    true_optimal: Path
    worst_case: Path
    J_t: float
    J_w: float
    heuristic: bool = False
    length_adjusted: bool = False


@dataclass
class EpisodeMetrics:
    J: float
    J_t: float
    J_w: float
    exposure: float
    eta: float
    S: int
    U: int
    L: int
    L_t: int
    L_w: int
    heuristic: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


# ==========================
# incurred cost
# ==========================

def incurred_cost(log: EpisodeLog) -> float:
    """J = int Phi^T(x(t)) Theta(t) dt (틱 샘플 사다리꼴)"""
    if not log.finished:
        raise IncompleteLogError("완료되지 않은 에피소드 로그입니다")
    if len(log.ego) < 2 or log.tick <= 0:
        raise IncompleteLogError(f"ego 샘플 부족: {len(log.ego)}")
    samples = np.asarray(log.ego, dtype=float)
    times = samples[:, 0]
    if np.any(np.diff(times) <= 0):
        raise IncompleteLogError("ego 샘플 시간이 단조 증가하지 않습니다")
    return float(trapezoid(samples[:, 3], dx=log.tick))


def path_positions(g: GridWorld, path: Path, ticks_per_edge: int) -> np.ndarray:
    """ego 운동학 그대로 경로를 따라간 틱별 좌표 (L * ticks_per_edge + 1, 2)"""
    coords = g.coords[[v - 1 for v in path.vertices]]
    frac = np.arange(ticks_per_edge) / ticks_per_edge
    legs = [a + frac[:, None] * (b - a) for a, b in zip(coords[:-1], coords[1:])]
    return np.vstack(legs + [coords[-1:]])


def path_exposure(scenario: Scenario, path: Path, thetas: np.ndarray, ticks_per_edge: int, tick: float) -> float:
    """주어진 참값 궤적에서 경로를 따라갈 때의 incurred cost (궤적보다 길면 마지막 Theta 유지)"""
    positions = path_positions(scenario.grid, path, ticks_per_edge)
    idx = np.minimum(np.arange(len(positions)), len(thetas) - 1)
    phi = scenario.basis.matrix(positions)
    samples = np.einsum("tn,tn->t", phi, thetas[idx])
    return float(trapezoid(samples, dx=tick))


# ==========================
# 벤치마크 경로
# ==========================

def true_optimal_benchmark(scenario: Scenario, start: int, goal: int,
                           thetas: Optional[np.ndarray] = None,
                           time_varying: bool = False,
                           ticks_per_edge: int = 1) -> Path:
    """
    완전 정보 Dijkstra

    기본: 출발 시점 참값 고정 (thetas[0], 없으면 Theta_0)
    time_varying: 각 hop 도착 시점 참값으로 가격
    """
    g = scenario.grid
    if not time_varying:
        theta = thetas[0] if thetas is not None else scenario.theta0
        values = field_on_grid(scenario.basis, theta, g)
        return plan_optimal_path(g, EdgeCostField(values=values, spacing=g.spacing), start, goal)
    if thetas is None:
        raise MetricsError("time_varying 벤치마크에는 참값 궤적이 필요합니다")
    layers = g.num_vertices - 1
    idx = np.minimum(np.arange(1, layers + 1) * ticks_per_edge, len(thetas) - 1)
    values = 1.0 + thetas[idx] @ scenario.grid_phi.T
    return plan_optimal_path(g, EdgeCostField(values=values, spacing=g.spacing, mode="propagated"), start, goal)


def _length_candidates(target: int, lo: int, hi: int) -> List[int]:
    """target, target-1, target+1, target-2, ... ([lo, hi] 범위)"""
    out = []
    for k in range(0, hi - lo + 3):
        for cand in (target - k, target + k) if k else (target,):
            if lo <= cand <= hi and cand not in out:
                out.append(cand)
    return out


def _exhaustive_max_path(g: GridWorld, values: np.ndarray, start: int, goal: int, length: int) -> Optional[Path]:
    """길이가 정확히 length 인 단순 경로 중 sum c 최대 (동률: 사전순 최소)"""
    best_score = -math.inf
    best: Optional[Tuple[int, ...]] = None
    stack = [start]
    visited = {start}

    def dfs(v: int, score: float):
        nonlocal best_score, best
        remaining = length - (len(stack) - 1)
        if remaining == 0:
            if v == goal and score > best_score + _DEGENERATE_EPS:
                best_score, best = score, tuple(stack)
            return
        if v == goal or g.manhattan(v, goal) > remaining:
            return
        for u in sorted(g.adjacency[v - 1]):
            if u in visited:
                continue
            visited.add(u)
            stack.append(u)
            dfs(u, score + values[u - 1])
            stack.pop()
            visited.discard(u)

    dfs(start, 0.0)
    return Path(best) if best is not None else None


def _monotone_leg(g: GridWorld, values: np.ndarray, a: int, b: int, blocked: set) -> Optional[List[int]]:
    """a -> b 최단(맨해튼) 경로 중 sum c 최대, blocked 정점 회피"""
    ra, ca = g.row_col(a)
    rb, cb = g.row_col(b)
    dr = 1 if rb >= ra else -1
    dc = 1 if cb >= ca else -1
    nr, nc = abs(rb - ra) + 1, abs(cb - ca) + 1
    best = np.full((nr, nc), -np.inf)
    for i in range(nr):
        for j in range(nc):
            v = g.vertex_at(ra + dr * i, ca + dc * j)
            if i == 0 and j == 0:
                best[i, j] = 0.0
                continue
            if v in blocked:
                continue
            prev = max(best[i - 1, j] if i > 0 else -np.inf, best[i, j - 1] if j > 0 else -np.inf)
            if np.isfinite(prev):
                best[i, j] = prev + values[v - 1]
    if not np.isfinite(best[-1, -1]):
        return None
    leg = []
    i, j = nr - 1, nc - 1
    while (i, j) != (0, 0):
        leg.append(g.vertex_at(ra + dr * i, ca + dc * j))
        up = best[i - 1, j] if i > 0 else -np.inf
        left = best[i, j - 1] if j > 0 else -np.inf
        if up >= left:
            i -= 1
        else:
            j -= 1
    return list(reversed(leg))


def _peaks(g: GridWorld, values: np.ndarray) -> List[int]:
    """격자 샘플 기준 국소 최대 정점 (값 내림차순)"""
    peaks = [v for v in g.vertices if all(values[v - 1] >= values[u - 1] for u in g.adjacency[v - 1])]
    return sorted(peaks, key=lambda v: (-values[v - 1], v))


def _route_through(g: GridWorld, values: np.ndarray, waypoints: List[int]) -> Optional[List[int]]:
    vertices = [waypoints[0]]
    used = {waypoints[0]}
    for k, (a, b) in enumerate(zip(waypoints[:-1], waypoints[1:])):
        future = set(waypoints[k + 2:])
        leg = _monotone_leg(g, values, a, b, used | future)
        if leg is None:
            return None
        vertices.extend(leg)
        used.update(leg)
    return vertices


def _pad_with_bumps(g: GridWorld, values: np.ndarray, vertices: List[int], target: int) -> List[int]:
    """간선 (a, b) 를 a -> a' -> b' -> b 로 바꿔 길이 +2 (값이 가장 큰 우회부터)"""
    vertices = list(vertices)
    while len(vertices) - 1 + 2 <= target:
        used = set(vertices)
        best = None
        for k, (a, b) in enumerate(zip(vertices[:-1], vertices[1:])):
            ra, ca = g.row_col(a)
            rb, cb = g.row_col(b)
            shifts = ((1, 0), (-1, 0)) if ra == rb else ((0, 1), (0, -1))
            for sr, sc in shifts:
                pa, pb = (ra + sr, ca + sc), (rb + sr, cb + sc)
                if not all(0 <= x < g.side_count for x in pa + pb):
                    continue
                va, vb = g.vertex_at(*pa), g.vertex_at(*pb)
                if va in used or vb in used:
                    continue
                gain = values[va - 1] + values[vb - 1]
                if best is None or gain > best[0] + _DEGENERATE_EPS:
                    best = (gain, k, va, vb)
        if best is None:
            break
        _, k, va, vb = best
        vertices[k + 1:k + 1] = [va, vb]
    return vertices


def _heuristic_max_path(g: GridWorld, values: np.ndarray, start: int, goal: int, length: int) -> Path:
    waypoints = [start, goal]
    for p in _peaks(g, values):
        if p in waypoints:
            continue
        best_pos, best_len = None, None
        for i in range(len(waypoints) - 1):
            trial = waypoints[:i + 1] + [p] + waypoints[i + 1:]
            total = sum(g.manhattan(a, b) for a, b in zip(trial[:-1], trial[1:]))
            if total <= length and (best_len is None or total < best_len):
                best_pos, best_len = i + 1, total
        if best_pos is None:
            continue
        trial = waypoints[:best_pos] + [p] + waypoints[best_pos:]
        if _route_through(g, values, trial) is not None:
            waypoints = trial

    route = _route_through(g, values, waypoints)
    if route is None:
        route = _route_through(g, values, [start, goal])
    return Path(tuple(_pad_with_bumps(g, values, route, length)))


def worst_case_benchmark(scenario: Scenario, start: int, goal: int, L_target: int,
                         values: Optional[np.ndarray] = None,
                         exhaustive_max_vertices: int = WORST_CASE_EXHAUSTIVE_MAX_VERTICES,
                         events: Optional[list] = None) -> WorstCasePath:
    """
    길이 L_target 의 최대 비용 경로

    작은 격자는 단순 경로 전수 탐색, 큰 격자는 봉우리(국소 최대)를 높은 순으로
    경유하는 휴리스틱 (heuristic=True).
    """
    g = scenario.grid
    values = values if values is not None else field_on_grid(scenario.basis, scenario.theta0, g)
    lo = g.manhattan(start, goal)
    hi = g.num_vertices - 1

    if g.num_vertices <= exhaustive_max_vertices:
        for length in _length_candidates(L_target, lo, hi):
            path = _exhaustive_max_path(g, values, start, goal, length)
            if path is not None:
                adjusted = length != L_target
                if adjusted:
                    _note_adjusted(events, L_target, length)
                return WorstCasePath(path=path, heuristic=False, length_adjusted=adjusted)
        raise MetricsError(f"{start} -> {goal} 단순 경로가 없습니다")

    path = _heuristic_max_path(g, values, start, goal, L_target)
    adjusted = path.length != L_target
    if adjusted:
        _note_adjusted(events, L_target, path.length)
    return WorstCasePath(path=path, heuristic=True, length_adjusted=adjusted)


def _note_adjusted(events: Optional[list], target: int, actual: int):
    logger.warning(f"⚠️ worst-case 경로 길이 조정: {target} -> {actual}")
    if events is not None:
        events.append({"type": "worst_case_length_adjusted", "target": target, "actual": actual})


def benchmark_pair(cfg: EpisodeConfig, scenario: Scenario, events: Optional[list] = None,
                   departure: int = 0) -> BenchmarkPair:
    """
    pi^t, pi^w 와 (에피소드와 같은 참값 궤적 기준) incurred cost

    벤치마크도 ego 와 같은 시점(departure 틱)에 출발한다.
    """
    start, goal, tpe = cfg.start_vertex, cfg.goal_vertex, cfg.ticks_per_edge
    if departure < 0:
        raise MetricsError(f"departure 는 0 이상: {departure}")
    horizon = (scenario.grid.num_vertices - 1) * tpe if cfg.benchmark_time_varying else 0
    thetas = replay_truth(cfg, scenario, departure + horizon)[departure:]

    pi_t = true_optimal_benchmark(scenario, start, goal, thetas=thetas,
                                  time_varying=cfg.benchmark_time_varying, ticks_per_edge=tpe)
    values = field_on_grid(scenario.basis, thetas[0], scenario.grid)
    wc = worst_case_benchmark(scenario, start, goal, pi_t.length, values=values, events=events)
    needed = max(pi_t.length, wc.path.length) * tpe
    if len(thetas) <= needed:
        thetas = replay_truth(cfg, scenario, departure + needed)[departure:]
    return BenchmarkPair(
        true_optimal=pi_t, worst_case=wc.path,
        J_t=path_exposure(scenario, pi_t, thetas, tpe, cfg.tick),
        J_w=path_exposure(scenario, wc.path, thetas, tpe, cfg.tick),
        heuristic=wc.heuristic, length_adjusted=wc.length_adjusted,
    )


# ==========================
# 정규화 지표
# ==========================

def normalized_exposure(J: float, J_w: float, J_t: float) -> float:
    """(J_w - J) / (J_w - J_t): 최적 1, 최악 0"""
    spread = J_w - J_t
    if not spread > _DEGENERATE_EPS:
        raise DegenerateBenchmarkError(f"벤치마크가 퇴화했습니다: J_w={J_w}, J_t={J_t}")
    return (J_w - J) / spread


def efficiency(exposure: float, U: int, S: int) -> float:
    """eta = exposure * U / S"""
    if S <= 0:
        raise MetricsError(f"S 는 1 이상이어야 합니다: {S}")
    if not 0 <= U <= S:
        raise MetricsError(f"U 는 0..S 범위여야 합니다: U={U}, S={S}")
    return exposure * U / S


def evaluate_episode(log: EpisodeLog, events: Optional[list] = None) -> EpisodeMetrics:
    """로그의 config echo 로 시나리오를 복원해 J, 벤치마크, exposure, eta 계산"""
    cfg = EpisodeConfig.from_dict(log.config)
    scenario = build_scenario(cfg)
    J = incurred_cost(log)
    pair = benchmark_pair(cfg, scenario, events=events, departure=log.departure)
    S, U = log.sensor_placements, log.unique_placements

    note = ""
    try:
        exposure = normalized_exposure(J, pair.J_w, pair.J_t)
    except DegenerateBenchmarkError as e:
        logger.warning(f"⚠️ {e}")
        exposure, note = float("nan"), "degenerate_benchmark"
    eta = efficiency(exposure, U, S) if not math.isnan(exposure) else float("nan")

    return EpisodeMetrics(
        J=J, J_t=pair.J_t, J_w=pair.J_w, exposure=exposure, eta=eta, S=S, U=U,
        L=log.traveled_path.length, L_t=pair.true_optimal.length, L_w=pair.worst_case.length,
        heuristic=pair.heuristic, note=note,
    )


def mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    """NaN 제외 평균 / 표준오차"""
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return float("nan"), float("nan")
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))
