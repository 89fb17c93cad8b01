"""
CRMI - 경로 비용과 후보 측정 사이의 context-relevant mutual information

역할:
- 계획 경로 비용 J 의 분산 P_JJ, 측정과의 교차공분산 P_Jz, 측정 공분산 P_zz
- I(J; z) = 1/2 log(P_JJ / (P_JJ - P_Jz P_zz^-1 P_Jz^T))
- 재배치 거리 d = gamma d1 + (1 - gamma) d2, 비용 f, 정규화 alpha
- 센서 하나씩 전체 후보를 훑어 r = I + alpha f 최대 정점 선택 (greedy)
"""
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from config import CRMI_CAP, SCHUR_TOL, VARIANCE_FLOOR
from estimation import Belief, MeasurementModel, predict, predicted_covariances
from sim_logger import get_logger
from threat import BasisSet, ThreatDynamics, grid_basis
from workspace import GridWorld, Path

logger = get_logger("crmi")

ALPHA_MODES = ("auto", "fixed", "zero")
CRMI_HORIZONS = ("one_step", "travel")


class SelectionError(ValueError):
    """후보 집합이 비었거나 보상 파라미터가 잘못됨"""


@dataclass(frozen=True)
class PathCostBelief:
    P_JJ: float
    P_Jz: np.ndarray        # (N_s,)
    P_zz: np.ndarray        # (N_s, N_s)

    def __post_init__(self):
        P_Jz = np.atleast_1d(np.asarray(self.P_Jz, dtype=float))
        P_zz = np.atleast_2d(np.asarray(self.P_zz, dtype=float))
        if P_zz.shape != (P_Jz.shape[0], P_Jz.shape[0]):
            raise SelectionError(f"P_zz 차원 불일치: {P_zz.shape} vs P_Jz {P_Jz.shape}")
        if self.P_JJ < -SCHUR_TOL:
            raise SelectionError(f"P_JJ 는 음수일 수 없습니다: {self.P_JJ}")
        object.__setattr__(self, "P_JJ", max(float(self.P_JJ), 0.0))
        object.__setattr__(self, "P_Jz", P_Jz)
        object.__setattr__(self, "P_zz", P_zz)

    @property
    def explained(self) -> float:
        """P_Jz P_zz^-1 P_Jz^T"""
        if self.P_Jz.size == 0:
            return 0.0
        factor = cho_factor(0.5 * (self.P_zz + self.P_zz.T))
        return float(self.P_Jz @ cho_solve(factor, self.P_Jz))


@dataclass(frozen=True)
class RewardWeights:
    gamma: float = 1.0
    alpha_mode: str = "auto"
    alpha_value: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise SelectionError(f"gamma 는 [0, 1] 범위여야 합니다: {self.gamma}")
        if self.alpha_mode not in ALPHA_MODES:
            raise SelectionError(f"알 수 없는 alpha_mode: {self.alpha_mode}")
        if self.alpha_mode == "fixed" and (self.alpha_value is None or self.alpha_value < 0):
            raise SelectionError(f"fixed alpha 는 0 이상의 값이 필요합니다: {self.alpha_value}")

    def resolve_alpha(self, crmi_values: np.ndarray, distances: np.ndarray) -> float:
        if self.alpha_mode == "zero":
            return 0.0
        if self.alpha_mode == "fixed":
            return float(self.alpha_value)
        return alpha_normalizer(crmi_values, distances)


# ==========================
# 경로 비용 통계
# ==========================

@dataclass(frozen=True)
class PathTerms:
    """경로 미래 구간의 Phi_l, u_l = P_l Phi_l, g_l (역방향 누적)"""
    phis: np.ndarray        # (L, N_P)
    us: np.ndarray          # (L, N_P)
    gs: np.ndarray          # (L, N_P)
    spacing: float

    @property
    def variance(self) -> float:
        d2 = self.spacing ** 2
        diag = float(np.einsum("ln,ln->", self.phis, self.us))
        cross = float(np.einsum("ln,ln->", self.gs, self.us))
        return d2 * (diag + 2.0 * cross)

    @property
    def sensitivity(self) -> np.ndarray:
        """v = delta * sum_l P_l Phi_l  (P_Jz = H v)"""
        return self.spacing * self.us.sum(axis=0)


def path_terms(b: BasisSet, bel: Belief, d: ThreatDynamics, path: Path, g: GridWorld,
               steps_per_edge: int) -> PathTerms:
    if steps_per_edge < 0:
        raise SelectionError(f"steps_per_edge 는 0 이상: {steps_per_edge}")
    path.validate(g)
    phis = b.matrix(g.coords[[v - 1 for v in path.vertices[1:]]])
    covs = predicted_covariances(bel, d, steps_per_edge, path.length)
    us = np.stack([P @ phi for P, phi in zip(covs, phis)])

    power, _ = d.multi_step(steps_per_edge)
    gs = np.zeros_like(phis)
    for ell in range(path.length - 2, -1, -1):
        gs[ell] = power.T @ (phis[ell + 1] + gs[ell + 1])
    return PathTerms(phis=phis, us=us, gs=gs, spacing=g.spacing)


def path_cost_variance(b: BasisSet, bel: Belief, d: ThreatDynamics, path: Path, g: GridWorld,
                       steps_per_edge: int) -> float:
    """
    P_JJ = delta^2 sum_l Phi_l^T P_l Phi_l + 2 delta^2 sum_{l<m} Phi_m^T A^{(m-l)s} P_l Phi_l
    """
    return max(path_terms(b, bel, d, path, g, steps_per_edge).variance, 0.0)


def path_cost_crosscov(b: BasisSet, bel: Belief, d: ThreatDynamics, path: Path, g: GridWorld,
                       steps_per_edge: int, m: MeasurementModel,
                       prior_steps: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """(P_Jz, P_zz): P_zz 는 prior_steps 만큼 예측한 사전 공분산 기준"""
    terms = path_terms(b, bel, d, path, g, steps_per_edge)
    P_Jz = m.H @ terms.sensitivity
    prior = predict(bel, d, prior_steps).cov
    P_zz = m.H @ prior @ m.H.T + m.R
    return P_Jz, 0.5 * (P_zz + P_zz.T)


def _crmi_from_explained(P_JJ: np.ndarray, explained: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(crmi 값, cap 적용 여부): 배열 단위"""
    P_JJ = np.broadcast_to(np.asarray(P_JJ, dtype=float), np.shape(explained))
    schur = np.maximum(P_JJ - explained, 0.0)
    tiny = P_JJ <= VARIANCE_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = 0.5 * np.log(np.where(schur > 0.0, P_JJ / np.where(schur > 0.0, schur, 1.0), np.inf))
    capped = ~tiny & (raw > CRMI_CAP)
    value = np.where(tiny, 0.0, np.clip(raw, 0.0, CRMI_CAP))
    return value, capped


def crmi(pcb: PathCostBelief, events: Optional[list] = None) -> float:
    """I(J; z) = 1/2 log(P_JJ / Schur), 항상 0 이상, 상한 CRMI_CAP"""
    if pcb.P_JJ <= VARIANCE_FLOOR:
        return 0.0
    value, capped = _crmi_from_explained(np.array(pcb.P_JJ), np.array(pcb.explained))
    if bool(capped):
        logger.info(f"CRMI cap 적용 ({CRMI_CAP} nats)")
        if events is not None:
            events.append({"type": "crmi_cap", "count": 1})
    return float(value)


# ==========================
# 재배치 비용
# ==========================

def reconfig_distance(q_candidate: int, q_current: int, ego_next: Sequence[float], gamma: float,
                      g: GridWorld) -> float:
    """d = gamma * |x_c - x_cur| + (1 - gamma) * |x_c - ego_next|"""
    if not 0.0 <= gamma <= 1.0:
        raise SelectionError(f"gamma 는 [0, 1] 범위여야 합니다: {gamma}")
    xc = g.coord(q_candidate)
    d1 = float(np.linalg.norm(xc - g.coord(q_current)))
    d2 = float(np.linalg.norm(xc - np.asarray(ego_next, dtype=float)))
    return gamma * d1 + (1.0 - gamma) * d2


def reconfig_cost_f(q_candidate: int, feasible_set: Sequence[int], distances: Mapping[int, float]) -> float:
    """f(q) = min_{feasible} d - d(q)  (<= 0)"""
    if not feasible_set:
        raise SelectionError("후보 집합이 비었습니다")
    if q_candidate not in feasible_set:
        raise SelectionError(f"후보 {q_candidate} 가 feasible set 에 없습니다")
    best = min(distances[v] for v in feasible_set)
    return float(best - distances[q_candidate])


def alpha_normalizer(crmi_values: Sequence[float], distances: Sequence[float]) -> float:
    """alpha = max(crmi) / (max d - min d), 분모 또는 분자가 0 이면 0"""
    crmi_values = np.asarray(crmi_values, dtype=float)
    distances = np.asarray(distances, dtype=float)
    if crmi_values.size == 0 or distances.size == 0:
        raise SelectionError("후보 집합이 비었습니다")
    spread = float(distances.max() - distances.min())
    top = float(crmi_values.max())
    if spread <= 0.0 or top <= 0.0:
        return 0.0
    return top / spread


# ==========================
# greedy 선택
# ==========================

@dataclass
class SelectionContext:
    """센서 j 의 다음 위치를 고를 때 필요한 상태 스냅샷"""
    grid: GridWorld
    basis: BasisSet
    belief: Belief
    dynamics: ThreatDynamics
    future_path: Path                   # 경로의 남은 부분 (마지막 확정 정점부터)
    configuration: List[int]            # q^{l*}: 센서별 현재/목표 정점
    sensor_position: np.ndarray         # 센서 j 의 현재 좌표
    ego_next: np.ndarray                # ego 가 향하고 있는 정점 좌표
    sigma_R: float
    steps_per_edge: int
    horizon: str = "one_step"
    sensor_step: float = 0.0            # 틱당 센서 이동 거리 (travel horizon 용)
    grid_phi: Optional[np.ndarray] = None

    def basis_rows(self) -> np.ndarray:
        if self.grid_phi is None:
            self.grid_phi = grid_basis(self.basis, self.grid)
        return self.grid_phi


@dataclass
class CandidateScores:
    vertices: np.ndarray
    crmi: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    d: np.ndarray
    f: np.ndarray
    reward: np.ndarray
    alpha: float
    capped: int = 0

    def best_index(self) -> int:
        """보상 최대 -> f 최대 -> 정점 id 최소"""
        order = np.lexsort((self.vertices, -self.f, -self.reward))
        return int(order[0])

    def row(self, index: int) -> Dict[str, float]:
        return {
            "vertex": int(self.vertices[index]),
            "crmi": float(self.crmi[index]),
            "d": float(self.d[index]),
            "f": float(self.f[index]),
            "reward": float(self.reward[index]),
            "alpha": float(self.alpha),
        }


def _explained_for_candidates(ctx: SelectionContext, j: int, v: np.ndarray,
                              candidates: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """센서 j 의 행만 후보로 바꾼 구성들의 P_Jz P_zz^-1 P_Jz^T (블록 역행렬)"""
    phi = ctx.basis_rows()
    cand_rows = phi[candidates - 1]                         # (C, N_P)
    r2 = ctx.sigma_R ** 2

    a = cand_rows @ v                                       # (C,)
    s_qq = np.einsum("cn,nm,cm->c", cand_rows, prior, cand_rows) + r2

    others = [q for i, q in enumerate(ctx.configuration) if i != j]
    if not others:
        return a * a / s_qq

    H_o = phi[np.asarray(others) - 1]                       # (n_o, N_P)
    c_o = H_o @ v
    S_oo = H_o @ prior @ H_o.T + r2 * np.eye(len(others))
    S_oq = H_o @ prior @ cand_rows.T                        # (n_o, C)
    factor = cho_factor(0.5 * (S_oo + S_oo.T))
    w_c = cho_solve(factor, c_o)
    w_q = cho_solve(factor, S_oq)

    base = float(c_o @ w_c)
    schur_q = np.maximum(s_qq - np.einsum("oc,oc->c", S_oq, w_q), VARIANCE_FLOOR)
    resid = a - S_oq.T @ w_c
    return base + resid * resid / schur_q


def score_candidates(ctx: SelectionContext, j: int, weights: RewardWeights) -> CandidateScores:
    """feasible set = 전체 정점 - 현재 구성, 모든 후보의 CRMI / 거리 / 보상"""
    g = ctx.grid
    occupied = set(int(q) for q in ctx.configuration)
    candidates = np.array([v for v in g.vertices if v not in occupied], dtype=int)
    if candidates.size == 0:
        raise SelectionError("feasible set 이 비었습니다 (센서 수 >= 정점 수)")
    if ctx.horizon not in CRMI_HORIZONS:
        raise SelectionError(f"알 수 없는 crmi horizon: {ctx.horizon}")

    terms = path_terms(ctx.basis, ctx.belief, ctx.dynamics, ctx.future_path, g, ctx.steps_per_edge)
    P_JJ = max(terms.variance, 0.0)
    v = terms.sensitivity

    coords = g.coords[candidates - 1]
    d1 = np.linalg.norm(coords - np.asarray(ctx.sensor_position, dtype=float), axis=1)
    d2 = np.linalg.norm(coords - np.asarray(ctx.ego_next, dtype=float), axis=1)
    d = weights.gamma * d1 + (1.0 - weights.gamma) * d2

    if P_JJ <= VARIANCE_FLOOR:
        explained = np.zeros(candidates.size)
    elif ctx.horizon == "one_step" or ctx.sensor_step <= 0:
        prior = predict(ctx.belief, ctx.dynamics, 1).cov
        explained = _explained_for_candidates(ctx, j, v, candidates, prior)
    else:
        travel = np.maximum(np.ceil(d1 / ctx.sensor_step - 1e-9).astype(int), 1)
        explained = np.empty(candidates.size)
        for steps in np.unique(travel):
            mask = travel == steps
            prior = predict(ctx.belief, ctx.dynamics, int(steps)).cov
            explained[mask] = _explained_for_candidates(ctx, j, v, candidates[mask], prior)

    values, capped = _crmi_from_explained(np.array(P_JJ), explained)
    f = d.min() - d
    alpha = weights.resolve_alpha(values, d)
    return CandidateScores(vertices=candidates, crmi=values, d1=d1, d2=d2, d=d, f=f,
                           reward=values + alpha * f, alpha=alpha, capped=int(np.sum(capped)))


def greedy_next_config(ctx: SelectionContext, j: int, weights: RewardWeights,
                       events: Optional[list] = None) -> int:
    """센서 j 의 다음 정점 = arg max r(q) (동률: f 큰 쪽, 그다음 작은 id)"""
    scores = score_candidates(ctx, j, weights)
    if scores.capped and events is not None:
        events.append({"type": "crmi_cap", "k": ctx.belief.k, "sensor": j, "count": scores.capped})
    return int(scores.vertices[scores.best_index()])
