"""
Estimation - 선형 Kalman 필터 기반 위협 파라미터 추정

역할:
- Belief (Theta_hat, P) 초기화 / 예측 / 측정 갱신
- 센서 위치로부터 측정 모델 H, R 구성
- 경로 비용 분산 계산에 쓰이는 다단계 예측 공분산
"""
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, eigh

from config import PSD_TOL, SYMMETRY_TOL
from sim_logger import get_logger
from threat import BasisSet, ThreatDynamics
from workspace import GridWorld

logger = get_logger("estimation")

_JITTER_ATTEMPTS = 60


class EstimationError(ValueError):
    """차원 불일치 / 잘못된 추정 파라미터"""


class DegenerateMeasurementError(EstimationError):
    """innovation 공분산 S 가 수치적으로 특이"""


@dataclass(frozen=True)
class Belief:
    """Theta 의 가우시안 추정 (평균, 공분산, 스텝)"""
    mean: np.ndarray
    cov: np.ndarray
    k: int = 0

    @property
    def num_params(self) -> int:
        return self.mean.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.cov))


@dataclass(frozen=True)
class MeasurementModel:
    """z = H Theta + eta,  eta ~ N(0, R)"""
    H: np.ndarray               # (N_s, N_P)
    R: np.ndarray               # (N_s, N_s)
    vertices: tuple = ()

    @property
    def num_rows(self) -> int:
        return self.H.shape[0]


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def init_belief(num_params: int, chi: float) -> Belief:
    """Theta_hat = 0, P = chi * I"""
    if not chi > 0:
        raise EstimationError(f"chi 는 양수여야 합니다: {chi}")
    if num_params < 1:
        raise EstimationError(f"N_P 는 1 이상: {num_params}")
    return Belief(mean=np.zeros(num_params), cov=chi * np.eye(num_params), k=0)


def build_measurement_model(b: BasisSet, g: GridWorld, q: Sequence[int], sigma_R: float) -> MeasurementModel:
    """센서 격자점의 기저 벡터를 행으로 쌓은 H, R = sigma_R^2 I"""
    vertices = tuple(g.validate_vertex(v) for v in q)
    if len(set(vertices)) != len(vertices):
        raise EstimationError(f"센서 위치가 중복됩니다: {vertices}")
    if not sigma_R > 0:
        raise EstimationError(f"sigma_R 는 양수여야 합니다: {sigma_R}")
    H = b.matrix(g.coords[[v - 1 for v in vertices]]) if vertices else np.zeros((0, b.num_params))
    R = (sigma_R ** 2) * np.eye(len(vertices))
    return MeasurementModel(H=H, R=R, vertices=vertices)


def predict(bel: Belief, d: ThreatDynamics, steps: int = 1) -> Belief:
    """steps 만큼 시간 전파: mean <- A^s mean, P <- A^s P A^s^T + sum A^m Q A^m^T"""
    if steps < 0:
        raise EstimationError(f"steps 는 0 이상: {steps}")
    if steps == 0:
        return bel
    if d.num_params != bel.num_params:
        raise EstimationError(f"동역학 차원 불일치: {d.num_params} vs {bel.num_params}")
    power, noise = d.multi_step(steps)
    cov = _symmetrize(power @ bel.cov @ power.T + noise)
    return Belief(mean=power @ bel.mean, cov=cov, k=bel.k + steps)


def predicted_covariances(bel: Belief, d: ThreatDynamics, steps_per_edge: int, length: int) -> List[np.ndarray]:
    """P_{k_l}, l = 1..length (각 간선 끝 시점까지 l * steps_per_edge 스텝 예측)"""
    power, noise = d.multi_step(steps_per_edge)
    out = []
    P = bel.cov
    for _ in range(length):
        P = _symmetrize(power @ P @ power.T + noise)
        out.append(P)
    return out


def _clamp_psd(P: np.ndarray, events: Optional[list], k: int) -> np.ndarray:
    """
    공분산을 PSD 로 보정

    1) Cholesky 성공 시 그대로 반환 (고유분해 생략)
    2) 실패 시 고유값 clip
    3) 고유분해마저 수렴하지 않으면 대각 jitter 를 키워가며 Cholesky 재시도
    """
    try:
        cholesky(P, lower=True)
        return P
    except LinAlgError:
        pass

    try:
        eigvals, eigvecs = eigh(P)
    except LinAlgError as e:
        return _jitter_psd(P, events, k, str(e))

    min_eig = float(eigvals[0])
    if min_eig >= 0.0:
        return P
    if min_eig < -PSD_TOL:
        logger.warning(f"⚠️ 공분산 PSD 위반 (min eig={min_eig:.3e}, k={k}), clamp")
        if events is not None:
            events.append({"type": "psd_clamp", "k": k, "min_eig": min_eig, "method": "eigh"})
    eigvals = np.clip(eigvals, 0.0, None)
    return _symmetrize((eigvecs * eigvals) @ eigvecs.T)


def _jitter_psd(P: np.ndarray, events: Optional[list], k: int, reason: str) -> np.ndarray:
    """eigh 미수렴 시 P + eps I 가 Cholesky 분해될 때까지 eps 를 두 배씩 증가"""
    n = P.shape[0]
    eps = max(PSD_TOL, 1e-12 * abs(float(np.trace(P))))
    for _ in range(_JITTER_ATTEMPTS):
        candidate = P + eps * np.eye(n)
        try:
            cholesky(candidate, lower=True)
        except LinAlgError:
            eps *= 2.0
            continue
        logger.warning(f"⚠️ 고유분해 미수렴 ({reason}), jitter={eps:.3e} 로 보정 (k={k})")
        if events is not None:
            events.append({"type": "psd_clamp", "k": k, "jitter": eps, "method": "jitter"})
        return candidate
    raise EstimationError(f"공분산을 PSD 로 보정하지 못했습니다 (k={k}): {reason}")


def update(bel: Belief, m: MeasurementModel, z: Sequence[float], events: Optional[list] = None) -> Belief:
    """
    선형 가우시안 측정 갱신 (Joseph form)

    S = H P H^T + R,  K = P H^T S^-1
    P' = (I - K H) P (I - K H)^T + K R K^T  (대칭화 + 음의 고유값 clamp)
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    H, R = m.H, m.R
    if H.shape[1] != bel.num_params:
        raise EstimationError(f"H 열 수 불일치: {H.shape} vs N_P={bel.num_params}")
    if z.shape != (H.shape[0],):
        raise EstimationError(f"z 차원 불일치: {z.shape} vs {H.shape[0]}")
    if H.shape[0] == 0:
        return bel

    P = bel.cov
    S = _symmetrize(H @ P @ H.T + R)
    try:
        factor = cho_factor(S)
    except LinAlgError as e:
        raise DegenerateMeasurementError(f"innovation 공분산이 특이합니다: {e}") from e

    K = cho_solve(factor, H @ P).T
    mean = bel.mean + K @ (z - H @ bel.mean)
    IKH = np.eye(bel.num_params) - K @ H
    cov = _symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    cov = _clamp_psd(cov, events, bel.k)

    asym = float(np.max(np.abs(cov - cov.T))) if cov.size else 0.0
    if asym > SYMMETRY_TOL:
        raise EstimationError(f"공분산 대칭성 위반: {asym:.3e}")
    return Belief(mean=mean, cov=cov, k=bel.k)


class Estimator(Protocol):
    """predict/update 인터페이스 (UKF 등으로 교체 가능)"""

    def predict(self, bel: Belief, d: ThreatDynamics, steps: int = 1) -> Belief: ...

    def update(self, bel: Belief, m: MeasurementModel, z: Sequence[float],
               events: Optional[list] = None) -> Belief: ...


class KalmanEstimator:
    """선형 모델용 Kalman 필터 (선형 동역학에서는 UKF 와 동일한 예측)"""

    def predict(self, bel: Belief, d: ThreatDynamics, steps: int = 1) -> Belief:
        return predict(bel, d, steps)

    def update(self, bel: Belief, m: MeasurementModel, z: Sequence[float],
               events: Optional[list] = None) -> Belief:
        return update(bel, m, z, events)
