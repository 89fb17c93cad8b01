"""
Threat Field - 가우시안 기저 전개 + 선형 가우시안 파라미터 동역학

c(x, t) = 1 + Phi(x)^T Theta(t)
Theta_k = A Theta_{k-1} + w_{k-1},  w ~ N(0, Q),  Q = sigma_P * I
"""
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np

from config import (
    COVERAGE_FLOOR, POSITIVITY_FLOOR, POSITIVITY_MAX_REDRAWS,
    THREAT_RHO, THREAT_SIGMA_P, THREAT_THETA_MAX,
)
from sim_logger import get_logger
from workspace import GridWorld, build_grid

logger = get_logger("threat")


class ScenarioError(ValueError):
    """잘못된 기저/동역학/시나리오 파라미터"""


@dataclass(frozen=True)
class BasisSet:
    """가우시안 기저 phi_n(x) = exp(-|x - xbar_n|^2 / (2 a_n))"""
    centers: np.ndarray     # (N_P, 2)
    widths: np.ndarray      # (N_P,)

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        widths = np.atleast_1d(np.asarray(self.widths, dtype=float))
        if centers.shape[0] < 1 or centers.shape[1] != 2:
            raise ScenarioError(f"centers shape 오류: {centers.shape}")
        if widths.shape != (centers.shape[0],):
            raise ScenarioError(f"widths 길이 불일치: {widths.shape} vs N_P={centers.shape[0]}")
        if np.any(widths <= 0):
            raise ScenarioError("모든 a_n 은 양수여야 합니다")
        centers.setflags(write=False)
        widths.setflags(write=False)
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "widths", widths)

    @property
    def num_params(self) -> int:
        return self.centers.shape[0]

    def matrix(self, xs: np.ndarray) -> np.ndarray:
        """여러 좌표의 기저 벡터를 행으로 쌓은 (M, N_P) 행렬"""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        diff = xs[:, None, :] - self.centers[None, :, :]
        sq = np.einsum("mnk,mnk->mn", diff, diff)
        return np.exp(-sq / (2.0 * self.widths[None, :]))


def basis_vector(b: BasisSet, x: Sequence[float]) -> np.ndarray:
    """Phi(x), 모든 성분은 (0, 1]"""
    return b.matrix(np.asarray(x, dtype=float).reshape(1, 2))[0]


def basis_gradient(b: BasisSet, x: Sequence[float]) -> np.ndarray:
    """d phi_n / dx = -((x - xbar_n) / a_n) phi_n(x), shape (N_P, 2)"""
    x = np.asarray(x, dtype=float)
    phi = basis_vector(b, x)
    return -((x[None, :] - b.centers) / b.widths[:, None]) * phi[:, None]


def field_value(b: BasisSet, theta: np.ndarray, x: Sequence[float]) -> float:
    """c(x) = 1 + Phi(x)^T Theta"""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (b.num_params,):
        raise ScenarioError(f"Theta 차원 불일치: {theta.shape} vs N_P={b.num_params}")
    return 1.0 + float(basis_vector(b, x) @ theta)


def field_on_grid(b: BasisSet, theta: np.ndarray, g: GridWorld) -> np.ndarray:
    """모든 격자점의 c 값 (N_g,)"""
    return 1.0 + grid_basis(b, g) @ np.asarray(theta, dtype=float)


def grid_basis(b: BasisSet, g: GridWorld) -> np.ndarray:
    """격자점별 Phi 를 쌓은 (N_g, N_P) 행렬"""
    return b.matrix(g.coords)


def check_coverage(b: BasisSet, g: GridWorld, floor: float = COVERAGE_FLOOR) -> bool:
    """모든 격자점에서 max_n phi_n(x) >= floor 인지"""
    return bool(np.all(grid_basis(b, g).max(axis=1) >= floor))


@dataclass(frozen=True)
class ThreatDynamics:
    """Theta_k = A Theta_{k-1} + w,  Q = sigma_P * I"""
    A: np.ndarray
    sigma_P: float
    dt: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ScenarioError(f"A 는 정방행렬이어야 합니다: {A.shape}")
        if self.sigma_P < 0:
            raise ScenarioError(f"sigma_P 는 음수일 수 없습니다: {self.sigma_P}")
        radius = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
        if radius > 1.0 + 1e-12:
            raise ScenarioError(f"불안정한 A (spectral radius={radius:.6f} > 1)")
        if radius > 1.0 - 1e-12:
            logger.warning(f"⚠️ A 의 spectral radius = 1 (정적/한계안정 위협장)")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def num_params(self) -> int:
        return self.A.shape[0]

    @property
    def Q(self) -> np.ndarray:
        return self.sigma_P * np.eye(self.num_params)

    def multi_step(self, steps: int) -> Tuple[np.ndarray, np.ndarray]:
        """(A^s, sum_{m<s} A^m Q A^m^T): 경로 따라 s 스텝씩 공분산 전파할 때 사용 (읽기 전용)"""
        if steps < 0:
            raise ScenarioError(f"steps 는 0 이상: {steps}")
        return _propagation(self.A.tobytes(), self.num_params, float(self.sigma_P), int(steps))


@lru_cache(maxsize=128)
def _propagation(a_bytes: bytes, n: int, sigma_P: float, steps: int) -> Tuple[np.ndarray, np.ndarray]:
    A = np.frombuffer(a_bytes, dtype=float).reshape(n, n)
    power = np.eye(n)
    noise = np.zeros((n, n))
    Q = sigma_P * np.eye(n)
    for _ in range(steps):
        noise = A @ noise @ A.T + Q
        power = A @ power
    power.setflags(write=False)
    noise.setflags(write=False)
    return power, noise


@dataclass(frozen=True)
class ThreatState:
    theta: np.ndarray
    k: int = 0


def step_truth(d: ThreatDynamics, s: ThreatState, rng: np.random.Generator,
               grid_phi: Optional[np.ndarray] = None,
               floor: float = POSITIVITY_FLOOR,
               events: Optional[list] = None) -> ThreatState:
    """
    참값 1스텝 전개: Theta' = A Theta + w

    grid_phi 가 주어지면 모든 격자점에서 c >= floor 가 되도록 w 를 재추출하고
    (최대 POSITIVITY_MAX_REDRAWS 회), 그래도 안되면 음수 성분을 0 으로 clamp.
    """
    mean = d.A @ s.theta
    std = math.sqrt(d.sigma_P)
    n = d.num_params

    theta = mean + std * rng.standard_normal(n) if std > 0 else mean.copy()
    if grid_phi is not None and std > 0:
        attempts = 1
        while np.min(1.0 + grid_phi @ theta) < floor and attempts < POSITIVITY_MAX_REDRAWS:
            theta = mean + std * rng.standard_normal(n)
            attempts += 1
        if np.min(1.0 + grid_phi @ theta) < floor:
            theta = np.maximum(theta, 0.0)
            logger.warning(f"⚠️ 양수 조건 위반, {attempts}회 재추출 후 음수 성분 clamp (k={s.k + 1})")
            if events is not None:
                events.append({"type": "positivity_clamp", "k": s.k + 1, "attempts": attempts})
    return ThreatState(theta=theta, k=s.k + 1)


def lattice_centers(num_params: int, half_width: float = 1.0) -> Tuple[np.ndarray, float]:
    """sqrt(N_P) x sqrt(N_P) 균일 격자 중심과 격자 간격"""
    side = math.isqrt(num_params)
    if num_params < 1 or side * side != num_params:
        raise ScenarioError(f"N_P 는 완전제곱수여야 합니다: {num_params}")
    if side == 1:
        return np.zeros((1, 2)), 2.0 * half_width
    spacing = 2.0 * half_width / (side - 1)
    axis = -half_width + spacing * np.arange(side)
    ys, xs = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([xs.ravel(), ys.ravel()]), spacing


def make_default_scenario(num_params: int, side_count: int,
                          half_width: float = 1.0,
                          rng: Optional[np.random.Generator] = None,
                          rho: float = THREAT_RHO,
                          sigma_P: float = THREAT_SIGMA_P,
                          theta_max: float = THREAT_THETA_MAX,
                          width: Optional[float] = None,
                          dt: float = 1.0) -> Tuple[BasisSet, ThreatDynamics, ThreatState]:
    """
    기본 시나리오

    - 중심: sqrt(N_P) x sqrt(N_P) 균일 격자, 폭 a_n = (격자 간격)^2
    - A = rho * I, Q = sigma_P * I
    - Theta_0 ~ U[0, theta_max] (seeded)
    """
    centers, spacing = lattice_centers(num_params, half_width)
    a = width if width is not None else spacing ** 2
    basis = BasisSet(centers=centers, widths=np.full(num_params, float(a)))

    validate_basis(basis, build_grid(half_width, side_count))

    dynamics = ThreatDynamics(A=rho * np.eye(num_params), sigma_P=sigma_P, dt=dt)
    rng = rng if rng is not None else np.random.default_rng(0)
    theta0 = rng.uniform(0.0, theta_max, size=num_params)
    return basis, dynamics, ThreatState(theta=theta0, k=0)


def validate_basis(b: BasisSet, g: GridWorld, floor: float = COVERAGE_FLOOR) -> BasisSet:
    """중심이 작업공간 안에 있고 격자 전체를 덮는지 검사"""
    if not all(g.contains(c) for c in b.centers):
        raise ScenarioError("기저 중심이 작업공간 밖에 있습니다")
    if not check_coverage(b, g, floor):
        raise ScenarioError(f"기저가 작업공간을 충분히 덮지 못합니다 (floor={floor})")
    return b
