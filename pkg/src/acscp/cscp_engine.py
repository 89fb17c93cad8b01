"""
A-CSCP Engine - ego 차량 / 이동 센서 / 추정기 / 재계획 co-simulation

역할:
- 에피소드 초기화 (초기 센서 배치, 첫 측정, 첫 경로, 첫 목표 할당)
- 틱 단위 진행: 참값 전개 -> belief 예측 -> ego 이동 -> 센서 이동/측정/재계획/재배치
- 모든 이벤트를 EpisodeLog 에 기록 (지표 계산 / 스냅샷 / verify 의 원천)
"""
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from config import (
    ALPHA_MODE, CRMI_HORIZON, DEFAULT_SEED, EGO_SPEED, GRID_HALF_WIDTH, GRID_SIDE_COUNT,
    PLAN_MODE, PRIOR_CHI, REWARD_GAMMA, SCHEMA_VERSION, SENSOR_COUNT, SENSOR_SPEED,
    SIGMA_R, THREAT_NUM_PARAMS, THREAT_RHO, THREAT_SIGMA_P, THREAT_THETA_MAX,
    TICK_BUDGET, TICKS_PER_EDGE, BENCHMARK_TIME_VARYING, WARMUP_TICKS,
)
from crmi import (
    ALPHA_MODES, CRMI_HORIZONS, RewardWeights, SelectionContext, path_cost_variance, score_candidates,
)
from estimation import Belief, Estimator, KalmanEstimator, build_measurement_model, init_belief
from planning import PLAN_MODES, build_cost_field, expected_path_cost, replan_from
from sim_logger import SimLogger
from threat import (
    BasisSet, ThreatDynamics, ThreatState, grid_basis, make_default_scenario, step_truth,
)
from workspace import GridWorld, Path, build_grid

_ARRIVAL_EPS = 1e-12


class EpisodeError(ValueError):
    """잘못된 에피소드 설정"""


class TickBudgetExceeded(RuntimeError):
    """tick 예산 안에 ego 가 goal 에 도달하지 못함"""


@dataclass
class EpisodeConfig:
    """에피소드 설정 (시나리오 + 보상 + 속도 + 잡음 + 시드)"""
    side_count: int = GRID_SIDE_COUNT
    half_width: float = GRID_HALF_WIDTH
    num_params: int = THREAT_NUM_PARAMS
    rho: float = THREAT_RHO                 # A = rho * I
    sigma_P: float = THREAT_SIGMA_P
    theta_max: float = THREAT_THETA_MAX
    width: Optional[float] = None           # a_n (None 이면 (중심 간격)^2)
    sensor_count: int = SENSOR_COUNT
    ego_speed: float = EGO_SPEED
    sensor_speed: float = SENSOR_SPEED
    sigma_R: float = SIGMA_R
    chi: float = PRIOR_CHI
    gamma: float = REWARD_GAMMA
    alpha_mode: str = ALPHA_MODE            # auto / fixed / zero
    alpha_value: Optional[float] = None
    seed: int = DEFAULT_SEED
    ticks_per_edge: int = TICKS_PER_EDGE
    plan_mode: str = PLAN_MODE              # frozen / propagated
    crmi_horizon: str = CRMI_HORIZON        # one_step / travel
    benchmark_time_varying: bool = BENCHMARK_TIME_VARYING
    start: Optional[int] = None             # None -> 1 (좌하단)
    goal: Optional[int] = None              # None -> N_g (우상단)
    tick_budget: int = TICK_BUDGET
    warmup_ticks: int = WARMUP_TICKS        # ego 출발 전 센서만 측정하는 틱 수 (0 이면 즉시 출발)

    def validate(self) -> "EpisodeConfig":
        if self.side_count < 2:
            raise EpisodeError(f"side_count 는 2 이상: {self.side_count}")
        if not 0 < self.ego_speed < self.sensor_speed:
            raise EpisodeError(f"u_sen > u_ego > 0 이어야 합니다: u_ego={self.ego_speed}, u_sen={self.sensor_speed}")
        if self.sensor_count < 1:
            raise EpisodeError(f"센서 수는 1 이상: {self.sensor_count}")
        if self.sensor_count >= self.num_vertices:
            raise EpisodeError(f"센서 수({self.sensor_count})가 정점 수({self.num_vertices}) 이상입니다")
        if self.ticks_per_edge < 1:
            raise EpisodeError(f"ticks_per_edge 는 1 이상: {self.ticks_per_edge}")
        if not self.sigma_R > 0 or not self.chi > 0:
            raise EpisodeError(f"sigma_R, chi 는 양수: {self.sigma_R}, {self.chi}")
        if not 0.0 <= self.gamma <= 1.0:
            raise EpisodeError(f"gamma 는 [0, 1]: {self.gamma}")
        if self.alpha_mode not in ALPHA_MODES:
            raise EpisodeError(f"알 수 없는 alpha_mode: {self.alpha_mode}")
        if self.plan_mode not in PLAN_MODES:
            raise EpisodeError(f"알 수 없는 plan_mode: {self.plan_mode}")
        if self.crmi_horizon not in CRMI_HORIZONS:
            raise EpisodeError(f"알 수 없는 crmi_horizon: {self.crmi_horizon}")
        if self.tick_budget < 1:
            raise EpisodeError(f"tick_budget 은 1 이상: {self.tick_budget}")
        if not 0 <= self.warmup_ticks < self.tick_budget:
            raise EpisodeError(f"warmup_ticks 는 [0, tick_budget) 범위: {self.warmup_ticks}")
        for name, v in (("start", self.start_vertex), ("goal", self.goal_vertex)):
            if not 1 <= v <= self.num_vertices:
                raise EpisodeError(f"{name} 정점 범위 밖: {v}")
        if self.start_vertex == self.goal_vertex:
            raise EpisodeError("start 와 goal 이 같습니다")
        return self

    @property
    def num_vertices(self) -> int:
        return self.side_count * self.side_count

    @property
    def start_vertex(self) -> int:
        return self.start if self.start is not None else 1

    @property
    def goal_vertex(self) -> int:
        return self.goal if self.goal is not None else self.num_vertices

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.side_count - 1)

    @property
    def tick(self) -> float:
        """u_ego * tick = delta / ticks_per_edge"""
        return self.spacing / (self.ticks_per_edge * self.ego_speed)

    @property
    def steps_per_edge(self) -> int:
        """간선 하나 통과에 드는 동역학 스텝 수 (1 틱 = 1 스텝)"""
        return int(math.ceil(self.spacing / (self.ego_speed * self.tick) - 1e-9))

    @property
    def speed_ratio(self) -> float:
        return self.sensor_speed / self.ego_speed

    def with_ratio(self, ratio: float) -> "EpisodeConfig":
        return replace(self, sensor_speed=ratio * self.ego_speed)

    def reward_weights(self) -> RewardWeights:
        return RewardWeights(gamma=self.gamma, alpha_mode=self.alpha_mode, alpha_value=self.alpha_value)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise EpisodeError(f"알 수 없는 설정 키: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Scenario:
    """시드에서 결정되는 불변 시나리오 데이터"""
    grid: GridWorld
    basis: BasisSet
    dynamics: ThreatDynamics
    theta0: np.ndarray
    grid_phi: np.ndarray


def _seed_streams(seed: int) -> Tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """(시나리오, 참값 잡음, 측정 잡음) 독립 스트림"""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def build_scenario(cfg: EpisodeConfig) -> Scenario:
    rng_scenario, _, _ = _seed_streams(cfg.seed)
    basis, dynamics, state0 = make_default_scenario(
        cfg.num_params, cfg.side_count, half_width=cfg.half_width, rng=rng_scenario,
        rho=cfg.rho, sigma_P=cfg.sigma_P, theta_max=cfg.theta_max, width=cfg.width, dt=cfg.tick,
    )
    grid = build_grid(cfg.half_width, cfg.side_count)
    return Scenario(grid=grid, basis=basis, dynamics=dynamics, theta0=state0.theta,
                    grid_phi=grid_basis(basis, grid))


def replay_truth(cfg: EpisodeConfig, scenario: Scenario, num_ticks: int) -> np.ndarray:
    """참값 Theta_0..Theta_num_ticks 재생 (에이전트 행동과 무관한 스트림)"""
    _, rng_truth, _ = _seed_streams(cfg.seed)
    state = ThreatState(theta=scenario.theta0.copy(), k=0)
    out = [state.theta]
    for _ in range(num_ticks):
        state = step_truth(scenario.dynamics, state, rng_truth, grid_phi=scenario.grid_phi)
        out.append(state.theta)
    return np.vstack(out)


# ==========================
# 상태
# ==========================

@dataclass
class SensorState:
    index: int
    vertex: int                     # 마지막으로 도착한 정점
    position: np.ndarray
    target: int
    in_transit: bool = False
    arrivals: int = 0               # l_j

    @property
    def assigned(self) -> int:
        """q^{l*}_j: 이동 중이면 목표, 아니면 현재 정점"""
        return self.target if self.in_transit else self.vertex


@dataclass
class FleetState:
    sensors: List[SensorState]
    speed: float

    @property
    def configuration(self) -> List[int]:
        return [s.assigned for s in self.sensors]


@dataclass
class EgoState:
    traveled: List[int]             # 확정된 정점 (수정 불가)
    position: np.ndarray
    heading: Optional[int]          # 현재 간선의 도착 정점 (None 이면 출발 전 또는 goal 도착)
    edge_ticks: int = 0
    speed: float = EGO_SPEED
    departed: bool = False

    @property
    def committed(self) -> Path:
        return Path(tuple(self.traveled))

    @property
    def locked(self) -> Path:
        """진행 중인 간선까지 포함한 고정 접두부"""
        if self.heading is None:
            return self.committed
        return Path(tuple(self.traveled) + (self.heading,))


@dataclass
class EpisodeLog:
    """에피소드 기록 (JSON 직렬화 가능)"""
    config: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION
    tick: float = 0.0
    start: int = 0
    goal: int = 0
    ticks: int = 0
    finished: bool = False
    departure: int = 0                                  # ego 출발 틱
    ego: list = field(default_factory=list)             # [t, x, y, exposure], t >= departure
    truth: list = field(default_factory=list)           # t 번째 = Theta_t
    committed: list = field(default_factory=list)       # [vertex, t]
    arrivals: list = field(default_factory=list)
    assignments: list = field(default_factory=list)
    replans: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    events: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    @property
    def sensor_placements(self) -> int:
        """S"""
        return len(self.arrivals)

    @property
    def unique_placements(self) -> int:
        """U"""
        return len({a["vertex"] for a in self.arrivals})

    @property
    def traveled_path(self) -> Path:
        return Path(tuple(v for v, _ in self.committed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EpisodeLog":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class EpisodeState:
    cfg: EpisodeConfig
    scenario: Scenario
    truth: ThreatState
    belief: Belief
    ego: EgoState
    fleet: FleetState
    plan: Path
    log: EpisodeLog
    rng_truth: np.random.Generator
    rng_meas: np.random.Generator
    estimator: Estimator = field(default_factory=KalmanEstimator)
    t: int = 0
    finished: bool = False
    logger: SimLogger = field(default_factory=lambda: SimLogger("engine"), repr=False)

    @property
    def events(self) -> list:
        return self.log.events


# ==========================
# 내부 단계
# ==========================

def initial_sensor_vertices(g: GridWorld, start: int, count: int) -> List[int]:
    """start 의 이웃부터 (BFS 링 단위, 링 안에서는 작은 id 순) count 개"""
    seen = {start}
    ring = [start]
    chosen: List[int] = []
    while ring and len(chosen) < count:
        nxt = sorted({u for v in ring for u in g.adjacency[v - 1]} - seen)
        seen.update(nxt)
        chosen.extend(nxt[:count - len(chosen)])
        ring = nxt
    if len(chosen) < count:
        raise EpisodeError(f"센서 {count}개를 배치할 정점이 부족합니다")
    return chosen


def _measure(state: EpisodeState, vertices: List[int]) -> np.ndarray:
    """센서 판독값 z = c(x, t) + η"""
    sc = state.scenario
    phi = sc.grid_phi[[v - 1 for v in vertices]]
    noise = state.cfg.sigma_R * state.rng_meas.standard_normal(len(vertices))
    return 1.0 + phi @ state.truth.theta + noise


def _snapshot(state: EpisodeState, kind: str):
    state.log.snapshots.append({
        "t": state.t, "kind": kind,
        "mean": state.belief.mean.tolist(), "trace_P": state.belief.trace,
    })


def _replan(state: EpisodeState, reason: str):
    """고정 접두부 (확정 정점 + 진행 중 간선) 이후만 재최적화, 출발 전이면 start 부터"""
    cfg, sc = state.cfg, state.scenario
    ego = state.ego
    if state.finished:
        return
    locked = ego.locked
    costs = build_cost_field(sc.basis, state.belief, sc.dynamics, sc.grid, mode=cfg.plan_mode,
                             steps_per_edge=cfg.steps_per_edge, events=state.events)
    state.plan = replan_from(sc.grid, costs, locked.end, cfg.goal_vertex, locked)
    future = state.plan.suffix(len(ego.traveled) - 1)
    j_hat = expected_path_cost(sc.basis, state.belief, sc.dynamics, future, sc.grid,
                               mode=cfg.plan_mode, steps_per_edge=cfg.steps_per_edge)
    p_jj = path_cost_variance(sc.basis, state.belief, sc.dynamics, future, sc.grid, cfg.steps_per_edge)
    state.log.replans.append({
        "t": state.t, "reason": reason, "path": list(state.plan.vertices),
        "J_hat": j_hat, "P_JJ": p_jj, "chosen_crmi": [None] * cfg.sensor_count,
    })
    _snapshot(state, "replan")


def _assign(state: EpisodeState, j: int, s: float = 1.0):
    """센서 j 의 다음 목표 선택 (s = 틱 안에서 이미 쓴 이동 예산 비율)"""
    cfg, sc = state.cfg, state.scenario
    sensor = state.fleet.sensors[j]
    ego = state.ego
    # d2 기준점 = ego 가 향하는 정점 (출발 전이면 계획의 첫 간선 끝), CRMI 는 마지막 확정 정점 이후 구간만
    anchor = ego.heading if ego.heading is not None else state.plan.vertices[1]
    future = state.plan.suffix(len(ego.traveled) - 1)

    ctx = SelectionContext(
        grid=sc.grid, basis=sc.basis, belief=state.belief, dynamics=sc.dynamics,
        future_path=future, configuration=state.fleet.configuration,
        sensor_position=sensor.position, ego_next=sc.grid.coord(anchor),
        sigma_R=cfg.sigma_R, steps_per_edge=cfg.steps_per_edge, horizon=cfg.crmi_horizon,
        sensor_step=state.fleet.speed * cfg.tick, grid_phi=sc.grid_phi,
    )
    scores = score_candidates(ctx, j, cfg.reward_weights())
    best = scores.best_index()
    if scores.capped:
        state.events.append({"type": "crmi_cap", "t": state.t, "sensor": j, "count": scores.capped})
    chosen = scores.row(best)

    sensor.target = chosen["vertex"]
    sensor.in_transit = True
    state.log.assignments.append({"t": state.t, "sensor": j, "s": s, **chosen})
    if state.log.replans:
        state.log.replans[-1]["chosen_crmi"][j] = chosen["crmi"]
    state.logger("EVENT", f"센서 {j} -> 정점 {chosen['vertex']} (CRMI={chosen['crmi']:.4f}, alpha={chosen['alpha']:.3f})")


def _record_arrival(state: EpisodeState, sensor: SensorState, z: float):
    state.log.arrivals.append({
        "t": state.t, "sensor": sensor.index, "vertex": sensor.vertex, "z": float(z),
        "count": sensor.arrivals, "in_transit": sensor.in_transit,
    })


def _record_truth(state: EpisodeState):
    state.log.truth.append(state.truth.theta.tolist())


def _record_ego(state: EpisodeState):
    pos = state.ego.position
    exposure = float(state.scenario.basis.matrix(pos.reshape(1, 2))[0] @ state.truth.theta)
    state.log.ego.append([state.t, float(pos[0]), float(pos[1]), exposure])


def _depart(state: EpisodeState):
    """최신 계획의 첫 간선으로 출발 (이 시점부터 노출 적분)"""
    ego = state.ego
    ego.departed = True
    ego.heading = state.plan.vertices[1]
    state.log.departure = state.t
    _record_ego(state)
    state.logger("INFO", f"🚗 ego 출발 (t={state.t}, 다음 정점 {ego.heading})")


def _advance_ego(state: EpisodeState):
    ego, g = state.ego, state.scenario.grid
    if ego.heading is None:
        return
    ego.edge_ticks += 1
    origin, dest = g.coord(ego.traveled[-1]), g.coord(ego.heading)
    if ego.edge_ticks >= state.cfg.ticks_per_edge:
        ego.traveled.append(ego.heading)
        ego.position = dest.copy()
        ego.edge_ticks = 0
        state.log.committed.append([ego.heading, state.t])
        if ego.heading == state.cfg.goal_vertex:
            ego.heading = None
            state.finished = True
            state.logger("INFO", f"🏁 goal 도착 (t={state.t}, L={len(ego.traveled) - 1})")
        else:
            ego.heading = state.plan.vertices[len(ego.traveled)]
    else:
        frac = ego.edge_ticks / state.cfg.ticks_per_edge
        ego.position = origin + frac * (dest - origin)


def _advance_sensor(state: EpisodeState, sensor: SensorState, budget: float) -> float:
    """budget 만큼 목표로 이동, 사용한 거리 반환 (도착 시 남은 예산은 호출자가 이어서 사용)"""
    if not sensor.in_transit or budget <= 0.0:
        return 0.0
    dest = state.scenario.grid.coord(sensor.target)
    delta = dest - sensor.position
    remaining = float(np.linalg.norm(delta))
    if remaining <= budget + _ARRIVAL_EPS:
        sensor.position = dest.copy()
        sensor.vertex = sensor.target
        sensor.in_transit = False
        return min(remaining, budget)
    sensor.position = sensor.position + (budget / remaining) * delta
    return budget


def _on_sensor_arrival(state: EpisodeState, sensor: SensorState, s: float = 1.0):
    sc, cfg = state.scenario, state.cfg
    sensor.arrivals += 1
    z = _measure(state, [sensor.vertex])
    _record_arrival(state, sensor, z[0])
    model = build_measurement_model(sc.basis, sc.grid, [sensor.vertex], cfg.sigma_R)
    state.belief = state.estimator.update(state.belief, model, z - 1.0, events=state.events)
    _replan(state, reason=f"sensor_{sensor.index}")
    _assign(state, sensor.index, s)


def _move_sensor(state: EpisodeState, sensor: SensorState):
    """틱 이동 예산 u_sen * tick 을 모두 소진 (도착 -> 측정/재배치 후 남은 예산으로 계속 이동)"""
    step = state.fleet.speed * state.cfg.tick
    used = 0.0
    while sensor.in_transit and used < step:
        used += _advance_sensor(state, sensor, step - used)
        if sensor.in_transit:
            break
        _on_sensor_arrival(state, sensor, s=min(used / step, 1.0))


# ==========================
# 공개 연산
# ==========================

def initialize_episode(cfg: EpisodeConfig, log_fn: Optional[Callable[[str, str], None]] = None) -> EpisodeState:
    """초기 배치 -> 공동 측정/갱신 -> 초기 경로 -> 센서별 첫 목표"""
    cfg.validate()
    scenario = build_scenario(cfg)
    _, rng_truth, rng_meas = _seed_streams(cfg.seed)
    g = scenario.grid
    start, goal = cfg.start_vertex, cfg.goal_vertex

    placements = initial_sensor_vertices(g, start, cfg.sensor_count)
    sensors = [SensorState(index=j, vertex=v, position=g.coord(v).copy(), target=v)
               for j, v in enumerate(placements)]
    state = EpisodeState(
        cfg=cfg, scenario=scenario,
        truth=ThreatState(theta=scenario.theta0.copy(), k=0),
        belief=init_belief(cfg.num_params, cfg.chi),
        ego=EgoState(traveled=[start], position=g.coord(start).copy(), heading=None, speed=cfg.ego_speed),
        fleet=FleetState(sensors=sensors, speed=cfg.sensor_speed),
        plan=Path((start,)),
        log=EpisodeLog(config=cfg.to_dict(), tick=cfg.tick, start=start, goal=goal),
        rng_truth=rng_truth, rng_meas=rng_meas,
        logger=SimLogger("engine", log_fn),
    )
    state.log.committed.append([start, 0])
    _snapshot(state, "prior")
    _record_truth(state)

    z = _measure(state, placements)
    for sensor, zj in zip(sensors, z):
        sensor.arrivals += 1
        _record_arrival(state, sensor, zj)
    model = build_measurement_model(scenario.basis, g, placements, cfg.sigma_R)
    state.belief = state.estimator.update(state.belief, model, z - 1.0, events=state.events)

    _replan(state, reason="init")
    if cfg.warmup_ticks == 0:
        _depart(state)

    for j in range(cfg.sensor_count):
        _assign(state, j)
    state.logger("INFO", f"🚀 에피소드 시작: seed={cfg.seed}, ratio={cfg.speed_ratio:g}, "
                       f"gamma={cfg.gamma}, alpha={cfg.alpha_mode}, warmup={cfg.warmup_ticks}, 센서 {placements}")
    return state


def tick(state: EpisodeState) -> EpisodeState:
    """한 틱 진행 (참값 -> 예측 -> ego -> 센서 오름차순 -> 워밍업 종료 시 출발)"""
    if state.finished:
        raise EpisodeError("이미 종료된 에피소드입니다")
    sc = state.scenario
    state.t += 1
    state.truth = step_truth(sc.dynamics, state.truth, state.rng_truth, grid_phi=sc.grid_phi,
                             events=state.events)
    state.belief = state.estimator.predict(state.belief, sc.dynamics, 1)
    _record_truth(state)

    if state.ego.departed:
        _advance_ego(state)
        _record_ego(state)
        if state.finished:
            return state

    for sensor in state.fleet.sensors:
        _move_sensor(state, sensor)

    if not state.ego.departed and state.t >= state.cfg.warmup_ticks:
        _depart(state)
    return state


def summarize(log: EpisodeLog) -> Dict[str, float]:
    """S, U, J, L, ticks"""
    samples = np.asarray(log.ego, dtype=float)
    return {
        "S": log.sensor_placements,
        "U": log.unique_placements,
        "J": float(trapezoid(samples[:, 3], dx=log.tick)) if len(samples) > 1 else 0.0,
        "L": len(log.committed) - 1,
        "ticks": log.ticks,
    }


def run_episode(cfg: EpisodeConfig, log_fn: Optional[Callable[[str, str], None]] = None) -> EpisodeLog:
    """ego 가 goal 에 도착할 때까지 tick 반복"""
    state = initialize_episode(cfg, log_fn)
    while not state.finished:
        if state.t >= cfg.tick_budget:
            raise TickBudgetExceeded(f"tick 예산 초과: {cfg.tick_budget}")
        tick(state)
    state.log.ticks = state.t
    state.log.finished = True
    state.log.summary = summarize(state.log)
    return state.log


class CSCPEngine:
    """에피소드 실행기 (log_fn 주입)"""

    def __init__(self, log_fn: Optional[Callable[[str, str], None]] = None):
        self._log = SimLogger("engine", log_fn)
        self._log_fn = log_fn

    def run(self, cfg: EpisodeConfig) -> EpisodeLog:
        log = run_episode(cfg, self._log_fn)
        s = log.summary
        self._log("INFO", f"✅ 에피소드 완료: L={s['L']}, S={s['S']}, U={s['U']}, J={s['J']:.4f}, ticks={s['ticks']}")
        return log
