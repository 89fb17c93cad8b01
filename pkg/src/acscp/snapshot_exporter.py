"""
Snapshot Exporter - 에피소드 로그 -> 시점별 격자 필드 / 경로 / 센서 위치 CSV

플로팅 도구에 바로 넣을 수 있는 평문 표만 생성 (그림은 그리지 않음)
"""
from pathlib import Path as FilePath
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from cscp_engine import EpisodeConfig, EpisodeLog, build_scenario
from harness import write_table
from threat import field_on_grid

SNAPSHOT_SCHEMA = "acscp-snapshot"


class SnapshotError(ValueError):
    """스냅샷 시점이 에피소드 범위 밖"""


def belief_at(log: EpisodeLog, t: int) -> Dict:
    """t 틱 종료 시점 belief (t 까지의 마지막 스냅샷, plan_at 과 같은 시점)"""
    upto = [s for s in log.snapshots if s["t"] <= t]
    if not upto:
        raise SnapshotError(f"t={t} 이전 belief 스냅샷이 없습니다")
    return upto[-1]


def plan_at(log: EpisodeLog, t: int) -> List[int]:
    """t 시점까지의 마지막 재계획 경로"""
    plans = [r for r in log.replans if r["t"] <= t]
    return list(plans[-1]["path"]) if plans else [log.start]


def traveled_at(log: EpisodeLog, t: int) -> List[int]:
    return [v for v, tc in log.committed if tc <= t]


def ego_at(log: EpisodeLog, coords: np.ndarray, t: int) -> Tuple[float, float]:
    """t 시점 ego 좌표 (출발 전이면 start)"""
    if t < log.departure or not log.ego:
        x, y = coords[log.start - 1]
        return float(x), float(y)
    sample = log.ego[min(t - log.departure, len(log.ego) - 1)]
    if int(sample[0]) != t:
        raise SnapshotError(f"t={t} ego 샘플이 없습니다")
    return float(sample[1]), float(sample[2])


def sensor_positions_at(log: EpisodeLog, cfg: EpisodeConfig, coords: np.ndarray, t: int) -> List[Dict]:
    """
    도착/할당 이벤트로부터 t 틱 종료 시점 센서 좌표 복원 (직선 비행, 일정 속도)

    할당의 s 는 그 틱에서 이미 쓴 이동 예산 비율, goal 도착 틱에는 센서가 움직이지 않는다.
    """
    step = cfg.sensor_speed * cfg.tick
    moving_until = log.ticks - 1 if log.finished else log.ticks
    rows = []
    for j in range(cfg.sensor_count):
        arrivals = [a for a in log.arrivals if a["sensor"] == j and a["t"] <= t]
        if not arrivals:
            continue
        last = arrivals[-1]
        origin = coords[last["vertex"] - 1]
        targets = [a for a in log.assignments if a["sensor"] == j and last["t"] <= a["t"] <= t]
        position, target, in_transit = origin, last["vertex"], False
        if targets:
            target = targets[-1]["vertex"]
            dest = coords[target - 1]
            dist = float(np.linalg.norm(dest - origin))
            assigned = targets[-1]
            travelled = (min(t, moving_until) - assigned["t"] + 1.0 - assigned.get("s", 1.0)) * step
            frac = min(1.0, travelled / dist) if dist > 0 else 1.0
            position = origin + frac * (dest - origin)
            in_transit = frac < 1.0
        rows.append({"kind": "sensor", "index": j, "x": float(position[0]), "y": float(position[1]),
                     "vertex": last["vertex"], "target": target, "in_transit": in_transit})
    return rows


def export_field_snapshots(log: EpisodeLog, times: Sequence[int], out_dir: str,
                           prefix: Optional[str] = None) -> List[str]:
    """
    시점별 3개 파일

    - field: vertex, x, y, c_true, c_est
    - path: order, vertex, x, y, status (traveled / planned)
    - agents: ego 와 센서 좌표
    """
    cfg = EpisodeConfig.from_dict(log.config)
    scenario = build_scenario(cfg)
    g = scenario.grid
    out = FilePath(out_dir)
    prefix = prefix or "snapshot"
    paths: List[str] = []

    for t in times:
        t = int(t)
        if not 0 <= t <= log.ticks or t >= len(log.truth):
            raise SnapshotError(f"스냅샷 시점이 범위 밖입니다: t={t} (0..{log.ticks})")

        snap = belief_at(log, t)
        c_true = field_on_grid(scenario.basis, log.truth[t], g)
        c_est = field_on_grid(scenario.basis, snap["mean"], g)
        field_df = pd.DataFrame({
            "vertex": list(g.vertices), "x": g.coords[:, 0], "y": g.coords[:, 1],
            "c_true": c_true, "c_est": c_est,
        })

        traveled = traveled_at(log, t)
        plan = plan_at(log, t)
        planned = plan[len(traveled):] if plan[:len(traveled)] == traveled else []
        path_rows = [(v, "traveled") for v in traveled] + [(v, "planned") for v in planned]
        path_df = pd.DataFrame([
            {"order": i, "vertex": v, "x": g.coords[v - 1, 0], "y": g.coords[v - 1, 1], "status": s}
            for i, (v, s) in enumerate(path_rows)
        ], columns=["order", "vertex", "x", "y", "status"])

        ex, ey = ego_at(log, g.coords, t)
        agent_rows = [{"kind": "ego", "index": 0, "x": ex, "y": ey,
                       "vertex": traveled[-1], "target": planned[0] if planned else traveled[-1],
                       "in_transit": bool(planned) and log.departure <= t < log.ticks}]
        agent_rows += sensor_positions_at(log, cfg, g.coords, t)
        agents_df = pd.DataFrame(agent_rows, columns=["kind", "index", "x", "y", "vertex", "target", "in_transit"])

        for name, df in (("field", field_df), ("path", path_df), ("agents", agents_df)):
            path = out / f"{prefix}_t{t}_{name}.csv"
            write_table(path, df, SNAPSHOT_SCHEMA)
            paths.append(str(path))
    return paths
