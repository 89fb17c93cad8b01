"""
Experiment Harness - 스킴 x 속도비 x 시드 앙상블 실행 + 결과 파일 입출력

역할:
- flat key=value 설정 파일 (dotenv 형식) + --set 오버라이드 -> ExperimentSpec
- 에피소드 병렬 실행 (ProcessPoolExecutor), 결과는 (scheme, ratio, seed) 순으로 정렬
- 요약 CSV / exposure 표 / efficiency 표 / 에피소드별 JSON 로그 기록 (버전 헤더 포함)
- verify: 저장된 로그에서 S, U, J, exposure, eta 재계산 후 요약과 비교
"""
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd
from dotenv import dotenv_values
from pydantic import BaseModel, ValidationError, field_validator, model_validator

from config import (
    DEFAULT_SCHEMES, DEFAULT_SEED, DEFAULT_SPEED_RATIOS, MAX_WORKERS, OUTPUT_DIR, REFERENCE_SPEED_RATIO, SCHEMA_VERSION,
)
from crmi import ALPHA_MODES, SelectionError
from cscp_engine import CSCPEngine, EpisodeConfig, EpisodeError, EpisodeLog, TickBudgetExceeded
from estimation import EstimationError
from metrics import MetricsError, evaluate_episode, incurred_cost, mean_and_stderr
from planning import PlanningError
from sim_logger import SimLogger, get_logger
from threat import ScenarioError
from workspace import GridError, InvalidPathError, InvalidVertexError

logger = get_logger("harness")

SUMMARY_SCHEMA = "acscp-summary"
TABLE_SCHEMA = "acscp-table"
LOG_SCHEMA = "acscp-episode-log"
FLOAT_FORMAT = "%.10g"
_SCHEME_NAME = re.compile(r"^[A-Za-z0-9_.\-]+$")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY, EXIT_SIMULATION = 0, 2, 3, 4, 5


class ConfigError(ValueError):
    """잘못된 실험 설정"""


class LogFormatError(ValueError):
    """헤더/스키마가 맞지 않는 로그 파일"""


class VerifyMismatch(Exception):
    """로그 재계산 결과가 저장된 요약과 다름"""


# ==========================
# 설정
# ==========================

def _as_bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bool 값이 아닙니다: {v}")


def _as_optional_float(v: str) -> Optional[float]:
    return None if str(v).strip().lower() in ("", "none") else float(v)


# flat key -> (EpisodeConfig 필드, 변환 함수)
EPISODE_KEYS: Dict[str, Tuple[str, Callable]] = {
    "grid.side_count": ("side_count", int),
    "grid.half_width": ("half_width", float),
    "threat.N_P": ("num_params", int),
    "threat.sigma_P": ("sigma_P", float),
    "threat.theta_max": ("theta_max", float),
    "threat.width": ("width", _as_optional_float),
    "dynamics.rho": ("rho", float),
    "sensors.count": ("sensor_count", int),
    "sensors.speed": ("sensor_speed", float),
    "ego.speed": ("ego_speed", float),
    "noise.sigma_R": ("sigma_R", float),
    "noise.chi": ("chi", float),
    "reward.gamma": ("gamma", float),
    "reward.alpha_mode": ("alpha_mode", str),
    "reward.alpha_value": ("alpha_value", _as_optional_float),
    "run.seed": ("seed", int),
    "run.tick_per_edge": ("ticks_per_edge", int),
    "run.start": ("start", int),
    "run.goal": ("goal", int),
    "run.tick_budget": ("tick_budget", int),
    "run.warmup_ticks": ("warmup_ticks", int),
    "plan.mode": ("plan_mode", str),
    "crmi.horizon": ("crmi_horizon", str),
    "benchmark.time_varying": ("benchmark_time_varying", _as_bool),
}

EXPERIMENT_KEYS = (
    "experiment.schemes", "experiment.ratios", "experiment.seeds",
    "experiment.reference_ratio", "experiment.workers", "experiment.output_dir",
)


class SchemeSpec(BaseModel):
    """비교 스킴 하나 (alpha_mode + gamma)"""
    name: str
    alpha_mode: str = "auto"
    gamma: float = 1.0
    alpha_value: Optional[float] = None

    @field_validator("name")
    @classmethod
    def _name(cls, v: str) -> str:
        if not _SCHEME_NAME.match(v):
            raise ValueError(f"스킴 이름은 영숫자/_.- 만 허용: {v!r}")
        return v

    @field_validator("alpha_mode")
    @classmethod
    def _mode(cls, v: str) -> str:
        if v not in ALPHA_MODES:
            raise ValueError(f"알 수 없는 alpha_mode: {v}")
        return v

    @field_validator("gamma")
    @classmethod
    def _gamma(cls, v: float) -> float:
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"gamma 는 [0, 1]: {v}")
        return v


class ExperimentSpec(BaseModel):
    """기본 EpisodeConfig + 스킴/속도비/시드 목록 + 출력 위치"""
    base: dict = {}
    schemes: List[SchemeSpec]
    ratios: List[float]
    seeds: List[int]
    reference_ratio: Optional[float] = None
    workers: int = MAX_WORKERS
    output_dir: str = str(OUTPUT_DIR)

    @model_validator(mode="after")
    def _check(self) -> "ExperimentSpec":
        if not self.schemes or not self.ratios or not self.seeds:
            raise ValueError("스킴/속도비/시드는 각각 하나 이상 필요합니다")
        names = [s.name for s in self.schemes]
        if len(set(names)) != len(names):
            raise ValueError(f"스킴 이름 중복: {names}")
        if any(r <= 1.0 for r in self.ratios):
            raise ValueError(f"속도비는 1 보다 커야 합니다 (u_sen > u_ego): {self.ratios}")
        if self.reference_ratio is None:
            # 미지정: 기본 기준 속도비가 목록에 있으면 그것, 아니면 최소 속도비
            self.reference_ratio = REFERENCE_SPEED_RATIO if REFERENCE_SPEED_RATIO in self.ratios else min(self.ratios)
        elif self.reference_ratio not in self.ratios:
            raise ValueError(f"reference_ratio {self.reference_ratio:g} 가 ratios {self.ratios} 에 없습니다")
        if self.workers < 1:
            raise ValueError(f"workers 는 1 이상: {self.workers}")
        return self

    def base_config(self) -> EpisodeConfig:
        return EpisodeConfig.from_dict(self.base)

    def episode_config(self, scheme: SchemeSpec, ratio: float, seed: int) -> EpisodeConfig:
        cfg = self.base_config().with_ratio(ratio)
        cfg.alpha_mode, cfg.gamma, cfg.alpha_value = scheme.alpha_mode, scheme.gamma, scheme.alpha_value
        cfg.seed = seed
        return cfg.validate()


def default_schemes() -> List[SchemeSpec]:
    return [SchemeSpec(name=n, alpha_mode=m, gamma=g) for n, m, g in DEFAULT_SCHEMES]


def parse_schemes(text: str) -> List[SchemeSpec]:
    """'standard' 또는 'name:alpha_mode:gamma[:alpha_value], ...'"""
    text = text.strip()
    if text in ("", "standard"):
        return default_schemes()
    out = []
    for item in text.split(","):
        parts = [p.strip() for p in item.split(":")]
        if len(parts) not in (3, 4):
            raise ConfigError(f"스킴 형식 오류: {item!r} (name:alpha_mode:gamma[:alpha_value])")
        out.append(SchemeSpec(name=parts[0], alpha_mode=parts[1], gamma=float(parts[2]),
                              alpha_value=float(parts[3]) if len(parts) == 4 else None))
    return out


def parse_seeds(text: str) -> List[int]:
    """'0-9' 또는 '0,1,5'"""
    seeds: List[int] = []
    for item in text.split(","):
        item = item.strip()
        if re.fullmatch(r"\d+-\d+", item):
            lo, hi = (int(x) for x in item.split("-"))
            seeds.extend(range(lo, hi + 1))
        elif item:
            seeds.append(int(item))
    return seeds


def parse_overrides(items: Sequence[str]) -> Dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set 형식 오류: {item!r} (key=value)")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_spec(values: Dict[str, str]) -> ExperimentSpec:
    """flat key/value -> ExperimentSpec (알 수 없는 키는 오류)"""
    unknown = sorted(set(values) - set(EPISODE_KEYS) - set(EXPERIMENT_KEYS))
    if unknown:
        raise ConfigError(f"알 수 없는 설정 키: {unknown}")
    try:
        base = {}
        for key, (name, cast) in EPISODE_KEYS.items():
            if key in values and values[key] is not None:
                base[name] = cast(values[key])
        EpisodeConfig.from_dict(base).validate()

        spec = ExperimentSpec(
            base=base,
            schemes=parse_schemes(values.get("experiment.schemes") or "standard"),
            ratios=[float(r) for r in (values.get("experiment.ratios") or
                                       ",".join(str(r) for r in DEFAULT_SPEED_RATIOS)).split(",")],
            seeds=parse_seeds(values.get("experiment.seeds") or str(base.get("seed", DEFAULT_SEED))),
            reference_ratio=_as_optional_float(values.get("experiment.reference_ratio") or ""),
            workers=int(values.get("experiment.workers") or MAX_WORKERS),
            output_dir=values.get("experiment.output_dir") or str(OUTPUT_DIR),
        )
    except ValidationError as e:
        raise ConfigError(f"실험 설정 검증 실패: {e}") from e
    except (EpisodeError, SelectionError) as e:
        raise ConfigError(str(e)) from e
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"설정 값 변환 실패: {e}") from e
    return spec


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> ExperimentSpec:
    """설정 파일 (없으면 기본값) + --set 오버라이드"""
    values: Dict[str, str] = {}
    if path:
        p = FilePath(path)
        if not p.is_file():
            raise FileNotFoundError(f"설정 파일이 없습니다: {path}")
        values.update({k: v for k, v in dotenv_values(p).items()})
    values.update(parse_overrides(overrides))
    return build_spec(values)


# ==========================
# 로그 입출력
# ==========================

def _header(schema: str) -> str:
    return f"# schema={schema} version={SCHEMA_VERSION}"


def save_log(path: FilePath, log: EpisodeLog):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"schema": LOG_SCHEMA, "version": SCHEMA_VERSION}) + "\n")
        f.write(json.dumps(log.to_dict(), ensure_ascii=False))
        f.write("\n")


def load_log(path: str) -> EpisodeLog:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        body = f.read()
    try:
        header = json.loads(first)
    except json.JSONDecodeError as e:
        raise LogFormatError(f"로그 헤더를 읽을 수 없습니다: {path}") from e
    if not isinstance(header, dict) or header.get("schema") != LOG_SCHEMA:
        raise LogFormatError(f"에피소드 로그가 아닙니다: {path}")
    if header.get("version") != SCHEMA_VERSION:
        raise LogFormatError(f"지원하지 않는 로그 버전: {header.get('version')} (현재 {SCHEMA_VERSION})")
    try:
        return EpisodeLog.from_dict(json.loads(body))
    except (json.JSONDecodeError, TypeError) as e:
        raise LogFormatError(f"로그 본문 파싱 실패: {e}") from e


def write_table(path: FilePath, df: pd.DataFrame, schema: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_header(schema) + "\n")
        df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_table(path: str) -> pd.DataFrame:
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline().strip()
        if not first.startswith("# schema="):
            raise LogFormatError(f"버전 헤더가 없습니다: {path}")
        return pd.read_csv(f)


# ==========================
# 실행
# ==========================

FAILED_PREFIX = "failed"
_METRIC_FIELDS = ("J", "J_t", "J_w", "exposure", "eta", "S", "U", "L", "L_t", "L_w")


def failed_record(scheme: str, ratio: float, seed: int, exc: BaseException) -> dict:
    """실패한 에피소드 요약 행 (지표 NaN, note 에 예외 기록)"""
    record = {"scheme": scheme, "ratio": ratio, "seed": seed}
    record.update({k: float("nan") for k in _METRIC_FIELDS})
    record.update({"heuristic": False, "note": f"{FAILED_PREFIX}: {type(exc).__name__}: {exc}"})
    return record


def run_single(cfg_dict: dict, scheme: str, ratio: float) -> Tuple[dict, Optional[dict]]:
    """에피소드 1회 실행 + 평가 (프로세스 풀 작업 단위, 실패 시 로그 없이 실패 행 반환)"""
    cfg = EpisodeConfig.from_dict(cfg_dict)
    try:
        log = CSCPEngine().run(cfg)
        metrics = evaluate_episode(log, events=log.events)
    except Exception as e:
        logger.warning(f"⚠️ 에피소드 실패 ({scheme}, ratio={ratio:g}, seed={cfg.seed}): {type(e).__name__}: {e}")
        return failed_record(scheme, ratio, cfg.seed, e), None
    record = {"scheme": scheme, "ratio": ratio, "seed": cfg.seed, **metrics.to_dict()}
    log.summary.update({k: record[k] for k in ("scheme", "ratio", "seed", "J_t", "J_w", "exposure", "eta", "note")})
    return record, log.to_dict()


@dataclass
class ExperimentResult:
    records: pd.DataFrame
    exposure_table: pd.DataFrame
    efficiency_table: pd.DataFrame
    log_paths: List[str] = field(default_factory=list)


def exposure_table(records: pd.DataFrame) -> pd.DataFrame:
    """스킴 x 속도비별 normalized exposure 평균 / 표준오차"""
    rows = []
    for (scheme, ratio), grp in records.groupby(["scheme", "ratio"], sort=False):
        mean, se = mean_and_stderr(grp["exposure"].tolist())
        rows.append({"scheme": scheme, "ratio": ratio, "exposure_mean": mean, "exposure_se": se, "n": len(grp)})
    return pd.DataFrame(rows, columns=["scheme", "ratio", "exposure_mean", "exposure_se", "n"])


def efficiency_table(records: pd.DataFrame, reference_ratio: float) -> pd.DataFrame:
    """기준 속도비에서 스킴별 S, U, exposure, eta 평균"""
    ref = records[records["ratio"] == reference_ratio]
    rows = []
    for scheme, grp in ref.groupby("scheme", sort=False):
        eta_mean, eta_se = mean_and_stderr(grp["eta"].tolist())
        exp_mean, _ = mean_and_stderr(grp["exposure"].tolist())
        rows.append({
            "scheme": scheme, "ratio": reference_ratio,
            "S_mean": float(grp["S"].mean()), "U_mean": float(grp["U"].mean()),
            "exposure_mean": exp_mean, "eta_mean": eta_mean, "eta_se": eta_se, "n": len(grp),
        })
    return pd.DataFrame(rows, columns=["scheme", "ratio", "S_mean", "U_mean", "exposure_mean",
                                       "eta_mean", "eta_se", "n"])


def log_filename(scheme: str, ratio: float, seed: int) -> str:
    return f"{scheme}_r{ratio:g}_s{seed}.json"


class ExperimentRunner:
    """ExperimentSpec 전체 실행"""

    def __init__(self, log_fn: Optional[Callable[[str, str], None]] = None):
        self._log = SimLogger("harness", log_fn)

    def run(self, spec: ExperimentSpec, write: bool = True) -> ExperimentResult:
        jobs = []
        for scheme in spec.schemes:
            for ratio in spec.ratios:
                for seed in spec.seeds:
                    jobs.append((spec.episode_config(scheme, ratio, seed).to_dict(), scheme.name, ratio))
        order = {s.name: i for i, s in enumerate(spec.schemes)}
        self._log("INFO", f"📊 실험 시작: 스킴 {len(spec.schemes)}개 x 속도비 {len(spec.ratios)}개 "
                          f"x 시드 {len(spec.seeds)}개 = {len(jobs)} 에피소드 (workers={spec.workers})")

        out_dir = FilePath(spec.output_dir)
        if write:
            out_dir.mkdir(parents=True, exist_ok=True)

        if spec.workers > 1:
            with ProcessPoolExecutor(max_workers=spec.workers) as pool:
                results = list(pool.map(run_single, *zip(*jobs)))
        else:
            results = [run_single(*job) for job in jobs]

        results.sort(key=lambda r: (order[r[0]["scheme"]], r[0]["ratio"], r[0]["seed"]))
        records = pd.DataFrame([r[0] for r in results])
        table_exp = exposure_table(records)
        table_eff = efficiency_table(records, spec.reference_ratio)

        log_paths = []
        if write:
            for record, log_dict in results:
                if log_dict is None:
                    continue
                path = out_dir / "logs" / log_filename(record["scheme"], record["ratio"], record["seed"])
                save_log(path, EpisodeLog.from_dict(log_dict))
                log_paths.append(str(path))
            write_table(out_dir / "summary.csv", records, SUMMARY_SCHEMA)
            write_table(out_dir / "table_exposure.csv", table_exp, TABLE_SCHEMA)
            write_table(out_dir / "table_efficiency.csv", table_eff, TABLE_SCHEMA)
            self._log("INFO", f"💾 결과 저장: {out_dir}")

        degenerate = int((records["note"] == "degenerate_benchmark").sum())
        if degenerate:
            self._log("WARN", f"⚠️ 퇴화 벤치마크 {degenerate}건 (exposure/eta = NaN)")
        failed = int(records["note"].astype(str).str.startswith(FAILED_PREFIX).sum())
        if failed:
            self._log("WARN", f"⚠️ 실패 에피소드 {failed}건 (summary 의 note 참조, 로그 미저장)")
        self._log("INFO", f"✅ 실험 완료: {len(records)} 에피소드")
        return ExperimentResult(records=records, exposure_table=table_exp,
                                efficiency_table=table_eff, log_paths=log_paths)


def run_experiment(spec: ExperimentSpec, write: bool = True,
                   log_fn: Optional[Callable[[str, str], None]] = None) -> ExperimentResult:
    return ExperimentRunner(log_fn).run(spec, write=write)


# ==========================
# verify
# ==========================

def _same(a, b) -> bool:
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


def verify_log(log: EpisodeLog) -> List[str]:
    """로그에서 S, U, J, exposure, eta 재계산 -> 요약과 다른 항목 목록"""
    summary = log.summary
    if not summary:
        raise LogFormatError("요약(summary)이 없는 로그입니다")
    metrics = evaluate_episode(log)
    recomputed = {
        "S": log.sensor_placements,
        "U": log.unique_placements,
        "J": incurred_cost(log),
        "exposure": metrics.exposure,
        "eta": metrics.eta,
    }
    problems = []
    for key, value in recomputed.items():
        if key in summary and not _same(summary[key], value):
            problems.append(f"{key}: 저장값 {summary[key]!r} != 재계산 {value!r}")
    if log.unique_placements > log.sensor_placements:
        problems.append(f"U({log.unique_placements}) > S({log.sensor_placements})")
    times = [a["t"] for a in log.arrivals]
    if times != sorted(times):
        problems.append("arrival 시간이 단조 증가하지 않습니다")
    return problems


# ==========================
# CLI 실행
# ==========================

def _category(exc: BaseException) -> Tuple[str, int]:
    if isinstance(exc, VerifyMismatch):
        return "VERIFY", EXIT_VERIFY
    if isinstance(exc, LogFormatError) or isinstance(exc, OSError):
        return "IO", EXIT_IO
    if isinstance(exc, (ConfigError, EpisodeError, SelectionError, ValidationError, GridError, ScenarioError)):
        return "CONFIG", EXIT_CONFIG
    if isinstance(exc, (TickBudgetExceeded, PlanningError, EstimationError, MetricsError,
                        InvalidVertexError, InvalidPathError)):
        return "SIMULATION", EXIT_SIMULATION
    if isinstance(exc, ValueError):
        return "CONFIG", EXIT_CONFIG
    return "SIMULATION", EXIT_SIMULATION


def _cmd_run(args) -> int:
    spec = load_config(args.config, args.set)
    if args.output_dir:
        spec.output_dir = args.output_dir
    result = run_experiment(spec, log_fn=lambda level, msg: print(msg))

    print("\n📈 normalized exposure (scheme x ratio)")
    for _, row in result.exposure_table.iterrows():
        print(f"  {row['scheme']:<12} ratio={row['ratio']:<5g} {row['exposure_mean']:.4f} ± {row['exposure_se']:.4f}")
    print(f"\n📊 efficiency @ ratio {spec.reference_ratio:g}")
    for _, row in result.efficiency_table.iterrows():
        print(f"  {row['scheme']:<12} S={row['S_mean']:.1f} U={row['U_mean']:.1f} eta={row['eta_mean']:.4f}")
    return EXIT_OK


def _cmd_snapshot(args) -> int:
    from snapshot_exporter import export_field_snapshots
    log = load_log(args.log)
    out_dir = args.output_dir or str(FilePath(args.log).with_suffix("")) + "_snapshots"
    paths = export_field_snapshots(log, args.times, out_dir)
    print(f"✅ 스냅샷 {len(paths)}개 파일 저장: {out_dir}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    bad = {}
    for path in args.logs:
        problems = verify_log(load_log(path))
        if problems:
            bad[path] = problems
        else:
            print(f"✅ {path}")
    if bad:
        lines = [f"{p}: {'; '.join(msgs)}" for p, msgs in bad.items()]
        raise VerifyMismatch(" | ".join(lines))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="A-CSCP Simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="실험 실행")
    p_run.add_argument("config", nargs="?", default=None, help="설정 파일 (key=value)")
    p_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="설정 덮어쓰기")
    p_run.add_argument("--output-dir", type=str, default="", help="출력 디렉터리")
    p_run.set_defaults(func=_cmd_run)

    p_snap = sub.add_parser("snapshot", help="격자 필드 스냅샷 파일 생성")
    p_snap.add_argument("log", help="에피소드 로그 (.json)")
    p_snap.add_argument("--times", type=int, nargs="+", required=True, help="스냅샷 틱")
    p_snap.add_argument("--output-dir", type=str, default="", help="출력 디렉터리")
    p_snap.set_defaults(func=_cmd_snapshot)

    p_ver = sub.add_parser("verify", help="로그 재계산 후 요약과 비교")
    p_ver.add_argument("logs", nargs="+", help="에피소드 로그 (.json)")
    p_ver.set_defaults(func=_cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        category, code = _category(e)
        print(f"ERROR[{category}] {e}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
