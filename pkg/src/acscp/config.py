"""
A-CSCP Simulator - Configuration (Global)

모델 상수는 모두 여기서 정의하고 환경변수(.env)로 덮어쓸 수 있습니다.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

# Paths
BASE_DIR = Path(__file__).parent
PROJECT_ROOT = BASE_DIR.parent.parent
DATA_DIR = PROJECT_ROOT / "data"
OUTPUT_DIR = Path(os.getenv("ACSCP_OUTPUT_DIR", str(DATA_DIR / "runs")))

# Logging
LOG_LEVEL = os.getenv("ACSCP_LOG_LEVEL", "WARNING")

# ======================
# 작업공간 (Workspace)
# ======================
GRID_HALF_WIDTH = float(os.getenv("ACSCP_GRID_HALF_WIDTH", "1.0"))   # [-w, w]^2
GRID_SIDE_COUNT = int(os.getenv("ACSCP_GRID_SIDE_COUNT", "11"))      # N_g = 121

# ======================
# 위협장 (Threat field)
# ======================
THREAT_NUM_PARAMS = int(os.getenv("ACSCP_THREAT_N_P", "49"))         # 7x7 basis lattice
THREAT_RHO = float(os.getenv("ACSCP_THREAT_RHO", "0.999"))           # A = rho * I (per step)
THREAT_SIGMA_P = float(os.getenv("ACSCP_THREAT_SIGMA_P", "1e-4"))    # Q = sigma_P * I
THREAT_THETA_MAX = float(os.getenv("ACSCP_THREAT_THETA_MAX", "5.0")) # Theta_0 ~ U[0, theta_max]
COVERAGE_FLOOR = 1e-3
POSITIVITY_FLOOR = 1e-3
POSITIVITY_MAX_REDRAWS = 100

# ======================
# 추정 (Estimation)
# ======================
PRIOR_CHI = float(os.getenv("ACSCP_PRIOR_CHI", "1e3"))               # P_0 = chi * I
SIGMA_R = float(os.getenv("ACSCP_SIGMA_R", "0.1"))                   # R = sigma_R^2 * I
SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-8

# ======================
# 센서 / Ego 차량
# ======================
SENSOR_COUNT = int(os.getenv("ACSCP_SENSOR_COUNT", "2"))
EGO_SPEED = float(os.getenv("ACSCP_EGO_SPEED", "0.01"))
SENSOR_SPEED = float(os.getenv("ACSCP_SENSOR_SPEED", "0.05"))        # u_sen / u_ego = 5
TICKS_PER_EDGE = int(os.getenv("ACSCP_TICKS_PER_EDGE", "20"))
TICK_BUDGET = int(os.getenv("ACSCP_TICK_BUDGET", "1000000"))
WARMUP_TICKS = int(os.getenv("ACSCP_WARMUP_TICKS", "0"))              # ego 출발 전 센서만 움직이는 틱 수

# ======================
# 보상 / CRMI
# ======================
REWARD_GAMMA = float(os.getenv("ACSCP_REWARD_GAMMA", "1.0"))
ALPHA_MODE = os.getenv("ACSCP_ALPHA_MODE", "auto")                   # auto / fixed / zero
VARIANCE_FLOOR = 1e-12
CRMI_CAP = 30.0                                                      # nats
SCHUR_TOL = 1e-10
CRMI_HORIZON = os.getenv("ACSCP_CRMI_HORIZON", "one_step")           # one_step / travel

# ======================
# 계획 / 벤치마크
# ======================
PLAN_MODE = os.getenv("ACSCP_PLAN_MODE", "frozen")                   # frozen / propagated
BENCHMARK_TIME_VARYING = os.getenv("ACSCP_BENCHMARK_TIME_VARYING", "0") == "1"
WORST_CASE_EXHAUSTIVE_MAX_VERTICES = 25

# ======================
# 실험 (Harness)
# ======================
DEFAULT_SEED = int(os.getenv("ACSCP_SEED", "0"))
MAX_WORKERS = int(os.getenv("ACSCP_MAX_WORKERS", "1"))
DEFAULT_SPEED_RATIOS = [5.0, 10.0, 50.0]
REFERENCE_SPEED_RATIO = 5.0

# 기본 비교 스킴: (이름, alpha_mode, gamma)
DEFAULT_SCHEMES = [
    ("crmi_only", "zero", 1.0),
    ("gamma_1", "auto", 1.0),
    ("gamma_0.5", "auto", 0.5),
    ("gamma_0", "auto", 0.0),
]

SCHEMA_VERSION = 1
