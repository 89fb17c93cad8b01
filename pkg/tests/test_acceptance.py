"""
앙상블 수준 추세 검증 (기본 11x11 / N_P=49 / 센서 2대 설정)

pytest -m slow 로 실행. 수 분 이상 소요.
"""
import numpy as np
import pytest

from harness import build_spec, run_experiment

pytestmark = pytest.mark.slow

SEEDS = "0-9"


@pytest.fixture(scope="module")
def ensemble():
    spec = build_spec({
        "experiment.schemes": "standard",
        "experiment.ratios": "5,10,50",
        "experiment.seeds": SEEDS,
        "experiment.workers": "4",
    })
    return run_experiment(spec, write=False).records


@pytest.mark.xfail(strict=False, reason=(
    "10 시드 평균으로는 속도비 추세가 잡음에 묻힘: ratio 50 평균 exposure 0.91~0.92, "
    "gamma_1 은 ratio 10 -> 50 에서 0.695 -> 0.678 (DESIGN.md 미해결 질문 참조)"
))
def test_exposure_non_decreasing_in_speed_ratio(ensemble):
    table = ensemble.groupby(["scheme", "ratio"])["exposure"].mean().unstack("ratio")
    for scheme, row in table.iterrows():
        values = [row[5.0], row[10.0], row[50.0]]
        assert values[0] <= values[1] + 1e-9 and values[1] <= values[2] + 1e-9, scheme
        assert values[2] >= 0.95, scheme


def test_reconfiguration_cost_improves_efficiency(ensemble):
    ref = ensemble[ensemble["ratio"] == 5.0]
    eta = ref.pivot(index="seed", columns="scheme", values="eta")
    assert eta["gamma_1"].mean() > eta["crmi_only"].mean()
    wins = int(np.sum(eta["gamma_1"] > eta["crmi_only"]))
    assert wins > len(eta) // 2


def test_static_truth_converges_to_true_optimal():
    spec = build_spec({
        "dynamics.rho": "1.0",
        "threat.sigma_P": "0",
        "noise.sigma_R": "1e-3",
        "run.warmup_ticks": "200",
        "experiment.schemes": "gamma_1:auto:1.0",
        "experiment.ratios": "50",
        "experiment.seeds": SEEDS,
        "experiment.workers": "4",
    })
    records = run_experiment(spec, write=False).records
    assert not records["note"].astype(str).str.startswith("failed").any()
    assert int((records["exposure"] >= 0.98).sum()) >= 8
