import pytest
from nonlocal_cauchy.env import Env
from nonlocal_cauchy.simulator._verify import check_schauder

SCHAUDER = {"pairs": [[1.5, 0.5]], "suite_ratio": 3.0, "refinement_drift": 0.25}


def test_schauder_refines_every_suite_member(small_config):
    experiment = Env(config=small_config).experiment
    result = check_schauder(experiment, SCHAUDER)
    (case,) = result["values"]["cases"]
    assert case["solver"] == "const"
    assert len(case["ratios"]) == len(case["refined_ratios"]) == 2
    drifts = [abs(r / c - 1.0) for r, c in zip(case["refined_ratios"], case["ratios"])]
    assert case["refinement_drift"] == pytest.approx(max(drifts))
    assert result["passed"]
