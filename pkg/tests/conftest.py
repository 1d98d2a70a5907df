import pytest
import yaml
from nonlocal_cauchy.kernel import presets


@pytest.fixture
def isotropic():
    def make(alpha=1.5, dim=1):
        return presets()["isotropic"](alpha, dim)

    return make


@pytest.fixture
def small_config():
    """Updates to the default configuration that keep every solve small."""
    return {
        "Experiment Name": "small",
        "Parameters": {"alpha": 1.5, "beta": 0.5, "lambda": 5.0, "T": 1.0, "dim": 1},
        "Kernel": {"preset": "isotropic"},
        "Forcing": {"points_per_axis": 32, "J": 3, "seeds": [1, 2]},
        "Solver": {"time_cells": 8, "n_max": 20},
        "Simulation": {"block_size": 50, "dt_max": 0.05, "field_points": 16},
    }


@pytest.fixture
def config_file(tmp_path, small_config):
    path = tmp_path / "experiment.yaml"
    with open(path, "w") as f:
        yaml.dump(small_config, f)
    return str(path)
