import pytest
import yaml
from nonlocal_cauchy.env import Env, derive_seed, parse_override
from nonlocal_cauchy.errors import ConfigurationError


def test_env_config(tmp_path):
    # loads default config
    assert Env(config=None).model_config["Parameters"]["alpha"] == 1.5

    # merges a custom config file over the defaults
    c = str(tmp_path / "custom.yaml")
    with open(c, "w") as f:
        yaml.dump({"Test": 1, "Parameters": {"beta": 0.25}}, f)
    env = Env(config=c)
    assert env.model_config["Test"] == 1
    assert env.experiment.beta == 0.25
    assert env.experiment.alpha == 1.5

    # applies patches
    assert Env(config={"Parameters": {"lambda": 1}}).experiment.lam == 1.0

    # overrides win over the config
    env = Env(
        config={"Parameters": {"lambda": 1}},
        overrides={"Parameters": {"lambda": 3}},
    )
    assert env.experiment.lam == 3.0


def test_env_relative_config(tmp_path):
    with open(tmp_path / "relative.yaml", "w") as f:
        yaml.dump({"Parameters": {"dim": 2}}, f)
    env = Env(config="relative.yaml", config_prefix=str(tmp_path))
    assert env.experiment.dim == 2


@pytest.mark.parametrize(
    "update",
    [
        {"schema_version": 2},
        {"Parameters": {"alpha": 2.0}},
        {"Parameters": {"beta": 0.0}},
        {"Parameters": {"lambda": -1.0}},
        {"Parameters": {"dim": 3}},
        {"Kernel": {"preset": "no-such-kernel"}},
        {"Forcing": {"seeds": []}},
        {"Forcing": {"seeds": [1, 1]}},
        {"Forcing": {"J": 6, "points_per_axis": 64}},
        {"Solver": {"symbol_method": "fast"}},
        {"Random Seeds": {"Paths": 2}},
        {"Output": {"format": "hdf5"}},
    ],
)
def test_env_rejects(update):
    with pytest.raises(ConfigurationError):
        Env(config=update)


def test_env_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        Env(config=str(tmp_path / "missing.yaml"))


def test_experiment_specs(small_config):
    experiment = Env(config=small_config).experiment
    spec = experiment.kernel_spec()
    assert spec.name == "isotropic"
    assert spec.x_independent and spec.homogeneous
    assert experiment.kernel_spec(alpha=0.7).alpha == 0.7

    bspec = experiment.b_spec()
    assert bspec.is_zero
    assert bspec.alpha_prime == pytest.approx(0.75)

    suite = experiment.forcing_suite()
    assert len(suite) == 2
    assert all(len(f) == 1 and f.n == 32 for f in suite)

    options = experiment.picard_options()
    assert options["reference"] == "minorant"
    assert options["n_max"] == 20


def test_forcing_time_profile(small_config):
    small_config["Forcing"]["time_profile"] = "linear"
    small_config["Parameters"]["T"] = 2.0
    f = Env(config=small_config).experiment.forcing_suite()[0]
    assert list(f.times) == [0.0, 2.0]
    assert (f[1].values == 2.0 * f[0].values).all()


def test_forcing_seeds_follow_global_seed(small_config):
    a = Env(config=small_config).experiment.forcing_functions()
    small_config["Random Seeds"] = {"Global": 7}
    b = Env(config=small_config).experiment.forcing_functions()
    assert not (a[0].values == b[0].values).all()


def test_derive_seed():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert derive_seed(1, 2, 3) != derive_seed(1, 2, 4)
    assert derive_seed(1, 2, 3) != derive_seed(1, 5, 3)


def test_parse_override():
    assert parse_override("Parameters.alpha=0.5") == {"Parameters": {"alpha": 0.5}}
    assert parse_override("Kernel.preset=smooth-arc") == {
        "Kernel": {"preset": "smooth-arc"}
    }
    with pytest.raises(ConfigurationError):
        parse_override("Parameters.alpha")
