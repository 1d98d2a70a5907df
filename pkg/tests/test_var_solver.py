import dataclasses

import numpy as np
import pytest
from nonlocal_cauchy.const_solver import SolveConfig, resolve
from nonlocal_cauchy.errors import ConfigurationError, NonConvergenceError
from nonlocal_cauchy.holder import GridSequence, weierstrass_forcing
from nonlocal_cauchy.kernel import kernel_from_config, presets
from nonlocal_cauchy.operators import BOperatorSpec
from nonlocal_cauchy.utils import read_csv
from nonlocal_cauchy.var_solver import (
    IterationState,
    calibrate_lambda,
    picard_solve,
    reference_kernel,
    shift_forcing,
    shift_solution,
    write_iteration,
)
from numpy.testing import assert_allclose


def forcing(n=16):
    f = weierstrass_forcing(0.5, 2, seed=1, n=n)
    return GridSequence([0.0], f.values[None])


def config(lam, n_t=8):
    return SolveConfig(lam=lam, T=1.0, n_t=n_t, forcing=forcing())


def test_iteration_state():
    state = IterationState(lam=1.0, reference="minorant")
    assert np.isnan(state.record(2.0))
    assert state.record(1.0) == 0.5
    assert state.q_hat == 0.5
    assert state.iterations == 2
    with pytest.raises(NonConvergenceError):
        state.record(float("nan"))


def test_self_reference_is_the_constant_solver(isotropic):
    spec = isotropic(1.5, 1)
    state = picard_solve(spec, None, config(5.0), reference="self")
    assert state.converged and state.iterations == 1
    assert_allclose(state.u.u.values, resolve(spec, config(5.0)).u.values, atol=1e-14)
    with pytest.raises(ConfigurationError):
        reference_kernel(presets()["sector-variable"](1.5, 1), "self", 16)
    with pytest.raises(ConfigurationError):
        reference_kernel(spec, "median", 16)


def test_variable_kernel_converges():
    spec = presets()["sector-variable"](1.5, 1)
    state = picard_solve(spec, None, config(20.0), tol=1e-8, verify=False)
    assert state.converged
    assert state.q_hat < 0.8
    assert state.residuals[-1] <= 1e-8 * state.residuals[0]


def test_reference_kernels_share_the_trapezoidal_limit():
    spec = presets()["sector-variable"](1.5, 1)
    tol = 1e-6
    cfg = dataclasses.replace(config(20.0), time_scheme="trapezoidal")
    minorant, average = [
        picard_solve(spec, None, cfg, reference=r, tol=0.1 * tol, verify=False).u.u.values
        for r in ("minorant", "x-average")
    ]
    scale = np.max(np.abs(minorant))
    assert np.max(np.abs(minorant - average)) <= 5.0 * tol * scale


def test_lower_order_part_is_iterated(isotropic):
    spec = isotropic(1.5, 1)
    bspec = BOperatorSpec.from_expressions(1.5, 1, l="-1")
    state = picard_solve(spec, bspec, config(4.0, n_t=64), tol=1e-10, verify=False)
    assert state.converged
    # l = -1 shifts lambda by one
    expected = resolve(spec, config(5.0, n_t=64))
    assert_allclose(state.u.u.values, expected.u.values, atol=2e-3 * expected.sup_norm())


def test_strong_perturbation_does_not_contract(tmp_path):
    spec = kernel_from_config(
        {"m0": "1", "m": "1 + 10*(1 + sin(x1))", "eta": 0.5, "bigK": 25.0},
        alpha=1.5,
        dim=1,
    )
    log = str(tmp_path / "residuals.csv")
    with pytest.raises(NonConvergenceError) as e:
        picard_solve(spec, None, config(0.0), warmup=1, n_max=20, verify=False, log_path=log)
    assert e.value.q_hat >= 1.0
    assert e.value.lam == 0.0
    assert len(read_csv(log)["residual"]) >= 3


def test_shift_helpers(isotropic):
    spec = isotropic(1.5, 1)
    cfg = config(3.0, n_t=64)
    times = cfg.stamps(spec)
    shifted = shift_forcing(cfg.forcing, 2.0, times)
    assert_allclose(shifted.at(1.0).values, np.exp(-2.0) * cfg.forcing[0].values)
    # e^{-kappa t} u solves the problem at lambda + kappa
    direct = resolve(spec, cfg)
    moved = resolve(spec, cfg.with_lambda(5.0).with_forcing(shifted))
    back = shift_solution(moved, 2.0, 3.0)
    assert back.lam == 3.0
    assert_allclose(back.u.values, direct.u.values, atol=1e-2 * direct.sup_norm())


def test_calibrate_lambda(tmp_path):
    spec = presets()["sector-variable"](1.5, 1)
    result = calibrate_lambda(spec, None, config(0.5), tol=1e-8)
    lams = [p["lambda"] for p in result.probes]
    assert lams == [2.0**i for i in range(len(lams))]
    assert result.probes[-1]["contracts"]
    assert result.lam0 == lams[-1]
    assert result.solution.lam == 0.5
    assert result.state.defs_residual is not None
    assert result.to_dict()["lambda0"] == result.lam0

    state = picard_solve(spec, None, config(20.0), verify=False)
    paths = write_iteration(state, str(tmp_path))
    assert (tmp_path / "u.json").exists()
    assert paths[-1].endswith("residuals.csv")
