import json

import numpy as np
import pytest
from nonlocal_cauchy.const_solver import (
    SolveConfig,
    closed_form_mode,
    heat_kernel,
    phi_functions,
    resolve,
    sup_bound_constant,
    verify_defs_identity,
)
from nonlocal_cauchy.errors import ConfigurationError
from nonlocal_cauchy.holder import GridFunction, GridSequence, grid_points
from nonlocal_cauchy.kernel import kernel_from_config, presets, symbol_table
from numpy.testing import assert_allclose


def constant_in_time(values):
    return GridSequence([0.0], np.asarray(values)[None])


def test_phi_functions():
    z = np.array([0.0, 1e-9, -2.0, 0.5 + 3.0j, -60.0])
    e, phi1, phi2 = phi_functions(z)
    assert_allclose(e, np.exp(z))
    assert_allclose(phi1[0], 1.0, rtol=1e-12)
    assert_allclose(phi2[0], 0.5, rtol=1e-12)
    assert_allclose(phi1[2:], np.expm1(z[2:]) / z[2:], rtol=1e-10)
    assert_allclose(phi2[2:], (np.expm1(z[2:]) - z[2:]) / z[2:] ** 2, rtol=1e-10)


def test_closed_form_mode():
    t = np.array([0.0, 0.5, 1.0])
    assert_allclose(closed_form_mode(0.0, 0.0, t), t)
    assert_allclose(closed_form_mode(2.0, 0.0, t), (1.0 - np.exp(-2.0 * t)) / 2.0)


def test_heat_kernel(isotropic):
    spec = isotropic(1.5, 1)
    table = symbol_table(spec, 64, 1.0)
    first = heat_kernel(spec, 0.0, 0.5, 64, 1.0, table)
    second = heat_kernel(spec, 0.5, 1.0, 64, 1.0, table)
    whole = heat_kernel(spec, 0.0, 1.0, 64, 1.0, table)
    for h in (first, second, whole):
        assert_allclose(h.mass, 1.0, atol=1e-12)
        assert h.min_ratio >= -1e-6
    assert_allclose(whole.K, first.K * second.K, atol=1e-12)
    with pytest.raises(ConfigurationError):
        heat_kernel(spec, 0.5, 0.5, 64)
    with pytest.raises(ConfigurationError):
        heat_kernel(presets()["sector-variable"](1.5, 1), 0.0, 1.0, 64)


@pytest.mark.parametrize("lam", [0.0, 1.0, 10.0])
def test_single_mode_matches_closed_form(isotropic, lam):
    spec = isotropic(1.2, 1)
    x = grid_points(16, 1)[..., 0]
    config = SolveConfig(lam=lam, T=1.0, n_t=8, forcing=constant_in_time(np.cos(2.0 * x)))
    solution = resolve(spec, config)
    c_k = -complex(solution.table.psi[0, 2])
    amplitude = closed_form_mode(lam, c_k, solution.u.times)
    expected = np.real(amplitude[:, None] * np.exp(2j * x)[None])
    assert_allclose(solution.u.values, expected, atol=1e-10)


def test_trapezoidal_scheme_is_second_order(isotropic):
    spec = isotropic(1.2, 1)
    x = grid_points(16, 1)[..., 0]
    errors = []
    for n_t in (16, 32):
        config = SolveConfig(
            lam=1.0, T=1.0, n_t=n_t, forcing=constant_in_time(np.cos(2.0 * x)),
            time_scheme="trapezoidal",
        )
        solution = resolve(spec, config)
        c_k = -complex(solution.table.psi[0, 2])
        amplitude = closed_form_mode(1.0, c_k, solution.u.times)
        expected = np.real(amplitude[:, None] * np.exp(2j * x)[None])
        errors.append(np.max(np.abs(solution.u.values - expected)))
    assert 0.0 < errors[1] < 1e-3
    assert 3.0 < errors[0] / errors[1] < 5.0


def test_breakpoints_split_the_steps():
    spec = kernel_from_config(
        {"preset": "isotropic", "breakpoints": [0.3]}, alpha=1.5, dim=1
    )
    config = SolveConfig(lam=1.0, T=1.0, n_t=4, forcing=constant_in_time(np.ones(16)))
    stamps = config.stamps(spec)
    assert 0.3 in stamps
    assert resolve(spec, config).table.psi.shape[0] == 2


def test_sup_bound_constant_for_constant_forcing(isotropic):
    spec = isotropic(1.5, 1)
    config = SolveConfig(lam=5.0, T=1.0, n_t=4, forcing=constant_in_time(np.ones(16)))
    solution = resolve(spec, config)
    assert_allclose(solution.sup_norm(), (1.0 - np.exp(-5.0)) / 5.0, rtol=1e-10)
    assert_allclose(
        sup_bound_constant(solution, config.forcing), 1.0 - np.exp(-5.0), rtol=1e-10
    )


def test_linear_forcing_in_time(isotropic):
    spec = isotropic(1.5, 1)
    forcing = GridSequence([0.0, 1.0], np.stack([np.zeros(16), np.ones(16)]))
    config = SolveConfig(lam=0.0, T=1.0, n_t=4, forcing=forcing)
    solution = resolve(spec, config)
    # u' = t for the zero mode
    assert_allclose(solution.final.values, 0.5, rtol=1e-10)


def test_nonnegative_forcing_gives_nonnegative_solution():
    spec = presets()["sector-measurable"](1.5, 1)
    x = grid_points(32, 1)[..., 0]
    f = 1.0 + np.cos(3.0 * x)
    config = SolveConfig(lam=1.0, T=1.0, n_t=8, forcing=constant_in_time(f))
    assert np.min(resolve(spec, config).u.values) >= -1e-8


def test_solution_identity_converges_in_time(isotropic):
    spec = isotropic(1.5, 1)
    x = grid_points(32, 1)[..., 0]
    f = constant_in_time(np.cos(x) + 0.5 * np.sin(3.0 * x))
    residuals = []
    for n_t in (8, 32):
        config = SolveConfig(lam=1.0, T=1.0, n_t=n_t, forcing=f)
        residuals.append(verify_defs_identity(resolve(spec, config), spec, config))
    assert residuals[1] < residuals[0] / 4.0


def test_solve_config_rejects():
    f = constant_in_time(np.ones(8))
    with pytest.raises(ConfigurationError):
        SolveConfig(lam=-1.0, T=1.0, n_t=4, forcing=f)
    with pytest.raises(ConfigurationError):
        SolveConfig(lam=1.0, T=0.0, n_t=4, forcing=f)
    with pytest.raises(ConfigurationError):
        SolveConfig(lam=1.0, T=1.0, n_t=0, forcing=f)
    with pytest.raises(ConfigurationError):
        SolveConfig(lam=1.0, T=1.0, n_t=4, forcing=f, time_scheme="euler")
    short = GridSequence([0.0, 0.5], np.stack([np.ones(8), np.ones(8)]))
    with pytest.raises(ConfigurationError):
        SolveConfig(lam=1.0, T=1.0, n_t=4, forcing=short)


def test_resolve_rejects_x_dependence():
    spec = presets()["sector-variable"](1.5, 1)
    config = SolveConfig(lam=1.0, T=1.0, n_t=4, forcing=constant_in_time(np.ones(8)))
    with pytest.raises(ConfigurationError):
        resolve(spec, config)


def test_solution_write(tmp_path, isotropic):
    spec = isotropic(1.5, 1)
    config = SolveConfig(lam=1.0, T=1.0, n_t=2, forcing=constant_in_time(np.ones(8)))
    solution = resolve(spec, config)
    (path,) = solution.write(str(tmp_path), fmt="json")
    with open(path) as f:
        data = json.load(f)
    assert data["lambda"] == 1.0
    assert len(data["times"]) == 3
    assert len(solution.write(str(tmp_path / "csv"), fmt="csv")) == 3
    with pytest.raises(ConfigurationError):
        solution.write(str(tmp_path), fmt="npz")
