import warnings

import numpy as np
import pytest
from nonlocal_cauchy import operators
from nonlocal_cauchy.errors import AssumptionError, ConfigurationError, NumericalError
from nonlocal_cauchy.holder import GridFunction, grid_points, wavenumbers, weierstrass_forcing
from nonlocal_cauchy.kernel import fractional_laplacian_constant, presets
from nonlocal_cauchy.operators import (
    BOperatorSpec,
    JumpQuadrature,
    apply_A,
    apply_B,
    apply_L,
    frac_laplacian,
    calibrate_komatsu,
    komatsu_check,
    komatsu_mass,
    komatsu_kernel,
    komatsu_mass_exact,
    komatsu_transform,
    relative_bound_probe,
)
from numpy.testing import assert_allclose
from scipy import integrate, special


def cosine(n=32, k=2, dim=1):
    return GridFunction.from_callable(lambda *x: np.cos(k * x[0]), n, dim)


@pytest.mark.parametrize("alpha", [0.7, 1.0, 1.5])
@pytest.mark.parametrize("method", ["quadrature", "angular"])
def test_isotropic_operator_on_a_mode(isotropic, alpha, method):
    u = cosine()
    Au = apply_A(u, isotropic(alpha, 1), 0.0, method=method)
    expected = -fractional_laplacian_constant(alpha, 1) * 2.0**alpha * u.values
    assert_allclose(Au.values, expected, rtol=1e-6, atol=1e-9)


def test_variable_kernel_methods_agree():
    spec = presets()["sector-variable"](1.5, 1)
    u = weierstrass_forcing(0.5, 3, seed=2, n=32)
    quad = apply_A(u, spec, 0.0, method="quadrature")
    angular = apply_A(u, spec, 0.0, method="angular")
    scale = np.max(np.abs(angular.values))
    assert np.max(np.abs(quad.values - angular.values)) <= 1e-5 * scale


def test_difference_with_itself_vanishes(isotropic):
    spec = isotropic(1.5, 1)
    Au = apply_A(cosine(), spec, 0.0, reference=spec)
    assert_allclose(Au.values, 0.0, atol=1e-12)


def test_operator_in_two_dimensions(isotropic):
    u = cosine(n=16, k=1, dim=2)
    Au = apply_A(u, isotropic(1.5, 2), 0.0, method="angular", n_angles=256)
    expected = -fractional_laplacian_constant(1.5, 2) * u.values
    assert_allclose(Au.values, expected, rtol=1e-3, atol=1e-8)


def test_apply_A_rejects(isotropic):
    with pytest.raises(ConfigurationError):
        apply_A(cosine(), isotropic(1.5, 2), 0.0)
    with pytest.raises(ConfigurationError):
        apply_A(cosine(), isotropic(1.5, 1), 0.0, method="spectral")
    with pytest.raises(ConfigurationError):
        JumpQuadrature(32, 1, 1.5, "none")


def test_apply_B_lower_order_terms():
    u = GridFunction.from_callable(np.sin, 32, 1)
    x = grid_points(32, 1)[..., 0]
    drift = BOperatorSpec.from_expressions(1.5, 1, b=["1"])
    assert_allclose(apply_B(u, drift, 0.0).values, np.cos(x), atol=1e-12)
    # drift is dropped below order one
    assert BOperatorSpec.from_expressions(0.8, 1, b=["1"]).is_zero
    zero_order = BOperatorSpec.from_expressions(1.5, 1, l="2")
    assert_allclose(apply_B(u, zero_order, 0.0).values, 2.0 * u.values)
    assert_allclose(apply_B(u, BOperatorSpec.zero(1.5, 1), 0.0).values, 0.0)


def test_apply_B_jumps_match_isotropic_kernel(isotropic):
    u = cosine()
    bspec = BOperatorSpec.from_expressions(1.5, 1, alpha_prime=0.75, rho="1")
    expected = apply_A(u, isotropic(0.75, 1), 0.0, method="angular")
    assert_allclose(apply_B(u, bspec, 0.0).values, expected.values, rtol=1e-6, atol=1e-9)


def test_apply_L_adds_B(isotropic):
    u = cosine()
    spec = isotropic(1.5, 1)
    bspec = BOperatorSpec.from_expressions(1.5, 1, l="-1")
    Lu = apply_L(u, spec, bspec, 0.0)
    assert_allclose(Lu.values, apply_A(u, spec, 0.0).values - u.values)


def test_b_operator_validation():
    with pytest.raises(ConfigurationError):
        BOperatorSpec.from_expressions(1.0, 1, alpha_prime=1.2)
    with pytest.raises(ConfigurationError):
        BOperatorSpec.from_expressions(1.0, 1, rho="sqrt(")
    x = grid_points(8, 1).reshape(-1, 1)
    strict = BOperatorSpec.from_expressions(1.5, 1, l="cos(x1)/4", bigK=1.0)
    report = strict.validate([0.5], x)
    assert "B1(i)" in report.failures()
    loose = BOperatorSpec.from_expressions(
        1.5, 1, b=["sin(x1)/2"], rho="1/2 + cos(x1)/4", bigK=40.0
    )
    assert loose.validate([0.5], x).passed


def test_martingale_form():
    x = grid_points(8, 1).reshape(-1, 1)
    with pytest.raises(AssumptionError):
        BOperatorSpec.from_expressions(1.5, 1, l="1").require_martingale_form([0.0], x)
    with pytest.raises(AssumptionError):
        BOperatorSpec.from_expressions(1.5, 1, rho="cos(x1)").require_martingale_form(
            [0.0], x
        )
    BOperatorSpec.from_expressions(1.5, 1, rho="1 + cos(x1)/2").require_martingale_form(
        [0.0], x
    )


def test_relative_bound_probe():
    bspec = BOperatorSpec.from_expressions(
        1.5, 1, b=["sin(x1)/2"], rho="1/2 + cos(x1)/4", bigK=40.0
    )
    report = relative_bound_probe(bspec, 0.5, n=32, samples=4, kmax=4, seed=1)
    assert len(report.samples) == 4
    assert report.constant == max(s["C"] for s in report.samples)
    assert report.constant >= 0.0


@pytest.mark.parametrize("delta", [0.3, 0.6, 0.9])
@pytest.mark.parametrize("y", [0.3, -0.7, 2.9])
def test_komatsu_mass(delta, y):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        mass = komatsu_mass(delta, y)
    assert_allclose(mass, komatsu_mass_exact(delta, y), rtol=1e-7)
    assert komatsu_mass(delta, 0.0) == 0.0


def test_komatsu_mass_rejects_a_non_integrable_kernel(monkeypatch):
    monkeypatch.setattr(
        operators, "komatsu_kernel", lambda delta, y, z: np.abs(z) ** -1.5 - np.abs(z + y) ** -1.5
    )
    with pytest.raises(NumericalError):
        komatsu_mass(0.6, 0.3)


def test_komatsu_kernel_far_field():
    z = np.array([1e3, -1e6, 1e9])
    # (z + y)^{delta-1} - z^{delta-1} ~ (delta-1) y |z|^{delta-2} sign(z)
    expected = -0.4 * 0.5 * np.abs(z) ** -1.4 * np.sign(z)
    assert_allclose(komatsu_kernel(0.6, 0.5, z), expected, rtol=1e-3)
    assert np.isneginf(komatsu_kernel(0.6, 0.5, 0.0))
    assert np.isposinf(komatsu_kernel(0.6, 0.5, -0.5))


@pytest.mark.parametrize("delta, y", [(0.3, 0.3), (0.6, -0.7), (0.9, 2.9)])
def test_komatsu_transform(delta, y):
    n = 32
    j = wavenumbers(n, 1)[0]
    got = komatsu_transform(delta, y, n)
    assert got[0] == 0.0
    riesz = 2.0 * special.gamma(delta) * np.cos(0.5 * np.pi * delta)
    expected = (np.exp(1j * j[1:] * y) - 1.0) * np.abs(j[1:]) ** -delta * riesz
    assert_allclose(got[1:], expected, rtol=1e-7, atol=1e-8 * np.max(np.abs(expected)))


def test_komatsu_identity_out_of_sample():
    fit = weierstrass_forcing(0.5, 4, seed=1, n=64)
    test = weierstrass_forcing(0.5, 4, seed=2, n=64)
    constant = calibrate_komatsu(0.6, 0.3, fit)
    result = komatsu_check(0.6, 0.7, test, constant=constant)
    assert_allclose(constant, result.closed_form_constant, rtol=1e-6)
    assert result.residual <= 1e-6 * np.max(np.abs(test.values))
    assert_allclose(result.mass_ratio, 2.0**1.4 / 0.6, rtol=1e-6)
    with pytest.raises(ConfigurationError):
        komatsu_check(1.2, 0.3, test)


def test_komatsu_identity_fails_for_a_wrong_kernel(monkeypatch):
    fit = weierstrass_forcing(0.5, 4, seed=1, n=64)
    test = weierstrass_forcing(0.5, 4, seed=2, n=64)
    monkeypatch.setattr(
        operators, "komatsu_kernel", lambda delta, y, z: komatsu_kernel(delta + 0.3, y, z)
    )
    constant = calibrate_komatsu(0.6, 0.3, fit)
    result = komatsu_check(0.6, 0.7, test, constant=constant)
    assert result.residual > 1e-2 * np.max(np.abs(test.values))


def test_komatsu_reconstruction_rejects_a_non_integrable_kernel(monkeypatch):
    u = weierstrass_forcing(0.5, 3, seed=1, n=32)
    monkeypatch.setattr(
        operators, "komatsu_kernel", lambda delta, y, z: np.abs(z + y) ** -1.2 - np.abs(z) ** -1.2
    )
    with pytest.raises(NumericalError):
        calibrate_komatsu(0.6, 0.3, u)


def test_frac_laplacian():
    u = GridFunction.from_callable(lambda x: np.cos(3.0 * x), 32, 1)
    c = fractional_laplacian_constant(1.2, 1)
    assert_allclose(frac_laplacian(u, 1.2).values, -c * 3.0**1.2 * u.values, atol=1e-12)
    assert_allclose(frac_laplacian(GridFunction(np.ones(16)), 1.2).values, 0.0, atol=1e-14)


def test_operator_linearity_and_constants():
    spec = presets()["sector-variable"](1.5, 1)
    rng = np.random.default_rng(4)
    u = GridFunction(rng.standard_normal(32))
    v = GridFunction(rng.standard_normal(32))
    lhs = apply_A(u * 2.0 + v, spec, 0.0).values
    rhs = 2.0 * apply_A(u, spec, 0.0).values + apply_A(v, spec, 0.0).values
    assert_allclose(lhs, rhs, atol=1e-10 * np.max(np.abs(rhs)))
    assert_allclose(apply_A(GridFunction(np.ones(32)), spec, 0.0).values, 0.0, atol=1e-12)

    iso = presets()["isotropic"](1.5, 1)
    mixed = spec.mixture(iso, 1.0, 2.0)
    assert_allclose(
        apply_A(u, mixed, 0.0).values,
        apply_A(u, spec, 0.0).values + 2.0 * apply_A(u, iso, 0.0).values,
        atol=1e-10 * np.max(np.abs(lhs)),
    )


def test_translation_equivariance(isotropic):
    spec = presets()["sector-measurable"](1.5, 1)
    u = weierstrass_forcing(0.5, 3, seed=5, n=32)
    shifted = GridFunction(np.roll(u.values, 5))
    assert_allclose(
        apply_A(shifted, spec, 0.0).values,
        np.roll(apply_A(u, spec, 0.0).values, 5),
        atol=1e-10,
    )
