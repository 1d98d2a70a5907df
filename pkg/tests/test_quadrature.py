import numpy as np
import pytest
from nonlocal_cauchy import quadrature
from nonlocal_cauchy.kernel import calibrate_constant
from numpy.testing import assert_allclose
from scipy import integrate


def test_panel_rule_polynomials():
    r, w = quadrature.panel_rule([0.0, 1.0, 3.0], order=6)
    assert_allclose(np.sum(w * r**5), 3.0**6 / 6.0, rtol=1e-13)
    r, w = quadrature.panel_rule([1e-3, 1e-2, 1.0], order=12, geometric=True)
    assert_allclose(np.sum(w * r**-0.5), 2.0 * (1.0 - np.sqrt(1e-3)), rtol=1e-12)
    with pytest.raises(ValueError):
        quadrature.panel_rule([1.0, 0.5])


def test_power_weight_rule():
    r, w = quadrature.power_weight_rule(2.0, -0.5)
    assert_allclose(np.sum(w * r**2), 2.0**2.5 / 2.5, rtol=1e-12)


def test_sphere_rule():
    w, W = quadrature.sphere_rule(1)
    assert W.sum() == quadrature.sphere_area(1)
    w, W = quadrature.sphere_rule(2, 64)
    assert_allclose(W.sum(), quadrature.sphere_area(2))
    assert_allclose(np.linalg.norm(w, axis=-1), 1.0)
    assert_allclose((W[:, None] * w).sum(axis=0), 0.0, atol=1e-13)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("b", [0.3, 4.0, 50.0, -4.0])
def test_oscillatory_tail(alpha, b):
    f = lambda s: s ** (-1.0 - alpha)
    re, _ = integrate.quad(f, 1.0, np.inf, weight="cos", wvar=abs(b))
    im, _ = integrate.quad(f, 1.0, np.inf, weight="sin", wvar=abs(b))
    expected = re + 1j * np.sign(b) * im
    assert_allclose(quadrature.oscillatory_tail(np.array([b]), alpha)[0], expected, rtol=1e-8)


def test_oscillatory_tail_at_zero():
    assert quadrature.oscillatory_tail(np.array([0.0]), 0.8)[0] == 1.0 / 0.8


@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5])
def test_calibrated_constant_matches_closed_form(alpha):
    assert_allclose(calibrate_constant(alpha), quadrature.stable_constant(alpha), rtol=1e-6)
