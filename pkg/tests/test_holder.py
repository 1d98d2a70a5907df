import numpy as np
import pytest
from nonlocal_cauchy.errors import ConfigurationError
from nonlocal_cauchy.holder import (
    GridFunction,
    GridSequence,
    composite_norm,
    equiv_norm,
    grid_points,
    holder_seminorm,
    norm_report,
    spectral_derivative,
    weierstrass_forcing,
    weierstrass_suite,
    zygmund_seminorm,
)
from nonlocal_cauchy.kernel import fractional_laplacian_constant
from numpy.testing import assert_allclose


def sine(n=64, k=1):
    return GridFunction.from_callable(lambda x: np.sin(k * x), n, 1)


def test_grid_function_validation():
    with pytest.raises(ConfigurationError):
        GridFunction(np.zeros(12))
    with pytest.raises(ConfigurationError):
        GridFunction(np.zeros((8, 4)))
    with pytest.raises(ConfigurationError):
        GridFunction(np.full(8, np.nan))
    u = GridFunction(np.zeros((8, 8)))
    assert u.dim == 2 and u.n == 8


def test_seminorms_of_sine():
    u = sine()
    h = holder_seminorm(u, 0.5)
    assert 2.0 / np.sqrt(np.pi) - 1e-12 <= h <= np.sqrt(2.0)
    z = zygmund_seminorm(u)
    assert 4.0 / np.pi - 1e-12 <= z <= 1.5
    assert zygmund_seminorm(u, max_shift_norm=0.5) <= z
    with pytest.raises(ConfigurationError):
        holder_seminorm(u, 1.0)


def test_seminorm_of_constant_vanishes():
    u = GridFunction(np.full(32, 3.0))
    assert holder_seminorm(u, 0.3) == 0.0
    assert composite_norm(u, 0.5) == 3.0


def test_spectral_derivative():
    u = sine()
    x = grid_points(64, 1)[..., 0]
    assert_allclose(spectral_derivative(u, (1,)).values, np.cos(x), atol=1e-12)
    assert_allclose(spectral_derivative(u, (2,)).values, -np.sin(x), atol=1e-12)


def test_composite_norm():
    u = sine()
    low = composite_norm(u, 0.5)
    high = composite_norm(u, 1.5)
    assert_allclose(low, 1.0 + holder_seminorm(u, 0.5))
    assert high >= 2.0
    with pytest.raises(ConfigurationError):
        composite_norm(u, 0.0)


def test_equiv_norm():
    u = sine()
    c = fractional_laplacian_constant(1.5, 1)
    assert_allclose(equiv_norm(u, 1.5, 0.5), 1.0 + c * holder_seminorm(u, 0.5), rtol=1e-10)


def test_norm_report():
    report = norm_report(sine(), betas=(0.5, 1.0), composite=(1.5,), alpha=1.2, beta=0.5)
    assert report.sup_norm == pytest.approx(1.0)
    assert not report.underresolved
    assert report.witnesses[0.5] is not None
    d = report.to_dict()
    assert set(d["seminorms"]) == {"0.5", "1.0"}
    assert d["equiv_alpha_beta"] > d["sup_norm"]
    assert norm_report(sine(k=30)).underresolved


def test_weierstrass_forcing():
    f = weierstrass_forcing(0.5, 4, seed=3, n=64)
    assert_allclose(composite_norm(f, 0.5), 1.0)
    g = weierstrass_forcing(0.5, 4, seed=3, n=64)
    assert (f.values == g.values).all()
    suite = weierstrass_suite(0.5, 4, [1, 2], n=64)
    assert not (suite[0].values == suite[1].values).all()
    two = weierstrass_forcing(0.7, 3, seed=1, n=32, dim=2)
    assert two.values.shape == (32, 32)
    with pytest.raises(ConfigurationError):
        weierstrass_forcing(0.5, 5, seed=1, n=64)
    with pytest.raises(ConfigurationError):
        weierstrass_suite(0.5, 3, [], n=64)


def test_grid_sequence_interpolation():
    u = sine()
    seq = GridSequence([0.0, 1.0], np.stack([u.values, 2.0 * u.values]))
    assert_allclose(seq.at(0.25).values, 1.25 * u.values)
    assert_allclose(seq.at(3.0).values, 2.0 * u.values)
    x = np.array([[0.1], [1.234], [5.0]])
    assert_allclose(seq.interpolate(0.0, x), np.sin(x[:, 0]), atol=1e-5)
    assert_allclose(
        seq.sample(np.array([0.0, 0.5, 1.0]), x),
        np.array([1.0, 1.5, 2.0]) * np.sin(x[:, 0]),
        atol=1e-5,
    )
    with pytest.raises(ConfigurationError):
        GridSequence([1.0, 0.0], np.stack([u.values, u.values]))


def test_grid_sequence_csv(tmp_path):
    u = sine(n=8)
    seq = GridSequence([0.0, 0.5], np.stack([u.values, u.values]))
    paths = seq.write_csv(str(tmp_path))
    assert len(paths) == 2
    assert (tmp_path / "u_stamps.csv").exists()


def test_spectral_roundtrip():
    u = weierstrass_forcing(0.5, 3, seed=1, n=32)
    assert u.roundtrip_error() <= 1e-10
    assert u.spectrum().shape == (32,)
