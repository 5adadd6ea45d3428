import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from fracnirenberg.constants import sphere_area
from fracnirenberg.errors import ResolutionError, ShapeError
from fracnirenberg.sphere_spectral import (GridKind, SpectralCoeffs, SphereFunction, SphereGrid, analyze,
                                           apply_laplacian, delta_coeffs, evaluate_coeffs, full_index,
                                           gegenbauer_eval, synthesize, zonal_basis, zonal_derivative)


@pytest.mark.parametrize("n", [2, 3, 4, 6])
def test_grid_integrates_area_and_polynomials(n):
    g = SphereGrid.zonal(n, 20)
    assert g.area() == pytest.approx(sphere_area(n), rel=1e-13)
    # int x^2 over S^n is |S^n|/(n+1)
    assert g.integrate(g.x ** 2) == pytest.approx(sphere_area(n) / (n + 1), rel=1e-13)


def test_full_grid_area_and_moments():
    g = SphereGrid.full(16)
    P = g.points
    assert g.area() == pytest.approx(4 * math.pi, rel=1e-14)
    assert g.integrate(P[..., 0] ** 2) == pytest.approx(4 * math.pi / 3, rel=1e-13)
    assert g.integrate(P[..., 0] * P[..., 1]) == pytest.approx(0, abs=1e-14)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_gegenbauer_against_scipy(n):
    x = np.linspace(-1, 1, 17)
    nu = (n - 1) / 2
    for k in range(12):
        assert np.allclose(gegenbauer_eval(k, nu, x), special.eval_gegenbauer(k, nu, x), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_zonal_basis_orthonormal(n):
    g = SphereGrid.zonal(n, 40)
    Y = zonal_basis(30, n, g.x)
    gram = Y.T @ (g.quad_weights[:, None] * Y)
    assert np.allclose(gram, np.eye(31), atol=1e-12)


def test_zonal_basis_is_scaled_gegenbauer():
    n = 3
    x = np.linspace(-1, 1, 9)
    Y = zonal_basis(6, n, x)
    for k in range(7):
        C = special.eval_gegenbauer(k, (n - 1) / 2, x)
        ok = np.abs(C) > 1e-8
        ratio = Y[ok, k] / C[ok]
        assert np.ptp(ratio) < 1e-12 * np.max(np.abs(ratio))


def test_full_basis_orthonormal():
    km = 8
    g = SphereGrid.full(km + 1)
    cols = []
    idx = np.argwhere(full_index(km))
    for k, j in idx:
        cols.append(synthesize(delta_coeffs(2, GridKind.FULL, km, int(k), int(j) - km), g).values.ravel())
    Y = np.stack(cols, axis=1)
    gram = Y.T @ (g.quad_weights.ravel()[:, None] * Y)
    assert np.allclose(gram, np.eye(len(cols)), atol=1e-12)


def _random_zonal(rng, n, km, g):
    c = rng.normal(size=km + 1)
    return SpectralCoeffs(n, GridKind.ZONAL, km, c), synthesize(SpectralCoeffs(n, GridKind.ZONAL, km, c), g)


@given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_zonal_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    g = SphereGrid.zonal(n, 24)
    c, f = _random_zonal(rng, n, 23, g)
    back = analyze(f, 23)
    assert np.allclose(back.coeffs, c.coeffs, atol=1e-11)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=15, deadline=None)
def test_full_round_trip(seed):
    rng = np.random.default_rng(seed)
    km = 10
    g = SphereGrid.full(km + 1)
    c = rng.normal(size=(km + 1, 2 * km + 1)) * full_index(km)
    f = synthesize(SpectralCoeffs(2, GridKind.FULL, km, c), g)
    assert np.allclose(analyze(f, km).coeffs, c, atol=1e-11)
    # off-grid evaluation agrees with the closed expansion
    P = rng.normal(size=(5, 3))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    v1 = evaluate_coeffs(SpectralCoeffs(2, GridKind.FULL, km, c), P)
    v2 = SphereFunction(g, f.values).evaluate(P)
    assert np.allclose(v1, v2, atol=1e-10)


def test_parseval():
    rng = np.random.default_rng(3)
    g = SphereGrid.zonal(3, 30)
    c, f = _random_zonal(rng, 3, 20, g)
    assert g.integrate(f.values ** 2) == pytest.approx(np.sum(c.degree_energy()), rel=1e-12)
    assert c.mean() == pytest.approx(f.integrate() / g.area(), rel=1e-12, abs=1e-14)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_laplacian_of_coordinate(n):
    g = SphereGrid.zonal(n, 16)
    f = SphereFunction(g, g.x ** 2)
    # Delta x^2 = 2 - 2(n+1) x^2 on S^n (x restricted from a quadratic)
    assert np.allclose(apply_laplacian(f).values, 2 - 2 * (n + 1) * g.x ** 2, atol=1e-11)


def test_zonal_derivative_of_polynomial():
    g = SphereGrid.zonal(3, 12)
    f = SphereFunction(g, g.x ** 3 - 2 * g.x)
    assert np.allclose(zonal_derivative(f), 3 * g.x ** 2 - 2, atol=1e-11)


def test_resolution_and_shape_errors():
    g = SphereGrid.zonal(2, 8)
    f = SphereFunction(g, np.ones(8))
    with pytest.raises(ResolutionError):
        analyze(f, 8)
    with pytest.raises(ShapeError):
        SphereFunction(g, np.ones(9))
    with pytest.raises(ShapeError):
        synthesize(SpectralCoeffs(3, GridKind.ZONAL, 3, np.ones(4)), g)
    with pytest.raises(ShapeError):
        zonal_derivative(SphereFunction(SphereGrid.full(4), np.ones((4, 8))))


def test_exact_form_used_off_grid():
    g = SphereGrid.zonal(2, 4)
    f = SphereFunction.from_callable(g, lambda P: np.exp(P[..., -1]))
    P = np.array([[0.6, 0.0, 0.8]])
    assert f.evaluate(P)[0] == pytest.approx(math.exp(0.8), rel=1e-15)


def test_legendre_example_value():
    assert gegenbauer_eval(2, 0.5, 0.5) == pytest.approx(-0.125, abs=1e-15)
    assert gegenbauer_eval(1, 1.5, 0.3) == pytest.approx(0.9, abs=1e-15)


@pytest.mark.parametrize("n", [2, 3, 5])
def test_gauss_nodes_are_accurate(n):
    # polished rules keep the discrete Gram matrix at the rounding floor
    g = SphereGrid.zonal(n, 257)
    B = g.zonal_table(256)
    G = (B * (g.weights * g.lon_factor)[:, None]).T @ B
    assert np.max(np.abs(G - np.eye(257))) < 1e-13


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20, deadline=None)
def test_rotation_preserves_degree_energy(seed):
    rng = np.random.default_rng(seed)
    km = 7
    g = SphereGrid.full(km + 1)
    c = SpectralCoeffs(2, GridKind.FULL, km, rng.normal(size=(km + 1, 2 * km + 1)) * full_index(km))
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    rotated = SphereFunction(g, evaluate_coeffs(c, g.points.reshape(-1, 3) @ Q.T).reshape(g.shape))
    assert np.allclose(analyze(rotated, km).degree_energy(), c.degree_energy(), atol=1e-10)
