import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracnirenberg.errors import DomainError, ShapeError
from fracnirenberg.kfunctions import fd_derivative_tensor, flat_from_callable, parse_k
from fracnirenberg.sphere_spectral import SphereGrid


def test_constant_and_coordinate():
    K = parse_k("constant:2.5", 3)
    assert np.all(K.on_sphere(np.eye(4)) == 2.5)
    assert np.all(K(np.zeros((2, 3))) == 2.5)
    C = parse_k("coordinate:3 offset:2", 2)
    assert C.is_zonal()
    P = np.array([[0.0, 0.6, 0.8]])
    assert C.on_sphere(P)[0] == pytest.approx(2.8)
    assert not parse_k("coordinate:1 offset:2", 2).is_zonal()


def test_bump_descriptor():
    K = parse_k("bump:north,1.0,0.5", 2)
    assert K.is_zonal()
    assert K.on_sphere(np.array([[0, 0, 1.0]]))[0] == pytest.approx(2.0)
    far = K.on_sphere(np.array([[0, 0, -1.0]]))[0]
    assert far == pytest.approx(1 + math.exp(-4 / 0.5))
    off = parse_k("bump:1,0,0,0.5,0.3", 2)
    assert not off.is_zonal()
    with pytest.raises(ShapeError):
        off.sphere_function(SphereGrid.zonal(2, 8))
    assert off.sphere_function(SphereGrid.full(8)).values.max() <= 1.5


def test_polynomial_flat_derivatives_exact():
    K = parse_k("polynomial-flat:3,1,-2", 2)
    y = np.array([[0.4, -0.3]])
    assert K(y)[0] == pytest.approx(1 + 0.4 ** 3 - 2 * 0.3 ** 3)
    d1 = K.derivative(y, 1)[0]
    assert np.allclose(d1, [3 * 0.16, -2 * 3 * 0.09 * -1])
    d2 = K.derivative(y, 2)[0]
    assert np.allclose(d2, np.diag([6 * 0.4, -2 * 6 * 0.3]))
    d3 = K.derivative(y, 3)[0]
    assert d3[0, 0, 0] == pytest.approx(6) and d3[1, 1, 1] == pytest.approx(12)   # |y|^3 = -y^3 for y < 0
    assert d3[0, 0, 1] == 0
    with pytest.raises(DomainError):
        K.derivative(y, 4)


@given(st.lists(st.floats(-1, 1), min_size=2, max_size=2), st.integers(1, 3))
@settings(max_examples=30)
def test_finite_differences_agree_with_exact(y, s):
    K = parse_k("polynomial-flat:4.5,0.7,-1.3", 2)
    y = np.asarray([y])
    exact = K.derivative(y, s)
    fd = fd_derivative_tensor(K, y, s, 1e-3)
    assert np.allclose(fd, exact, atol=1e-4 * (1 + np.max(np.abs(exact))))


def test_callable_wrapper():
    K = flat_from_callable(2, lambda y: np.sum(y * y, -1), smoothness=math.inf)
    g = K.derivative(np.array([[0.5, 1.0]]), 1)
    assert np.allclose(g, [[1.0, 2.0]], atol=1e-8)
    with pytest.raises(DomainError):
        K.derivative(np.zeros((1, 2)), 4)
    with pytest.raises(DomainError):
        K.on_sphere(np.array([[0, 0, 1.0]]))


@pytest.mark.parametrize("text", ["constant:-1", "constant:x", "coordinate:5 offset:1", "coordinate:1",
                                  "bump:north,-1.5,0.5", "bump:north,1,0", "bump:1,1,1,1,1",
                                  "polynomial-flat:0.5,1,1", "polynomial-flat:3,1", "mystery:1"])
def test_bad_descriptors(text):
    with pytest.raises(DomainError):
        parse_k(text, 2)
