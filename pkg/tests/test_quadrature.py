import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.polynomial.hermite_e import hermegauss

from gaussclosure.gaussian import BlockCovariance
from gaussclosure.quadrature import (covariance_factor, gauss_hermite, gaussian_nodes, hermite,
                                     integrate_gaussian, normal_moment, tensor_rule)

from conftest import spd


@pytest.mark.parametrize("order", [1, 2, 3, 5, 8, 20, 40])
def test_matches_numpy_hermegauss(order):
    r = gauss_hermite(order)
    x, w = hermegauss(order)
    np.testing.assert_allclose(r.nodes, x, atol=1e-12 * max(1, abs(x).max()))
    np.testing.assert_allclose(r.weights, w / np.sqrt(2 * np.pi), atol=1e-14)


def test_order_three_exact_values():
    r = gauss_hermite(3)
    np.testing.assert_allclose(r.nodes, [-np.sqrt(3), 0, np.sqrt(3)], atol=1e-14)
    np.testing.assert_allclose(r.weights, [1 / 6, 2 / 3, 1 / 6], atol=1e-15)


@pytest.mark.parametrize("order", [0, 65, -3])
def test_order_bounds(order):
    with pytest.raises(ValueError):
        gauss_hermite(order)


def test_normal_moments():
    assert [normal_moment(k) for k in range(7)] == [1, 0, 1, 0, 3, 0, 15]


@given(st.integers(1, 12))
def test_exact_to_degree_2n_minus_1(order):
    r = gauss_hermite(order)
    for k in range(2 * order):
        scale = r.weights @ np.abs(r.nodes) ** k
        assert r.weights @ r.nodes**k == pytest.approx(normal_moment(k), abs=1e-13 * max(1.0, scale))


def test_degree_2n_not_exact():
    r = gauss_hermite(3)
    assert abs(r.weights @ r.nodes**6 - 15) > 1


def test_hermite_orthogonality():
    r = gauss_hermite(10)
    G = np.array([[r.weights @ (hermite(a, r.nodes) * hermite(b, r.nodes)) for b in range(5)] for a in range(5)])
    np.testing.assert_allclose(G, np.diag([math.factorial(k) for k in range(5)]), atol=1e-12)


def test_tensor_rule_shape_and_weights():
    t = tensor_rule(3, 4)
    assert t.nodes.shape == (64, 3)
    assert t.weights.sum() == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ValueError):
        tensor_rule(9, 2)


@pytest.mark.parametrize("method", ["cholesky", "sqrtm"])
def test_gaussian_second_and_fourth_moments(rng, method):
    C = spd(rng, 3)
    rule = tensor_rule(3, 4)
    S = integrate_gaussian(lambda q: q[:, :, None] * q[:, None, :], C, rule, method=method)
    np.testing.assert_allclose(S, C, atol=1e-12)
    # Isserlis: E[q0^2 q1^2] = C00 C11 + 2 C01^2
    m = integrate_gaussian(lambda q: q[:, 0] ** 2 * q[:, 1] ** 2, C, rule, method=method)
    assert m == pytest.approx(C[0, 0] * C[1, 1] + 2 * C[0, 1] ** 2, rel=1e-12)


def test_accepts_block_covariance(rng):
    cov = BlockCovariance(np.stack([spd(rng, 2), spd(rng, 2)]))
    rule = tensor_rule(4, 3)
    S = integrate_gaussian(lambda q: q[:, :, None] * q[:, None, :], cov, rule)
    np.testing.assert_allclose(S, cov.full(), atol=1e-12)
    assert gaussian_nodes(cov, rule).shape == (81, 4)


def test_factor_rejects_indefinite():
    with pytest.raises(ValueError):
        covariance_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))
