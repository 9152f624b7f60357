import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal

from gaussclosure.gaussian import (BlockCovariance, NotPositiveDefinite, check_spd, conformation, density,
                                   extra_stress, log_density, stationary_covariance)

from conftest import spd


def test_density_matches_scipy(rng):
    cov = BlockCovariance(np.stack([spd(rng, 2), spd(rng, 2), spd(rng, 2)]))
    q = rng.standard_normal((11, 6))
    ref = multivariate_normal(np.zeros(6), cov.full()).logpdf(q)
    np.testing.assert_allclose(log_density(cov, q), ref, rtol=1e-12)
    np.testing.assert_allclose(density(cov, q[0]), np.exp(ref[0]), rtol=1e-12)


def test_identity_and_full():
    cov = BlockCovariance.identity(2, 3)
    assert cov.dim == 6 and cov.n_blocks == 2 and cov.d == 3
    np.testing.assert_array_equal(cov.full(), np.eye(6))
    assert cov.logdet() == 0.0


def test_from_full_rejects_cross_blocks():
    C = np.eye(4)
    C[0, 2] = C[2, 0] = 0.1
    with pytest.raises(ValueError):
        BlockCovariance.from_full(C, 2, 2)
    b = BlockCovariance.from_full(np.diag([1.0, 2, 3, 4]), 2, 2)
    np.testing.assert_array_equal(b.blocks[1], np.diag([3.0, 4]))


@pytest.mark.parametrize("bad", [
    [[[1.0, 0.5], [0.4, 1.0]]],
    [[[1.0, 2.0], [2.0, 1.0]]],
    [[[0.0, 0.0], [0.0, 1.0]]],
])
def test_rejects_non_spd(bad):
    with pytest.raises(ValueError):
        BlockCovariance(np.array(bad))


def test_immutable():
    cov = BlockCovariance.identity(1, 2)
    with pytest.raises(ValueError):
        cov.blocks[0, 0, 0] = 5.0


def test_conformation_and_stress():
    cov = BlockCovariance(np.array([[[3.0, 1.0], [1.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]))
    np.testing.assert_array_equal(conformation(cov), [[4.0, 1.0], [1.0, 2.0]])
    np.testing.assert_array_equal(extra_stress(cov), [[2.0, 1.0], [1.0, 0.0]])
    assert not extra_stress(BlockCovariance.identity(3, 2)).any()


def test_stationary_zero_flow_is_identity():
    np.testing.assert_allclose(stationary_covariance(np.zeros((3, 3)), 2.0, 1.0), np.eye(3), atol=1e-15)


def test_stationary_extension():
    # C = (lambda/2De) (lambda/2De - e)^-1 on the stretching axis
    C = stationary_covariance(np.diag([0.5, -0.5]), 2.0, 1.0)
    np.testing.assert_allclose(C, np.diag([2.0, 2.0 / 3.0]), atol=1e-14)


def test_stationary_blowup_and_asymmetry():
    with pytest.raises(NotPositiveDefinite):
        stationary_covariance(np.diag([1.5, -1.5]), 2.0, 1.0)
    with pytest.raises(ValueError):
        stationary_covariance(np.array([[0.0, 1.0], [0.0, 0.0]]), 2.0, 1.0)


@given(st.floats(0.1, 5.0), st.floats(0.1, 5.0), st.floats(-0.9, 0.9), st.floats(-0.9, 0.9))
def test_stationary_solves_steady_equation(lam, De, a, b):
    G = np.array([[a, b], [b, -a]]) * lam / (2 * De) / (1.0 + np.hypot(a, b))
    C = stationary_covariance(G, lam, De)
    M = lam / (2 * De) * np.eye(2) - G
    np.testing.assert_allclose(M @ C + C @ M.T, lam / De * np.eye(2), atol=1e-10 * np.abs(C).max())
    check_spd(C)
