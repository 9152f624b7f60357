import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaussclosure.chain import (ChainSpec, chain_modes, from_normal_coords, normal_modes, rouse_eigenvalues,
                                rouse_matrix, to_normal_coords)


def test_rouse_matrix_small():
    R = rouse_matrix(ChainSpec(3, 2))
    assert np.array_equal(R, [[2, -1, 0], [-1, 2, -1], [0, -1, 2]])


def test_eigenvalues_closed_form_n3():
    lam = chain_modes(ChainSpec(3, 1)).eigenvalues
    np.testing.assert_allclose(lam, [2 - np.sqrt(2), 2, 2 + np.sqrt(2)], atol=1e-14)


def test_single_spring():
    m = chain_modes(ChainSpec(1, 3))
    assert m.eigenvalues.tolist() == [2.0]
    assert m.modal_matrix.tolist() == [[1.0]]


@given(st.integers(1, 40))
def test_modes_match_formula_and_reconstruct(n):
    m = chain_modes(ChainSpec(n, 2))
    np.testing.assert_allclose(m.eigenvalues, rouse_eigenvalues(n), atol=1e-12)
    assert np.all(np.diff(m.eigenvalues) > 0)
    Q = m.modal_matrix
    np.testing.assert_allclose(Q @ Q.T, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(m.reconstruct(), rouse_matrix(ChainSpec(n, 2)), atol=1e-12)


def test_sign_convention():
    Q = chain_modes(ChainSpec(6, 1)).modal_matrix
    for row in Q:
        nz = row[np.abs(row) > 1e-12]
        assert nz[0] > 0


def test_mode_shapes_are_sines():
    n = 5
    Q = chain_modes(ChainSpec(n, 1)).modal_matrix
    k = np.arange(1, n + 1)
    expected = np.sqrt(2 / (n + 1)) * np.sin(np.outer(k, k) * np.pi / (n + 1))
    np.testing.assert_allclose(Q, expected, atol=1e-12)


def test_normal_modes_rejects_asymmetric():
    with pytest.raises(ValueError):
        normal_modes(np.array([[2.0, -1.0], [-0.9, 2.0]]))


@pytest.mark.parametrize("n,d", [(0, 2), (2, 0), (-1, 1)])
def test_chainspec_validation(n, d):
    with pytest.raises(ValueError):
        ChainSpec(n, d)


@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31))
def test_coordinate_roundtrip_and_isometry(n, d, seed):
    rng = np.random.default_rng(seed)
    m = chain_modes(ChainSpec(n, d))
    q_hat = rng.standard_normal((7, n * d))
    q = to_normal_coords(q_hat, m, d)
    np.testing.assert_allclose(from_normal_coords(q, m, d), q_hat, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), np.linalg.norm(q_hat, axis=1), rtol=1e-12)


def test_coords_diagonalise_spring_energy(rng):
    n, d = 4, 2
    m = chain_modes(ChainSpec(n, d))
    R = rouse_matrix(ChainSpec(n, d))
    q_hat = rng.standard_normal(n * d)
    q = to_normal_coords(q_hat, m, d)
    e_hat = q_hat @ np.kron(R, np.eye(d)) @ q_hat
    e = np.sum(np.repeat(m.eigenvalues, d) * q**2)
    assert e == pytest.approx(e_hat, rel=1e-12)


def test_coordinate_length_mismatch():
    m = chain_modes(ChainSpec(2, 2))
    with pytest.raises(ValueError):
        to_normal_coords(np.zeros(5), m, 2)
