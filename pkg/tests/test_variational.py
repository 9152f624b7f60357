import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scipy.linalg import block_diag

from gaussclosure import variational as V
from gaussclosure.chain import ChainSpec, chain_modes
from gaussclosure.dynamics import ModelParams
from gaussclosure.gaussian import BlockCovariance, density
from gaussclosure.quadrature import integrate_gaussian, tensor_rule
from gaussclosure.verification import random_block_cov, random_derivatives, random_sym


def _setup(rng, N=2, d=2, De=1.3):
    cov = random_block_cov(rng, N, d)
    lam = chain_modes(ChainSpec(N, d)).eigenvalues
    M = (lam / (2 * De))[:, None, None] * np.eye(d) - rng.standard_normal((d, d))
    return cov, M, lam, De


def test_tangent_vectors_have_zero_mass(rng):
    cov = random_block_cov(rng, 2, 2)
    A = V.TangentCoefficient(np.stack([random_sym(rng, 2) for _ in range(2)]))
    m = integrate_gaussian(lambda q: V.tangent_polynomial(A, cov, q), cov, tensor_rule(4, 3))
    assert abs(m) < 1e-13


def test_fisher_inner_closed_form_vs_quadrature(rng):
    cov = random_block_cov(rng, 2, 2)
    A = V.TangentCoefficient(np.stack([random_sym(rng, 2) for _ in range(2)]))
    B = V.TangentCoefficient(np.stack([random_sym(rng, 2) for _ in range(2)]))
    assert V.fisher_inner(A, B, cov) == pytest.approx(V.fisher_inner_quadrature(A, B, cov), rel=1e-11)
    assert V.fisher_inner(A, A, cov) > 0


@pytest.mark.parametrize("N,d", [(1, 1), (1, 2), (2, 2), (3, 2), (1, 3)])
def test_basis_orthonormal_with_right_dimension(rng, N, d):
    cov = random_block_cov(rng, N, d)
    basis = V.tangent_basis(cov)
    assert len(basis) == N * d * (d + 1) // 2
    np.testing.assert_allclose(V.gram_matrix(basis, cov), np.eye(len(basis)), atol=1e-10)


def test_ill_conditioned_rejected():
    with pytest.raises(ValueError):
        V.tangent_basis(BlockCovariance(np.array([[[1.0, 0.0], [0.0, 1e-13]]])))


def test_config_operator_equals_tangent_function(rng):
    cov, M, lam, De = _setup(rng)
    A = V.config_coefficient(M, cov, lam, De)
    q = rng.standard_normal((50, 4)) * 2
    np.testing.assert_allclose(V.configurational_operator(cov, M, lam, De, q), V.tangent_function(A, cov, q),
                               rtol=1e-10, atol=1e-14)


def _fd_operator(cov, M, lam, De, q, d):
    """-div((M q + K grad) f) with central differences, step h = 1e-4 (1 + |q|)."""
    Mf = block_diag(*M)
    K = np.kron(np.diag(lam), np.eye(d)) / (2 * De)
    D = q.size
    f = lambda x: density(cov, x[None])[0]  # noqa: E731
    h = 1e-4 * (1 + np.linalg.norm(q))

    def grad(x):
        g = np.empty(D)
        for i in range(D):
            e = np.zeros(D)
            e[i] = h
            g[i] = (f(x + e) - f(x - e)) / (2 * h)
        return g

    def flux(x):
        return Mf @ x * f(x) + K @ grad(x)

    div = 0.0
    for i in range(D):
        e = np.zeros(D)
        e[i] = h
        div += (flux(q + e)[i] - flux(q - e)[i]) / (2 * h)
    return -div


def test_config_operator_against_finite_differences(rng):
    cov, M, lam, De = _setup(rng, N=1, d=2)
    for q in rng.standard_normal((5, 2)):
        ref = _fd_operator(cov, M, lam, De, q, 2)
        got = V.configurational_operator(cov, M, lam, De, q)[0]
        assert got == pytest.approx(ref, abs=1e-6)


def test_operator_conserves_mass(rng):
    cov, M, lam, De = _setup(rng)
    assert abs(V.operator_mass(cov, M, lam, De, tensor_rule(4, 4))) < 1e-12


def test_stationary_state_is_kernel(rng):
    from gaussclosure.dynamics import lyapunov_steady
    cov, M, lam, De = _setup(rng)
    st = BlockCovariance(np.stack([lyapunov_steady(Mn, ln, De) for Mn, ln in zip(M, lam)]))
    A = V.config_coefficient(M, st, lam, De)
    assert np.abs(A.blocks).max() < 1e-12


def test_projection_recovers_tangent_vector(rng):
    cov = random_block_cov(rng, 2, 2)
    A = V.TangentCoefficient(np.stack([random_sym(rng, 2) for _ in range(2)]))
    P = V.project(lambda q: V.tangent_function(A, cov, q), cov, tensor_rule(4, 4))
    np.testing.assert_allclose(P.blocks, A.blocks, atol=1e-10)


def test_projection_discards_non_tangent_part(rng):
    cov = random_block_cov(rng, 1, 2)
    # odd polynomial times f is Fisher-orthogonal to every tangent vector
    P = V.project(lambda q: q[:, 0] ** 3 * density(cov, q), cov, tensor_rule(2, 6))
    assert np.abs(P.blocks).max() < 1e-12
    assert V.tangential_defect(lambda q: q[:, 0] ** 3 * density(cov, q), cov, tensor_rule(2, 6)) == pytest.approx(1.0)


@given(st.integers(0, 2**31))
def test_remainder_orthogonal_property(seed):
    rng = np.random.default_rng(seed)
    cov = random_block_cov(rng, 2, 2)
    deriv = random_derivatives(rng, 2, 2, with_second=False, velocity=False)
    assert V.check_remainder_orthogonality(deriv, cov) < 1e-10


def test_remainder_needs_order_four():
    cov = BlockCovariance.identity(1, 2)
    deriv = V.SpatialDerivatives(grad=np.zeros((2, 1, 2, 2)))
    with pytest.raises(ValueError):
        V.check_remainder_orthogonality(deriv, cov, tensor_rule(2, 3))


def test_remainder_vanishes_for_uniform_field(rng):
    cov = random_block_cov(rng, 1, 2)
    deriv = V.SpatialDerivatives.homogeneous(1, 2)
    assert not np.any(V.remainder(deriv, cov, rng.standard_normal((5, 2))))


def test_residual_zero_without_diffusion(rng):
    cov, M, lam, De = _setup(rng)
    deriv = random_derivatives(rng, 2, 2)
    params = ModelParams(De, 0.0)
    cdot = V.eom_rate(cov, M, lam, deriv, params)
    assert V.residual_norm_sq(cov, cdot, M, lam, deriv, params, tensor_rule(4, 6)) < 1e-20


def test_eom_rate_is_optimal(rng):
    cov, M, lam, De = _setup(rng, N=1)
    deriv = random_derivatives(rng, 1, 2)
    params = ModelParams(De, 0.2)
    rule = tensor_rule(2, 6)
    cdot = V.eom_rate(cov, M, lam, deriv, params)
    best = V.residual_norm_sq(cov, cdot, M, lam, deriv, params, rule)
    for _ in range(5):
        other = cdot + 1e-3 * random_sym(rng, 2)[None]
        assert V.residual_norm_sq(cov, other, M, lam, deriv, params, rule) > best


def test_transport_requires_inputs():
    deriv = V.SpatialDerivatives(grad=np.zeros((2, 1, 2, 2)))
    with pytest.raises(ValueError):
        deriv.transport_blocks(0.1)
