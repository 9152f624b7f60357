"""Fisher-Rao projection onto the Gaussian manifold.

Tangent vectors at ``f = N(0, C)`` are ``phi_A(q) = (q^T A q - tr(A C)) f(q)``
with ``A`` block-diagonal symmetric. All inner products are weighted by
``1/f``, so ``<phi_A, phi_B> = E_f[p_A p_B] = 2 tr(C A C B)``.

Functions acting on many points take ``q`` with shape ``(n_points, D)``.
Integrals go through tensor Gauss-Hermite rules; every integrand used here
is a polynomial times ``f``, so the rules are exact once the order is high
enough (order 6 covers degree 11).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .gaussian import BlockCovariance, density
from .quadrature import TensorRule, gaussian_nodes, integrate_gaussian, tensor_rule

SYM_TOL = 1e-12
COND_MAX = 1e12
GRAM_PIVOT_MIN = 1e-12


@dataclass(frozen=True, eq=False)
class TangentCoefficient:
    """Block-diagonal symmetric matrix ``A`` stored as ``(N, d, d)`` blocks."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3 or b.shape[1] != b.shape[2]:
            raise ValueError(f"blocks must have shape (N, d, d), got {b.shape}")
        scale = max(1.0, float(np.max(np.abs(b), initial=0.0)))
        if np.max(np.abs(b - b.transpose(0, 2, 1)), initial=0.0) > SYM_TOL * scale:
            raise ValueError("tangent coefficient blocks must be symmetric")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @classmethod
    def zeros(cls, n_blocks, d):
        return cls(np.zeros((n_blocks, d, d)))

    def full(self) -> np.ndarray:
        return block_diag(*self.blocks)

    def __add__(self, other):
        return TangentCoefficient(self.blocks + other.blocks)

    def __sub__(self, other):
        return TangentCoefficient(self.blocks - other.blocks)

    def __mul__(self, s):
        return TangentCoefficient(float(s) * self.blocks)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpatialDerivatives:
    """Spatial derivatives of the covariance field at one point ``x``.

    ``grad[i]`` holds the blocks of ``d C / d x_i``. ``laplacian`` and
    ``velocity`` are needed to form the transport term
    ``(u . grad) C - eps * lap C`` unless ``transport`` is given directly.
    """

    grad: np.ndarray  # (n_axes, N, d, d)
    laplacian: np.ndarray | None = None  # (N, d, d)
    velocity: np.ndarray | None = None  # (n_axes,)
    transport: np.ndarray | None = None  # (N, d, d)

    def __post_init__(self):
        g = np.array(self.grad, dtype=float)
        if g.ndim == 3:
            g = g[:, None]
        if g.ndim != 4:
            raise ValueError(f"grad must have shape (n_axes, N, d, d), got {g.shape}")
        if np.max(np.abs(g - g.transpose(0, 1, 3, 2)), initial=0.0) > SYM_TOL * max(1.0, np.abs(g).max(initial=0.0)):
            raise ValueError("spatial derivative blocks must be symmetric")
        object.__setattr__(self, "grad", g)
        for name in ("laplacian", "transport"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                if v.ndim == 2:
                    v = v[None]
                object.__setattr__(self, name, v)
        if self.velocity is not None:
            object.__setattr__(self, "velocity", np.array(self.velocity, dtype=float).reshape(-1))

    @classmethod
    def homogeneous(cls, n_blocks, d):
        z = np.zeros((d, n_blocks, d, d))
        return cls(grad=z, laplacian=z[0].copy(), velocity=np.zeros(d), transport=z[0].copy())

    @property
    def n_axes(self) -> int:
        return self.grad.shape[0]

    def transport_blocks(self, epsilon: float | None = None) -> np.ndarray:
        if self.transport is not None:
            return self.transport
        if self.velocity is None or self.laplacian is None or epsilon is None:
            raise ValueError("transport term L_x C unavailable: supply it, or velocity, laplacian and epsilon")
        return np.einsum("i,inab->nab", self.velocity, self.grad) - epsilon * self.laplacian


def _check_cov(cov: BlockCovariance) -> np.ndarray:
    w = np.linalg.eigvalsh(cov.blocks)
    if w.min() <= 0 or w.max() / w.min() > COND_MAX:
        raise ValueError(f"covariance too ill-conditioned for the manifold chart (cond {w.max() / w.min():.3g})")
    return w


def _coeff(A) -> TangentCoefficient:
    return A if isinstance(A, TangentCoefficient) else TangentCoefficient(A)


# ---------------------------------------------------------------- tangent space

def tangent_polynomial(A, cov: BlockCovariance, q) -> np.ndarray:
    """``phi_A / f`` evaluated at points ``q``."""
    A = _coeff(A)
    if A.blocks.shape != cov.blocks.shape:
        raise ValueError("tangent coefficient and covariance have different block structure")
    qn = np.asarray(q, dtype=float).reshape(-1, cov.n_blocks, cov.d)
    quad = np.einsum("pni,nij,pnj->p", qn, A.blocks, qn)
    return quad - np.einsum("nij,nji->", A.blocks, cov.blocks)


def tangent_function(A, cov: BlockCovariance, q) -> np.ndarray:
    return tangent_polynomial(A, cov, q) * density(cov, np.asarray(q).reshape(-1, cov.dim))


def fisher_inner(A, B, cov: BlockCovariance) -> float:
    """Weighted inner product of two tangent vectors, ``2 tr(C A C B)``."""
    A, B = _coeff(A), _coeff(B)
    if A.blocks.shape != cov.blocks.shape or B.blocks.shape != cov.blocks.shape:
        raise ValueError("shape mismatch between tangent coefficients and covariance")
    CA = cov.blocks @ A.blocks
    CB = cov.blocks @ B.blocks
    return float(2.0 * np.einsum("nij,nji->", CA, CB))


def fisher_inner_quadrature(A, B, cov: BlockCovariance, rule: TensorRule | None = None) -> float:
    """Same inner product by quadrature; the independent check of the closed form."""
    return float(integrate_gaussian(
        lambda q: tangent_polynomial(A, cov, q) * tangent_polynomial(B, cov, q), cov, rule))


def _canonical_units(n_blocks, d):
    for n in range(n_blocks):
        for i in range(d):
            for j in range(i, d):
                E = np.zeros((n_blocks, d, d))
                E[n, i, j] = 1.0
                E[n, j, i] = 1.0
                yield E


def tangent_basis(cov: BlockCovariance) -> list[TangentCoefficient]:
    """Orthonormal basis of the tangent space (modified Gram-Schmidt)."""
    _check_cov(cov)
    basis: list[np.ndarray] = []
    for E in _canonical_units(cov.n_blocks, cov.d):
        v = E
        for b in basis:
            v = v - fisher_inner(v, b, cov) * b
        nrm2 = fisher_inner(v, v, cov)
        if nrm2 < GRAM_PIVOT_MIN:
            raise ValueError("tangent basis is rank deficient")
        basis.append(v / np.sqrt(nrm2))
    return [TangentCoefficient(b) for b in basis]


def gram_matrix(basis, cov: BlockCovariance) -> np.ndarray:
    m = len(basis)
    G = np.empty((m, m))
    for a in range(m):
        for b in range(a, m):
            G[a, b] = G[b, a] = fisher_inner(basis[a], basis[b], cov)
    return G


# --------------------------------------------------------- operator coefficients

def config_coefficient(M_blocks, cov: BlockCovariance, lambdas, De: float) -> TangentCoefficient:
    """Tangent coefficient ``A_q`` of the configurational operator applied to ``f``."""
    _check_cov(cov)
    M = np.asarray(M_blocks, dtype=float).reshape(cov.blocks.shape)
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    C = cov.blocks
    Ci = cov.inverse_blocks()
    eye = np.eye(cov.d)
    inner = M @ C + C @ M.transpose(0, 2, 1) - (lam / De)[:, None, None] * eye
    A = 0.5 * Ci @ inner @ Ci
    return TangentCoefficient(0.5 * (A + A.transpose(0, 2, 1)))


def configurational_operator(cov: BlockCovariance, M_blocks, lambdas, De: float, q) -> np.ndarray:
    """``L_q f`` at points ``q`` straight from the divergence form.

    ``L_q f = -div((M q + K grad) f)`` with ``K = (Lambda kron I)/(2 De)``;
    for a Gaussian ``grad f = -C^{-1} q f``, so with ``B = M - K C^{-1}``
    one gets ``L_q f = (q^T C^{-1} B q - tr B) f``.
    """
    q = np.asarray(q, dtype=float).reshape(-1, cov.dim)
    M = block_diag(*np.asarray(M_blocks, dtype=float).reshape(cov.blocks.shape))
    K = np.kron(np.diag(np.asarray(lambdas, dtype=float)), np.eye(cov.d)) / (2.0 * De)
    Ci = np.linalg.inv(cov.full())
    B = M - K @ Ci
    poly = np.einsum("pi,ij,pj->p", q, Ci @ B, q) - np.trace(B)
    return poly * density(cov, q)


def spatial_coefficient(deriv: SpatialDerivatives, cov: BlockCovariance,
                        epsilon: float | None = None) -> TangentCoefficient:
    """Tangent coefficient ``A_x = 1/2 C^{-1} (L_x C) C^{-1}`` of the spatial operator."""
    LxC = deriv.transport_blocks(epsilon)
    if LxC.shape != cov.blocks.shape:
        raise ValueError("transport term has the wrong block structure")
    Ci = cov.inverse_blocks()
    A = 0.5 * Ci @ LxC @ Ci
    return TangentCoefficient(0.5 * (A + A.transpose(0, 2, 1)))


def _full_grads(deriv: SpatialDerivatives, cov: BlockCovariance):
    if deriv.grad.shape[1:] != cov.blocks.shape:
        raise ValueError("spatial derivatives have the wrong block structure")
    return [block_diag(*g) for g in deriv.grad]


def remainder(deriv: SpatialDerivatives, cov: BlockCovariance, q) -> np.ndarray:
    """Scalar remainder ``rho(q)`` left by center diffusion outside the tangent space.

    ``eps * rho * f`` is the part of ``L_x f`` that no covariance velocity can
    reproduce. ``rho`` is a quartic polynomial in ``q``.
    """
    _check_cov(cov)
    q = np.asarray(q, dtype=float).reshape(-1, cov.dim)
    Ci = np.linalg.inv(cov.full())
    out = np.zeros(q.shape[0])
    for dC in _full_grads(deriv, cov):
        G = Ci @ dC  # C^{-1} dC
        quad2 = np.einsum("pi,ij,pj->p", q, G @ G @ Ci, q)
        lin = np.einsum("pi,ij,pj->p", q, G @ Ci, q) - np.trace(G)
        out += quad2 - 0.5 * np.trace(G @ G) - 0.25 * lin**2
    return out


def _test_monomials(q):
    D = q.shape[1]
    cols = [np.ones(q.shape[0])]
    cols += [q[:, i] for i in range(D)]
    cols += [q[:, i] * q[:, j] for i in range(D) for j in range(i, D)]
    return np.stack(cols, axis=1)


def check_remainder_orthogonality(deriv: SpatialDerivatives, cov: BlockCovariance,
                                  rule: TensorRule | None = None) -> float:
    """Largest ``|E_f[rho p]|`` over monomials ``p`` of degree <= 2."""
    if rule is None:
        rule = tensor_rule(cov.dim, 4)
    if rule.order < 4:
        raise ValueError("rule order must be at least 4 for the degree-6 integrand")
    moments = integrate_gaussian(lambda q: remainder(deriv, cov, q)[:, None] * _test_monomials(q), cov, rule)
    return float(np.max(np.abs(moments)))


# ------------------------------------------------------------------- projection

def projection_coefficients(phi, cov: BlockCovariance, rule: TensorRule | None = None,
                            basis: list[TangentCoefficient] | None = None) -> np.ndarray:
    """Coordinates ``c_m = int phi_m phi / f dq`` in the orthonormal basis.

    ``phi`` is a callable returning function values at an ``(n, D)`` array.
    """
    if rule is None:
        rule = tensor_rule(cov.dim)
    if basis is None:
        basis = tangent_basis(cov)
    q = gaussian_nodes(cov, rule)
    ratio = np.asarray(phi(q), dtype=float) / density(cov, q)
    P = np.stack([tangent_polynomial(b, cov, q) for b in basis], axis=1)
    return rule.weights @ (P * ratio[:, None])


def project(phi, cov: BlockCovariance, rule: TensorRule | None = None) -> TangentCoefficient:
    """Fisher-Rao orthogonal projection of ``phi`` onto the tangent space at ``f``."""
    basis = tangent_basis(cov)
    c = projection_coefficients(phi, cov, rule, basis)
    return TangentCoefficient(np.tensordot(c, np.stack([b.blocks for b in basis]), axes=(0, 0)))


def weighted_norm_sq(phi, cov: BlockCovariance, rule: TensorRule | None = None) -> float:
    """``int phi^2 / f dq``."""
    return float(integrate_gaussian(lambda q: (np.asarray(phi(q)) / density(cov, q)) ** 2, cov, rule))


def tangential_defect(phi, cov: BlockCovariance, rule: TensorRule | None = None) -> float:
    """Relative weighted distance ``||phi - P_f phi|| / ||phi||``."""
    A = project(phi, cov, rule)

    def diff(q):
        return np.asarray(phi(q)) - tangent_function(A, cov, q)

    num = weighted_norm_sq(diff, cov, rule)
    den = weighted_norm_sq(phi, cov, rule)
    return float(np.sqrt(max(num, 0.0) / den)) if den > 0 else float(np.sqrt(max(num, 0.0)))


def operator_mass(cov: BlockCovariance, M_blocks, lambdas, De, rule: TensorRule | None = None) -> float:
    """``int L_q f dq``; vanishes for the divergence-form operator."""
    return float(integrate_gaussian(
        lambda q: configurational_operator(cov, M_blocks, lambdas, De, q) / density(cov, q), cov, rule))


# -------------------------------------------------------------------- residuals

def _full_residual_poly(cov, cov_dot, M_blocks, lambdas, deriv, De, epsilon, q):
    """``(d_t f + L_x f + L_q f) / f`` from direct derivatives of the Gaussian."""
    Ci = np.linalg.inv(cov.full())
    Cdot = block_diag(*np.asarray(cov_dot, dtype=float).reshape(cov.blocks.shape))

    def score(dC):
        # (d/ds f) / f along a covariance direction dC
        return 0.5 * (np.einsum("pi,ij,pj->p", q, Ci @ dC @ Ci, q) - np.trace(Ci @ dC))

    out = score(Cdot)

    grads = _full_grads(deriv, cov)
    u = np.zeros(len(grads)) if deriv.velocity is None else deriv.velocity
    for ui, dC in zip(u, grads):
        out = out + ui * score(dC)
    if epsilon:
        if deriv.laplacian is None:
            raise ValueError("laplacian of C is required when epsilon > 0")
        lap = score(block_diag(*deriv.laplacian))
        for dC in grads:
            G = Ci @ dC
            lap = lap - (np.einsum("pi,ij,pj->p", q, G @ G @ Ci, q) - 0.5 * np.trace(G @ G))
            lap = lap + score(dC) ** 2
        out = out - epsilon * lap

    q_op = configurational_operator(cov, M_blocks, lambdas, De, q) / density(cov, q)
    return out + q_op


def residual_norm_sq(cov: BlockCovariance, cov_dot, M_blocks, lambdas, deriv: SpatialDerivatives,
                     params, rule: TensorRule | None = None) -> float:
    """Weighted squared residual ``int (d_t f + L f)^2 / f dq`` of a covariance path.

    ``params`` provides ``deborah`` and ``center_diffusion``.
    """
    De, eps = params.deborah, params.center_diffusion
    return float(integrate_gaussian(
        lambda q: _full_residual_poly(cov, cov_dot, M_blocks, lambdas, deriv, De, eps, q) ** 2, cov, rule))


def remainder_norm_sq(deriv: SpatialDerivatives, cov: BlockCovariance, rule: TensorRule | None = None) -> float:
    """``int rho^2 f dq``."""
    return float(integrate_gaussian(lambda q: remainder(deriv, cov, q) ** 2, cov, rule))


def eom_rate(cov: BlockCovariance, M_blocks, lambdas, deriv: SpatialDerivatives, params) -> np.ndarray:
    """Covariance time derivative demanded by the projected dynamics, as ``(N, d, d)`` blocks.

    ``dC/dt = Lambda/De - M C - C M^T - L_x C``.
    """
    M = np.asarray(M_blocks, dtype=float).reshape(cov.blocks.shape)
    lam = np.asarray(lambdas, dtype=float).reshape(-1)
    C = cov.blocks
    react = (lam / params.deborah)[:, None, None] * np.eye(cov.d) - M @ C - C @ M.transpose(0, 2, 1)
    return react - deriv.transport_blocks(params.center_diffusion)
