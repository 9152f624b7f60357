"""Mean-zero Gaussians with block-diagonal covariance.

A state of the approximation manifold is ``diag(C_1, ..., C_N)`` with one
symmetric positive definite ``d x d`` block per normal mode. The blocks are
also the summands of the conformation tensor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

SYM_TOL = 1e-12
SPD_RTOL = 1e-12
GRAD_SYM_TOL = 1e-10


class NotPositiveDefinite(ValueError):
    pass


def check_spd(C, name="matrix"):
    C = np.asarray(C, dtype=float)
    if np.max(np.abs(C - C.T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(C))):
        raise NotPositiveDefinite(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (C + C.T))
    if not np.all(np.isfinite(w)) or w[0] <= SPD_RTOL * max(w[-1], 0.0) or w[-1] <= 0:
        raise NotPositiveDefinite(f"{name} is not positive definite (eigenvalues {w})")
    return w


@dataclass(frozen=True, eq=False)
class BlockCovariance:
    """``N`` symmetric positive definite ``d x d`` blocks, stored as ``(N, d, d)``."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.ndim == 2:
            b = b[None]
        if b.ndim != 3 or b.shape[1] != b.shape[2]:
            raise ValueError(f"blocks must have shape (N, d, d), got {b.shape}")
        for n, Cn in enumerate(b):
            check_spd(Cn, f"block {n}")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @classmethod
    def identity(cls, n_blocks: int, d: int) -> "BlockCovariance":
        return cls(np.broadcast_to(np.eye(d), (n_blocks, d, d)).copy())

    @classmethod
    def from_full(cls, C, n_blocks: int, d: int) -> "BlockCovariance":
        C = np.asarray(C, dtype=float)
        blocks = np.stack([C[n * d:(n + 1) * d, n * d:(n + 1) * d] for n in range(n_blocks)])
        off = C.copy()
        for n in range(n_blocks):
            off[n * d:(n + 1) * d, n * d:(n + 1) * d] = 0.0
        if np.max(np.abs(off), initial=0.0) > SYM_TOL:
            raise ValueError("matrix is not block diagonal")
        return cls(blocks)

    @property
    def n_blocks(self) -> int:
        return self.blocks.shape[0]

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    @property
    def dim(self) -> int:
        return self.n_blocks * self.d

    def full(self) -> np.ndarray:
        return block_diag(*self.blocks)

    def inverse_blocks(self) -> np.ndarray:
        return np.linalg.inv(self.blocks)

    def logdet(self) -> float:
        return float(np.sum(np.linalg.slogdet(self.blocks)[1]))

    def min_eigenvalue(self) -> float:
        return float(np.min(np.linalg.eigvalsh(self.blocks)))

    def to_list(self) -> list:
        return self.blocks.tolist()

    def __eq__(self, other):
        return isinstance(other, BlockCovariance) and np.array_equal(self.blocks, other.blocks)


def _split(q, cov: BlockCovariance) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != cov.dim:
        raise ValueError(f"expected points of length {cov.dim}, got {q.shape[-1]}")
    return q.reshape(q.shape[:-1] + (cov.n_blocks, cov.d))


def log_density(cov: BlockCovariance, q) -> np.ndarray:
    qn = _split(q, cov)
    Cinv = cov.inverse_blocks()
    quad = np.einsum("...ni,nij,...nj->...", qn, Cinv, qn)
    return -0.5 * quad - 0.5 * (cov.dim * np.log(2 * np.pi) + cov.logdet())


def density(cov: BlockCovariance, q) -> np.ndarray:
    return np.exp(log_density(cov, q))


def conformation(cov: BlockCovariance) -> np.ndarray:
    return cov.blocks.sum(axis=0)


def extra_stress(cov: BlockCovariance) -> np.ndarray:
    """Kramers stress ``sum_n (C_n - I)`` of the Gaussian state."""
    return conformation(cov) - cov.n_blocks * np.eye(cov.d)


def stationary_covariance(grad_u, lambda_n: float, De: float) -> np.ndarray:
    """Steady covariance block for a constant, symmetric velocity gradient.

    Returns ``(lambda_n / (2 De)) M_n^{-1}`` with ``M_n = lambda_n/(2De) I - grad_u``.
    Raises if ``grad_u`` is not symmetric or the flow is too strong for a
    steady state (``M_n`` not positive definite).
    """
    G = np.atleast_2d(np.asarray(grad_u, dtype=float))
    if np.max(np.abs(G - G.T), initial=0.0) > GRAD_SYM_TOL:
        raise ValueError("stationary Gaussian requires a symmetric velocity gradient")
    if lambda_n <= 0 or De <= 0:
        raise ValueError("lambda_n and De must be positive")
    a = lambda_n / (2.0 * De)
    M = a * np.eye(G.shape[0]) - 0.5 * (G + G.T)
    if np.linalg.eigvalsh(M)[0] <= 0:
        raise NotPositiveDefinite("M_n is not positive definite: flow too strong for a stationary state")
    C = a * np.linalg.inv(M)
    return 0.5 * (C + C.T)
