"""Rouse chain: connectivity matrix, normal modes, coordinate maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYM_TOL = 1e-12


@dataclass(frozen=True)
class ChainSpec:
    """Linear chain of ``n_springs`` Hookean springs in ``space_dim`` dimensions."""

    n_springs: int
    space_dim: int

    def __post_init__(self):
        if int(self.n_springs) != self.n_springs or self.n_springs < 1:
            raise ValueError(f"n_springs must be a positive integer, got {self.n_springs!r}")
        if int(self.space_dim) != self.space_dim or self.space_dim < 1:
            raise ValueError(f"space_dim must be a positive integer, got {self.space_dim!r}")

    @property
    def config_dim(self) -> int:
        return self.n_springs * self.space_dim


@dataclass(frozen=True)
class NormalModes:
    eigenvalues: np.ndarray  # ascending
    modal_matrix: np.ndarray  # R = Q^T diag(eigenvalues) Q

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        Q = self.modal_matrix
        return Q.T @ np.diag(self.eigenvalues) @ Q


def rouse_matrix(spec: ChainSpec) -> np.ndarray:
    n = spec.n_springs
    R = 2.0 * np.eye(n)
    idx = np.arange(n - 1)
    R[idx, idx + 1] = -1.0
    R[idx + 1, idx] = -1.0
    return R


def rouse_eigenvalues(n: int) -> np.ndarray:
    """Closed-form spectrum of tridiag(-1, 2, -1), ascending."""
    k = np.arange(1, n + 1)
    return 4.0 * np.sin(k * np.pi / (2 * (n + 1))) ** 2


def normal_modes(R) -> NormalModes:
    """Diagonalize a symmetric matrix as ``R = Q^T Lambda Q``.

    Eigenvalues come out ascending; each eigenvector (row of ``Q``) is signed
    so that its first nonzero entry is positive.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {R.shape}")
    if np.max(np.abs(R - R.T), initial=0.0) > SYM_TOL:
        raise ValueError("matrix is not symmetric")
    lam, V = np.linalg.eigh(R)  # columns of V are eigenvectors
    for j in range(V.shape[1]):
        col = V[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-14)
        if nz.size and col[nz[0]] < 0:
            V[:, j] = -col
    return NormalModes(eigenvalues=lam, modal_matrix=V.T.copy())


def _kron_q(modes: NormalModes, d: int) -> np.ndarray:
    return np.kron(modes.modal_matrix, np.eye(d))


def to_normal_coords(q_hat, modes: NormalModes, d: int) -> np.ndarray:
    """Map spring vectors ``q_hat`` to normal coordinates ``q = (Q kron I_d) q_hat``.

    Accepts a single D-vector or an array of shape ``(..., D)``.
    """
    q_hat = np.asarray(q_hat, dtype=float)
    D = modes.n_modes * d
    if q_hat.shape[-1] != D:
        raise ValueError(f"expected trailing length {D}, got {q_hat.shape[-1]}")
    return q_hat @ _kron_q(modes, d).T


def from_normal_coords(q, modes: NormalModes, d: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    D = modes.n_modes * d
    if q.shape[-1] != D:
        raise ValueError(f"expected trailing length {D}, got {q.shape[-1]}")
    return q @ _kron_q(modes, d)


def chain_modes(spec: ChainSpec) -> NormalModes:
    return normal_modes(rouse_matrix(spec))
