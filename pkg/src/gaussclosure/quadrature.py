"""Gauss-Hermite quadrature for Gaussian expectations on R^D.

Probabilists' convention throughout: the weight is the standard normal
density, so a rule's weights sum to one and ``sum(w * g(x))`` approximates
``E[g(r)]`` for ``r ~ N(0, 1)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

MAX_ORDER = 64
DEFAULT_ORDER = 6
MAX_TENSOR_DIM = 8


@dataclass(frozen=True)
class HermiteRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class TensorRule:
    dim: int
    axis_rule: HermiteRule
    nodes: np.ndarray  # (order**dim, dim)
    weights: np.ndarray  # (order**dim,)

    @property
    def order(self) -> int:
        return self.axis_rule.order


@lru_cache(maxsize=None)
def _golub_welsch(order: int):
    # Jacobi matrix of the monic recurrence He_{k+1} = x He_k - k He_{k-1}
    off = np.sqrt(np.arange(1, order, dtype=float))
    nodes, vecs = eigh_tridiagonal(np.zeros(order), off)
    weights = vecs[0, :] ** 2
    # symmetrize against roundoff; the rule is exactly symmetric about 0
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(order: int) -> HermiteRule:
    if int(order) != order or not 1 <= order <= MAX_ORDER:
        raise ValueError(f"order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    order = int(order)
    if order == 1:
        return HermiteRule(1, np.zeros(1), np.ones(1))
    nodes, weights = _golub_welsch(order)
    return HermiteRule(order, nodes, weights)


@lru_cache(maxsize=None)
def _tensor_arrays(order: int, dim: int):
    rule = gauss_hermite(order)
    grids = np.meshgrid(*([rule.nodes] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([rule.weights] * dim), indexing="ij")
    weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return rule, nodes, weights


def tensor_rule(dim: int, order: int = DEFAULT_ORDER) -> TensorRule:
    if not 1 <= dim <= MAX_TENSOR_DIM:
        raise ValueError(f"tensor grids are limited to 1 <= dim <= {MAX_TENSOR_DIM}, got {dim}")
    rule, nodes, weights = _tensor_arrays(int(order), int(dim))
    return TensorRule(dim=dim, axis_rule=rule, nodes=nodes, weights=weights)


def hermite(n: int, x):
    """Probabilists' Hermite polynomial He_n for n <= 4."""
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.ones_like(x)
    if n == 1:
        return x
    if n == 2:
        return x**2 - 1.0
    if n == 3:
        return x**3 - 3.0 * x
    if n == 4:
        return x**4 - 6.0 * x**2 + 3.0
    raise ValueError(f"hermite only tabulated for n <= 4, got {n}")


def _as_matrix(cov) -> np.ndarray:
    full = getattr(cov, "full", None)
    C = full() if callable(full) else np.asarray(cov, dtype=float)
    return np.atleast_2d(C)


def covariance_factor(cov, method: str = "cholesky") -> np.ndarray:
    """Return ``L`` with ``L @ L.T == C``."""
    C = _as_matrix(cov)
    if method == "cholesky":
        try:
            return np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
    if method == "sqrtm":
        w, V = np.linalg.eigh(0.5 * (C + C.T))
        if w.min() <= 0:
            raise ValueError("covariance is not positive definite")
        return (V * np.sqrt(w)) @ V.T
    raise ValueError(f"unknown factor method {method!r}")


def gaussian_nodes(cov, rule: TensorRule, method: str = "cholesky") -> np.ndarray:
    """Quadrature nodes mapped into q-space, shape ``(n_nodes, D)``."""
    L = covariance_factor(cov, method)
    if L.shape[0] != rule.dim:
        raise ValueError(f"rule dimension {rule.dim} does not match covariance dimension {L.shape[0]}")
    return rule.nodes @ L.T


def integrate_gaussian(g, cov, rule: TensorRule | None = None, method: str = "cholesky"):
    """``E[g(q)]`` for ``q ~ N(0, cov)`` by substitution ``q = L r``.

    ``g`` is called once with all nodes, an array of shape ``(n_nodes, D)``,
    and must return an array whose leading axis runs over nodes.
    """
    C = _as_matrix(cov)
    if rule is None:
        rule = tensor_rule(C.shape[0])
    q = gaussian_nodes(C, rule, method)
    vals = np.asarray(g(q), dtype=float)
    if vals.shape[0] != q.shape[0]:
        raise ValueError("integrand must return one value (or array) per node")
    return np.tensordot(rule.weights, vals, axes=(0, 0))


def normal_moment(k: int) -> float:
    """E[r^k] for a standard normal r."""
    if k % 2:
        return 0.0
    out = 1.0
    for j in range(k - 1, 0, -2):
        out *= j
    return out
