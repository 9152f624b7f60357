"""Inner loops shared by the dynamics and reference solvers.

Every kernel has a vectorized numpy version and a loop version compiled with
numba. The public names dispatch on ``_accel.USE_NUMBA``; both versions stay
importable (``*_numpy`` / ``*_numba``) so tests and the benchmark can compare
them directly.
"""
from __future__ import annotations

import numpy as np

from . import _accel
from ._accel import njit

# ---------------------------------------------------------------------------
# finite-volume Fokker-Planck step on a 1D / 2D configuration grid
#
# d psi/dt + div J = 0. Each interior face carries the two-point flux
#   F = aL * psi_left - aR * psi_right
# (upwind or exponentially fitted, see reference.face_coefficients).
# Walls carry zero flux, so the update conserves mass to roundoff.
# ---------------------------------------------------------------------------


def fv_step_2d_numpy(psi, a0l, a0r, a1l, a1r, h, dt):
    F0 = a0l * psi[:-1, :] - a0r * psi[1:, :]
    F1 = a1l * psi[:, :-1] - a1r * psi[:, 1:]
    div = np.zeros_like(psi)
    div[:-1, :] += F0
    div[1:, :] -= F0
    div[:, :-1] += F1
    div[:, 1:] -= F1
    return psi - (dt / h) * div


@njit(cache=True)
def fv_step_2d_numba(psi, a0l, a0r, a1l, a1r, h, dt):
    m0, m1 = psi.shape
    out = psi.copy()
    c = dt / h
    for i in range(m0 - 1):
        for j in range(m1):
            F = a0l[i, j] * psi[i, j] - a0r[i, j] * psi[i + 1, j]
            out[i, j] -= c * F
            out[i + 1, j] += c * F
    for i in range(m0):
        for j in range(m1 - 1):
            F = a1l[i, j] * psi[i, j] - a1r[i, j] * psi[i, j + 1]
            out[i, j] -= c * F
            out[i, j + 1] += c * F
    return out


def fv_step_1d_numpy(psi, a0l, a0r, h, dt):
    F = a0l * psi[:-1] - a0r * psi[1:]
    div = np.zeros_like(psi)
    div[:-1] += F
    div[1:] -= F
    return psi - (dt / h) * div


@njit(cache=True)
def fv_step_1d_numba(psi, a0l, a0r, h, dt):
    out = psi.copy()
    c = dt / h
    for i in range(psi.shape[0] - 1):
        F = a0l[i] * psi[i] - a0r[i] * psi[i + 1]
        out[i] -= c * F
        out[i + 1] += c * F
    return out


# ---------------------------------------------------------------------------
# Euler-Maruyama update, in place: q <- q - M q dt + sqrt(dt) * sigma * xi
# (sigma is the diagonal of the noise amplitude)
# ---------------------------------------------------------------------------


def em_update_numpy(q, M, sigma, xi, dt):
    drift = q @ M.T
    drift *= -dt
    drift += np.sqrt(dt) * sigma * xi
    q += drift
    return q


@njit(cache=True)
def em_update_numba(q, M, sigma, xi, dt):
    P, D = q.shape
    sdt = np.sqrt(dt)
    tmp = np.empty(D)
    for p in range(P):
        for a in range(D):
            acc = 0.0
            for b in range(D):
                acc += M[a, b] * q[p, b]
            tmp[a] = q[p, a] - dt * acc + sdt * sigma[a] * xi[p, a]
        for a in range(D):
            q[p, a] = tmp[a]
    return q


# ---------------------------------------------------------------------------
# transport part of the method-of-lines right-hand side on a cell grid:
#   -(u . grad) c + eps * lap c
# first-order upwind advection, 5-point (3-point in 1D) diffusion,
# homogeneous Neumann walls through mirrored ghost cells.
# field: (m0, [m1,] K) with K stacked tensor components; vel: (m0, [m1,] dim)
# ---------------------------------------------------------------------------


def transport_rhs_numpy(field, vel, h, eps):
    dim = vel.shape[-1]
    out = np.zeros_like(field)
    pad = [(1, 1)] * dim + [(0, 0)]
    g = np.pad(field, pad, mode="edge")
    for ax in range(dim):
        sl_c = [slice(1, -1)] * dim + [slice(None)]
        sl_m = list(sl_c)
        sl_p = list(sl_c)
        sl_m[ax] = slice(0, -2)
        sl_p[ax] = slice(2, None)
        c, cm, cp = g[tuple(sl_c)], g[tuple(sl_m)], g[tuple(sl_p)]
        u = vel[..., ax][..., None]
        adv = np.where(u > 0, u * (c - cm), u * (cp - c)) / h[ax]
        out += -adv + eps * (cp - 2.0 * c + cm) / h[ax] ** 2
    return out


@njit(cache=True)
def _transport_rhs_1d(field, vel, h, eps):
    m0, K = field.shape
    out = np.zeros_like(field)
    for i in range(m0):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < m0 - 1 else m0 - 1
        u = vel[i, 0]
        for k in range(K):
            c = field[i, k]
            cm = field[im, k]
            cp = field[ip, k]
            adv = u * (c - cm) if u > 0 else u * (cp - c)
            out[i, k] = -adv / h[0] + eps * (cp - 2.0 * c + cm) / (h[0] * h[0])
    return out


@njit(cache=True)
def _transport_rhs_2d(field, vel, h, eps):
    m0, m1, K = field.shape
    out = np.zeros_like(field)
    for i in range(m0):
        im = i - 1 if i > 0 else 0
        ip = i + 1 if i < m0 - 1 else m0 - 1
        for j in range(m1):
            jm = j - 1 if j > 0 else 0
            jp = j + 1 if j < m1 - 1 else m1 - 1
            u0 = vel[i, j, 0]
            u1 = vel[i, j, 1]
            for k in range(K):
                c = field[i, j, k]
                a0 = u0 * (c - field[im, j, k]) if u0 > 0 else u0 * (field[ip, j, k] - c)
                a1 = u1 * (c - field[i, jm, k]) if u1 > 0 else u1 * (field[i, jp, k] - c)
                l0 = (field[ip, j, k] - 2.0 * c + field[im, j, k]) / (h[0] * h[0])
                l1 = (field[i, jp, k] - 2.0 * c + field[i, jm, k]) / (h[1] * h[1])
                out[i, j, k] = -a0 / h[0] - a1 / h[1] + eps * (l0 + l1)
    return out


def transport_rhs_numba(field, vel, h, eps):
    if vel.shape[-1] == 1:
        return _transport_rhs_1d(field, vel, h, eps)
    return _transport_rhs_2d(field, vel, h, eps)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def fv_step_2d(psi, a0l, a0r, a1l, a1r, h, dt):
    if _accel.USE_NUMBA:
        return fv_step_2d_numba(psi, a0l, a0r, a1l, a1r, float(h), float(dt))
    return fv_step_2d_numpy(psi, a0l, a0r, a1l, a1r, h, dt)


def fv_step_1d(psi, a0l, a0r, h, dt):
    if _accel.USE_NUMBA:
        return fv_step_1d_numba(psi, a0l, a0r, float(h), float(dt))
    return fv_step_1d_numpy(psi, a0l, a0r, h, dt)


def em_update(q, M, sigma, xi, dt):
    if _accel.USE_NUMBA:
        return em_update_numba(q, M, sigma, xi, float(dt))
    return em_update_numpy(q, M, sigma, xi, dt)


def transport_rhs(field, vel, h, eps):
    h = np.asarray(h, dtype=float)
    if _accel.USE_NUMBA:
        return transport_rhs_numba(np.ascontiguousarray(field), np.ascontiguousarray(vel), h, float(eps))
    return transport_rhs_numpy(field, vel, h, eps)

