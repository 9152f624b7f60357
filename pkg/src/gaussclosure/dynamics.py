"""Equations of motion for the covariance blocks.

Each block obeys

    (d/dt + u . grad - eps lap) C_n = (lambda_n/De) I - M_n C_n - C_n M_n^T,
    M_n = lambda_n/(2 De) I - grad u,

which is the diffusive Oldroyd-B model for ``tau_n = C_n - I``. The velocity
field and its gradient are prescribed; nothing here feeds back into the flow.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .chain import NormalModes
from .gaussian import BlockCovariance

log = logging.getLogger(__name__)

MAX_HALVINGS = 10
SYM_TOL = 1e-12


class IntegrationError(RuntimeError):
    """Loss of positive definiteness that step halving could not repair."""

    def __init__(self, message, time=None, cell=None):
        super().__init__(message)
        self.time = time
        self.cell = cell


class CFLError(ValueError):
    def __init__(self, message, max_dt):
        super().__init__(message)
        self.max_dt = max_dt


@dataclass(frozen=True)
class ModelParams:
    deborah: float
    center_diffusion: float = 0.0

    def __post_init__(self):
        if not self.deborah > 0:
            raise ValueError(f"Deborah number must be positive, got {self.deborah}")
        if not self.center_diffusion >= 0:
            raise ValueError(f"center diffusion must be nonnegative, got {self.center_diffusion}")


# ------------------------------------------------------------------------ flows

@dataclass(frozen=True)
class FlowSpec:
    """Prescribed velocity ``u(t, x)`` and velocity gradient ``grad u(t, x)``.

    ``gradient(t, x)[i, j]`` is ``d u_i / d x_j``. For the builtin homogeneous
    flows the advecting velocity defaults to zero; pass ``advection`` for a
    uniform transport velocity in spatial runs.
    """

    kind: str
    dim: int
    velocity: Callable[[float, np.ndarray], np.ndarray]
    gradient: Callable[[float, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def grad_at(self, t, x=None) -> np.ndarray:
        x = np.zeros(self.dim) if x is None else x
        return np.asarray(self.gradient(t, x), dtype=float).reshape(self.dim, self.dim)

    def velocity_at(self, t, x=None) -> np.ndarray:
        x = np.zeros(self.dim) if x is None else x
        return np.asarray(self.velocity(t, x), dtype=float).reshape(self.dim)

    def is_steady(self) -> bool:
        return self.kind in {"zero", "simple_shear", "planar_extension"}


def _uniform(dim, advection):
    a = np.zeros(dim) if advection is None else np.asarray(advection, dtype=float).reshape(dim)
    return lambda t, x: a


def zero_flow(dim: int, advection=None) -> FlowSpec:
    G = np.zeros((dim, dim))
    return FlowSpec("zero", dim, _uniform(dim, advection), lambda t, x: G, {})


def simple_shear(rate: float, dim: int = 2, advection=None) -> FlowSpec:
    if dim < 2:
        raise ValueError("simple shear needs dim >= 2")
    G = np.zeros((dim, dim))
    G[0, 1] = rate
    return FlowSpec("simple_shear", dim, _uniform(dim, advection), lambda t, x: G, {"rate": rate})


def planar_extension(rate: float, dim: int = 2, advection=None) -> FlowSpec:
    if dim < 2:
        raise ValueError("planar extension needs dim >= 2")
    G = np.zeros((dim, dim))
    G[0, 0], G[1, 1] = rate, -rate
    return FlowSpec("planar_extension", dim, _uniform(dim, advection), lambda t, x: G, {"rate": rate})


def oscillatory_extension(rate: float, omega: float, dim: int = 2, advection=None) -> FlowSpec:
    """Planar extension with rate ``rate * sin(omega t)``."""
    if dim < 2:
        raise ValueError("planar extension needs dim >= 2")
    E = np.zeros((dim, dim))
    E[0, 0], E[1, 1] = 1.0, -1.0
    return FlowSpec("oscillatory_extension", dim, _uniform(dim, advection),
                    lambda t, x: rate * np.sin(omega * t) * E, {"rate": rate, "omega": omega})


def custom_flow(velocity, gradient, dim: int) -> FlowSpec:
    return FlowSpec("custom", dim, velocity, gradient, {})


# ----------------------------------------------------------------- block algebra

def deformation_blocks(flow: FlowSpec, t, x, modes: NormalModes, params: ModelParams) -> np.ndarray:
    """``M_n = lambda_n/(2 De) I - grad u(t, x)`` for every mode, shape ``(N, d, d)``."""
    G = flow.grad_at(t, x)
    lam = modes.eigenvalues
    return (lam / (2.0 * params.deborah))[:, None, None] * np.eye(flow.dim) - G[None]


def rhs_block(C, M, lambda_n, params: ModelParams) -> np.ndarray:
    """Reaction term ``(lambda_n/De) I - M C - C M^T``; broadcasts over leading axes."""
    C = np.asarray(C, dtype=float)
    M = np.asarray(M, dtype=float)
    lam = np.asarray(lambda_n, dtype=float)
    d = C.shape[-1]
    MC = M @ C
    src = (lam / params.deborah)[..., None, None] * np.eye(d)
    return src - MC - np.swapaxes(MC, -1, -2)


def lyapunov_steady(M, lambda_n: float, De: float) -> np.ndarray:
    """Solve ``M C + C M^T = (lambda_n/De) I`` for symmetric ``C``.

    The unknowns are the ``d(d+1)/2`` upper-triangular entries of ``C``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = M.shape[0]
    if np.linalg.eigvals(M).real.min() <= 0:
        raise ValueError("M has an eigenvalue with nonpositive real part: no stable steady state")
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    index = {p: k for k, p in enumerate(pairs)}

    def col(a, b):
        return index[(a, b) if a <= b else (b, a)]

    A = np.zeros((len(pairs), len(pairs)))
    rhs = np.zeros(len(pairs))
    for r, (i, j) in enumerate(pairs):
        # (M C)_ij + (C M^T)_ij = sum_k M_ik C_kj + C_ik M_jk
        for k in range(d):
            A[r, col(k, j)] += M[i, k]
            A[r, col(i, k)] += M[j, k]
        rhs[r] = lambda_n / De if i == j else 0.0
    if np.linalg.cond(A) > 1e14:
        raise ValueError("Lyapunov system is singular")
    sol = np.linalg.solve(A, rhs)
    C = np.empty((d, d))
    for (i, j), v in zip(pairs, sol):
        C[i, j] = C[j, i] = v
    return C


def steady_state(flow: FlowSpec, modes: NormalModes, params: ModelParams, t=0.0) -> BlockCovariance:
    M = deformation_blocks(flow, t, None, modes, params)
    return BlockCovariance(np.stack([lyapunov_steady(Mn, ln, params.deborah)
                                     for Mn, ln in zip(M, modes.eigenvalues)]))


# --------------------------------------------------------------- trajectories

@dataclass(frozen=True)
class Trajectory:
    """Stored time levels. ``blocks`` has shape ``(n_times, [cells...,] N, d, d)``."""

    times: np.ndarray
    blocks: np.ndarray
    grid: "SpatialGrid | None" = None

    def __len__(self):
        return self.times.shape[0]

    def state(self, k) -> BlockCovariance:
        if self.grid is not None:
            raise TypeError("spatial trajectory: index cells explicitly via .blocks")
        return BlockCovariance(self.blocks[k])

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.blocks).min())

    def max_asymmetry(self) -> float:
        return float(np.max(np.abs(self.blocks - np.swapaxes(self.blocks, -1, -2))))

    def spatial_mean(self) -> np.ndarray:
        if self.grid is None:
            return self.blocks
        axes = tuple(range(1, 1 + self.grid.dim))
        return self.blocks.mean(axis=axes)


def _is_spd(blocks) -> bool:
    w = np.linalg.eigvalsh(blocks)
    return bool(np.all(np.isfinite(w)) and w.min() > 0)


def _sym(C):
    return 0.5 * (C + np.swapaxes(C, -1, -2))


def _rk4(f, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _guarded_step(f, t, y, dt, where=""):
    """One RK4 step of size ``dt``, retried with halved substeps on SPD loss."""
    for level in range(MAX_HALVINGS + 1):
        n_sub = 2**level
        h = dt / n_sub
        z = y
        ok = True
        for s in range(n_sub):
            z = _sym(_rk4(f, t + s * h, z, h))
            if not _is_spd(z):
                ok = False
                break
        if ok:
            if level:
                log.debug("step at t=%g accepted after %d halvings", t, level)
            return z
    raise IntegrationError(f"positive definiteness lost near t={t:g}{where} "
                           f"(step halved down to {dt / 2**MAX_HALVINGS:g})", time=t)


def _time_grid(t_span, dt):
    t0, t1 = map(float, t_span)
    if not dt > 0:
        raise ValueError("dt must be positive")
    if t1 < t0:
        raise ValueError("t_span must be increasing")
    n = int(round((t1 - t0) / dt))
    if n == 0 or abs(t0 + n * dt - t1) > 1e-9 * max(1.0, abs(t1)):
        n = max(1, int(np.ceil((t1 - t0) / dt - 1e-12)))
    return t0, n, (t1 - t0) / n


def integrate_homogeneous(initial: BlockCovariance, flow: FlowSpec, modes: NormalModes, params: ModelParams,
                          t_span, dt, stride: int = 1) -> Trajectory:
    """RK4 integration of the spatially homogeneous closure.

    The step is adjusted so that an integer number of steps covers ``t_span``.
    Every ``stride``-th level is stored, plus the final one.
    """
    if initial.n_blocks != modes.n_modes or initial.d != flow.dim:
        raise ValueError("initial covariance does not match chain / flow dimensions")
    t0, n, dt = _time_grid(t_span, dt)
    lam = modes.eigenvalues

    def f(t, C):
        return rhs_block(C, deformation_blocks(flow, t, None, modes, params), lam, params)

    C = np.array(initial.blocks)
    times, states = [t0], [C.copy()]
    for k in range(1, n + 1):
        C = _guarded_step(f, t0 + (k - 1) * dt, C, dt)
        if k % stride == 0 or k == n:
            times.append(t0 + k * dt)
            states.append(C.copy())
    return Trajectory(np.array(times), np.array(states))


# ----------------------------------------------------------------- spatial runs

@dataclass(frozen=True)
class SpatialGrid:
    """Uniform cell-centred grid on a box in 1 or 2 dimensions."""

    cells: tuple
    box: tuple  # ((lo, hi), ...) per axis

    def __post_init__(self):
        cells = tuple(int(c) for c in np.atleast_1d(self.cells))
        box = tuple(tuple(map(float, b)) for b in np.atleast_2d(self.box))
        if len(cells) not in (1, 2) or len(box) != len(cells):
            raise ValueError("grid must be 1D or 2D with one (lo, hi) pair per axis")
        if min(cells) < 4:
            raise ValueError("need at least 4 cells per axis")
        if any(hi <= lo for lo, hi in box):
            raise ValueError("box bounds must satisfy lo < hi")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "box", box)

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> np.ndarray:
        return np.array([(hi - lo) / m for (lo, hi), m in zip(self.box, self.cells)])

    def axes(self):
        return [lo + (np.arange(m) + 0.5) * (hi - lo) / m for (lo, hi), m in zip(self.box, self.cells)]

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(*cells, dim)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)


@dataclass(frozen=True, eq=False)
class SpatialState:
    """One covariance per cell, ``blocks`` of shape ``(*cells, N, d, d)``."""

    grid: SpatialGrid
    blocks: np.ndarray

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.shape[:self.grid.dim] != self.grid.cells or b.ndim != self.grid.dim + 3:
            raise ValueError(f"blocks must have shape (*{self.grid.cells}, N, d, d), got {b.shape}")
        if np.max(np.abs(b - np.swapaxes(b, -1, -2))) > SYM_TOL * max(1.0, np.abs(b).max()):
            raise ValueError("cell covariances must be symmetric")
        w = np.linalg.eigvalsh(b)
        if w.min() <= 0:
            cell = np.unravel_index(np.argmin(w.min(axis=(-2, -1))), self.grid.cells)
            raise ValueError(f"cell {cell} covariance is not positive definite")
        object.__setattr__(self, "blocks", b)

    @classmethod
    def uniform(cls, grid: SpatialGrid, cov: BlockCovariance) -> "SpatialState":
        return cls(grid, np.broadcast_to(cov.blocks, grid.cells + cov.blocks.shape).copy())

    @classmethod
    def from_function(cls, grid: SpatialGrid, fn) -> "SpatialState":
        """Build from ``fn(x) -> (N, d, d)`` evaluated at each cell centre."""
        X = grid.centers().reshape(-1, grid.dim)
        b = np.stack([np.asarray(fn(x), dtype=float) for x in X])
        return cls(grid, b.reshape(grid.cells + b.shape[1:]))


def max_stable_dt(grid: SpatialGrid, params: ModelParams, umax: float) -> float:
    """Largest step allowed by the advection / diffusion restrictions (safety 1/2)."""
    h = float(grid.h.min())
    bounds = [np.inf]
    if umax > 0:
        bounds.append(0.5 * h / umax)
    if params.center_diffusion > 0:
        bounds.append(0.5 * h * h / (2 * grid.dim * params.center_diffusion))
    return float(min(bounds))


def integrate_spatial(initial: SpatialState, flow: FlowSpec, modes: NormalModes, params: ModelParams,
                      grid: SpatialGrid, t_span, dt, stride: int = 1) -> Trajectory:
    """Method of lines for the advection-diffusion-reaction closure with Neumann walls."""
    if initial.grid != grid:
        raise ValueError("initial state lives on a different grid")
    if flow.dim < grid.dim:
        raise ValueError("flow dimension smaller than grid dimension")
    N, d = initial.blocks.shape[-3], initial.blocks.shape[-1]
    if N != modes.n_modes or d != flow.dim:
        raise ValueError("initial state does not match chain / flow dimensions")
    t0, n, dt = _time_grid(t_span, dt)
    X = grid.centers()
    flat_x = X.reshape(-1, grid.dim)
    lam = modes.eigenvalues
    K = N * d * d

    def pad_x(x):
        # flow callbacks see a point in R^d; spatial grids may be lower dimensional
        if grid.dim == flow.dim:
            return x
        out = np.zeros(flow.dim)
        out[:grid.dim] = x
        return out

    def velocity(t):
        v = np.stack([flow.velocity_at(t, pad_x(x))[:grid.dim] for x in flat_x])
        return v.reshape(grid.cells + (grid.dim,))

    def M_field(t):
        G = np.stack([flow.grad_at(t, pad_x(x)) for x in flat_x]).reshape(grid.cells + (1, d, d))
        return (lam / (2.0 * params.deborah))[:, None, None] * np.eye(d) - G

    # sample the velocity over the run to check the advective step restriction
    probe = [velocity(t0 + s * (n * dt)) for s in (0.0, 0.5, 1.0)]
    umax = max(float(np.abs(p).max()) for p in probe)
    limit = max_stable_dt(grid, params, umax)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt={dt:g} exceeds the stability limit {limit:g}", max_dt=limit)

    steady = flow.is_steady() and flow.kind != "custom"
    cache = {}

    def f(t, C):
        key = 0.0 if steady else t
        if key not in cache:
            if len(cache) > 8:
                cache.clear()
            cache[key] = (velocity(t), M_field(t))
        v, M = cache[key]
        flat = C.reshape(grid.cells + (K,))
        trans = _kernels.transport_rhs(flat, v, grid.h, params.center_diffusion).reshape(C.shape)
        return trans + rhs_block(C, M, lam, params)

    C = np.array(initial.blocks)
    times, states = [t0], [C.copy()]
    for k in range(1, n + 1):
        t = t0 + (k - 1) * dt
        C_new = _sym(_rk4(f, t, C, dt))
        w = np.linalg.eigvalsh(C_new)
        if not (np.all(np.isfinite(w)) and w.min() > 0):
            bad = np.unravel_index(np.argmin(np.nan_to_num(w, nan=-np.inf).min(axis=(-2, -1))), grid.cells)
            raise IntegrationError(f"positive definiteness lost in cell {bad} at t={t + dt:g}",
                                   time=t + dt, cell=tuple(int(i) for i in bad))
        C = C_new
        if k % stride == 0 or k == n:
            times.append(t0 + k * dt)
            states.append(C.copy())
    return Trajectory(np.array(times), np.array(states), grid=grid)


# ------------------------------------------------------- upper-convected check

def _central_grad(F, grid: SpatialGrid, ax: int):
    g = np.pad(F, [(1, 1) if a == ax else (0, 0) for a in range(F.ndim)], mode="edge")
    sl_p = [slice(None)] * F.ndim
    sl_m = [slice(None)] * F.ndim
    sl_p[ax] = slice(2, None)
    sl_m[ax] = slice(0, -2)
    return (g[tuple(sl_p)] - g[tuple(sl_m)]) / (2 * grid.h[ax])


def _laplacian(F, grid: SpatialGrid):
    out = np.zeros_like(F)
    for ax in range(grid.dim):
        g = np.pad(F, [(1, 1) if a == ax else (0, 0) for a in range(F.ndim)], mode="edge")
        sl_c = [slice(None)] * F.ndim
        sl_p = list(sl_c)
        sl_m = list(sl_c)
        sl_c[ax] = slice(1, -1)
        sl_p[ax] = slice(2, None)
        sl_m[ax] = slice(0, -2)
        out += (g[tuple(sl_p)] - 2 * g[tuple(sl_c)] + g[tuple(sl_m)]) / grid.h[ax] ** 2
    return out


def upper_convected_check(traj: Trajectory, flow: FlowSpec, modes: NormalModes, params: ModelParams,
                          grid: SpatialGrid | None = None) -> float:
    """Max defect of the extra-stress (upper-convected) form on a stored trajectory.

    Evaluates ``D tau_n/Dt - eps lap tau_n + (lambda_n/De) tau_n - grad u - grad u^T``
    with centred time differences at interior time levels. Spatial derivatives
    use central differences with the same mirrored ghost cells as the solver.
    """
    if len(traj) < 3:
        raise ValueError("need at least three stored time levels")
    grid = traj.grid if grid is None else grid
    t = traj.times
    d = traj.blocks.shape[-1]
    lam = modes.eigenvalues
    I = np.eye(d)
    tau = traj.blocks - I
    worst = 0.0
    for k in range(1, len(t) - 1):
        dtau = (tau[k + 1] - tau[k - 1]) / (t[k + 1] - t[k - 1])
        tk = tau[k]
        if grid is None:
            G = flow.grad_at(t[k])
            adv = 0.0
            lap = 0.0
        else:
            X = grid.centers().reshape(-1, grid.dim)
            full_x = np.zeros((X.shape[0], flow.dim))
            full_x[:, :grid.dim] = X
            G = np.stack([flow.grad_at(t[k], x) for x in full_x]).reshape(grid.cells + (1, d, d))
            u = np.stack([flow.velocity_at(t[k], x)[:grid.dim] for x in full_x]).reshape(grid.cells + (grid.dim,))
            adv = sum(u[..., ax][..., None, None, None] * _central_grad(tk, grid, ax) for ax in range(grid.dim))
            lap = _laplacian(tk, grid)
        Gt = np.swapaxes(G, -1, -2)
        lhs = dtau + adv - (G @ tk + tk @ Gt)
        rhs = params.center_diffusion * lap - (lam / params.deborah)[:, None, None] * tk + G + Gt
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
