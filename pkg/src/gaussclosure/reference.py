"""Brute-force oracles for the configurational Fokker-Planck dynamics.

Two independent routes to the same physics as the closure:

* a particle ensemble for the Ito diffusion
  ``dq = -M q dt + sqrt(Lambda kron I / De) dW`` whose forward equation is
  ``d_t psi = div(M q psi + (Lambda kron I)/(2De) grad psi)``;
* a conservative finite-volume solver for that forward equation on a
  truncated box (configuration dimension 1 or 2).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .chain import ChainSpec, NormalModes
from .dynamics import CFLError, FlowSpec, ModelParams, Trajectory, deformation_blocks
from .gaussian import BlockCovariance, density

log = logging.getLogger(__name__)

CHUNK = 16384
STABILITY_GUARD = 0.1
NEG_TOL = 1e-13
LEAK_WARN = 1e-6


# --------------------------------------------------------------------- streams
#
# Particles are split into fixed chunks of CHUNK consecutive indices. Each
# chunk owns an independent SFC64 stream keyed by (seed, purpose, chunk), so
# the noise a particle sees depends only on its index, never on scheduling.

NOISE, INIT = 0, 1


def _chunks(P):
    for c, start in enumerate(range(0, P, CHUNK)):
        yield c, slice(start, min(start + CHUNK, P))


def _bitgen(seed: int, purpose: int, chunk: int, state=None) -> np.random.SFC64:
    bg = np.random.SFC64(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, purpose, chunk]))
    if state is not None:
        bg.state = state
    return bg


def _initial_states(seed: int, P: int) -> tuple:
    return tuple(_bitgen(seed, NOISE, c).state for c, _ in _chunks(P))


# -------------------------------------------------------------------- ensemble

@dataclass(frozen=True, eq=False)
class Ensemble:
    """Particles in normal coordinates plus the state of their noise streams."""

    particles: np.ndarray  # (P, D)
    rng_seed: int
    rng_states: tuple | None = None

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim != 2 or p.shape[0] < 1:
            raise ValueError("particles must have shape (P, D) with P >= 1")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite particle coordinates")
        object.__setattr__(self, "particles", p)
        if self.rng_states is None:
            object.__setattr__(self, "rng_states", _initial_states(self.rng_seed, p.shape[0]))

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @classmethod
    def sample(cls, cov: BlockCovariance, size: int, seed: int) -> "Ensemble":
        """Draw ``size`` particles from ``N(0, cov)``."""
        L = np.linalg.cholesky(cov.full())
        D = cov.dim
        q = np.empty((size, D))
        for c, sl in _chunks(size):
            gen = np.random.Generator(_bitgen(seed, INIT, c))
            q[sl] = gen.standard_normal((sl.stop - sl.start, D)) @ L.T
        return cls(q, seed)


def _noise_scale(modes: NormalModes, d: int, De: float) -> np.ndarray:
    return np.repeat(np.sqrt(modes.eigenvalues / De), d)


def _as_full(M, D):
    M = np.asarray(M, dtype=float)
    if M.ndim == 3:
        from scipy.linalg import block_diag
        M = block_diag(*M)
    if M.shape != (D, D):
        raise ValueError(f"M must be {D}x{D}")
    return M


class _Stepper:
    """Euler-Maruyama loop over chunks with reusable buffers.

    Advancing ``k`` times is bit-identical to ``k`` calls of ``sde_step``.
    """

    def __init__(self, ensemble: Ensemble):
        self.q = np.array(ensemble.particles)
        self.seed = ensemble.rng_seed
        P = self.q.shape[0]
        self.gens = [np.random.Generator(_bitgen(self.seed, NOISE, c, s))
                     for (c, _), s in zip(_chunks(P), ensemble.rng_states)]
        self.buf = np.empty((min(CHUNK, P), self.q.shape[1]))

    def step(self, M, sigma, dt):
        for (c, sl), gen in zip(_chunks(self.q.shape[0]), self.gens):
            xi = self.buf[:sl.stop - sl.start]
            gen.standard_normal(out=xi)
            _kernels.em_update(self.q[sl], M, sigma, xi, dt)

    def ensemble(self) -> Ensemble:
        return Ensemble(self.q.copy(), self.seed, tuple(g.bit_generator.state for g in self.gens))


def _check_dt(M, dt):
    if dt * np.linalg.norm(M, 2) > STABILITY_GUARD:
        raise ValueError(f"dt*||M|| = {dt * np.linalg.norm(M, 2):.3g} exceeds the stability guard {STABILITY_GUARD}")


def sde_step(ensemble: Ensemble, M, modes: NormalModes, De: float, dt: float) -> Ensemble:
    """One Euler-Maruyama step, ``q <- q - M q dt + sqrt(dt/De) (sqrt(Lambda) kron I) xi``."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if dt == 0:
        return ensemble
    D = ensemble.particles.shape[1]
    M = _as_full(M, D)
    _check_dt(M, dt)
    stepper = _Stepper(ensemble)
    stepper.step(M, _noise_scale(modes, D // modes.n_modes, De), dt)
    return stepper.ensemble()


@dataclass(frozen=True)
class MomentEstimate:
    blocks: np.ndarray  # (N, d, d) per-mode second moments
    stderr: np.ndarray  # (N, d, d)
    full: np.ndarray  # (D, D) all second moments, including cross-mode blocks
    full_stderr: np.ndarray

    def cross_blocks(self, n, m):
        d = self.blocks.shape[-1]
        return self.full[n * d:(n + 1) * d, m * d:(m + 1) * d], self.full_stderr[n * d:(n + 1) * d, m * d:(m + 1) * d]


def empirical_moments(ensemble: Ensemble, spec: ChainSpec) -> MomentEstimate:
    """Second moments ``(1/P) sum q q^T`` with jackknife standard errors.

    For a sample mean the delete-one jackknife variance has the closed form
    ``s^2 / P``, which is what is computed here.
    """
    q = ensemble.particles
    P, D = q.shape
    if P < 2:
        raise ValueError("need at least two particles")
    if D != spec.config_dim:
        raise ValueError("ensemble dimension does not match chain")
    S = q.T @ q / P
    sq = (q**2).T @ (q**2) / P  # E[(q_i q_j)^2]
    var = np.maximum(sq - S**2, 0.0) * P / (P - 1)
    se = np.sqrt(var / P)
    N, d = spec.n_springs, spec.space_dim
    blocks = np.stack([S[n * d:(n + 1) * d, n * d:(n + 1) * d] for n in range(N)])
    bse = np.stack([se[n * d:(n + 1) * d, n * d:(n + 1) * d] for n in range(N)])
    return MomentEstimate(blocks, bse, S, se)


@dataclass(frozen=True)
class EnsembleRun:
    times: np.ndarray
    moments: list  # MomentEstimate per output time
    seed: int
    size: int

    def means(self) -> np.ndarray:
        return np.stack([m.blocks for m in self.moments])

    def stderrs(self) -> np.ndarray:
        return np.stack([m.stderr for m in self.moments])


def run_ensemble(initial: BlockCovariance, flow: FlowSpec, modes: NormalModes, params: ModelParams,
                 output_times, dt: float, size: int, seed: int) -> EnsembleRun:
    """Simulate from ``N(0, initial)`` and record moments at ``output_times``."""
    output_times = np.asarray(output_times, dtype=float)
    if np.any(np.diff(output_times) < 0) or output_times[0] < 0:
        raise ValueError("output times must be nonnegative and increasing")
    spec = ChainSpec(modes.n_modes, flow.dim)
    stepper = _Stepper(Ensemble.sample(initial, size, seed))
    sigma = _noise_scale(modes, flow.dim, params.deborah)
    steady = flow.is_steady()
    M = _as_full(deformation_blocks(flow, 0.0, None, modes, params), spec.config_dim)
    _check_dt(M, dt)
    k, moments = 0, []
    for t_out in output_times:
        n_out = int(round(t_out / dt))
        if abs(n_out * dt - t_out) > 1e-9 * max(1.0, t_out):
            raise ValueError(f"output time {t_out} is not on the dt={dt} grid")
        while k < n_out:
            if not steady:
                M = _as_full(deformation_blocks(flow, k * dt, None, modes, params), spec.config_dim)
                _check_dt(M, dt)
            stepper.step(M, sigma, dt)
            k += 1
        moments.append(empirical_moments(Ensemble(stepper.q, seed, ()), spec))
    return EnsembleRun(output_times, moments, seed, size)


# ------------------------------------------------------------------- grid oracle

@dataclass(frozen=True, eq=False)
class GridDensity:
    half_width: float
    cells: int
    values: np.ndarray  # (cells,) or (cells, cells)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (1, 2) or any(s != self.cells for s in v.shape):
            raise ValueError("values must be (m,) or (m, m) with m = cells")
        if v.min() < -NEG_TOL:
            raise ValueError("density has negative values")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.cells

    def axis(self) -> np.ndarray:
        return -self.half_width + (np.arange(self.cells) + 0.5) * self.h

    def points(self) -> np.ndarray:
        ax = self.axis()
        mesh = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dim)

    def mass(self) -> float:
        return float(self.values.sum() * self.h**self.dim)

    def second_moments(self) -> np.ndarray:
        q = self.points()
        w = self.values.reshape(-1) * self.h**self.dim
        return (q * w[:, None]).T @ q

    def marginal_excess_kurtosis(self) -> np.ndarray:
        q = self.points()
        w = self.values.reshape(-1) * self.h**self.dim
        m = w.sum()
        out = []
        for i in range(self.dim):
            m2 = np.sum(w * q[:, i] ** 2) / m
            m4 = np.sum(w * q[:, i] ** 4) / m
            out.append(m4 / m2**2 - 3.0)
        return np.array(out)

    def boundary_mass(self) -> float:
        v = self.values
        mask = np.zeros(v.shape, dtype=bool)
        for ax in range(v.ndim):
            idx = [slice(None)] * v.ndim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return float(v[mask].sum() * self.h**self.dim)

    @classmethod
    def from_gaussian(cls, cov: BlockCovariance, half_width: float, cells: int) -> "GridDensity":
        """Point values of ``N(0, cov)`` at cell centres, renormalised to unit discrete mass."""
        if cov.dim > 2:
            raise ValueError("grid oracle supports configuration dimension 1 or 2")
        std = np.sqrt(np.diag(cov.full())).max()
        if half_width < 8 * std:
            raise ValueError(f"half width {half_width} < 8 marginal standard deviations ({8 * std:.3g})")
        g = cls(half_width, cells, np.zeros((cells,) * cov.dim))
        vals = density(cov, g.points()).reshape((cells,) * cov.dim)
        vals /= vals.sum() * g.h**cov.dim
        return cls(half_width, cells, vals)


def _bernoulli(z):
    """``z / (exp(z) - 1)``, stable near zero."""
    z = np.asarray(z, dtype=float)
    out = np.ones_like(z)
    small = np.abs(z) < 1e-6
    out[small] = 1.0 - 0.5 * z[small] + z[small] ** 2 / 12.0
    zz = z[~small]
    out[~small] = zz / np.expm1(zz)
    return out


def face_coefficients(v, k, h, flux="upwind"):
    """Two-point face coefficients ``(aL, aR)`` with ``F = aL psi_L - aR psi_R``.

    ``upwind``: donor-cell drift plus central diffusion (first order).
    ``exponential``: Scharfetter-Gummel exponential fitting, exact for
    constant-coefficient 1D steady fluxes; second order at small cell Peclet.
    """
    if flux == "upwind":
        return np.maximum(v, 0.0) + k / h, np.maximum(-v, 0.0) + k / h
    if flux == "exponential":
        pe = v * h / k
        return (k / h) * _bernoulli(-pe), (k / h) * _bernoulli(pe)
    raise ValueError(f"unknown flux {flux!r}")


def _face_velocities(M, axis_pts, dim):
    """Drift ``-M q`` normal to interior faces, one array per axis."""
    h = axis_pts[1] - axis_pts[0]
    faces = axis_pts[:-1] + 0.5 * h
    if dim == 1:
        return [-M[0, 0] * faces]
    Xf, Yc = np.meshgrid(faces, axis_pts, indexing="ij")
    Xc, Yf = np.meshgrid(axis_pts, faces, indexing="ij")
    v0 = -(M[0, 0] * Xf + M[0, 1] * Yc)
    v1 = -(M[1, 0] * Xc + M[1, 1] * Yf)
    return [v0, v1]


def grid_evolve(dens: GridDensity, M, modes: NormalModes, De: float, t_span, dt: float | None = None,
                flux: str = "upwind", safety: float = 0.9) -> GridDensity:
    """Explicit finite-volume evolution of the configurational Fokker-Planck equation.

    ``M`` may be a constant ``D x D`` matrix or a callable ``t -> M``.
    When ``dt`` is omitted the largest positivity-preserving step (times
    ``safety``) is used; an explicit ``dt`` above that bound is rejected.
    """
    D = dens.dim
    d = D // modes.n_modes
    if d * modes.n_modes != D:
        raise ValueError("grid dimension does not match the chain")
    Mfun = M if callable(M) else (lambda t, _M=np.asarray(M, dtype=float): _M)
    kdiag = np.repeat(modes.eigenvalues / (2.0 * De), d)
    h = dens.h
    ax = dens.axis()
    t0, t1 = map(float, t_span)

    def coeffs(t):
        Mt = np.asarray(Mfun(t), dtype=float)
        if Mt.ndim == 3:
            from scipy.linalg import block_diag
            Mt = block_diag(*Mt)
        vs = _face_velocities(Mt, ax, D)
        return [face_coefficients(v, kdiag[i], h, flux) for i, v in enumerate(vs)]

    def rate_bound(cf):
        # diagonal of the update: outflow through every face of a cell
        out = np.zeros(dens.values.shape)
        for i, (al, ar) in enumerate(cf):
            lo = [slice(None)] * D
            hi = [slice(None)] * D
            lo[i] = slice(0, -1)
            hi[i] = slice(1, None)
            out[tuple(lo)] += al
            out[tuple(hi)] += ar
        return float(out.max()) / h

    cf = coeffs(t0)
    rmax = rate_bound(cf)
    for s in (0.5, 1.0):
        rmax = max(rmax, rate_bound(coeffs(t0 + s * (t1 - t0))))
    dt_max = 1.0 / rmax
    if dt is None:
        n = max(1, int(np.ceil((t1 - t0) / (safety * dt_max))))
    else:
        if dt > dt_max:
            raise CFLError(f"dt={dt:g} exceeds the positivity bound {dt_max:g}", max_dt=dt_max)
        n = max(1, int(round((t1 - t0) / dt)))
    step = (t1 - t0) / n
    if step > dt_max:
        raise CFLError(f"step {step:g} exceeds the positivity bound {dt_max:g}", max_dt=dt_max)

    psi = np.array(dens.values)
    m0 = psi.sum() * h**D
    const = not callable(M)
    clip = 0.0
    warnings = []
    for k in range(n):
        if not const:
            cf = coeffs(t0 + k * step)
        if D == 1:
            (al, ar), = cf
            psi = _kernels.fv_step_1d(psi, al, ar, h, step)
        else:
            (a0l, a0r), (a1l, a1r) = cf
            psi = _kernels.fv_step_2d(psi, a0l, a0r, a1l, a1r, h, step)
        neg = psi < 0
        if neg.any():
            if psi.min() < -NEG_TOL:
                log.warning("density undershoot %g at step %d", psi.min(), k)
            clip += float(-psi[neg].sum() * h**D)
            psi[neg] = 0.0
    out = GridDensity(dens.half_width, dens.cells, psi)
    leak = out.boundary_mass()
    if leak > LEAK_WARN:
        warnings.append(f"boundary cells hold mass {leak:.3g} > {LEAK_WARN:g}")
        log.warning(warnings[-1])
    meta = dict(steps=n, dt=step, dt_max=dt_max, flux=flux, clip_mass=clip,
                mass_initial=m0, mass_final=out.mass(), boundary_mass=leak, warnings=warnings)
    return replace(out, meta=meta)


def l1_distance(dens: GridDensity, cov: BlockCovariance) -> float:
    """Discrete L1 distance between the grid density and ``N(0, cov)``."""
    exact = density(cov, dens.points()).reshape(dens.values.shape)
    return float(np.abs(dens.values - exact).sum() * dens.h**dens.dim)


# -------------------------------------------------------------------- comparison

@dataclass(frozen=True)
class ClosureReport:
    times: np.ndarray
    z: np.ndarray | None = None  # (n_times, N, d, d)
    abs_gap: np.ndarray | None = None  # same shape
    l1: np.ndarray | None = None  # (n_times,)

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z))) if self.z is not None else float("nan")

    @property
    def max_gap(self) -> float:
        return float(np.max(self.abs_gap)) if self.abs_gap is not None else float("nan")

    @property
    def max_l1(self) -> float:
        return float(np.max(self.l1)) if self.l1 is not None else float("nan")


def _closure_at(closure: Trajectory, times) -> np.ndarray:
    idx = []
    for t in times:
        k = int(np.argmin(np.abs(closure.times - t)))
        if abs(closure.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"closure trajectory has no level at t={t}")
        idx.append(k)
    return closure.blocks[idx]


def compare_closure(oracle, closure: Trajectory, times) -> ClosureReport:
    """Compare oracle output against the closure trajectory at ``times``.

    ``oracle`` is an ``EnsembleRun`` (z-scores per component), a sequence of
    ``GridDensity`` (L1 density gaps), or a ``Trajectory`` (plain differences).
    """
    times = np.asarray(times, dtype=float)
    C = _closure_at(closure, times)
    if isinstance(oracle, EnsembleRun):
        if oracle.times.shape != times.shape or np.max(np.abs(oracle.times - times)) > 1e-9:
            raise ValueError("oracle and comparison time grids differ")
        gap = oracle.means() - C
        se = oracle.stderrs()
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(se > 0, gap / np.where(se > 0, se, 1.0), np.where(gap == 0, 0.0, np.inf))
        return ClosureReport(times, z=z, abs_gap=np.abs(gap))
    if isinstance(oracle, Trajectory):
        O = _closure_at(oracle, times)
        gap = O - C
        return ClosureReport(times, z=np.zeros_like(gap) if not gap.any() else None, abs_gap=np.abs(gap))
    dens = list(oracle)
    if len(dens) != len(times):
        raise ValueError("oracle and comparison time grids differ")
    l1 = np.array([l1_distance(g, BlockCovariance(c)) for g, c in zip(dens, C)])
    return ClosureReport(times, l1=l1)
