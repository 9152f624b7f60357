"""Command line driver: ``gaussclosure run | steady | verify``.

Exit codes::

    0   success (verify: suite passed)
    1   verify: suite ran but failed its threshold
    10  configuration does not match the schema (or is inconsistent)
    11  integration failure (loss of positive definiteness, step restriction)
    12  oracle failure
    13  unknown verification suite
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import platform
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import metadata, resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.linalg import block_diag

from . import __version__, _accel, dynamics, gaussian, reference, variational, verification
from .chain import ChainSpec, chain_modes
from .dynamics import ModelParams
from .gaussian import BlockCovariance
from .quadrature import tensor_rule

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 10
EXIT_INTEGRATION = 11
EXIT_ORACLE = 12
EXIT_UNKNOWN_SUITE = 13

RESIDUAL_MAX_DIM = 6


class ConfigError(ValueError):
    pass


class OracleError(RuntimeError):
    pass


class NonFiniteError(ValueError):
    pass


def load_schema() -> dict:
    text = resources.files("gaussclosure").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def validate_config(cfg: dict) -> dict:
    """Schema check plus the cross-field checks JSON schema cannot express."""
    try:
        jsonschema.validate(cfg, load_schema())
    except jsonschema.ValidationError as e:
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {e.message}") from None
    N, d = cfg["chain"]["N"], cfg["chain"]["d"]
    flow = cfg["flow"]
    if flow["kind"] in ("simple_shear", "planar_extension", "oscillatory_extension") and d < 2:
        raise ConfigError(f"flow/kind: {flow['kind']} needs d >= 2")
    if flow["kind"] == "constant":
        G = np.asarray(flow["gradient"], dtype=float)
        if G.shape != (d, d):
            raise ConfigError(f"flow/gradient: expected a {d}x{d} matrix")
    init = cfg.get("initial", {"kind": "identity"})
    if init["kind"] == "blocks":
        b = np.asarray(init["blocks"], dtype=float)
        if b.shape != (N, d, d):
            raise ConfigError(f"initial/blocks: expected shape ({N}, {d}, {d}), got {b.shape}")
        try:
            BlockCovariance(b)
        except ValueError as e:
            raise ConfigError(f"initial/blocks: {e}") from None
    grid = cfg.get("grid")
    if grid is not None:
        if len(grid["cells"]) != len(grid["box"]):
            raise ConfigError("grid: cells and box must have the same length")
        if len(grid["cells"]) > d:
            raise ConfigError("grid: dimension exceeds space dimension d")
        if any(hi <= lo for lo, hi in grid["box"]):
            raise ConfigError("grid/box: need lo < hi")
    adv = flow.get("advection")
    if adv is not None and len(adv) != d:
        raise ConfigError(f"flow/advection: expected {d} components")
    oracle = cfg.get("oracle", {"kind": "none"})
    if oracle["kind"] != "none" and grid is not None:
        raise ConfigError("oracle: oracles are only available for homogeneous runs")
    if oracle["kind"] == "grid" and N * d > 2:
        raise ConfigError("oracle/grid: configuration dimension N*d must be 1 or 2")
    if cfg.get("residual") and grid is not None and N * d > RESIDUAL_MAX_DIM:
        raise ConfigError(f"residual: indicator limited to N*d <= {RESIDUAL_MAX_DIM}")
    return cfg


def build_flow(fcfg: dict, d: int) -> dynamics.FlowSpec:
    kind = fcfg["kind"]
    adv = fcfg.get("advection")
    if kind == "zero":
        return dynamics.zero_flow(d, adv)
    if kind == "simple_shear":
        return dynamics.simple_shear(fcfg["rate"], d, adv)
    if kind == "planar_extension":
        return dynamics.planar_extension(fcfg["rate"], d, adv)
    if kind == "oscillatory_extension":
        return dynamics.oscillatory_extension(fcfg["rate"], fcfg["omega"], d, adv)
    G = np.asarray(fcfg["gradient"], dtype=float)
    a = np.zeros(d) if adv is None else np.asarray(adv, dtype=float)
    return dynamics.FlowSpec("constant", d, lambda t, x: a, lambda t, x: G, {})


def build_initial(icfg: dict, flow, modes, params, N, d) -> BlockCovariance:
    kind = icfg["kind"]
    if kind == "identity":
        return BlockCovariance.identity(N, d)
    if kind == "blocks":
        return BlockCovariance(np.asarray(icfg["blocks"], dtype=float))
    # stationary state of the flow frozen at t = 0
    try:
        return dynamics.steady_state(flow, modes, params)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise ConfigError(f"initial: no stationary state for this flow ({e})") from None


# ------------------------------------------------------------------ records

def column_names(N: int, d: int, residual: bool, oracle: str) -> list:
    def mat(prefix):
        return [f"{prefix}_{i}{j}" for i in range(d) for j in range(d)]

    cols = ["t"]
    for n in range(1, N + 1):
        cols += mat(f"C{n}")
    cols += mat("conf") + mat("tau") + ["min_eig"]
    if residual:
        cols.append("residual")
    if oracle == "ensemble":
        for n in range(1, N + 1):
            cols += mat(f"O{n}")
        for n in range(1, N + 1):
            cols += mat(f"SE{n}")
    elif oracle == "grid":
        for n in range(1, N + 1):
            cols += mat(f"G{n}")
        cols.append("l1")
    return cols


def write_csv(path: Path, columns: list, rows: np.ndarray) -> None:
    """Fixed column order, shortest round-trip float repr; refuses non-finite values."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != len(columns):
        raise ValueError("row width does not match the header")
    if not np.all(np.isfinite(rows)):
        r, c = np.argwhere(~np.isfinite(rows))[0]
        raise NonFiniteError(f"non-finite value in row {r}, column {columns[c]!r}")
    if np.any(np.diff(rows[:, 0]) <= 0):
        raise ValueError("time column must be strictly increasing")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    path.write_text(buf.getvalue())


def _residual_indicator(traj, grid, modes, params, N, d) -> np.ndarray:
    """Max over cells of ``eps^2 * int rho^2 f``, using central differences of C."""
    if grid is None or params.center_diffusion == 0.0:
        return np.zeros(len(traj))
    rule = tensor_rule(N * d, 5)
    out = np.empty(len(traj))
    for k in range(len(traj)):
        F = traj.blocks[k]
        grads = np.stack([dynamics._central_grad(F, grid, ax) for ax in range(grid.dim)])
        worst = 0.0
        for idx in np.ndindex(*grid.cells):
            cov = BlockCovariance(F[idx])
            deriv = variational.SpatialDerivatives(grad=grads[(slice(None),) + idx])
            worst = max(worst, variational.remainder_norm_sq(deriv, cov, rule))
        out[k] = params.center_diffusion**2 * worst
    return out


@dataclass
class RunResult:
    columns: list
    rows: np.ndarray
    seeds: dict
    extra: dict


def simulate(cfg: dict) -> RunResult:
    N, d = cfg["chain"]["N"], cfg["chain"]["d"]
    p = cfg["params"]
    params = ModelParams(p["De"], p.get("eps", 0.0))
    modes = chain_modes(ChainSpec(N, d))
    flow = build_flow(cfg["flow"], d)
    init = build_initial(cfg.get("initial", {"kind": "identity"}), flow, modes, params, N, d)
    icfg = cfg["integrator"]
    span = (0.0, icfg["t_end"])
    stride = icfg.get("stride", 1)
    gcfg = cfg.get("grid")
    grid = None
    if gcfg is None:
        traj = dynamics.integrate_homogeneous(init, flow, modes, params, span, icfg["dt"], stride)
        blocks = traj.blocks
        min_eig = np.linalg.eigvalsh(blocks).min(axis=(-2, -1))
    else:
        grid = dynamics.SpatialGrid(tuple(gcfg["cells"]), tuple(map(tuple, gcfg["box"])))
        amp = gcfg.get("perturbation", 0.0)
        state = verification._spatial_field(grid, init, amp) if amp > 0 else dynamics.SpatialState.uniform(grid, init)
        traj = dynamics.integrate_spatial(state, flow, modes, params, grid, span, icfg["dt"], stride)
        blocks = traj.spatial_mean()
        cell_axes = tuple(range(1, 1 + grid.dim))
        min_eig = np.linalg.eigvalsh(traj.blocks).min(axis=(-2, -1)).min(axis=cell_axes)

    conf = blocks.sum(axis=1)
    tau = conf - N * np.eye(d)
    parts = [traj.times[:, None], blocks.reshape(len(traj), -1), conf.reshape(len(traj), -1),
             tau.reshape(len(traj), -1), min_eig[:, None]]
    residual = bool(cfg.get("residual", False))
    if residual:
        parts.append(_residual_indicator(traj, grid, modes, params, N, d)[:, None])

    ocfg = cfg.get("oracle", {"kind": "none"})
    seeds, extra = {}, {}
    try:
        if ocfg["kind"] == "ensemble":
            odt = ocfg.get("dt", icfg["dt"])
            run = reference.run_ensemble(init, flow, modes, params, traj.times, odt, ocfg["P"], ocfg["seed"])
            seeds["ensemble"] = ocfg["seed"]
            rep = reference.compare_closure(run, traj, traj.times)
            parts += [run.means().reshape(len(traj), -1), run.stderrs().reshape(len(traj), -1)]
            extra["ensemble"] = {"max_abs_z": rep.max_abs_z, "max_abs_gap": rep.max_gap, "dt": odt}
        elif ocfg["kind"] == "grid":
            g = reference.GridDensity.from_gaussian(init, ocfg["L"], ocfg["cells"])
            flux = ocfg.get("flux", "upwind")

            def Mfull(t):
                return block_diag(*dynamics.deformation_blocks(flow, t, None, modes, params))

            dens = [g]
            for t0, t1 in zip(traj.times[:-1], traj.times[1:]):
                dens.append(reference.grid_evolve(dens[-1], Mfull, modes, params.deborah, (t0, t1), flux=flux))
            mom = np.stack([gaussian_blocks(gd.second_moments(), N, d) for gd in dens])
            rep = reference.compare_closure(dens, traj, traj.times)
            parts += [mom.reshape(len(traj), -1), rep.l1[:, None]]
            extra["grid"] = {"max_l1": rep.max_l1, "flux": flux,
                             "mass_final": dens[-1].mass(), "boundary_mass": dens[-1].boundary_mass()}
    except (ValueError, FloatingPointError) as e:
        raise OracleError(str(e)) from e

    rows = np.hstack(parts)
    return RunResult(column_names(N, d, residual, ocfg["kind"]), rows, seeds, extra)


def gaussian_blocks(full, N, d) -> np.ndarray:
    return np.stack([full[n * d:(n + 1) * d, n * d:(n + 1) * d] for n in range(N)])


def _versions() -> dict:
    out = {"gaussclosure": __version__, "python": platform.python_version(), "kernel_backend": _accel.backend()}
    for dist in ("numpy", "scipy", "numba", "jsonschema"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(verification._jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _fail(code: int, kind: str, message: str, out_dir: Path | None = None, prefix: str | None = None, **info) -> int:
    err = {"error": kind, "exit_code": code, "message": message, **info}
    print(json.dumps(verification._jsonable(err)), file=sys.stderr)
    if out_dir is not None and prefix is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            _write_json(out_dir / f"{prefix}_error.json", err)
        except OSError:
            pass
    return code


# ---------------------------------------------------------------- commands

def _load(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"not valid JSON: {e}") from None
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None


def cmd_run(args) -> int:
    out_dir = Path(args.output_dir)
    prefix = Path(args.config).stem
    try:
        cfg = _load(args.config)
        if args.seed is not None and isinstance(cfg.get("oracle"), dict) and cfg["oracle"].get("kind") == "ensemble":
            cfg["oracle"]["seed"] = args.seed
        validate_config(cfg)
        prefix = cfg.get("output", {}).get("prefix", prefix)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", str(e), out_dir, prefix)
    try:
        res = simulate(cfg)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", str(e), out_dir, prefix)
    except dynamics.CFLError as e:
        return _fail(EXIT_INTEGRATION, "integration", str(e), out_dir, prefix, max_dt=e.max_dt)
    except dynamics.IntegrationError as e:
        return _fail(EXIT_INTEGRATION, "integration", str(e), out_dir, prefix, time=e.time, cell=e.cell)
    except OracleError as e:
        return _fail(EXIT_ORACLE, "oracle", str(e), out_dir, prefix)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        write_csv(out_dir / f"{prefix}_traj.csv", res.columns, res.rows)
    except NonFiniteError as e:
        return _fail(EXIT_INTEGRATION, "integration", str(e), out_dir, prefix)
    meta = {"config": cfg, "columns": res.columns, "versions": _versions(), "seeds": res.seeds,
            "oracle_summary": res.extra, "created": datetime.now(timezone.utc).isoformat(),
            "rows": int(res.rows.shape[0])}
    _write_json(out_dir / f"{prefix}_meta.json", meta)
    print(f"wrote {out_dir / (prefix + '_traj.csv')} ({res.rows.shape[0]} rows)")
    return EXIT_OK


def cmd_steady(args) -> int:
    try:
        cfg = validate_config(_load(args.config))
        N, d = cfg["chain"]["N"], cfg["chain"]["d"]
        params = ModelParams(cfg["params"]["De"], cfg["params"].get("eps", 0.0))
        modes = chain_modes(ChainSpec(N, d))
        flow = build_flow(cfg["flow"], d)
        st = dynamics.steady_state(flow, modes, params)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, "config", str(e))
    except (ValueError, np.linalg.LinAlgError) as e:
        return _fail(EXIT_INTEGRATION, "steady_state", str(e))
    conf = gaussian.conformation(st)
    print(json.dumps({"lambda": modes.eigenvalues.tolist(), "blocks": st.to_list(),
                      "conformation": conf.tolist(), "tau": gaussian.extra_stress(st).tolist()}, indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.suite not in verification.SUITES:
        return _fail(EXIT_UNKNOWN_SUITE, "unknown_suite", f"unknown suite {args.suite!r}",
                     suites=sorted(verification.SUITES))
    res = verification.run_suite(args.suite)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = res.to_dict()
    report["versions"] = _versions()
    _write_json(out_dir / f"verify_{args.suite}.json", report)
    print(res.line())
    return EXIT_OK if res.passed else EXIT_VERIFY_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaussclosure", description="Gaussian closure for bead-spring chains")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output-dir", default=".", help="directory for CSV / JSON artifacts")
    common.add_argument("--seed", type=int, default=None, help="override the ensemble oracle seed")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="integrate a configuration")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("steady", parents=[common], help="print the Lyapunov steady state")
    s.add_argument("config")
    s.set_defaults(func=cmd_steady)
    v = sub.add_parser("verify", parents=[common], help="run a verification suite")
    v.add_argument("suite", help=", ".join(sorted(verification.SUITES)))
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
