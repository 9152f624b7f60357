"""Acceptance criteria, one test per criterion.

Thresholds are written out here as literals rather than read back from the
suite objects, so a change in ``verification`` cannot silently loosen them.
Each result is also printed as a PASS/FAIL line in the terminal summary.
"""
import numpy as np
import pytest

from gaussclosure import verification as V

RESULTS = {}


def _run(key, fn):
    r = fn()
    RESULTS[key] = r
    return r


def test_01_remainder_orthogonality():
    r = _run("01 remainder orthogonality", V.check_orthogonality)
    assert r.observed["max_moment"] <= 1e-10
    assert r.runtime_s < 5.0


def test_02_tangential_invariance():
    r = _run("02 tangential invariance", V.check_tangency)
    assert r.observed["max_rel_distance"] <= 1e-9
    assert r.runtime_s < 5.0


@pytest.mark.slow
def test_03_closure_vs_ensemble():
    r = _run("03 closure vs ensemble", V.check_equivalence)
    assert r.details["seed"] == 20261016 and r.details["particles"] == 100_000
    assert len(r.details["max_abs_z_per_time"]) == 10
    assert r.observed["max_abs_z"] <= 3.0
    assert r.runtime_s < 60.0


def test_04_gaussian_exactness_grid():
    r = _run("04 gaussian exactness (grid)", V.check_exactness)
    assert r.observed["runtime"] < 120.0
    assert 1.6 <= r.observed["refinement_ratio"] <= 2.5
    assert r.observed["l1_256"] <= 5e-3


def test_05_steady_shear_closed_form():
    r = _run("05 steady shear", V.check_steady_shear)
    assert len(r.details["triples"]) == 10
    assert r.observed["max_abs_err"] <= 1e-12


def test_06_relaxation_spectrum():
    r = _run("06 relaxation spectrum", V.check_relaxation)
    assert r.observed["max_rel_rate_err"] <= 0.01
    assert r.runtime_s < 5.0


def test_07_spd_preservation():
    r = _run("07 SPD preservation", V.check_spd)
    assert r.observed["min_eigenvalue"] > 0.0
    assert {"shear_5.0", "osc_ext_0.4", "spatial_shear_5", "spatial_osc_ext_0.4"} <= set(r.details)


def test_08_mass_conservation():
    r = _run("08 mass conservation", V.check_mass)
    assert r.observed["grid_mass_drift_per_time"] <= 1e-10
    assert r.observed["quadrature_mass_err"] <= 1e-10


def test_09_residual_identity():
    r = _run("09 residual identity", V.check_residual)
    assert r.observed["max_rel_err"] <= 1e-9


def test_10_upper_convected_equivalence():
    r = _run("10 upper-convected equivalence", V.check_convected)
    ratios = np.array(list(r.details["ratios"].values()))
    assert np.all((ratios >= 3.5) & (ratios <= 4.5))


def test_11_spatial_mean_dynamics():
    r = _run("11 spatial mean dynamics", V.check_spatial_mean)
    assert r.observed["max_abs_err"] <= 1e-8
