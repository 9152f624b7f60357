import csv
import json

import numpy as np
import pytest

from gaussclosure import cli


def _write(tmp_path, cfg, name="cfg"):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def _rows(path):
    with open(path) as fh:
        r = list(csv.DictReader(fh))
    return r


BASE = {"chain": {"N": 2, "d": 2}, "params": {"De": 1.0},
        "flow": {"kind": "simple_shear", "rate": 1.0},
        "integrator": {"dt": 0.01, "t_end": 1.0, "stride": 50}}


def _cfg(**over):
    c = json.loads(json.dumps(BASE))
    c.update(over)
    return c


def test_equilibrium_has_zero_stress(tmp_path):
    cfg = _cfg(flow={"kind": "zero"})
    assert cli.main(["run", _write(tmp_path, cfg, "eq"), "--output-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "eq_traj.csv")
    assert len(rows) == 3
    for r in rows:
        for k in ("tau_00", "tau_01", "tau_10", "tau_11"):
            assert abs(float(r[k])) < 1e-14


def test_shear_relaxes_to_lyapunov_state(tmp_path):
    cfg = _cfg(integrator={"dt": 0.01, "t_end": 40.0, "stride": 4000}, output={"prefix": "shear"})
    assert cli.main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path)]) == 0
    last = _rows(tmp_path / "shear_traj.csv")[-1]
    got = [float(last[k]) for k in ("C1_00", "C1_01", "C1_10", "C1_11")]
    np.testing.assert_allclose(got, [3.0, 1.0, 1.0, 1.0], atol=1e-9)
    meta = json.loads((tmp_path / "shear_meta.json").read_text())
    assert meta["config"] == cfg
    assert meta["columns"][:3] == ["t", "C1_00", "C1_01"]
    assert "numpy" in meta["versions"]


def test_invalid_deborah_is_schema_error(tmp_path, capsys):
    cfg = _cfg(params={"De": 0})
    code = cli.main(["run", _write(tmp_path, cfg, "bad"), "--output-dir", str(tmp_path)])
    assert code == cli.EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config" and "De" in err["message"]
    assert json.loads((tmp_path / "bad_error.json").read_text())["exit_code"] == cli.EXIT_CONFIG
    assert not (tmp_path / "bad_traj.csv").exists()


@pytest.mark.parametrize("mutate", [
    lambda c: c.pop("flow"),
    lambda c: c["chain"].update(N=0),
    lambda c: c["integrator"].update(dt=-1),
    lambda c: c["flow"].update(kind="vortex"),
    lambda c: c.update(initial={"kind": "blocks", "blocks": [[[1, 0], [0, 1]]]}),
    lambda c: c.update(initial={"kind": "blocks", "blocks": [[[1, 2], [2, 1]], [[1, 0], [0, 1]]]}),
    lambda c: c.update(oracle={"kind": "grid", "L": 10, "cells": 64}),
    lambda c: c.update(unknown=1),
])
def test_config_errors(tmp_path, mutate):
    cfg = _cfg()
    mutate(cfg)
    assert cli.main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path)]) == cli.EXIT_CONFIG


def test_unparsable_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert cli.main(["run", str(p), "--output-dir", str(tmp_path)]) == cli.EXIT_CONFIG


def test_integration_error_exit(tmp_path):
    cfg = _cfg(params={"De": 1.0, "eps": 0.0},
               flow={"kind": "zero", "advection": [50.0, 0.0]},
               grid={"cells": [8], "box": [[0.0, 1.0]]})
    assert cli.main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path)]) == cli.EXIT_INTEGRATION


def test_oracle_error_exit(tmp_path):
    cfg = _cfg(integrator={"dt": 0.25, "t_end": 0.5, "stride": 1},
               oracle={"kind": "ensemble", "P": 100, "seed": 1})
    assert cli.main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path)]) == cli.EXIT_ORACLE


def test_ensemble_run_reproducible_and_seed_override(tmp_path):
    cfg = _cfg(oracle={"kind": "ensemble", "P": 3000, "seed": 5}, output={"prefix": "e"})
    path = _write(tmp_path, cfg)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["run", path, "--output-dir", str(a)]) == 0
    assert cli.main(["run", path, "--output-dir", str(b)]) == 0
    assert cli.main(["run", path, "--output-dir", str(c), "--seed", "6"]) == 0
    ta, tb, tc = ((d / "e_traj.csv").read_bytes() for d in (a, b, c))
    assert ta == tb
    assert ta != tc
    assert json.loads((c / "e_meta.json").read_text())["seeds"] == {"ensemble": 6}
    header = ta.decode().splitlines()[0].split(",")
    assert "O2_11" in header and "SE1_00" in header


def test_grid_oracle_columns(tmp_path):
    cfg = {"chain": {"N": 1, "d": 2}, "params": {"De": 1.0}, "flow": {"kind": "simple_shear", "rate": 1.0},
           "integrator": {"dt": 0.01, "t_end": 0.5, "stride": 25},
           "oracle": {"kind": "grid", "L": 10, "cells": 48, "flux": "exponential"}, "output": {"prefix": "g"}}
    assert cli.main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "g_traj.csv")
    assert float(rows[0]["l1"]) < 1e-12
    assert float(rows[-1]["l1"]) < 5e-3


def test_spatial_run_with_residual(tmp_path):
    cfg = _cfg(params={"De": 1.0, "eps": 0.01}, grid={"cells": [6, 6], "box": [[0, 1], [0, 1]], "perturbation": 0.3},
               residual=True, output={"prefix": "s"}, integrator={"dt": 0.01, "t_end": 0.2, "stride": 10})
    cfg["chain"]["N"] = 1
    assert cli.main(["run", _write(tmp_path, cfg), "--output-dir", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "s_traj.csv")
    res = [float(r["residual"]) for r in rows]
    assert res[0] > 0 and res[-1] < res[0]
    assert all(float(r["min_eig"]) > 0 for r in rows)


def test_writer_refuses_non_finite(tmp_path):
    with pytest.raises(cli.NonFiniteError):
        cli.write_csv(tmp_path / "x.csv", ["t", "a"], np.array([[0.0, 1.0], [1.0, np.nan]]))
    with pytest.raises(ValueError):
        cli.write_csv(tmp_path / "x.csv", ["t", "a"], np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert not (tmp_path / "x.csv").exists()


def test_column_layout():
    assert cli.column_names(1, 2, True, "grid") == [
        "t", "C1_00", "C1_01", "C1_10", "C1_11", "conf_00", "conf_01", "conf_10", "conf_11",
        "tau_00", "tau_01", "tau_10", "tau_11", "min_eig", "residual", "G1_00", "G1_01", "G1_10", "G1_11", "l1"]


def test_steady_command(tmp_path, capsys):
    assert cli.main(["steady", _write(tmp_path, _cfg())]) == 0
    out = json.loads(capsys.readouterr().out)
    np.testing.assert_allclose(out["blocks"][0], [[3, 1], [1, 1]], atol=1e-13)
    cfg = _cfg(flow={"kind": "planar_extension", "rate": 2.0})
    assert cli.main(["steady", _write(tmp_path, cfg, "ext")]) == cli.EXIT_INTEGRATION


def test_verify_writes_report(tmp_path, capsys):
    assert cli.main(["verify", "orthogonality", "--output-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify_orthogonality.json").read_text())
    assert rep["passed"] is True
    assert rep["observed"]["max_moment"] <= rep["thresholds"]["max_moment<="]
    assert "[PASS] orthogonality" in capsys.readouterr().out


def test_verify_unknown_suite(capsys):
    assert cli.main(["verify", "nonsense"]) == cli.EXIT_UNKNOWN_SUITE
    assert json.loads(capsys.readouterr().err)["error"] == "unknown_suite"


def test_schema_is_valid_json_schema():
    import jsonschema
    jsonschema.Draft202012Validator.check_schema(cli.load_schema())
