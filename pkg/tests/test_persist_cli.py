import json
import math

import numpy as np
import pytest

from orbimag import cli, persist
from orbimag import loopspace as ls
from orbimag import bundle

SMALL_SOLVE = {"model": "hopf", "k": 1.0, "N": 16, "P": 10, "sweeps": 3, "N_final": 32}


def write_cfg(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj, indent=2) if not isinstance(obj, str) else obj)
    return p


def run(tmp_path, command, cfg, out="out", *extra):
    p = write_cfg(tmp_path, cfg, f"{command}_{out}.json")
    return cli.main([command, "--config", str(p), "--out", str(tmp_path / out), *extra])


def all_bytes(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


# -- persist -------------------------------------------------------------------

def test_loop_roundtrip_is_exact(tmp_path, rng):
    c = ls.random_config(bundle.hopf(), rng, 16)
    c.T = 1 / 3
    persist.save_loop(tmp_path / "l.csv", c, persist.metadata({"a": 1}), k=1.0, kind="vertical")
    back, side = persist.load_loop(tmp_path / "l.csv")
    assert np.array_equal(back.gamma, c.gamma) and np.array_equal(back.phi, c.phi) and back.T == c.T
    assert side["k"] == 1.0 and side["meta"]["config_sha256"] == persist.config_hash({"a": 1})
    raw = (tmp_path / "l.csv").read_bytes()
    assert b"\r\n" in raw and raw.startswith(b"# code:")
    meta, cols, _ = persist.read_table(tmp_path / "l.csv")
    assert cols[:2] == ["t", "q_1"] and meta["version"] == persist.CODE_VERSION


def test_json_is_safe_and_canonical(tmp_path):
    persist.write_json(tmp_path / "r.json", {"b": np.float64(np.inf), "a": np.arange(2), "c": np.bool_(True)})
    text = (tmp_path / "r.json").read_text()
    d = json.loads(text)
    assert d == {"a": [0, 1], "b": "inf", "c": True}
    assert text.index('"a"') < text.index('"b"')


def test_config_hash_is_order_free():
    assert persist.config_hash({"a": 1, "b": 2}) == persist.config_hash({"b": 2, "a": 1})
    assert persist.config_hash({"a": 1}) != persist.config_hash({"a": 2})
    assert persist.fmt(0.1) == "0.10000000000000001" and persist.fmt(True) == "true"


# -- config errors ---------------------------------------------------------------

def test_unknown_key_reports_position(tmp_path):
    p = write_cfg(tmp_path, '{\n  "model": "hopf",\n  "N_fnal": 64\n}\n', "typo.json")
    with pytest.raises(cli.ConfigError, match=r"typo\.json:3:3: key 'N_fnal': unknown key"):
        cli.load_config(p)
    assert cli.main(["check", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.ExitCode.CONFIG_ERROR


@pytest.mark.parametrize("text", ['{"model": "torus"}', '{"N": "32"}', '{"N": 0}', '{"k_grid": {"start": 1}}',
                                  '{"flow": {"dleta": 1}}', '{"reduce": {"step": 1}}', '[1, 2]',
                                  '{"model": "hopf",}', '{"seed": true}'])
def test_bad_configs(tmp_path, text):
    with pytest.raises(cli.ConfigError):
        cli.load_config(text=text)
    assert run(tmp_path, "check", text) == cli.ExitCode.CONFIG_ERROR


def test_cli_argument_errors(tmp_path):
    assert cli.main(["check", "--config", str(tmp_path / "missing.json")]) == cli.ExitCode.CONFIG_ERROR
    assert run(tmp_path, "check", {}, "o", "--threads", "0") == cli.ExitCode.CONFIG_ERROR
    assert run(tmp_path, "check", {}, "o", "--seed", "-1") == cli.ExitCode.CONFIG_ERROR
    assert run(tmp_path, "verify", {}) == cli.ExitCode.CONFIG_ERROR
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_defaults_and_grid():
    cfg = cli.load_config(text="")
    assert cfg == cli.DEFAULTS
    assert cli.k_grid(cfg) == pytest.approx(list(np.linspace(0.6, 2.0, 10)))
    assert cli.k_grid({"k_grid": [2, 1]}) == [2.0, 1.0]
    merged = cli.load_config(text='{"reduce": {"h": 0.01}}')
    assert merged["reduce"]["h"] == 0.01 and merged["reduce"]["order"] == 4


def test_error_code_mapping():
    from orbimag import reduction as rd
    from orbimag import verify as vf

    assert cli._error_code(rd.MomentConstraintError("x")) == cli.ExitCode.MOMENT_CONSTRAINT
    assert cli._error_code(rd.ConstraintDriftError("x")) == cli.ExitCode.CONSTRAINT_DRIFT
    assert cli._error_code(vf.NotCriticalError("x")) == cli.ExitCode.NOT_CRITICAL
    assert cli._error_code(FileNotFoundError("x")) == cli.ExitCode.IO_ERROR
    assert cli._error_code(np.linalg.LinAlgError("x")) == cli.ExitCode.NUMERICAL_ERROR


# -- commands ----------------------------------------------------------------------

@pytest.mark.slow
def test_check_hopf_defaults(tmp_path):
    assert run(tmp_path, "check", {}) == cli.ExitCode.OK
    rep = json.loads((tmp_path / "out" / "check.json").read_text())
    assert rep["passed"] and len(rep["invariants"]) == 24


def test_check_negative_control(tmp_path):
    cfg = {"metric_corruption": 0.1, "checks": ["fundamental_isometry"]}
    assert run(tmp_path, "check", cfg) == cli.ExitCode.INVARIANT_FAILED
    assert run(tmp_path, "check", {"checks": ["fundamental_isometry"]}, "ok") == cli.ExitCode.OK


def test_reduce_is_reproducible(tmp_path):
    cfg = {"reduce": {"duration": 0.3}}
    assert run(tmp_path, "reduce", cfg, "a") == cli.ExitCode.OK
    assert run(tmp_path, "reduce", cfg, "b") == cli.ExitCode.OK
    a, b = all_bytes(tmp_path / "a"), all_bytes(tmp_path / "b")
    assert set(a) == {"trajectory.csv", "chart.csv", "reduce_report.json"} and a == b
    rep = json.loads(a["reduce_report.json"])
    assert rep["distance"] < 1e-4 and rep["energy_defect"] < 1e-8
    _, cols, data = persist.read_numeric(tmp_path / "a" / "trajectory.csv")
    assert cols[-2:] == ["H", "A_1"] and abs(data[-1, 0] - 0.3) < 1e-15


def test_reduce_random_start_on_spindle(tmp_path):
    cfg = {"model": "spindle", "reduce": {"duration": 0.05, "h": 0.00125, "order": 6}}
    assert run(tmp_path, "reduce", cfg) == cli.ExitCode.OK
    rep = json.loads((tmp_path / "out" / "reduce_report.json").read_text())
    assert rep["chart"] == "annulus"
    assert run(tmp_path, "reduce", {"model": "spindle", "reduce": {"start": "hopf_circle"}}, "x") \
        == cli.ExitCode.CONFIG_ERROR


def test_solve_verify_roundtrip(tmp_path):
    assert run(tmp_path, "solve", SMALL_SOLVE, "a") == cli.ExitCode.OK
    assert run(tmp_path, "solve", SMALL_SOLVE, "b", "--seed", "0") == cli.ExitCode.OK
    assert all_bytes(tmp_path / "a") == all_bytes(tmp_path / "b")
    rep = json.loads((tmp_path / "a" / "solve_report.json").read_text())
    assert rep["status"] == "converged" and rep["verification"]["pass"]
    assert abs(rep["c"] - 2.68113256578) < 1e-9
    sol = str(tmp_path / "a" / "solution.csv")
    assert run(tmp_path, "verify", {"solution": sol}, "v") == cli.ExitCode.OK
    vr = json.loads((tmp_path / "v" / "verify_report.json").read_text())
    assert vr["pass"] is True and vr["meta"]["command"] == "verify"
    _, cols, geo = persist.read_numeric(tmp_path / "v" / "geodesic.csv")
    assert cols == ["s", "x_1", "x_2", "x_3", "x_4"] and geo.shape == (32, 5)


def test_verify_rejects_non_critical(tmp_path, rng):
    c = ls.random_config(bundle.hopf(), rng, 16)
    persist.save_loop(tmp_path / "bad.csv", c, k=1.0, kind="vertical", scheme="spectral")
    assert run(tmp_path, "verify", {"solution": str(tmp_path / "bad.csv")}) == cli.ExitCode.NOT_CRITICAL


def test_scan_small(tmp_path):
    cfg = dict(SMALL_SOLVE, k_grid=[1.0, 1.4])
    del cfg["k"]
    assert run(tmp_path, "scan", cfg) == cli.ExitCode.OK
    out = tmp_path / "out"
    _, cols, rows = persist.read_table(out / "scan.csv")
    assert cols == persist.SCAN_COLUMNS and [r[2] for r in rows] == ["converged", "converged"]
    rep = json.loads((out / "scan_report.json").read_text())
    assert rep["nondecreasing"] and rep["above_eps"] and all(r["verified"] for r in rep["rows"])
    assert (out / "loops" / "k_001.csv").exists()
    assert math.isclose(float(rows[0][1]), 2.68113256578, abs_tol=1e-9)


def test_energy_solve_on_spindle(tmp_path):
    cfg = {"model": "spindle", "path_class": "energy", "N": 16, "P": 10, "sweeps": 3, "N_final": 32}
    assert run(tmp_path, "solve", cfg) == cli.ExitCode.OK
    rep = json.loads((tmp_path / "out" / "solve_report.json").read_text())
    assert rep["verification"]["pass"] and abs(rep["c"] - 14.212230337568675) < 1e-8
    assert not (tmp_path / "out" / "geodesic.csv").exists()
