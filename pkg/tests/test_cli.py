import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from rwbsde.cli import (ConvergenceReport, ReportRow, load_config, main, run_converge,
                        run_penalty_sweep, run_sample_paths)
from rwbsde.errors import ConfigError
from rwbsde.output import read_surface_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

LINEAR_SIN = """
[problem]
preset = linear
b = 1
c = 1
r = 1
terminal = sin(abs(x))
[scheme]
id = {scheme}
n = {n}
root_driver = {root_driver}
"""

REFLECTED = """
[problem]
driver = -abs(y+z)
mu = 1
terminal = 2*sin(x)
barrier = sin(x + 1.5707963267948966) - 2
[scheme]
id = {scheme}
n = {n}
{extra}
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_default_config_surface(tmp_path):
    out = tmp_path / "out"
    assert main(["solve", "--config", str(CONFIGS / "default.ini"), "--out", str(out)]) == 0
    with (out / "surface.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 100 * 101 // 2 + 101
    assert list(rows[0]) == ["j", "t", "k", "x", "y", "z"]
    assert all(r["z"] == "" for r in rows if r["j"] == "100")
    summary = json.loads((out / "summary.json").read_text())
    assert math.isfinite(summary["root"])
    assert summary["validation"]["ok"]
    assert (out / "surface.gp").exists() and (out / "surface.dat").exists()


def test_linear_sin_summary_root(tmp_path):
    cfg = write(tmp_path, LINEAR_SIN.format(scheme="implicit", n=100, root_driver="true"))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    root = json.loads((tmp_path / "summary.json").read_text())["root"]
    assert root == pytest.approx(3.5106, abs=5e-4)


def test_reflected_summary_root_and_d_column(tmp_path):
    cfg = write(tmp_path, REFLECTED.format(scheme="reflected-explicit", n=400, extra=""))
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    root = json.loads((tmp_path / "summary.json").read_text())["root"]
    assert root == pytest.approx(-0.6430, abs=5e-4)
    table = read_surface_csv(tmp_path / "surface.csv")
    assert table.d is not None and table.d[400] is not None
    assert np.all(table.d[400] >= 0) and np.any(table.d[400] > 0)


@pytest.mark.parametrize("config", ["default.ini", "z_interval.ini", "reflected.ini"])
def test_surface_round_trip_is_exact(tmp_path, config):
    assert main(["solve", "--config", str(CONFIGS / config), "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    table = read_surface_csv(tmp_path / "surface.csv")
    assert table.root == summary["root"]
    cfg = load_config(CONFIGS / config)
    from rwbsde import solve
    surf = solve(cfg.spec, cfg.lattice(), cfg.scheme, p=cfg.p)
    for j in range(cfg.n + 1):
        np.testing.assert_array_equal(table.y[j], surf.y[j])
    for j in range(cfg.n):
        np.testing.assert_array_equal(table.z[j], surf.z[j])


def test_converge_linear_sin_rows(tmp_path):
    table = {"implicit": [3.5106, 3.4916, 3.4879, 3.4866, 3.4859],
             "explicit": [3.4171, 3.4716, 3.4785, 3.4819, 3.4840]}
    sweep = [100, 500, 1000, 2000, 5000]
    for scheme, expected in table.items():
        cfg = load_config(write(tmp_path, LINEAR_SIN.format(scheme=scheme, n=100, root_driver="false")))
        rep = run_converge(cfg, sweep)
        roots = [r.root for r in rep.rows]
        for n, got, want in zip(sweep, roots, expected):
            if scheme == "implicit" and n == 500:
                continue  # checked in the acceptance suite
            assert got == pytest.approx(want, abs=5e-4), (scheme, n)
        devs = [abs(d) for d in rep.deviations]
        assert all(b <= a + 1e-4 for a, b in zip(devs, devs[1:]))
        assert rep.reference == pytest.approx(3.48537, abs=1e-5)


def test_converge_quadratic(tmp_path):
    cfg = load_config(CONFIGS / "quadratic.ini")
    rep = run_converge(cfg, [100, 400, 800, 1000, 2000])
    np.testing.assert_allclose([r.root for r in rep.rows],
                               [0.6249, 0.6253, 0.6254, 0.6254, 0.6255], atol=5e-4)


def test_converge_cli_writes_report(tmp_path, capsys):
    cfg = write(tmp_path, LINEAR_SIN.format(scheme="implicit", n=100, root_driver="true"))
    assert main(["converge", "--config", cfg, "--out", str(tmp_path), "--sweep", "200,100"]) == 0
    with (tmp_path / "report.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["n"] for r in rows] == ["100", "200"]
    assert "deviation" in rows[0]
    assert "reference" in capsys.readouterr().out


@pytest.mark.parametrize("n,expected", [
    (400, [-0.6553, -0.6444, -0.6431, -0.6430]),
    (1000, [-0.6550, -0.6441, -0.6427, -0.6425]),
])
def test_penalty_sweep(tmp_path, n, expected):
    cfg = load_config(write(tmp_path, REFLECTED.format(scheme="penalized-explicit-implicit", n=n,
                                                       extra="p = 20")))
    rep = run_penalty_sweep(cfg, [20, 200, 2000, 2e4])
    roots = [r.root for r in rep.rows]
    np.testing.assert_allclose(roots, expected, atol=5e-4)
    assert roots == sorted(roots)
    assert rep.reference_label == "reflected-explicit"
    assert all(r.z_gap is not None for r in rep.rows)


def test_penalty_sweep_flags_explosion_and_continues(tmp_path):
    cfg = load_config(CONFIGS / "z_interval.ini")
    rep = run_penalty_sweep(cfg, [1, 100])
    assert rep.rows[0].error is None
    assert rep.rows[1].error and "exploded" in rep.rows[1].error
    assert math.isnan(rep.rows[1].root)


def test_report_rows_sorted():
    rep = ConvergenceReport("n", [ReportRow(200, 1.0, 0.1), ReportRow(100, 2.0, 0.1)])
    assert [r.param for r in rep.rows] == [100, 200]
    assert rep.differences == [-1.0]
    assert rep.deviations is None


def test_sample_paths_contact_structure(tmp_path):
    cfg = load_config(CONFIGS / "reflected.ini")
    sample = run_sample_paths(cfg, tmp_path, 2, 1)
    inc = np.diff(np.concatenate((np.zeros((2, 1)), sample.cum), axis=1), axis=1)
    assert np.all(inc >= 0)
    assert np.all(np.abs(sample.gap[inc > 0]) <= 1e-12)
    with (tmp_path / "paths.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header == ["path", "j", "t", "B", "y", "z", "d", "K", "y-L"]


def test_sample_paths_deterministic(tmp_path):
    args = ["sample-paths", "--config", str(CONFIGS / "phi.ini"), "--paths", "3", "--seed", "42"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()
    assert (tmp_path / "a" / "paths.gp").exists()


def test_sample_paths_identity_problem(tmp_path):
    cfg = load_config(write(tmp_path, "[problem]\npreset = linear\nterminal = x\n"
                                      "[scheme]\nid = explicit\nn = 64\n"))
    sample = run_sample_paths(cfg, tmp_path, 5, 7)
    np.testing.assert_array_equal(sample.y, sample.B)


def test_oracle_and_validate_commands(tmp_path, capsys):
    assert main(["oracle", "--config", str(CONFIGS / "quadratic.ini")]) == 0
    assert "0.6254" in capsys.readouterr().out
    assert main(["oracle", "--config", str(CONFIGS / "default.ini")]) == 2
    assert main(["validate", "--config", str(CONFIGS / "default.ini"), "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "validation.json").read_text())["scheme"] == "implicit"


@pytest.mark.parametrize("text,code", [
    ("[problem]\ndriver = y + q\nterminal = x\n[scheme]\nid = implicit\nn = 10\n", 2),
    ("[problem]\ndriver = y\nterminal = x\n[scheme]\nid = reflected-implicit\nn = 10\n", 2),
    ("[problem]\ndriver = y\nterminal = x\n[scheme]\nid = magic\nn = 10\n", 2),
    ("[problem]\ndriver = y\nterminal = x\n[scheme]\nid = implicit\nn = 30000\n", 2),
    ("[problem]\ndriver = y\nterminal = x\n[scheme]\nid = implicit\nn = ten\n", 2),
    ("[problem]\ndriver = y\n[scheme]\nid = implicit\nn = 10\n", 2),
    ("[problem]\ndriver = y\nmu = 1\nterminal = abs(x)\ninterval = -1, 1\n"
     "[scheme]\nid = z-constrained-implicit\nn = 10\n", 2),
    ("[problem]\ndriver = y\nterminal = ln(x)\n[scheme]\nid = implicit\nn = 10\n", 4),
    ("[problem]\ndriver = -2*abs(y+z)-1\nmu = 2\nterminal = abs(x)\ninterval = -0.5, 0.8\n"
     "[scheme]\nid = z-constrained-explicit\nn = 400\np = 100\n", 4),
    ("[problem]\ndriver = -5*abs(y+z)\nmu = 5\nterminal = x\n[scheme]\nid = explicit\nn = 20\n"
     "[flags]\nstrict = true\n", 3),
])
def test_exit_codes(tmp_path, text, code):
    assert main(["solve", "--config", write(tmp_path, text), "--out", str(tmp_path)]) == code


def test_strict_flag_and_n_cap(tmp_path):
    text = "[problem]\ndriver = -5*abs(y+z)\nmu = 5\nterminal = x\n[scheme]\nid = explicit\nn = 20\n"
    cfg = write(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert main(["solve", "--config", cfg, "--out", str(tmp_path), "--strict"]) == 3
    assert main(["solve", "--config", cfg, "--out", str(tmp_path), "--n-cap", "10"]) == 2
    assert main(["solve", "--config", str(tmp_path / "missing.ini")]) == 2


def test_load_config_keys():
    cfg = load_config(CONFIGS / "z_interval.ini")
    assert cfg.scheme == "z-constrained-implicit" and cfg.n == 400 and cfg.p == 20
    assert (cfg.spec.constraint.a, cfg.spec.constraint.b) == (-0.5, 0.8)
    with pytest.raises(ConfigError):
        load_config(CONFIGS / "z_interval.ini", n_cap=100)
