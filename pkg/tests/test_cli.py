import csv
import json

import numpy as np
import pytest

from bubbletower import Grid, ModelParams
from bubbletower.bundle import file_hash, load_bundle, read_csv, save_bundle
from bubbletower.cli import (
    EXIT_CONFIG,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    ConfigError,
    RunConfig,
    load_config,
    main,
)
from bubbletower.flow import Trajectory


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_default_config_valid():
    cfg = load_config(None)
    assert cfg == RunConfig()


def test_config_file_roundtrip(tmp_path):
    cfg = RunConfig(n=5, dt=0.02, constants="effective")
    path = tmp_path / "run.cfg"
    path.write_text(cfg.dumps())
    assert load_config(path) == cfg


@pytest.mark.parametrize("text", [
    "n = 4\n",  # no schema version
    "schema_version = 2\nn = 4\n",
    "schema_version = 1\nbogus = 3\n",
    "schema_version = 1\nn = four\n",
    "schema_version = 1\nn 4\n",
    "schema_version = 1\nnu = 0.4\n",
    "schema_version = 1\nmu = 0.3\n",
    "schema_version = 1\nsigma = 1\n",
    "schema_version = 1\ntheta = 0.5\n",
    "schema_version = 1\nN = 2000\n",
])
def test_malformed_config_rejected(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)
    assert main(["constants", "--config", str(path), "--output-dir", str(tmp_path)]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["constants", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_constants_command(tmp_path, capsys):
    assert main(["constants", "--n", "4", "--output-dir", str(tmp_path)]) == EXIT_OK
    rows = {r["name"]: float(r["value"]) for r in _rows(tmp_path / "constants" / "constants.csv")}
    assert rows["a"] == pytest.approx(9 * np.sqrt(2) / 16, abs=1e-9)
    assert rows["b"] == pytest.approx(5 * np.sqrt(2) / 16, abs=1e-9)
    assert rows["c2"] == pytest.approx(-16 / 5, abs=1e-9)
    manifest = json.loads((tmp_path / "constants" / "manifest_constants.json").read_text())
    assert manifest["files"]["constants.csv"] == file_hash(tmp_path / "constants" / "constants.csv")
    assert manifest["config"]["n"] == 4
    assert "a " in capsys.readouterr().out


def test_constants_n3_positive(tmp_path):
    assert main(["constants", "--n", "3", "--output-dir", str(tmp_path)]) == EXIT_OK
    rows = {r["name"]: float(r["value"]) for r in _rows(tmp_path / "constants" / "constants.csv")}
    assert rows["a"] > 0 and rows["b"] > 0 and np.isfinite(rows["a"]) and np.isfinite(rows["b"])


def test_constants_rejects_n2(tmp_path):
    assert main(["constants", "--n", "2", "--output-dir", str(tmp_path)]) == EXIT_CONFIG


def test_csv_header_first_and_stable(tmp_path):
    for _ in range(2):
        assert main(["constants", "--output-dir", str(tmp_path)]) == EXIT_OK
        text = (tmp_path / "constants" / "constants.csv").read_text()
        assert text.splitlines()[0] == "name,value,abserr"
        h = file_hash(tmp_path / "constants" / "constants.csv")
    assert h == file_hash(tmp_path / "constants" / "constants.csv")


def test_spectrum_command(tmp_path):
    assert main(["spectrum", "--N", "2001", "--k", "3", "--output-dir", str(tmp_path)]) == EXIT_OK
    rows = _rows(tmp_path / "spectrum" / "spectrum.csv")
    assert [int(r["index"]) for r in rows] == [-1, 0, 1]
    assert float(rows[0]["lambda"]) == pytest.approx(-2 / 3, abs=1e-3)
    assert float(rows[1]["lambda"]) == pytest.approx(0.0, abs=1e-3)


def test_evolve_constant_stationary(tmp_path):
    code = main(["evolve", "--initial", "constant:1", "--L", "5", "--N", "51", "--dt", "0.1", "--duration", "2",
                 "--snapshot-stride", "5", "--t-start", "-10", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    traj, manifest = load_bundle(tmp_path / "evolve" / "bundle")
    assert np.max(np.abs(traj.array - 1.0)) < 1e-12
    assert manifest["meta"]["initial"] == "constant:1"
    rows = _rows(tmp_path / "evolve" / "curvature_summary.csv")
    assert len(rows) == len(traj)


def test_evolve_two_bubble_writes_neck_law(tmp_path):
    code = main(["evolve", "--L", "20", "--N", "2001", "--dt", "0.05", "--duration", "20", "--snapshot-stride", "100",
                 "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    rows = _rows(tmp_path / "evolve" / "neck_law.csv")
    assert list(rows[0].keys()) == ["t", "xi_hat", "xidot_hat", "minus_b_e2xi"]
    xi = np.array([float(r["xi_hat"]) for r in rows])
    assert np.all(np.diff(xi) < 0)


@pytest.mark.parametrize("initial", ["constant:-1", "nonsense"])
def test_evolve_bad_initial(tmp_path, initial):
    assert main(["evolve", "--initial", initial, "--output-dir", str(tmp_path)]) == EXIT_CONFIG


def test_construct_trivial_horizon(tmp_path):
    code = main(["construct", "--horizon", "0", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    rows = _rows(tmp_path / "construct" / "path.csv")
    assert len(rows) == 1 and float(rows[0]["t"]) == -100.0
    report = json.loads((tmp_path / "construct" / "convergence.json").read_text())
    assert report["converged"]


def test_construct_leading_only_matches_scalar_ode(tmp_path):
    from scipy.integrate import quad

    code = main(["construct", "--leading-only", "--horizon", "100", "--output-dir", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_NOT_CONVERGED)
    rows = _rows(tmp_path / "construct" / "path.csv")
    P = ModelParams(4)
    lam = P.lambda_eta
    ref = quad(lambda s: -np.exp(lam * (-200.0 - s)) * P.a / (2 * P.b * abs(s)), -200.0, -100.0, epsabs=1e-15)[0]
    assert float(rows[0]["eta"]) == pytest.approx(ref, rel=1e-6)
    assert all(float(r["h"]) == 0.0 for r in rows)


def test_norms_missing_bundle(tmp_path):
    assert main(["norms", "--bundle", str(tmp_path / "missing"), "--output-dir", str(tmp_path)]) == EXIT_CONFIG


def test_norms_zero_bundle(tmp_path):
    g = Grid(20.0, 2001)
    tr = Trajectory(g)
    for t in np.arange(-110.0, -100.0 + 1e-9, 0.25):
        tr.append(t, np.zeros(g.N))
    save_bundle(tr, tmp_path / "zero", meta={"t0": -100.0})
    assert main(["norms", "--bundle", str(tmp_path / "zero"), "--output-dir", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "norms" / "manifest_norms.json").read_text())
    assert manifest["star_sigma"] == 0.0 and manifest["star_2_sigma"] == 0.0


def test_bundle_roundtrip_and_hash_check(tmp_path):
    g = Grid(5.0, 51)
    tr = Trajectory(g, meta={"kind": "test"})
    rng = np.random.default_rng(1)
    for t in (0.0, 0.5, 1.0):
        tr.append(t, rng.random(g.N))
    save_bundle(tr, tmp_path / "b", meta={"note": "x"})
    back, manifest = load_bundle(tmp_path / "b")
    assert back.times == tr.times
    assert np.array_equal(back.array, tr.array)
    assert manifest["meta"]["note"] == "x"
    # corrupt one data file
    target = next(p for p in (tmp_path / "b").iterdir() if p.name != "manifest.json")
    target.write_text(target.read_text() + "\n")
    with pytest.raises(ValueError, match="hash"):
        load_bundle(tmp_path / "b")
    load_bundle(tmp_path / "b", verify=False)


def test_read_csv_roundtrip(tmp_path):
    from bubbletower.bundle import write_csv

    p = write_csv(tmp_path / "t.csv", ["a", "b"], [(1.0, 2.0), (3.0, 4.5)])
    cols, data = read_csv(p)
    assert cols == ["a", "b"]
    assert np.array_equal(data, [[1.0, 2.0], [3.0, 4.5]])


def test_diagnose_command(tmp_path):
    from bubbletower import ansatz_z
    from bubbletower.params import xi0

    P = ModelParams(4)
    g = Grid(20.0, 2001)
    tr = Trajectory(g)
    for t in (-1600.0, -400.0, -100.0):
        tr.append(t, ansatz_z(g, xi0(t, P)[0], P).values)
    save_bundle(tr, tmp_path / "tower")
    assert main(["diagnose", "--bundle", str(tmp_path / "tower"), "--output-dir", str(tmp_path)]) == EXIT_OK
    manifest = json.loads((tmp_path / "diagnose" / "manifest_diagnose.json").read_text())
    assert manifest["type2_verdict"] == "type II"
    assert manifest["type2_slope"] == pytest.approx(1.0, abs=0.15)


def test_sweep_constants(tmp_path):
    code = main(["sweep", "--target", "constants", "--param", "n", "--values", "3,4,5", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    for n in (3, 4, 5):
        assert (tmp_path / f"sweep_n_{n}" / "constants" / "constants.csv").is_file()


def test_sweep_errors(tmp_path):
    assert main(["sweep", "--target", "bogus", "--values", "1", "--output-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sweep", "--param", "bogus", "--values", "1", "--output-dir", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sweep", "--values", ",", "--output-dir", str(tmp_path)]) == EXIT_CONFIG
