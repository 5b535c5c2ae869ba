import csv
import json
import math

import numpy as np
import pytest

from worstrisk.cli import main, validation_ladder
from worstrisk.estimator import EstimatorConfig, minimize_worst_risk
from worstrisk.moments import EnvironmentMoments, estimate_moments, read_sample_csv, save_moments
from worstrisk.risk import WorstRiskObjective
from worstrisk.semgen import SEMSpec, population_moments

FIXTURE = {
    "p": 2,
    "k": 2,
    "B": [[0, 0.5, -0.3, 0, 0, 0, 0.4, 0, 0]],
    "probs": [1.0],
    "noise_cov": [1, 0, 0, 0, 1, 0, 0, 0, 1],
    "shift_covs": [[0, 0, 0, 0, 2, 0, 0, 0, 0.5], [0, 0, 0, 0, 0.3, 0, 0, 0, 1.5]],
    "seed": 7,
}


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(FIXTURE))
    return path


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_files(tmp_path, spec_file):
    out = tmp_path / "d"
    assert main(["simulate", "--spec", str(spec_file), "--n", "1000", "--out", str(out)]) == 0
    for name in ("env_O.csv", "env_A1.csv", "env_A2.csv"):
        assert len(rows(out / name)) == 1000
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 7 and len(man["spec_sha256"]) == 64
    assert set(man["files"]) == {"env_O.csv", "env_A1.csv", "env_A2.csv"}


def test_simulate_is_byte_identical(tmp_path, spec_file):
    for d in ("a", "b"):
        main(["simulate", "--spec", str(spec_file), "--n", "200", "--out", str(tmp_path / d), "--seed", "11"])
    for name in ("env_O.csv", "env_A1.csv", "env_A2.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_bad_probs_exit_2(tmp_path, capsys):
    bad = dict(FIXTURE, probs=[0.9])
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["simulate", "--spec", str(path), "--n", "10", "--out", str(tmp_path / "x")]) == 2
    assert "probs" in capsys.readouterr().err


def test_bad_args_exit_2(tmp_path):
    assert main(["estimate", "--data", str(tmp_path), "--root-mode", "newton"]) == 2
    assert main(["sweep", "--data", str(tmp_path), "--gamma-grid", "2,1"]) == 2


def test_missing_data_exit_4(tmp_path):
    assert main(["estimate", "--data", str(tmp_path / "nope")]) == 4


def test_estimate_k1_matches_inflexion(tmp_path, spec_file):
    d = tmp_path / "d"
    main(["simulate", "--spec", str(spec_file), "--n", "500", "--out", str(d)])
    (d / "env_A2.csv").unlink()
    out = tmp_path / "r.json"
    assert main(["estimate", "--data", str(d), "--gamma", "1.5", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    m1 = estimate_moments(read_sample_csv(d / "env_A1.csv"))
    mO = estimate_moments(read_sample_csv(d / "env_O.csv"))
    g = 1.5
    expected = np.linalg.solve((1 + g) * m1.G + (1 - g) * mO.G, (1 + g) * m1.Z + (1 - g) * mO.Z)
    np.testing.assert_allclose(rep["beta"], expected, rtol=1e-10)
    assert rep["format_version"] == 1 and rep["status"] == "ok"
    assert set(rep["inputs"]) == {"env_O.csv", "env_A1.csv"}


def test_estimate_gamma1_minimizes_max_risk(tmp_path, spec_file):
    d = tmp_path / "d"
    main(["simulate", "--spec", str(spec_file), "--n", "500", "--out", str(d)])
    out = tmp_path / "r.json"
    assert main(["estimate", "--data", str(d), "--out", str(out)]) == 0
    beta = np.array(json.loads(out.read_text())["beta"])
    ms = [estimate_moments(read_sample_csv(d / f"env_A{i}.csv")) for i in (1, 2)]
    mx = lambda b: max(b @ m.G @ b - 2 * b @ m.Z + m.g_Y for m in ms)
    probes = beta + np.random.default_rng(0).standard_normal((5000, 2)) * 0.3
    assert mx(beta) <= min(mx(b) for b in probes) + 1e-10


def test_estimate_scalar_fixture_from_moments(tmp_path):
    path = tmp_path / "m.json"
    save_moments(
        path,
        {
            "O": EnvironmentMoments([[1.0]], [0.0], 1.0),
            "A1": EnvironmentMoments([[2.0]], [1.0], 1.0),
            "A2": EnvironmentMoments([[1.0]], [2.0], 5.0),
        },
    )
    out = tmp_path / "r.json"
    assert main(["estimate", "--data", str(path), "--gamma", "1", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["beta"][0] == pytest.approx(-1 + math.sqrt(5), abs=1e-9)
    assert rep["candidates"][rep["chosen"]]["kind"] == "intersection"


def test_estimate_no_candidate_exit_3(tmp_path):
    path = tmp_path / "m.json"
    save_moments(path, {"O": EnvironmentMoments([[1.0]], [0.0], 0.0), "A1": EnvironmentMoments([[0.5]], [1.0], 1.0)})
    out = tmp_path / "r.json"
    assert main(["estimate", "--data", str(path), "--gamma", "3", "--out", str(out)]) == 3
    rep = json.loads(out.read_text())
    assert rep["status"] == "no_candidate" and rep["beta"] is None


def test_estimate_population_moments_exact(tmp_path):
    spec = SEMSpec.from_dict(FIXTURE)
    pop = {("O" if i == 0 else f"A{i}"): population_moments(spec, i) for i in range(3)}
    path = tmp_path / "pop.json"
    save_moments(path, pop)
    out = tmp_path / "r.json"
    main(["estimate", "--data", str(path), "--gamma", "2", "--out", str(out)])
    ref, _ = minimize_worst_risk(WorstRiskObjective.from_moments([pop["A1"], pop["A2"]], pop["O"], 2.0))
    np.testing.assert_array_equal(json.loads(out.read_text())["beta"], ref)


def test_estimate_bisect_mode(tmp_path, spec_file):
    d = tmp_path / "d"
    main(["simulate", "--spec", str(spec_file), "--n", "300", "--out", str(d)])
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["estimate", "--data", str(d), "--gamma", "2", "--out", str(a)])
    main(["estimate", "--data", str(d), "--gamma", "2", "--root-mode", "bisect", "--cn", "60", "--out", str(b)])
    ra, rb = json.loads(a.read_text()), json.loads(b.read_text())
    assert rb["config"]["root_mode"] == "bisect"
    np.testing.assert_allclose(ra["beta"], rb["beta"], atol=1e-6)


def test_sweep(tmp_path, spec_file):
    d = tmp_path / "d"
    main(["simulate", "--spec", str(spec_file), "--n", "300", "--out", str(d)])
    out = tmp_path / "s.csv"
    assert main(["sweep", "--data", str(d), "--gamma-grid", "0,1", "--out", str(out)]) == 0
    got = rows(out)
    assert len(got) == 2 and all(r["status"] == "ok" for r in got)
    assert [float(r["tau"]) for r in got] == [-0.5, 0.0]


def test_sweep_population_is_monotone(tmp_path):
    spec = SEMSpec.from_dict(FIXTURE)
    path = tmp_path / "pop.json"
    save_moments(path, {("O" if i == 0 else f"A{i}"): population_moments(spec, i) for i in range(3)})
    out = tmp_path / "s.csv"
    main(["sweep", "--data", str(path), "--gamma-grid", "0,0.5,1,2,4,8", "--out", str(out)])
    f = [float(r["f"]) for r in rows(out)]
    assert all(b >= a - 1e-12 for a, b in zip(f, f[1:]))


def test_sweep_single_environment_continuous(tmp_path, spec_file):
    d = tmp_path / "d"
    main(["simulate", "--spec", str(spec_file), "--n", "300", "--out", str(d)])
    (d / "env_A2.csv").unlink()
    out = tmp_path / "s.csv"
    grid = np.round(np.linspace(0, 2, 41), 6)
    main(["sweep", "--data", str(d), "--gamma-grid", ",".join(map(str, grid)), "--out", str(out)])
    got = rows(out)
    assert all(r["status"] == "ok" for r in got)
    B = np.array([[float(r["beta1"]), float(r["beta2"])] for r in got])
    assert np.max(np.abs(np.diff(B, axis=0))) < 0.05


def test_validate_ladder(tmp_path, spec_file, capsys):
    out = tmp_path / "v.csv"
    assert main(["validate", "--spec", str(spec_file), "--gamma", "2", "--ladder", "100,1000", "--out", str(out)]) == 0
    assert len(rows(out)) == 2
    assert "strictly_decreasing" in capsys.readouterr().err


def test_validate_single_rung(tmp_path, spec_file, capsys):
    out = tmp_path / "v.csv"
    main(["validate", "--spec", str(spec_file), "--ladder", "500", "--out", str(out)])
    assert len(rows(out)) == 1
    assert "strictly_decreasing" not in capsys.readouterr().err


def test_validate_zero_shift():
    spec = SEMSpec.from_dict(dict(FIXTURE, shift_covs=[[0] * 9, [0] * 9]))
    pops = []
    for g in (0.0, 1.0, 3.0):
        rows_, bp = validation_ladder(spec, g, (100, 10_000), 7, EstimatorConfig(gamma=g))
        pops.append(bp)
        assert rows_[1][2] < rows_[0][2]
    np.testing.assert_allclose(pops[0], pops[1], atol=1e-9)
    np.testing.assert_allclose(pops[0], pops[2], atol=1e-9)


def test_oracle_check(tmp_path):
    path = tmp_path / "m.json"
    save_moments(
        path,
        {
            "O": EnvironmentMoments([[1.0]], [0.0], 1.0),
            "A1": EnvironmentMoments([[2.0]], [1.0], 1.0),
            "A2": EnvironmentMoments([[1.0]], [2.0], 5.0),
        },
    )
    out = tmp_path / "o.json"
    assert main(["oracle-check", "--data", str(path), "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["within_2_step"] and rep["f_hat_le_f_grid"]
