import math

import numpy as np
import pytest
import yaml

from affinesde.cli import (EXIT_INCONSISTENT, EXIT_NUMERIC, EXIT_OK,
                           EXIT_PARSE, EXIT_UNDECIDED, Scenario,
                           ScenarioError, dump_scenario, load_scenario, main)


def write(tmp_path, doc, name="scn.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(doc))
    return str(p)


def base_doc(**over):
    doc = {
        "name": "demo",
        "drift": {"kind": "constant", "matrix": [[-1.0, 0.5], [0.0, -2.0]]},
        "sigma": {"kind": "envelope", "family": "ExpDecay",
                  "params": {"scale": 1.0, "rate": 1.0},
                  "pattern": [[1.0, 0.0], [0.0, 1.0]]},
        "initial_state": [1.0, 1.0],
        "simulation": {"dt": 0.125, "t_end": 64.0, "paths": 40, "seed": 11},
    }
    doc.update(over)
    return doc


# ---------------------------------------------------------------------------
# scenario parsing
# ---------------------------------------------------------------------------

def test_scenario_roundtrip(tmp_path):
    scn = load_scenario(write(tmp_path, base_doc()))
    again = Scenario.from_dict(yaml.safe_load(dump_scenario(scn)))
    assert scn == again


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, base_doc(extra_field=1)))
    doc = base_doc()
    doc["sigma"]["mystery"] = True
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, doc))
    doc = base_doc()
    doc["simulation"]["step"] = 0.1
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, doc))


def test_out_of_range_parameters_rejected(tmp_path):
    doc = base_doc()
    doc["simulation"]["dt"] = -0.1
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, doc))
    doc = base_doc()
    doc["sigma"]["params"] = {"scale": 1.0}   # missing rate
    with pytest.raises(ScenarioError):
        load_scenario(write(tmp_path, doc))


def test_malformed_file_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: [unclosed")
    assert main(["classify", str(bad)]) == EXIT_PARSE
    assert "scenario error" in capsys.readouterr().err
    assert main(["classify", str(tmp_path / "missing.yaml")]) == EXIT_PARSE


# ---------------------------------------------------------------------------
# classify
# ---------------------------------------------------------------------------

def test_classify_stable(tmp_path, capsys):
    path = write(tmp_path, base_doc(output_dir=str(tmp_path / "out")))
    assert main(["classify", path]) == EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["schema_version"] == 1
    assert report["verdict"]["regime"] == "StableAS"
    assert (tmp_path / "out" / "demo.classify.yaml").exists()


def test_classify_bounded_bracket(tmp_path, capsys):
    doc = base_doc()
    r = 1.0 / math.sqrt(2.0)
    doc["sigma"] = {"kind": "envelope", "family": "LogPower",
                    "params": {"gamma": 1.0},
                    "pattern": [[r, 0.0], [0.0, r]]}
    assert main(["classify", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    v = report["verdict"]
    assert v["regime"] == "BoundedNonConvergent"
    lo, hi = v["epsilon_star_bracket"]
    assert lo <= math.sqrt(2) + 1e-3 and hi >= math.sqrt(2) - 1e-3


def test_classify_unstable_drift(tmp_path, capsys):
    doc = base_doc()
    doc["drift"] = {"kind": "constant", "matrix": [[0.1, 0.0], [0.0, -1.0]]}
    assert main(["classify", write(tmp_path, doc), "--out", str(tmp_path)]) \
        == EXIT_UNDECIDED
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["verdict"]["regime"] == "Undecided"
    assert report["verdict"]["drift_stable"] is False
    assert "stabilise" in report["verdict"]["note"]


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def test_simulate_zero_noise_csv(tmp_path, capsys):
    doc = base_doc()
    doc["sigma"] = {"kind": "constant", "values": [[0.0, 0.0], [0.0, 0.0]]}
    doc["simulation"] = {"dt": 0.5, "t_end": 2.0, "paths": 2, "seed": 0}
    assert main(["simulate", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    rows = (tmp_path / "demo.paths.csv").read_text().splitlines()
    assert rows[0] == "path_id,t,x_1,x_2,norm2"
    assert len(rows) == 1 + 2 * 5
    # the deterministic flow reloads bit-faithfully from 17 significant digits
    from affinesde.linalg import expm
    A = np.array([[-1.0, 0.5], [0.0, -2.0]])
    first = rows[1].split(",")
    last = rows[5].split(",")
    assert [float(x) for x in first[2:4]] == [1.0, 1.0]
    expect = expm(A, 2.0) @ np.array([1.0, 1.0])
    reloaded = np.array([float(x) for x in last[2:4]])
    np.testing.assert_allclose(reloaded, expect, atol=1e-10)
    assert report["paths"] == 2


def test_simulate_flag_overrides(tmp_path, capsys):
    path = write(tmp_path, base_doc())
    assert main(["simulate", path, "--out", str(tmp_path), "--paths", "3",
                 "--horizon", "4.0", "--seed", "5"]) == EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["paths"] == 3 and report["t_end"] == 4.0
    assert report["seed"] == 5


def test_out_env_var(tmp_path, capsys, monkeypatch):
    target = tmp_path / "envout"
    monkeypatch.setenv("AFFINESDE_OUT", str(target))
    doc = base_doc()
    doc["simulation"] = {"dt": 0.5, "t_end": 2.0, "paths": 1, "seed": 0}
    assert main(["simulate", write(tmp_path, doc)]) == EXIT_OK
    capsys.readouterr()
    assert (target / "demo.paths.csv").exists()


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def test_verify_consistent(tmp_path, capsys):
    doc = base_doc()
    doc["simulation"] = {"dt": 0.125, "t_end": 256.0, "paths": 50, "seed": 2}
    assert main(["verify", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["agreement"] == "Consistent"
    assert report["verdict"]["regime"] == "StableAS"


def test_verify_negative_control_inconsistent(tmp_path, capsys):
    # sigma decays so slowly that it is indistinguishable from constant noise
    # over this horizon: the classifier is right asymptotically but the finite
    # run contradicts it
    doc = base_doc()
    doc["sigma"] = {"kind": "envelope", "family": "ExpDecay",
                    "params": {"scale": 1.0, "rate": 1.0e-4},
                    "pattern": [[1.0, 0.0], [0.0, 1.0]]}
    doc["simulation"] = {"dt": 0.125, "t_end": 256.0, "paths": 50, "seed": 2}
    assert main(["verify", write(tmp_path, doc), "--out", str(tmp_path)]) \
        == EXIT_INCONSISTENT
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["agreement"] == "Inconsistent"


def test_verify_tiny_horizon_inconclusive(tmp_path, capsys):
    doc = base_doc()
    doc["simulation"] = {"dt": 0.25, "t_end": 2.0, "paths": 5, "seed": 2}
    assert main(["verify", write(tmp_path, doc), "--out", str(tmp_path)]) \
        == EXIT_UNDECIDED
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["agreement"] == "Inconclusive"


def test_verify_undecided_drift(tmp_path, capsys):
    doc = base_doc()
    doc["drift"] = {"kind": "constant", "matrix": [[0.1, 0.0], [0.0, -1.0]]}
    assert main(["verify", write(tmp_path, doc), "--out", str(tmp_path)]) \
        == EXIT_UNDECIDED
    capsys.readouterr()


# ---------------------------------------------------------------------------
# floquet
# ---------------------------------------------------------------------------

def test_floquet_constant_with_period(tmp_path, capsys):
    doc = base_doc()
    doc["drift"] = {"kind": "constant", "matrix": [[-1.0]], "period": 1.0}
    doc["sigma"] = {"kind": "constant", "values": [[1.0]]}
    doc["initial_state"] = [1.0]
    assert main(["floquet", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    assert report["rho"] == pytest.approx(math.exp(-1.0), rel=1e-8)
    assert report["drift_stable"] is True


def test_floquet_periodic_table(tmp_path, capsys):
    tt = np.linspace(0.0, 2 * math.pi, 257)[:-1]
    doc = base_doc()
    doc["drift"] = {"kind": "periodic", "period": float(2 * math.pi),
                    "times": [float(t) for t in tt],
                    "values": [[[float(math.sin(t))]] for t in tt]}
    doc["sigma"] = {"kind": "constant", "values": [[1.0]]}
    doc["initial_state"] = [1.0]
    assert main(["floquet", write(tmp_path, doc), "--out", str(tmp_path)]) == EXIT_OK
    report = yaml.safe_load(capsys.readouterr().out)
    # piecewise-linear table of sin: multiplier within interpolation error of 1
    assert report["rho"] == pytest.approx(1.0, abs=1e-3)


def test_floquet_needs_period(tmp_path, capsys):
    assert main(["floquet", write(tmp_path, base_doc()),
                 "--out", str(tmp_path)]) == EXIT_PARSE
    assert "period" in capsys.readouterr().err
