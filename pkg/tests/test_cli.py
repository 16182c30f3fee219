import json
import os

import numpy as np
import pytest

from brwcap import cli, green, reporting


@pytest.fixture(scope="module")
def green_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("green") / "g5.brwg"
    rc = cli.main(["green", "--dim", "5", "--radius", "8", "--sigma2", "1.0",
                   "--out", str(path)])
    assert rc == 0
    return str(path)


def test_green_table_file_valid(green_file):
    table = green.load_table(green_file)
    assert table.d == 5 and table.L == 8
    assert os.path.exists(reporting.manifest_path(green_file))


def test_unknown_flag_exits_one():
    assert cli.main(["bcap", "--set", "ball:1", "--frobnicate"]) == 1
    assert cli.main(["nonsense"]) == 1


def test_seed_is_mandatory():
    assert cli.main(["bcap", "--set", "ball:1", "--samples", "5"]) == 1


def test_bcap_json_schema(tmp_path):
    out = tmp_path / "bcap.json"
    rc = cli.main(["bcap", "--set", "ball:1", "--mu", "binary", "--samples",
                   "50", "--rtrunc", "16", "--seed", "7", "--workers", "2",
                   "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    for key in ("set", "mu", "n", "value", "stderr", "bias_bound",
                "per_point", "seed", "version"):
        assert key in doc
    assert doc["set"] == "ball:1"
    man = json.loads(open(reporting.manifest_path(str(out))).read())
    assert man["code_version"]
    assert man["config"]["seed"] == 7


def test_equilibrium_and_profile(tmp_path, green_file):
    out = tmp_path / "eq.json"
    rc = cli.main(["equilibrium", "--set", "ball:1", "--samples", "40",
                   "--rtrunc", "16", "--seed", "3", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert len(doc["per_point"]) == 11
    prof = tmp_path / "prof.csv"
    rc = cli.main(["potential-profile", "--set", "ball:1", "--samples", "40",
                   "--rtrunc", "16", "--seed", "3", "--green", green_file,
                   "--out", str(prof), "--workers", "2"])
    assert rc == 0
    header, rows = reporting.read_csv(str(prof))
    assert header == ["point", "Ge", "stderr"] and len(rows) > 11


def test_energy_and_lp(tmp_path, green_file):
    out = tmp_path / "energy.json"
    rc = cli.main(["energy", "--set", "ball:1", "--kernel", "G", "--green",
                   green_file, "--tol", "1e-9", "--out", str(out)])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["converged"] and doc["duality_gap"] < 1e-9
    out2 = tmp_path / "lp.json"
    for which in ("sup", "inf"):
        rc = cli.main(["lp", "--set", "ball:1", "--which", which, "--green",
                       green_file, "--out", str(out2)])
        assert rc == 0


def test_expmoment_cmd(tmp_path, green_file):
    out = tmp_path / "exp.json"
    rc = cli.main(["expmoment", "--set", "ball:0", "--sup-target", "0.05",
                   "--kind", "full", "--samples", "2000", "--rtrunc", "8",
                   "--seed", "5", "--green", green_file, "--out", str(out),
                   "--workers", "2"])
    assert rc == 0
    doc = json.loads(out.read_text())
    assert doc["sup_Gphi"] == pytest.approx(0.05, abs=1e-9)
    assert doc["estimate"] < 2


def test_settail_and_subset(tmp_path, green_file):
    out = tmp_path / "tail.csv"
    rc = cli.main(["settail", "--set", "ball:1", "--tgrid", "0,5,12",
                   "--samples", "2000", "--rtrunc", "8", "--seed", "5",
                   "--green", green_file, "--out", str(out), "--workers", "2"])
    assert rc == 0
    header, rows = reporting.read_csv(str(out))
    assert header == ["t", "survival", "stderr", "censored"]
    out2 = tmp_path / "subset.json"
    rc = cli.main(["subset", "--set", "segment:3", "--r", "1", "--c0", "0.3",
                   "--samples", "100", "--rtrunc", "24", "--seed", "6",
                   "--out", str(out2), "--workers", "2"])
    assert rc == 0


def test_scaling_csv(tmp_path):
    out = tmp_path / "scal.csv"
    rc = cli.main(["scaling", "--experiment", "kolmogorov", "--seed", "3",
                   "--samples", "500", "--out", str(out), "--workers", "2"])
    assert rc == 0
    header, rows = reporting.read_csv(str(out))
    assert header == ["height", "p", "stat"] and len(rows) == 1
    assert 0.7 < float(rows[0][2]) < 1.3


def test_verify_requires_calibration(tmp_path):
    rc = cli.main(["verify", "--suite", "quick", "--seed", "7", "--outdir",
                   str(tmp_path), "--calibration",
                   str(tmp_path / "missing.json")])
    assert rc == 1


def test_config_file_defaults(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[bcap]\nsamples = 25\nrtrunc = 16\n")
    out = tmp_path / "b.json"
    rc = cli.main(["bcap", "--config", str(cfg), "--set", "ball:1", "--seed",
                   "9", "--out", str(out)])
    assert rc == 0
    assert json.loads(out.read_text())["n"] == 25


def test_csv_roundtrip_exact(tmp_path):
    rows = [(1, 0.1234567890123456789, -3.5), (2, float("1e-17"), 7.0)]
    path = tmp_path / "x.csv"
    reporting.write_csv(rows, ["a", "b", "c"], str(path))
    header, back = reporting.read_csv(str(path))
    for (a, b, c), row in zip(rows, back):
        assert int(row[0]) == a
        assert float(row[1]) == b  # shortest round-trip decimal
        assert float(row[2]) == c
    reporting.write_csv([], ["only", "header"], str(path))
    header, back = reporting.read_csv(str(path))
    assert header == ["only", "header"] and back == []
