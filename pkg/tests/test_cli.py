import csv
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from smalldev import cli
from smalldev.config import ConfigError, from_dict, load

ROOT = Path(__file__).resolve().parents[1]
BM = ROOT / "configs" / "brownian_1d.toml"

FAST = ["--n-paths", "2000", "--dt", "1e-3"]


def run(*argv):
    return cli.main([str(a) for a in argv])


# ------------------------------------------------------------------ config

def base():
    return {
        "model": {"dim": 1, "drift": ["0"], "diffusion": [["1"]], "T": 1.0},
        "domain": {"shape": "box", "lo": [0.0], "hi": [1.0]},
    }


def test_config_defaults():
    cfg = from_dict(base())
    assert cfg.principal.z == (0.5,)
    assert cfg.solver.method == "analytic"
    assert cfg.rarefaction.measure.mode == "poisson"


@pytest.mark.parametrize("patch, msg", [
    ({"extra": {}}, "unknown section"),
    ({"model": {"dim": 1, "drift": ["0"], "diffusion": [["1"]], "T": 1.0, "foo": 1}}, "unknown keys"),
    ({"model": {"dim": 1, "drift": ["x2"], "diffusion": [["1"]], "T": 1.0}}, "model"),
    ({"model": {"dim": 1, "drift": ["0"], "diffusion": [["1"]], "T": -1.0}}, "positive"),
    ({"domain": {"shape": "box", "lo": [0.0, 0.0], "hi": [1.0, 1.0]}}, "dimension"),
    ({"domain": {"shape": "cone"}}, "shape"),
    ({"principal": {"z": [2.0]}}, "inside"),
    ({"solver": {"method": "spectral"}}, "method"),
    ({"solver": {"panels": 7}}, "panels"),
    ({"mc": {"exit_correction": "reflect"}}, "exit_correction"),
    ({"mc": {"n_paths": 10}}, "n_paths"),
    ({"rarefaction": {"normalization": "half"}}, "normalization"),
    ({"rarefaction": {"density": "sin("}}, "rarefaction"),
    ({"mc": {"dt": "fast"}}, "number"),
])
def test_config_rejects(patch, msg):
    raw = base()
    raw.update(patch)
    with pytest.raises(ConfigError, match=msg):
        from_dict(raw)


def test_config_load_file():
    cfg = load(BM)
    assert cfg.mc.n_paths == 4_000_000
    assert cfg.model.dim == 1
    assert "[model]" in cfg.source


def test_config_bad_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[model\n")
    with pytest.raises(ConfigError):
        load(p)


# --------------------------------------------------------------------- cli

def test_validate_brownian(tmp_path, capsys):
    assert run("validate", "-c", BM, "-o", tmp_path) == 0
    rep = json.loads((tmp_path / "validate.json").read_text())
    assert rep["mu_ell"] == 1.0 and rep["passed"]
    assert "mu_ell=1.0" in capsys.readouterr().out


def test_eigen_five_records(tmp_path):
    assert run("eigen", "-c", BM, "-o", tmp_path, "--k", 5) == 0
    doc = json.loads((tmp_path / "eigen.json").read_text())
    pairs = doc["pairs"]
    assert len(pairs) == 5
    lams = [p["lambda"] for p in pairs]
    assert lams == sorted(lams)
    assert list(pairs[0]) == ["index", "lambda", "multiplicity_group", "c_coefficient"]
    assert pairs[0]["lambda"] == pytest.approx(math.pi**2 / 2)


def test_eigen_fd_override(tmp_path):
    assert run("eigen", "-c", BM, "-o", tmp_path, "--k", 3, "--method", "fd", "--grid", 64) == 0
    doc = json.loads((tmp_path / "eigen.json").read_text())
    assert doc["provenance"].startswith("finite-difference")
    assert 4.9318 <= doc["pairs"][0]["lambda"] <= 4.9348


def test_principal_and_sweep(tmp_path):
    assert run("principal", "-c", BM, "-o", tmp_path) == 0
    pt = json.loads((tmp_path / "principal.json").read_text())
    assert pt["value"] == pytest.approx(4 / math.pi * math.exp(-math.pi**2 / 2), rel=1e-14)
    rows = list(csv.DictReader((tmp_path / "principal_sweep.csv").open()))
    assert [float(r["eps"]) for r in rows] == [1.0, 0.8, 0.6, 0.5]


def test_v0(tmp_path):
    assert run("v0", "-c", BM, "-o", tmp_path) == 0
    doc = json.loads((tmp_path / "v0.json").read_text())
    assert doc["n_terms"] == 25 and len(doc["terms"]) == 25


def test_compare_three_rows(tmp_path):
    assert run("compare", "-c", BM, "-o", tmp_path, "--eps", "1.0,0.8,0.6", *FAST) == 0
    text = (tmp_path / "compare.csv").read_text()
    rows = list(csv.DictReader(text.splitlines()))
    assert len(rows) == 3
    assert list(rows[0]) == ["eps", "asym", "p_hat", "ci_low", "ci_high", "ratio"]
    assert all(r["ratio"] for r in rows)


def test_mc_and_rarefy(tmp_path):
    assert run("mc", "-c", BM, "-o", tmp_path, *FAST) == 0
    est = json.loads((tmp_path / "mc.json").read_text())
    assert est["n_paths"] == 2000
    assert run("rarefy", "-c", BM, "-o", tmp_path, "--reps", 100, "--dt", "1e-3", "--eps", "1.0",
               "--histogram") == 0
    doc = json.loads((tmp_path / "rarefy.json").read_text())
    assert {"a_T", "mean", "variance", "tv", "reps"} <= set(doc)
    assert doc["a_T"] == pytest.approx(2.0, rel=1e-12)
    assert (tmp_path / "rarefy_hist.csv").exists()


def test_artifacts_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("eigen", "-c", BM, "-o", out, "--k", 7) == 0
        assert run("principal", "-c", BM, "-o", out) == 0
        assert run("compare", "-c", BM, "-o", out, "--eps", "1.0,0.8", *FAST) == 0
    for name in ("eigen.json", "principal.json", "principal_sweep.csv", "compare.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_floats_round_trip(tmp_path):
    assert run("eigen", "-c", BM, "-o", tmp_path, "--k", 3) == 0
    text = (tmp_path / "eigen.json").read_text()
    doc = json.loads(text)
    for p in doc["pairs"]:
        assert repr(p["lambda"]) in text


def test_unknown_flag_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        run("eigen", "-c", BM, "--bogus")
    assert info.value.code == 1


def test_unknown_subcommand_exit_1():
    with pytest.raises(SystemExit) as info:
        run("plot", "-c", BM)
    assert info.value.code == 1


def test_invalid_config_exit_1(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(BM.read_text().replace("[mc]", "[mc]\nworkers = 3"))
    assert run("eigen", "-c", cfg, "-o", tmp_path) == 1
    assert not (tmp_path / "eigen.json").exists()


def test_degenerate_diffusion_exit_1(tmp_path):
    cfg = tmp_path / "deg.toml"
    cfg.write_text(BM.read_text().replace('diffusion = [["1"]]', 'diffusion = [["0"]]'))
    assert run("validate", "-c", cfg, "-o", tmp_path) == 1


def test_numerical_failure_exit_2(tmp_path):
    cfg = tmp_path / "blowup.toml"
    text = BM.read_text().replace('drift = ["0"]', 'drift = ["1/(x1-0.5)"]')
    cfg.write_text(text.replace('diffusion = [["1"]]', 'diffusion = [["0.00001"]]'))
    assert run("mc", "-c", cfg, "-o", tmp_path, "--n-paths", 100, "--dt", "1e-3") == 2
    assert not (tmp_path / "mc.json").exists()


def test_atomic_write_leaves_nothing_on_failure(tmp_path, monkeypatch):
    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(cli.os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_json(tmp_path / "x.json", {"a": 1.0})
    assert list(tmp_path.iterdir()) == []


def test_non_finite_floats_become_null(tmp_path):
    cli.write_json(tmp_path / "x.json", {"a": math.inf, "b": [1.5, math.nan]})
    assert json.loads((tmp_path / "x.json").read_text()) == {"a": None, "b": [1.5, None]}


def test_module_entry_point(tmp_path):
    env = dict(os.environ, SMALLDEV_DISABLE_NUMBA="1")
    res = subprocess.run([sys.executable, "-m", "smalldev", "eigen", "-c", str(BM), "-o",
                          str(tmp_path), "--k", "2"], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "eigen.json").exists()
