import filecmp
import os

import pytest

from henon_spde.cli import main
from henon_spde.config import load_config
from henon_spde.io import read_csv

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

SMALL_ESTIMATE = """\
seed = 1
time.nodes = 16
noise.m_max = 4
batch.seeds = 2
"""


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_malformed_config_exits_2_with_line(tmp_path, capsys):
    cfg = write(tmp_path, "bad.conf", "seed = 1\nhurst 0.8\n")
    assert run("estimate-time", "--config", cfg, "--out", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "bad.conf:2:" in err
    manifest = load_config(tmp_path / "o" / "manifest.txt")
    assert not any(k.startswith("config.") for k in manifest)
    text = (tmp_path / "o" / "manifest.txt").read_text()
    assert "exit_code = 2" in text


def test_unknown_key_and_invalid_parameters_exit_2(tmp_path):
    cfg = write(tmp_path, "a.conf", "hurts = 0.8\n")
    assert run("estimate-time", "--config", cfg, "--out", tmp_path / "a") == 2
    cfg = write(tmp_path, "b.conf", "q = 2.5\n")
    assert run("estimate-time", "--config", cfg, "--out", tmp_path / "b") == 2


def test_unsupported_branch_exits_3(tmp_path):
    cfg = write(tmp_path, "f.conf", "hurst = 0.4\n")
    assert run("validate-fbm", "--config", cfg, "--out", tmp_path / "o") == 3


def test_immediate_infeasibility_exits_4(tmp_path):
    cfg = write(tmp_path, "i.conf", SMALL_ESTIMATE + "solver.M = 0.001\n")
    assert run("estimate-time", "--config", cfg, "--out", tmp_path / "o") == 4
    text = (tmp_path / "o" / "manifest.txt").read_text()
    assert "infeasible.binding = T1" in text


def test_override_reproduces_closed_form(tmp_path):
    out = tmp_path / "o"
    assert run("estimate-time", "--config", os.path.join(CONFIGS, "estimate_time_override.conf"),
               "--out", out) == 0
    row = read_csv(out / "certificates.csv")[0]
    cell = 2e-5 / 4096
    assert abs(float(row["T_star"]) - 4.0**-8) <= cell
    assert row["binding"] == "cont1"


def test_estimate_time_is_deterministic_and_rerunnable(tmp_path):
    cfg = write(tmp_path, "e.conf", SMALL_ESTIMATE)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("estimate-time", "--config", cfg, "--out", a) == 0
    assert run("estimate-time", "--config", cfg, "--out", b) == 0
    assert run("estimate-time", "--config", a / "manifest.txt", "--out", c) == 0
    for name in ("certificates.csv", "summary.csv"):
        assert filecmp.cmp(a / name, b / name, shallow=False)
        assert filecmp.cmp(a / name, c / name, shallow=False)


def test_larger_data_shrinks_existence_time(tmp_path):
    small = write(tmp_path, "s.conf", SMALL_ESTIMATE)
    large = write(tmp_path, "l.conf", SMALL_ESTIMATE + "u0.amplitude = 0.5\n")
    assert run("estimate-time", "--config", small, "--out", tmp_path / "s") == 0
    assert run("estimate-time", "--config", large, "--out", tmp_path / "l") == 0
    med = lambda d: float(read_csv(d / "summary.csv")[0]["T_star_median"])  # noqa: E731
    assert med(tmp_path / "l") < med(tmp_path / "s")


def test_sweep_validity_flips(tmp_path):
    out = tmp_path / "o"
    assert run("sweep", "--config", os.path.join(CONFIGS, "sweep.conf"), "--out", out) == 0
    rows = read_csv(out / "sweep.csv")
    assert len(rows) == 30
    for r in rows:
        q, H = float(r["q"]), float(r["hurst"])
        assert (r["valid_q"] == "true") == (q > 3.0)
        assert (r["valid_hurst"] == "true") == (H > 0.75)
        assert (r["valid"] == "true") == (q > 3.0 and H > 0.75)
        if r["alpha"]:
            assert float(r["alpha"]) == pytest.approx(float(r["alpha_recomputed"]), abs=1e-12)
    assert sum(r["valid"] == "true" for r in rows) == 6


def test_sweep_over_budget_exits_2_before_work(tmp_path):
    cfg = write(tmp_path, "s.conf", "sweep.q = 4, 5, 6\nsweep.hurst = 0.8, 0.9\nsweep.max_points = 5\n")
    out = tmp_path / "o"
    assert run("sweep", "--config", cfg, "--out", out) == 2
    assert not (out / "sweep.csv").exists()


def test_simulate_ode_oracle(tmp_path):
    cfg = write(tmp_path, "ode.conf",
                open(os.path.join(CONFIGS, "simulate_ode_oracle.conf")).read()
                .replace("time.nodes = 512", "time.nodes = 128"))
    out = tmp_path / "o"
    assert run("simulate", "--config", cfg, "--out", out) == 0
    rows = read_csv(out / "norms.csv")
    assert "oracle" in ",".join(rows[0].keys())
    assert (out / "plot_norms.py").exists()
    assert any(name.endswith(".fld") for name in os.listdir(out / "snapshots"))
