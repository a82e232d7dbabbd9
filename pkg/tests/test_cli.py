import json
import subprocess
import sys

import pytest

from mlelab.cli import main


def small_config(path, **kw):
    cfg = dict(family="poisson", params={}, theta0=2.0, delta=0.25, n_grid=[25, 50, 100, 200],
               replications=2000, master_seed=11, z_grid=None, omega=1.0, workers=1)
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


class TestVerifyFamily:
    def test_poisson_passes_on_bounded_b_grid(self, capsys):
        code = main(["verify-family", "poisson", "--theta0", "2", "--delta", "0.25",
                     "--b-grid", "0.5", "50", "12"])
        out = capsys.readouterr().out
        assert code == 0
        assert "normalization" in out and "FAIL" not in out

    def test_poisson_b_fails_near_zero(self, capsys):
        code = main(["verify-family", "poisson", "--theta0", "2", "--delta", "0.25",
                     "--b-grid", "0.0001", "50", "12"])
        assert code == 2
        assert "FAIL" in capsys.readouterr().out

    def test_example62_fails_d1(self, capsys, tmp_path):
        out_json = tmp_path / "v.json"
        code = main(["verify-family", "example62", "--theta0", "0", "--json", str(out_json)])
        assert code == 2
        verdicts = json.loads(out_json.read_text())
        d1 = verdicts["D1"]
        assert not d1["holds_on_grid"]
        assert d1["witness_constants"]["witness_theta"] > 0

    def test_unknown_family(self, capsys):
        assert main(["verify-family", "nope", "--theta0", "1"]) == 1
        assert "nope" in capsys.readouterr().err

    def test_usage_error(self, capsys):
        assert main(["verify-family"]) == 1


class TestRate:
    def test_outputs_and_determinism(self, tmp_path, capsys):
        cfg = small_config(tmp_path / "c.json")
        assert main(["rate", str(cfg), "--out", str(tmp_path / "a")]) == 0
        assert main(["rate", str(cfg), "--out", str(tmp_path / "b"), "--workers", "3"]) == 0
        a = (tmp_path / "a" / "results.csv").read_bytes()
        assert a == (tmp_path / "b" / "results.csv").read_bytes()
        header = a.decode().splitlines()[0].split(",")
        assert header[:4] == ["config_hash", "family", "n", "replications"]
        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        profile = json.loads((tmp_path / "a" / "profile.json").read_text())
        assert manifest["config_hash"] == profile["config_hash"]
        assert manifest["config"]["master_seed"] == 11
        assert "slope=" in capsys.readouterr().out

    def test_seed_override_changes_output(self, tmp_path):
        cfg = small_config(tmp_path / "c.json", n_grid=[25, 50], replications=500)
        main(["rate", str(cfg), "--out", str(tmp_path / "a")])
        main(["rate", str(cfg), "--out", str(tmp_path / "b"), "--seed", "12"])
        assert (tmp_path / "a" / "results.csv").read_bytes() != (tmp_path / "b" / "results.csv").read_bytes()

    def test_replication_floor(self, tmp_path):
        cfg = small_config(tmp_path / "c.json", replications=99)
        assert main(["rate", str(cfg), "--out", str(tmp_path / "o")]) == 1

    def test_malformed(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["rate", str(bad)]) == 1
        assert main(["rate", str(small_config(tmp_path / "c.json", colour="red"))]) == 1

    def test_boundary_gate(self, tmp_path):
        # tiny Poisson samples at a small rate are often all zero
        cfg = small_config(tmp_path / "c.json", theta0=0.2, delta=0.025, n_grid=[1, 2],
                           replications=200, z_grid=[0.5])
        assert main(["rate", str(cfg), "--out", str(tmp_path / "o")]) == 3


class TestBracketDemo:
    def test_normal_collapse(self, capsys):
        code = main(["bracket-demo", "normal_location", "--theta0", "0", "--delta", "0.5",
                     "--n", "20", "--replications", "500"])
        out = capsys.readouterr().out
        assert code == 0
        assert "bracket violations: 0" in out
        spread = float(out.split("max |T+- - (theta_hat - theta0)| = ")[1].split()[0])
        assert spread <= 1e-12

    def test_poisson(self, capsys):
        code = main(["bracket-demo", "poisson", "--theta0", "2", "--delta", "0.5", "--n", "200",
                     "--replications", "2000", "--seed", "4"])
        assert code == 0
        assert "bracket violations: 0" in capsys.readouterr().out

    def test_delta_outside_space(self):
        assert main(["bracket-demo", "poisson", "--theta0", "2", "--delta", "3"]) == 1


class TestOtherCommands:
    def test_hellinger_table(self, capsys):
        assert main(["hellinger-table", "exponential", "--theta0", "1",
                     "--thetas", "0.5", "2", "4"]) == 0
        assert "0.4" in capsys.readouterr().out

    def test_tail(self, capsys):
        assert main(["tail", "normal_location", "--theta0", "0", "--delta", "1",
                     "--n-grid", "4", "9", "--replications", "5000"]) == 0

    def test_appendix(self, capsys):
        assert main(["appendix-checks"]) == 0

    def test_seed_reproducible(self, capsys):
        argv = ["tail", "poisson", "--theta0", "2", "--delta", "0.5", "--n-grid", "10",
                "--replications", "2000", "--seed", "8"]
        main(argv)
        first = capsys.readouterr().out
        main(argv)
        assert capsys.readouterr().out == first


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "mlelab.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    assert "mle-lab" in r.stdout
