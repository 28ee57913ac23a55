import json
import os

import numpy as np
import pytest

from eoqt.cli import main
from eoqt.config import ConfigError, load_config, parse_config, parse_observable

from conftest import read_csv_rows


def base_config(**over):
    cfg = {
        "model": {"name": "ising",
                  "params": {"h": -0.5, "g": 2.5, "J": 0.5, "n": 3, "gamma": 1.0}},
        "policy": {"type": "number"},
        "dt": 2e-3,
        "t_final": 0.1,
        "trajectories": 8,
        "chi_max": 8,
        "seed": 7,
        "observables": ["pop:1:1", "sz:0"],
        "record_points": 5,
        "strategy": "sequential",
    }
    cfg.update(over)
    return cfg


def write_config(tmp_path, name="cfg.json", **over):
    path = tmp_path / name
    path.write_text(json.dumps(base_config(**over)))
    return str(path)


class TestConfigParsing:
    def test_valid(self, tmp_path):
        cfg = load_config(write_config(tmp_path))
        assert cfg.model.n == 3
        assert cfg.raw["trajectories"] == 8

    def test_missing_field_path_in_error(self):
        bad = base_config()
        del bad["dt"]
        with pytest.raises(ConfigError, match="dt"):
            parse_config(bad)

    def test_nested_error_path(self):
        bad = base_config(policy={"type": "squeeze"})
        with pytest.raises(ConfigError, match=r"\$\.policy\.type"):
            parse_config(bad)

    def test_dt_guard(self):
        with pytest.raises(ConfigError, match="guard"):
            parse_config(base_config(dt=0.5))

    def test_phase_count_mismatch(self):
        with pytest.raises(ConfigError, match="phases"):
            parse_config(base_config(policy={"type": "homodyne", "phases": [0.0, 0.1]}))

    def test_observable_parsing(self):
        ob = parse_observable("sz:0*pop:2:1", 3, 2)
        assert len(ob.factors) == 2
        assert ob.factors[1][0] == 2
        with pytest.raises(ConfigError, match="site"):
            parse_observable("sz:9", 3, 2)
        with pytest.raises(ConfigError, match="unknown"):
            parse_observable("kz:0", 3, 2)

    def test_manifest_round_trip(self, tmp_path):
        cfgfile = write_config(tmp_path)
        out1 = tmp_path / "o1"
        assert main(["run", cfgfile, "--out", str(out1)]) == 0
        out2 = tmp_path / "o2"
        assert main(["run", str(out1 / "manifest.json"), "--out", str(out2)]) == 0
        assert (out1 / "ensemble.csv").read_bytes() == (out2 / "ensemble.csv").read_bytes()


class TestRun:
    def test_exit_zero_and_outputs(self, tmp_path):
        cfgfile = write_config(tmp_path)
        out = tmp_path / "out"
        assert main(["run", cfgfile, "--out", str(out)]) == 0
        for fname in ("ensemble.csv", "choices.csv", "manifest.json"):
            assert (out / fname).exists()
        rows = read_csv_rows(out / "ensemble.csv")
        assert rows[0].keys() == {"t", "quantity", "cut_or_site", "mean", "stderr", "N"}

    def test_exit_one_on_bad_config(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        cfg = base_config()
        del cfg["seed"]
        bad.write_text(json.dumps(cfg))
        assert main(["run", str(bad), "--out", str(tmp_path / "x")]) == 1
        assert "seed" in capsys.readouterr().err

    def test_worker_count_does_not_change_output(self, tmp_path):
        cfgfile = write_config(tmp_path)
        outs = []
        for workers, tag in ((1, "w1"), (8, "w8")):
            out = tmp_path / tag
            assert main(["run", cfgfile, "--out", str(out), "--workers", str(workers)]) == 0
            outs.append((out / "ensemble.csv").read_bytes())
        assert outs[0] == outs[1]

    def test_env_threads_override(self, tmp_path, monkeypatch):
        cfgfile = write_config(tmp_path)
        monkeypatch.setenv("EOQT_THREADS", "2")
        out = tmp_path / "env"
        assert main(["run", cfgfile, "--out", str(out), "--workers", "1"]) == 0
        ref = tmp_path / "ref"
        monkeypatch.delenv("EOQT_THREADS")
        assert main(["run", cfgfile, "--out", str(ref), "--workers", "1"]) == 0
        assert (out / "ensemble.csv").read_bytes() == (ref / "ensemble.csv").read_bytes()

    def test_save_trajectories(self, tmp_path):
        cfgfile = write_config(tmp_path, save_trajectories=True, trajectories=3)
        out = tmp_path / "traj"
        assert main(["run", cfgfile, "--out", str(out)]) == 0
        assert sorted(os.listdir(out / "trajectories")) == ["0.csv", "1.csv", "2.csv"]


class TestOracle:
    def test_agreement_exit_zero(self, tmp_path):
        cfgfile = write_config(tmp_path, trajectories=400, t_final=0.3,
                               strategy="batched")
        out = tmp_path / "oracle"
        code = main(["oracle", cfgfile, "--out", str(out), "--me-dt", "1e-3"])
        assert code == 0
        rows = read_csv_rows(out / "oracle_compare.csv")
        assert all(abs(float(r["z"])) <= 5.0 for r in rows)

    def test_negative_control_exit_three(self, tmp_path):
        cfgfile = write_config(tmp_path, trajectories=400, t_final=0.3,
                               strategy="batched")
        out = tmp_path / "oracle_bad"
        code = main(["oracle", cfgfile, "--out", str(out), "--me-dt", "1e-3",
                     "--me-rate-scale", "2.0"])
        assert code == 3

    def test_coherent_limit_z_zero(self, tmp_path):
        cfgfile = write_config(
            tmp_path,
            model={"name": "ising",
                   "params": {"h": -0.5, "g": 2.5, "J": 0.5, "n": 3, "gamma": 0.0}},
            trajectories=2, t_final=0.2,
        )
        out = tmp_path / "oracle_coh"
        assert main(["oracle", cfgfile, "--out", str(out), "--me-dt", "5e-4"]) == 0
        rows = read_csv_rows(out / "oracle_compare.csv")
        # deterministic trajectories: the z column reflects pure integrator error
        assert all(abs(float(r["z"])) < 1.0 for r in rows)


class TestSmallReproductions:
    def test_bell_command_smoke(self, tmp_path):
        out = tmp_path / "bell"
        assert main(["bell", "--trajectories", "200", "--dt", "2e-3",
                     "--t-final", "0.5", "--points", "6", "--out", str(out)]) == 0
        series = {r["series"] for r in read_csv_rows(out / "bell.csv")}
        assert {"eaee_number", "excess_eoqt", "analytic_number", "e_formation"} <= series
        assert (out / "choices_eoqt.csv").exists()

    def test_rbc_command_smoke(self, tmp_path):
        out = tmp_path / "rbc"
        assert main(["rbc", "--n", "4", "--chi", "4", "--trajectories", "4",
                     "--dt", "0.01", "--t-final", "0.2", "--points", "5",
                     "--phases", "0,1.5707963267948966", "--sizes", "",
                     "--out", str(out)]) == 0
        rows = read_csv_rows(out / "rbc_profile.csv")
        assert {r["series"] for r in rows} == {"hom_0", "hom_1.5708", "number", "eoqt"}

    def test_sweep_phase_smoke(self, tmp_path):
        out = tmp_path / "sweep"
        assert main(["sweep-phase", "--n", "4", "--chi", "4", "--trajectories", "3",
                     "--dt", "0.01", "--t-final", "0.2", "--points", "5",
                     "--steps", "3", "--out", str(out)]) == 0
        rows = read_csv_rows(out / "phase_sweep.csv")
        assert len(rows) == 3
