import csv
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

import render  # noqa: E402
from render import RenderError  # noqa: E402

ACCEPT_DIR = os.path.join(os.path.dirname(__file__), "..", "..", "out", "acceptance")


def write_csv(path, header, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)


@pytest.fixture
def bell_dir(tmp_path):
    t = np.linspace(0, 3, 7)
    rows = []
    for series, base in [("excess_number", 0.1), ("excess_homodyne0", 0.05),
                         ("excess_eoqt", 0.02), ("analytic_excess_number", 0.1),
                         ("analytic_excess_homodyne0", 0.05), ("e_formation", 0.5)]:
        err = 0.0 if series.startswith(("analytic", "e_")) else 0.01
        for ti in t:
            rows.append((ti, series, base * np.exp(-ti), err))
    write_csv(tmp_path / "bell.csv", ["t", "series", "value", "stderr"], rows)
    crows = []
    for ti in t:
        for ch in (0, 1):
            frac = "nan" if ti == 0 else min(0.9, 0.3 * ti)
            inv = "nan" if ti == 0 else 1 - min(0.9, 0.3 * ti)
            crows.append((ti, ch, frac, inv, 0.0))
    write_csv(tmp_path / "choices_eoqt.csv",
              ["t", "channel", "frac_number", "frac_homodyne", "mean_phase"], crows)
    return tmp_path


@pytest.fixture
def rbc_dir(tmp_path):
    rows = []
    for series, scale in [("hom_0", 0.3), ("hom_0.785398", 0.8), ("hom_1.5708", 4.0),
                          ("number", 4.1), ("eoqt", 0.35)]:
        for cut in range(1, 12):
            val = scale * np.sin(np.pi * cut / 12)
            rows.append((cut, series, val, 0.05))
    write_csv(tmp_path / "rbc_profile.csv", ["cut", "series", "mean", "stderr"], rows)
    scan = []
    for series, slope in [("hom_0", 0.0), ("hom_1.5708", 0.45)]:
        for n in (8, 12, 16):
            scan.append((n, series, 0.4 + slope * (n - 8) / 2, 0.06))
    write_csv(tmp_path / "rbc_size_scan.csv", ["n", "series", "mean", "stderr"], scan)
    sweep = [(p, 8, 0.4 + 3.0 * np.sin(p) ** 2, 0.05) for p in np.linspace(0, np.pi / 2, 9)]
    write_csv(tmp_path / "phase_sweep.csv", ["phase", "n", "mean", "stderr"], sweep)
    return tmp_path


@pytest.fixture
def oracle_dirs(tmp_path):
    t = np.linspace(0, 2, 9)
    for label, bias in [("number", 0.0), ("hom_pi2", 0.08)]:
        rows = []
        for ti in t:
            me = 0.9 - 0.1 * ti
            rows.append((ti, "pop:0:0", me + bias * ti, 0.01, me, bias * ti / 0.01))
        write_csv(tmp_path / label / "oracle_compare.csv",
                  ["t", "observable", "traj_mean", "traj_stderr", "me_value", "z"], rows)
        erows = []
        for ti in t:
            erows.append((ti, "pop:0:0", "", 0.9 - 0.1 * ti, 0.01, 400))
            erows.append((ti, "ee", "1", 0.2, 0.002, 400))
        write_csv(tmp_path / label / "ensemble.csv",
                  ["t", "quantity", "cut_or_site", "mean", "stderr", "N"], erows)
    return tmp_path


class TestSyntheticInputs:
    def test_fig2b(self, bell_dir, tmp_path):
        out = tmp_path / "fig2b.png"
        render.render("fig2b", str(bell_dir), str(out))
        assert out.stat().st_size > 5000

    def test_fig3a_and_fig3b(self, rbc_dir, tmp_path):
        for job in ("fig3a", "fig3b"):
            out = tmp_path / f"{job}.png"
            render.render(job, str(rbc_dir), str(out))
            assert out.exists()

    def test_sm_views(self, oracle_dirs, tmp_path):
        for job in ("sm_s3", "sm_s4", "sm_s5"):
            out = tmp_path / f"{job}.png"
            render.render(job, str(oracle_dirs), str(out))
            assert out.exists()

    def test_rerender_identical_bytes(self, bell_dir, tmp_path):
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        render.render("fig2b", str(bell_dir), str(a))
        render.render("fig2b", str(bell_dir), str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_missing_column_named_in_error(self, tmp_path):
        write_csv(tmp_path / "bell.csv", ["t", "series", "value"],
                  [(0.0, "excess_number", 0.1)])
        with pytest.raises(RenderError, match="stderr"):
            render.render("fig2b", str(tmp_path), str(tmp_path / "x.png"))

    def test_empty_csv_is_an_error(self, tmp_path):
        write_csv(tmp_path / "bell.csv", ["t", "series", "value", "stderr"], [])
        with pytest.raises(RenderError, match="empty"):
            render.render("fig2b", str(tmp_path), str(tmp_path / "x.png"))
        assert not (tmp_path / "x.png").exists()

    def test_unknown_job_rejected(self, bell_dir, tmp_path):
        with pytest.raises(RenderError, match="unknown figure id"):
            render.render("fig9z", str(bell_dir), str(tmp_path / "x.png"))

    def test_cli_exit_codes(self, bell_dir, tmp_path):
        out = tmp_path / "cli.png"
        assert render.main(["--job", "fig2b", "--in", str(bell_dir), "--out", str(out)]) == 0
        assert render.main(["--job", "fig3a", "--in", str(bell_dir), "--out", str(out)]) == 1


@pytest.mark.acceptance
class TestAcceptanceOutputs:
    """[SECONDARY] render the real acceptance-run CSVs, byte-stable."""

    @pytest.mark.parametrize("job,subdir", [("fig2b", "bell"), ("fig3a", "rbc"),
                                            ("fig3b", "rbc")])
    def test_renders_acceptance_csvs(self, job, subdir, tmp_path):
        in_dir = os.path.join(ACCEPT_DIR, subdir)
        if not os.path.isdir(in_dir):
            pytest.skip("acceptance outputs not generated yet (run tests/test_acceptance.py)")
        a, b = tmp_path / "a.png", tmp_path / "b.png"
        render.render(job, in_dir, str(a))
        render.render(job, in_dir, str(b))
        assert a.stat().st_size > 5000
        assert a.read_bytes() == b.read_bytes()
