"""CSV and manifest emission.

All files are RFC-4180 CSV with a mandatory header row, deterministic row
order, and floats printed with 17 significant digits so identical runs are
byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
import time
from dataclasses import dataclass

import numpy as np

from .ensemble import EnsembleStats, TrajectoryRecord


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    xf = float(x)
    if np.isnan(xf):
        return "nan"
    return f"{xf:.17g}"


def _writer(fh):
    return csv.writer(fh, lineterminator="\r\n")


def write_ensemble_csv(path: str, stats: EnsembleStats) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t", "quantity", "cut_or_site", "mean", "stderr", "N"])
        for ti, t in enumerate(stats.times):
            for ci, cut in enumerate(stats.cuts):
                w.writerow([fmt(t), "ee", str(cut), fmt(stats.ee_mean[ti, ci]),
                            fmt(stats.ee_stderr[ti, ci]), stats.n])
            for oi, name in enumerate(stats.obs_names):
                w.writerow([fmt(t), name, "", fmt(stats.obs_mean[ti, oi]),
                            fmt(stats.obs_stderr[ti, oi]), stats.n])
            w.writerow([fmt(t), "max_chi", "", fmt(stats.max_chi_mean[ti]), "0", stats.n])
            w.writerow([fmt(t), "discarded_weight", "",
                        fmt(stats.discarded_weight_mean[ti]), "0", stats.n])


def write_choices_csv(path: str, stats: EnsembleStats) -> None:
    m = stats.frac_number_mean.shape[1]
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t", "channel", "frac_number", "frac_homodyne", "mean_phase"])
        for ti, t in enumerate(stats.times):
            for j in range(m):
                fn = stats.frac_number_mean[ti, j]
                fh_ = 1.0 - fn if np.isfinite(fn) else np.nan
                w.writerow([fmt(t), str(j), fmt(fn), fmt(fh_),
                            fmt(stats.mean_phase_mean[ti, j])])


def write_trajectory_csv(path: str, rec: TrajectoryRecord) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(["t", "quantity", "cut_or_site", "value"])
        for ti, t in enumerate(rec.times):
            for ci, cut in enumerate(rec.cuts):
                w.writerow([fmt(t), "ee", str(cut), fmt(rec.ee[ti, ci])])
            for oi, name in enumerate(rec.obs_names):
                w.writerow([fmt(t), name, "", fmt(rec.obs[ti, oi])])
            w.writerow([fmt(t), "max_chi", "", fmt(rec.max_chi[ti])])


def write_series_csv(path: str, rows: list[tuple], header: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = _writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, (int, float, np.floating, np.integer))
                        else str(x) for x in row])


def git_revision() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True,
                             text=True, timeout=5, cwd=os.path.dirname(__file__))
        return out.stdout.strip() if out.returncode == 0 else None
    except OSError:
        return None


def write_manifest(path: str, config: dict, wall_time_s: float) -> None:
    manifest = {
        "config": config,
        "git_revision": git_revision(),
        "wall_time_s": wall_time_s,
        "written_at_unix": int(time.time()),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
