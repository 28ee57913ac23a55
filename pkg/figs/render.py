#!/usr/bin/env python3
"""Render publication-style figures from simulation CSV output.

Reads only the CSV files and manifests emitted by the simulation CLI; no
physics is recomputed here.  Rendering is deterministic: identical input
bytes produce identical image bytes.

Usage:
    python figs/render.py --job fig2b --in out/bell --out fig2b.png
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

JOBS = ("fig2b", "fig3a", "fig3b", "sm_s3", "sm_s4", "sm_s5")

DEFAULT_STYLE = os.path.join(os.path.dirname(__file__), "styles.json")


class RenderError(RuntimeError):
    pass


def load_style(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def read_rows(path: str) -> list[dict]:
    if not os.path.exists(path):
        raise RenderError(f"missing input file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise RenderError(f"empty input file: {path}")
    return rows


def need_columns(rows: list[dict], cols: set[str], path: str) -> None:
    missing = cols - set(rows[0].keys())
    if missing:
        raise RenderError(f"{path}: missing columns {sorted(missing)}")


def group_series(rows, key, x_key, y_key, err_key=None):
    out: dict[str, list] = {}
    for r in rows:
        err = float(r[err_key]) if err_key and r.get(err_key) not in (None, "",) else 0.0
        out.setdefault(r[key], []).append((float(r[x_key]), float(r[y_key]), err))
    return {
        k: tuple(np.array(c) for c in zip(*sorted(v)))
        for k, v in out.items()
    }


def _new_figure(style, with_inset=False):
    fig, ax = plt.subplots(figsize=tuple(style["figsize"]), dpi=style["dpi"])
    inset = None
    if with_inset:
        inset = ax.inset_axes(style["inset_rect"])
    return fig, ax, inset


def _band(ax, x, y, err, color, label, ls="-"):
    ax.plot(x, y, ls, color=color, label=label, linewidth=1.6)
    if np.any(err > 0):
        ax.fill_between(x, y - err, y + err, color=style_gray(), alpha=0.55, linewidth=0)


def style_gray():
    return "0.7"


def render_fig2b(in_dir: str, out_path: str, style: dict) -> None:
    """Excess ensemble entanglement of the dephased pair + choice-fraction inset."""
    rows = read_rows(os.path.join(in_dir, "bell.csv"))
    need_columns(rows, {"t", "series", "value", "stderr"}, "bell.csv")
    series = group_series(rows, "series", "t", "value", "stderr")
    fig, ax, inset = _new_figure(style, with_inset=True)
    colors = style["colors"]
    for key, label, color in [
        ("excess_number", "counting", colors["number"]),
        ("excess_homodyne0", r"quadrature $\varphi=0$", colors["homodyne0"]),
        ("excess_eoqt", "adaptive", colors["eoqt"]),
    ]:
        if key not in series:
            raise RenderError(f"bell.csv: missing series {key!r}")
        x, y, err = series[key]
        _band(ax, x, y, err, color, label)
    for key, color in [("analytic_excess_number", colors["number"]),
                       ("analytic_excess_homodyne0", colors["homodyne0"])]:
        if key in series:
            x, y, _ = series[key]
            ax.plot(x, y, ":", color=color, linewidth=1.0)
    ax.set_xlabel(r"$\gamma t$")
    ax.set_ylabel(r"$\overline{E} - E_f$  [bits]")
    ax.legend(frameon=False, fontsize=style["font_size"])

    crows = read_rows(os.path.join(in_dir, "choices_eoqt.csv"))
    need_columns(crows, {"t", "channel", "frac_number", "frac_homodyne"}, "choices_eoqt.csv")
    by_t: dict[float, list] = {}
    for r in crows:
        if r["frac_number"] != "nan":
            by_t.setdefault(float(r["t"]), []).append(float(r["frac_number"]))
    ts = np.array(sorted(by_t))
    frac = np.array([np.mean(by_t[t]) for t in ts])
    inset.plot(ts, frac, color=colors["number"], linewidth=1.2, label="counting")
    inset.plot(ts, 1.0 - frac, color=colors["homodyne0"], linewidth=1.2, label="quadrature")
    inset.set_ylim(-0.05, 1.05)
    inset.set_xlabel(r"$\gamma t$", fontsize=style["font_size"] - 1)
    inset.set_ylabel("choice fraction", fontsize=style["font_size"] - 1)
    inset.tick_params(labelsize=style["font_size"] - 2)
    _save(fig, out_path, style)


def render_fig3a(in_dir: str, out_path: str, style: dict) -> None:
    """Long-time entanglement profile over all cuts, per unravelling."""
    rows = read_rows(os.path.join(in_dir, "rbc_profile.csv"))
    need_columns(rows, {"cut", "series", "mean", "stderr"}, "rbc_profile.csv")
    series = group_series(rows, "series", "cut", "mean", "stderr")
    fig, ax, _ = _new_figure(style)
    hom_keys = sorted((k for k in series if k.startswith("hom_")),
                      key=lambda k: float(k.split("_", 1)[1]))
    cmap = plt.get_cmap(style["profile_colormap"])
    for i, key in enumerate(hom_keys):
        x, y, err = series[key]
        color = cmap(0.15 + 0.7 * (i / max(len(hom_keys) - 1, 1)))
        ax.errorbar(x, y, yerr=err, color=color, linewidth=1.4,
                    label=rf"$\varphi={key.split('_', 1)[1]}$")
    for key, label, color in [("number", "counting", style["colors"]["number"]),
                              ("eoqt", "adaptive", style["colors"]["eoqt"])]:
        if key in series:
            x, y, err = series[key]
            ax.errorbar(x, y, yerr=err, color=color, linestyle="--", linewidth=1.4,
                        label=label)
    ax.set_xlabel("cut position")
    ax.set_ylabel("long-time EAEE  [bits]")
    ax.legend(frameon=False, fontsize=style["font_size"] - 1, ncol=2)
    _save(fig, out_path, style)


def render_fig3b(in_dir: str, out_path: str, style: dict) -> None:
    """Half-chain entanglement versus system size, with a phase-sweep inset."""
    rows = read_rows(os.path.join(in_dir, "rbc_size_scan.csv"))
    need_columns(rows, {"n", "series", "mean", "stderr"}, "rbc_size_scan.csv")
    series = group_series(rows, "series", "n", "mean", "stderr")
    sweep_path = os.path.join(in_dir, "phase_sweep.csv")
    has_sweep = os.path.exists(sweep_path)
    fig, ax, inset = _new_figure(style, with_inset=has_sweep)
    cmap = plt.get_cmap(style["profile_colormap"])
    keys = sorted(series, key=lambda k: (not k.startswith("hom_"), k))
    for i, key in enumerate(keys):
        x, y, err = series[key]
        if key.startswith("hom_"):
            color = cmap(0.15 + 0.7 * (i / max(len(keys) - 1, 1)))
            label = rf"$\varphi={key.split('_', 1)[1]}$"
            ls = "-o"
        else:
            color = style["colors"].get(key, "k")
            label, ls = key, "--s"
        ax.errorbar(x, y, yerr=err, fmt=ls, color=color, linewidth=1.4,
                    markersize=4, label=label)
    ax.set_xlabel("sites $n$")
    ax.set_ylabel("half-chain EAEE  [bits]")
    ax.legend(frameon=False, fontsize=style["font_size"] - 1)
    if has_sweep:
        srows = read_rows(sweep_path)
        need_columns(srows, {"phase", "n", "mean", "stderr"}, "phase_sweep.csv")
        sx = np.array([float(r["phase"]) for r in srows])
        sy = np.array([float(r["mean"]) for r in srows])
        order = np.argsort(sx)
        inset.plot(sx[order], sy[order], "-o", markersize=3, color="k", linewidth=1.1)
        inset.set_xlabel(r"$\varphi$", fontsize=style["font_size"] - 1)
        inset.set_ylabel("EAEE", fontsize=style["font_size"] - 1)
        inset.tick_params(labelsize=style["font_size"] - 2)
    _save(fig, out_path, style)


def _collect_policy_runs(in_dir: str, filename: str):
    """(label, rows) pairs from in_dir/<label>/<filename>, sorted by label."""
    out = []
    for entry in sorted(os.listdir(in_dir)):
        path = os.path.join(in_dir, entry, filename)
        if os.path.isdir(os.path.join(in_dir, entry)) and os.path.exists(path):
            out.append((entry, read_rows(path)))
    if not out:
        raise RenderError(f"no <policy>/{filename} subdirectories under {in_dir}")
    return out


def render_sm_s3(in_dir: str, out_path: str, style: dict) -> None:
    """Trajectory averages versus the exact master equation, per policy."""
    runs = _collect_policy_runs(in_dir, "oracle_compare.csv")
    observables = sorted({r["observable"] for _, rows in runs for r in rows})
    fig, axes = plt.subplots(len(observables), len(runs),
                             figsize=(style["figsize"][0] * len(runs) / 2,
                                      style["figsize"][1] * len(observables) / 1.5),
                             dpi=style["dpi"], squeeze=False)
    for ci, (label, rows) in enumerate(runs):
        need_columns(rows, {"t", "observable", "traj_mean", "traj_stderr", "me_value"},
                     f"{label}/oracle_compare.csv")
        for oi, obs in enumerate(observables):
            ax = axes[oi][ci]
            sel = [r for r in rows if r["observable"] == obs]
            t = np.array([float(r["t"]) for r in sel])
            y = np.array([float(r["traj_mean"]) for r in sel])
            err = np.array([float(r["traj_stderr"]) for r in sel])
            me = np.array([float(r["me_value"]) for r in sel])
            order = np.argsort(t)
            ax.fill_between(t[order], (y - err)[order], (y + err)[order],
                            color=style_gray(), alpha=0.6, linewidth=0)
            ax.plot(t[order], y[order], color=style["colors"]["eoqt"], linewidth=1.3)
            ax.plot(t[order], me[order], "k--", linewidth=1.0)
            if oi == 0:
                ax.set_title(label, fontsize=style["font_size"])
            if ci == 0:
                ax.set_ylabel(obs, fontsize=style["font_size"] - 1)
            ax.set_xlabel(r"$\gamma t$", fontsize=style["font_size"] - 1)
    fig.tight_layout()
    _save(fig, out_path, style)


def render_sm_s4(in_dir: str, out_path: str, style: dict) -> None:
    """Across-trajectory variance of recorded observables, per policy.

    The per-trajectory variance is N * stderr^2, pure arithmetic on the
    published ensemble.csv columns.
    """
    runs = _collect_policy_runs(in_dir, "ensemble.csv")
    fig, ax, _ = _new_figure(style)
    cmap = plt.get_cmap(style["profile_colormap"])
    for i, (label, rows) in enumerate(runs):
        need_columns(rows, {"t", "quantity", "mean", "stderr", "N"}, f"{label}/ensemble.csv")
        obs = sorted({r["quantity"] for r in rows
                      if r["quantity"] not in ("ee", "max_chi", "discarded_weight")})
        if not obs:
            raise RenderError(f"{label}/ensemble.csv: no observable rows")
        sel = [r for r in rows if r["quantity"] == obs[0]]
        t = np.array([float(r["t"]) for r in sel])
        var = np.array([float(r["N"]) * float(r["stderr"]) ** 2 for r in sel])
        order = np.argsort(t)
        ax.plot(t[order], var[order], color=cmap(0.15 + 0.7 * i / max(len(runs) - 1, 1)),
                linewidth=1.4, label=label)
    ax.set_xlabel(r"$\gamma t$")
    ax.set_ylabel("trajectory variance")
    ax.legend(frameon=False, fontsize=style["font_size"] - 1)
    _save(fig, out_path, style)


def render_sm_s5(in_dir: str, out_path: str, style: dict) -> None:
    """Bond-dimension robustness: populations against the master equation."""
    runs = _collect_policy_runs(in_dir, "oracle_compare.csv")
    fig, ax, _ = _new_figure(style)
    cmap = plt.get_cmap(style["profile_colormap"])
    me_drawn = False
    for i, (label, rows) in enumerate(runs):
        need_columns(rows, {"t", "observable", "traj_mean", "traj_stderr", "me_value"},
                     f"{label}/oracle_compare.csv")
        obs = sorted({r["observable"] for r in rows})[0]
        sel = [r for r in rows if r["observable"] == obs]
        t = np.array([float(r["t"]) for r in sel])
        y = np.array([float(r["traj_mean"]) for r in sel])
        err = np.array([float(r["traj_stderr"]) for r in sel])
        order = np.argsort(t)
        color = style["colors"].get(label, cmap(0.2 + 0.6 * i / max(len(runs) - 1, 1)))
        ax.fill_between(t[order], (y - err)[order], (y + err)[order],
                        color=style_gray(), alpha=0.5, linewidth=0)
        ax.plot(t[order], y[order], color=color, linewidth=1.4, label=label)
        if not me_drawn:
            me = np.array([float(r["me_value"]) for r in sel])
            ax.plot(t[order], me[order], "k--", linewidth=1.2, label="exact")
            me_drawn = True
    ax.set_xlabel(r"$\gamma t$")
    ax.set_ylabel("population")
    ax.legend(frameon=False, fontsize=style["font_size"] - 1)
    _save(fig, out_path, style)


def _save(fig, out_path: str, style: dict) -> None:
    out_dir = os.path.dirname(os.path.abspath(out_path))
    os.makedirs(out_dir, exist_ok=True)
    fig.savefig(out_path, dpi=style["dpi"], bbox_inches="tight",
                metadata={"Software": "eoqt-figs"})
    plt.close(fig)


RENDERERS = {
    "fig2b": render_fig2b,
    "fig3a": render_fig3a,
    "fig3b": render_fig3b,
    "sm_s3": render_sm_s3,
    "sm_s4": render_sm_s4,
    "sm_s5": render_sm_s5,
}


def render(job: str, in_dir: str, out_path: str, style_path: str = DEFAULT_STYLE) -> None:
    if job not in RENDERERS:
        raise RenderError(f"unknown figure id {job!r}; choose from {JOBS}")
    style = load_style(style_path)
    RENDERERS[job](in_dir, out_path, style)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--job", required=True, choices=JOBS)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--style", default=DEFAULT_STYLE)
    args = p.parse_args(argv)
    try:
        render(args.job, args.in_dir, args.out, args.style)
    except RenderError as exc:
        print(f"render error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
