"""Command-line front end.

Subcommands:
  run          execute a config file, write ensemble.csv / choices.csv / manifest.json
  oracle       trajectory ensemble vs dense master-equation z-scores
  bell         dephased-Bell-pair comparison data (counting / quadrature / adaptive)
  rbc          Brownian-circuit entanglement profiles and size scan
  sweep-phase  half-chain entanglement versus quadrature phase

Exit codes: 0 success, 1 configuration error, 2 runtime abort (non-finite
state), 3 oracle disagreement beyond the z threshold.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import io as eio
from .config import ConfigError, load_config, parse_observable
from .dense import embed_local, integrate_me
from .ensemble import (
    Eoqt,
    FixedHomodyne,
    FixedNumber,
    RecordSpec,
    TrajectoryAbort,
    run_ensemble,
)
from .models import (
    bell_eaee_homodyne,
    bell_eaee_number,
    bell_entanglement_of_formation,
    bell_model,
    build_model,
    rbc_model,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_ORACLE = 3


def _workers(args) -> int:
    env = os.environ.get("EOQT_THREADS")
    if env:
        return max(1, int(env))
    return max(1, getattr(args, "workers", 1) or 1)


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        for key, attr in (("seed", "seed"), ("chi_max", "chi"),
                          ("frozen_circuit_seed", "frozen_circuit")):
            val = getattr(args, attr, None)
            if val is not None:
                cfg.raw[key] = val
        if getattr(args, "cut", None) is not None:
            from .ensemble import Eoqt

            if isinstance(cfg.policy, Eoqt):
                cfg.policy = Eoqt(cut=args.cut)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _ensure_out(args.out or cfg.raw["out_dir"])
    workers = _workers(args) if (args.workers or os.environ.get("EOQT_THREADS")) else cfg.raw["workers"]
    t0 = time.time()
    try:
        stats, records = run_ensemble(
            cfg.model, cfg.policy, cfg.raw["trajectories"], cfg.raw["dt"],
            cfg.raw["t_final"], cfg.raw["chi_max"], cfg.raw["seed"],
            workers=workers, record=cfg.record,
            trunc_threshold=cfg.raw["trunc_threshold"], backend=cfg.raw["backend"],
            canonicalize=cfg.raw["canonicalize"], strategy=cfg.raw["strategy"],
            frozen_circuit_seed=cfg.raw["frozen_circuit_seed"],
            permute_channels=cfg.raw["permute_channels"],
            keep_records=cfg.raw["save_trajectories"],
        )
    except (TrajectoryAbort, FloatingPointError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    eio.write_ensemble_csv(os.path.join(out_dir, "ensemble.csv"), stats)
    eio.write_choices_csv(os.path.join(out_dir, "choices.csv"), stats)
    if records:
        tdir = _ensure_out(os.path.join(out_dir, "trajectories"))
        for rec in records:
            eio.write_trajectory_csv(os.path.join(tdir, f"{rec.trajectory_id}.csv"), rec)
    eio.write_manifest(os.path.join(out_dir, "manifest.json"), cfg.raw, time.time() - t0)
    if stats.partial:
        print(f"warning: {len(stats.failures)} trajectories aborted; results partial",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {out_dir}/ensemble.csv ({stats.n} trajectories)")
    return EXIT_OK


def cmd_oracle(args) -> int:
    try:
        cfg = load_config(args.config)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    model = cfg.model
    if model.dense_hamiltonian is None:
        print("config error: model has no dense Hamiltonian for the oracle",
              file=sys.stderr)
        return EXIT_CONFIG
    if not cfg.record.observables:
        print("config error: oracle comparison needs at least one observable",
              file=sys.stderr)
        return EXIT_CONFIG
    out_dir = _ensure_out(args.out or cfg.raw["out_dir"])
    t0 = time.time()
    try:
        stats, _ = run_ensemble(
            cfg.model, cfg.policy, cfg.raw["trajectories"], cfg.raw["dt"],
            cfg.raw["t_final"], cfg.raw["chi_max"], cfg.raw["seed"],
            workers=_workers(args), record=cfg.record,
            trunc_threshold=cfg.raw["trunc_threshold"], backend=cfg.raw["backend"],
            canonicalize=cfg.raw["canonicalize"], strategy=cfg.raw["strategy"],
        )
    except (TrajectoryAbort, FloatingPointError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    me_dt = args.me_dt or (1e-3 / model.max_rate() if model.max_rate() > 0 else cfg.raw["dt"])
    psi0 = model.initial_dense_vector()
    rho0 = np.outer(psi0, psi0.conj())
    # --me-rate-scale deliberately detunes the reference equation; it exists
    # as a negative control to confirm the z-score gate actually trips.
    channels = [
        type(ch)(site=ch.site, op=ch.op, rate=ch.rate * args.me_rate_scale)
        for ch in model.channels
    ]
    times, rhos = integrate_me(rho0, model.dense_hamiltonian, channels,
                               model.n, model.d, me_dt, cfg.raw["t_final"],
                               sample_times=stats.times)
    embedded = {
        ob.name: _embedded_product(ob, model.n, model.d)
        for ob in cfg.record.observables
    }
    rows = []
    worst = 0.0
    # The z denominator is floored by the integrators' own absolute accuracy
    # (trace-drift guard scale), so deterministic gamma=0 runs score z ~ 0
    # instead of dividing discretisation noise by a vanishing standard error.
    se_floor = 1e-6
    for ti, t in enumerate(stats.times):
        mi = int(np.argmin(np.abs(times - t)))
        for oi, name in enumerate(stats.obs_names):
            me_val = float(np.real(np.trace(embedded[name] @ rhos[mi])))
            diff = stats.obs_mean[ti, oi] - me_val
            se = stats.obs_stderr[ti, oi]
            z = diff / max(se, se_floor)
            worst = max(worst, abs(z))
            rows.append((t, name, stats.obs_mean[ti, oi], se, me_val, z))
    eio.write_series_csv(os.path.join(out_dir, "oracle_compare.csv"), rows,
                         ["t", "observable", "traj_mean", "traj_stderr", "me_value", "z"])
    eio.write_manifest(os.path.join(out_dir, "manifest.json"), cfg.raw, time.time() - t0)
    print(f"worst |z| = {worst:.2f} (threshold {args.z_threshold})")
    return EXIT_OK if worst <= args.z_threshold else EXIT_ORACLE


def _embedded_product(ob, n, d):
    full = np.eye(d**n, dtype=complex)
    for site, op in ob.factors:
        full = full @ embed_local(op, n, d, site)
    return full


def cmd_bell(args) -> int:
    out_dir = _ensure_out(args.out)
    model = bell_model(gamma=args.gamma)
    rec = RecordSpec(cuts=(1,), n_points=args.points)
    t0 = time.time()
    runs = {
        "number": FixedNumber(),
        "homodyne0": FixedHomodyne((0.0, 0.0)),
        "eoqt": Eoqt(cut=1),
    }
    stats = {}
    for offset, (label, policy) in enumerate(runs.items()):
        stats[label], _ = run_ensemble(
            model, policy, args.trajectories, args.dt, args.t_final, 4,
            args.seed + offset, record=rec, strategy=args.strategy,
            workers=_workers(args),
        )
        print(f"  {label}: done ({stats[label].n} trajectories)")
    times = stats["number"].times
    gt = args.gamma * times
    ef = np.asarray(bell_entanglement_of_formation(gt))
    ana_num = np.asarray(bell_eaee_number(gt))
    ana_hom = np.array([bell_eaee_homodyne(t) for t in gt])
    rows = []
    for label in runs:
        s = stats[label]
        for ti, t in enumerate(times):
            rows.append((t, f"eaee_{label}", s.ee_mean[ti, 0], s.ee_stderr[ti, 0]))
            rows.append((t, f"excess_{label}", s.ee_mean[ti, 0] - ef[ti],
                         s.ee_stderr[ti, 0]))
    for ti, t in enumerate(times):
        rows.append((t, "analytic_number", ana_num[ti], 0.0))
        rows.append((t, "analytic_homodyne0", ana_hom[ti], 0.0))
        rows.append((t, "analytic_excess_number", ana_num[ti] - ef[ti], 0.0))
        rows.append((t, "analytic_excess_homodyne0", ana_hom[ti] - ef[ti], 0.0))
        rows.append((t, "e_formation", ef[ti], 0.0))
    eio.write_series_csv(os.path.join(out_dir, "bell.csv"), rows,
                         ["t", "series", "value", "stderr"])
    eio.write_choices_csv(os.path.join(out_dir, "choices_eoqt.csv"), stats["eoqt"])
    eio.write_manifest(os.path.join(out_dir, "manifest.json"), {
        "command": "bell", "gamma": args.gamma, "dt": args.dt,
        "t_final": args.t_final, "trajectories": args.trajectories,
        "seed": args.seed, "points": args.points,
    }, time.time() - t0)
    print(f"wrote {out_dir}/bell.csv")
    return EXIT_OK


def _window_average(records, cut_index: int, window_fraction: float = 0.25):
    """Per-trajectory time-average of the EE over the final window."""
    t = records[0].times
    lo = t[-1] * (1.0 - window_fraction)
    mask = t >= lo - 1e-12
    vals = np.array([r.ee[mask, cut_index].mean() for r in records])
    n = len(vals)
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0


def _rbc_policies(phases, m):
    runs = [(f"hom_{p:g}", FixedHomodyne.uniform(p, m)) for p in phases]
    runs.append(("number", FixedNumber()))
    runs.append(("eoqt", Eoqt()))
    return runs


def cmd_rbc(args) -> int:
    out_dir = _ensure_out(args.out)
    phases = [float(p) for p in args.phases.split(",")] if args.phases else []
    t0 = time.time()
    profile_rows, ts_rows, scan_rows = [], [], []

    n = args.n
    model = rbc_model(alpha=args.alpha, gamma=args.gamma, n=n)
    rec = RecordSpec(cuts=tuple(range(1, n)), n_points=args.points)
    frozen = args.frozen_circuit if args.frozen_circuit >= 0 else None
    for label, policy in _rbc_policies(phases, n):
        stats, records = run_ensemble(
            model, policy, args.trajectories, args.dt, args.t_final, args.chi,
            args.seed, record=rec, trunc_threshold=args.trunc_threshold,
            backend="mps", strategy="sequential", workers=_workers(args),
            frozen_circuit_seed=frozen, keep_records=True,
        )
        half_idx = rec.cuts.index(n // 2)
        for ci, cut in enumerate(rec.cuts):
            mean, se = _window_average(records, ci)
            profile_rows.append((cut, label, mean, se))
        for ti, t in enumerate(stats.times):
            ts_rows.append((t, label, stats.ee_mean[ti, half_idx],
                            stats.ee_stderr[ti, half_idx]))
        print(f"  n={n} {label}: done")

    sizes = [int(s) for s in args.sizes.split(",")] if args.sizes else []
    scan_phases = [float(p) for p in args.scan_phases.split(",")] if args.sizes else []
    for ns in sizes:
        model_s = rbc_model(alpha=args.alpha, gamma=args.gamma, n=ns)
        rec_s = RecordSpec(cuts=(ns // 2,), n_points=args.points)
        for p in scan_phases:
            _, records = run_ensemble(
                model_s, FixedHomodyne.uniform(p, ns), args.trajectories,
                args.dt, args.t_final, args.chi, args.seed + ns,
                record=rec_s, trunc_threshold=args.trunc_threshold,
                backend="mps", strategy="sequential", workers=_workers(args),
                frozen_circuit_seed=frozen, keep_records=True,
            )
            mean, se = _window_average(records, 0)
            scan_rows.append((ns, f"hom_{p:g}", mean, se))
        print(f"  size scan n={ns}: done")

    eio.write_series_csv(os.path.join(out_dir, "rbc_profile.csv"), profile_rows,
                         ["cut", "series", "mean", "stderr"])
    eio.write_series_csv(os.path.join(out_dir, "rbc_timeseries.csv"), ts_rows,
                         ["t", "series", "mean", "stderr"])
    if scan_rows:
        eio.write_series_csv(os.path.join(out_dir, "rbc_size_scan.csv"), scan_rows,
                             ["n", "series", "mean", "stderr"])
    eio.write_manifest(os.path.join(out_dir, "manifest.json"), {
        "command": "rbc", "n": args.n, "chi": args.chi, "alpha": args.alpha,
        "gamma": args.gamma, "dt": args.dt, "t_final": args.t_final,
        "trajectories": args.trajectories, "phases": args.phases,
        "sizes": args.sizes, "scan_phases": args.scan_phases, "seed": args.seed,
        "trunc_threshold": args.trunc_threshold,
        "frozen_circuit": args.frozen_circuit,
    }, time.time() - t0)
    print(f"wrote {out_dir}/rbc_profile.csv")
    return EXIT_OK


def cmd_sweep_phase(args) -> int:
    out_dir = _ensure_out(args.out)
    phases = np.linspace(0.0, np.pi / 2, args.steps)
    model = rbc_model(alpha=args.alpha, gamma=args.gamma, n=args.n)
    rec = RecordSpec(cuts=(args.n // 2,), n_points=args.points)
    rows = []
    t0 = time.time()
    for p in phases:
        _, records = run_ensemble(
            model, FixedHomodyne.uniform(float(p), args.n), args.trajectories,
            args.dt, args.t_final, args.chi, args.seed, record=rec,
            trunc_threshold=args.trunc_threshold, backend="mps",
            strategy="sequential", workers=_workers(args), keep_records=True,
        )
        mean, se = _window_average(records, 0)
        rows.append((float(p), args.n, mean, se))
        print(f"  phase {p:.3f}: EAEE {mean:.3f}")
    eio.write_series_csv(os.path.join(out_dir, "phase_sweep.csv"), rows,
                         ["phase", "n", "mean", "stderr"])
    eio.write_manifest(os.path.join(out_dir, "manifest.json"), {
        "command": "sweep-phase", "n": args.n, "chi": args.chi,
        "alpha": args.alpha, "gamma": args.gamma, "dt": args.dt,
        "t_final": args.t_final, "trajectories": args.trajectories,
        "steps": args.steps, "seed": args.seed,
    }, time.time() - t0)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eoqt", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="execute a JSON config")
    pr.add_argument("config")
    pr.add_argument("--out", default=None)
    pr.add_argument("--workers", type=int, default=None)
    pr.add_argument("--cut", type=int, default=None,
                    help="override the adaptive policy's optimisation cut")
    pr.add_argument("--seed", type=int, default=None, help="override the config seed")
    pr.add_argument("--chi", type=int, default=None, help="override chi_max")
    pr.add_argument("--frozen-circuit", type=int, default=None,
                    help="override the shared-circuit seed")
    pr.set_defaults(func=cmd_run)

    po = sub.add_parser("oracle", help="ensemble vs master-equation z-scores")
    po.add_argument("config")
    po.add_argument("--out", default=None)
    po.add_argument("--workers", type=int, default=None)
    po.add_argument("--z-threshold", type=float, default=5.0)
    po.add_argument("--me-dt", type=float, default=None)
    po.add_argument("--me-rate-scale", type=float, default=1.0,
                    help="detune the reference-equation rates (negative control)")
    po.set_defaults(func=cmd_oracle)

    pb = sub.add_parser("bell", help="dephased Bell pair comparison data")
    pb.add_argument("--gamma", type=float, default=1.0)
    pb.add_argument("--dt", type=float, default=1e-3)
    pb.add_argument("--t-final", type=float, default=3.0)
    pb.add_argument("--trajectories", type=int, default=10000)
    pb.add_argument("--points", type=int, default=21)
    pb.add_argument("--seed", type=int, default=20260300)
    pb.add_argument("--strategy", default="auto")
    pb.add_argument("--workers", type=int, default=None)
    pb.add_argument("--out", default="out/bell")
    pb.set_defaults(func=cmd_bell)

    pc = sub.add_parser("rbc", help="Brownian-circuit entanglement data")
    pc.add_argument("--n", type=int, default=12)
    pc.add_argument("--chi", type=int, default=64)
    pc.add_argument("--alpha", type=float, default=1.0)
    pc.add_argument("--gamma", type=float, default=10.0)
    pc.add_argument("--dt", type=float, default=0.008)
    pc.add_argument("--t-final", type=float, default=2.0)
    pc.add_argument("--trajectories", type=int, default=50)
    pc.add_argument("--points", type=int, default=41)
    pc.add_argument("--phases", default="0,0.7853981633974483,1.1780972450961724,1.5707963267948966")
    pc.add_argument("--sizes", default="")
    pc.add_argument("--scan-phases", default="0,1.5707963267948966")
    pc.add_argument("--trunc-threshold", type=float, default=1e-7)
    pc.add_argument("--seed", type=int, default=20260400)
    pc.add_argument("--frozen-circuit", type=int, default=-1,
                    help="seed for a shared circuit realisation (-1: independent)")
    pc.add_argument("--workers", type=int, default=None)
    pc.add_argument("--out", default="out/rbc")
    pc.set_defaults(func=cmd_rbc)

    ps = sub.add_parser("sweep-phase", help="half-chain EAEE vs quadrature phase")
    ps.add_argument("--n", type=int, default=8)
    ps.add_argument("--chi", type=int, default=64)
    ps.add_argument("--alpha", type=float, default=1.0)
    ps.add_argument("--gamma", type=float, default=10.0)
    ps.add_argument("--dt", type=float, default=0.008)
    ps.add_argument("--t-final", type=float, default=2.0)
    ps.add_argument("--trajectories", type=int, default=24)
    ps.add_argument("--points", type=int, default=41)
    ps.add_argument("--steps", type=int, default=9)
    ps.add_argument("--trunc-threshold", type=float, default=1e-7)
    ps.add_argument("--seed", type=int, default=20260500)
    ps.add_argument("--workers", type=int, default=None)
    ps.add_argument("--out", default="out/sweep")
    ps.set_defaults(func=cmd_sweep_phase)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
