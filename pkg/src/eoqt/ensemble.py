"""Trajectory driver and ensemble statistics.

One integration step applies the stochastic layer (all channels in ascending
site order, each through its selected propagator), restores the canonical
gauge, then applies the coherent Trotter layer.  Policies either fix the
propagator for the whole run or re-select it per channel and per step from
the predicted entanglement growth rates.

Reproducibility: trajectory ``k`` draws from an independent generator spawned
as ``SeedSequence(master_seed, spawn_key=(k,))``, so results are independent
of worker count and scheduling.
"""

from __future__ import annotations

import multiprocessing
from dataclasses import dataclass, field, replace

import numpy as np

from . import mps as mpslib
from .dense import DenseState
from .models import ModelSpec, build_model
from .propagators import (
    Homodyne,
    JumpChannel,
    Number,
    draw_for,
    homodyne_step,
    no_jump_operator,
    number_step,
)
from .rates import choose_propagator


class TrajectoryAbort(RuntimeError):
    """Raised when a trajectory produces non-finite state data."""


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedNumber:
    pass


@dataclass(frozen=True)
class FixedHomodyne:
    phases: tuple[float, ...]

    @classmethod
    def uniform(cls, phase: float, m: int) -> "FixedHomodyne":
        return cls(phases=tuple([float(phase)] * m))


@dataclass(frozen=True)
class Eoqt:
    cut: int | None = None  # None: half-chain


UnravellingPolicy = FixedNumber | FixedHomodyne | Eoqt


@dataclass
class Observable:
    name: str
    factors: list[tuple[int, np.ndarray]]


@dataclass
class RecordSpec:
    cuts: tuple[int, ...] | None = None  # None: every bond
    observables: list[Observable] = field(default_factory=list)
    n_points: int = 51
    collect_decisions: bool = False


@dataclass
class TrajectoryRecord:
    trajectory_id: int
    master_seed: int
    times: np.ndarray
    cuts: tuple[int, ...]
    ee: np.ndarray  # (T, n_cuts)
    obs_names: tuple[str, ...]
    obs: np.ndarray  # (T, n_obs) real parts
    frac_number: np.ndarray  # (T, m) window fraction of counting choices
    mean_phase: np.ndarray  # (T, m) window mean quadrature phase
    max_chi: np.ndarray  # (T,)
    discarded_weight: np.ndarray  # (T,) cumulative
    decisions: list = field(default_factory=list)


@dataclass
class EnsembleStats:
    times: np.ndarray
    n: int
    cuts: tuple[int, ...]
    ee_mean: np.ndarray
    ee_stderr: np.ndarray
    obs_names: tuple[str, ...]
    obs_mean: np.ndarray
    obs_stderr: np.ndarray
    frac_number_mean: np.ndarray
    frac_number_stderr: np.ndarray
    mean_phase_mean: np.ndarray
    max_chi_mean: np.ndarray
    discarded_weight_mean: np.ndarray
    failures: list = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failures)


# ---------------------------------------------------------------------------
# Helpers shared by the sequential and batched runners
# ---------------------------------------------------------------------------


def trajectory_rng(master_seed: int, trajectory_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=master_seed, spawn_key=(trajectory_id,))
    )


def sample_steps(dt: float, t_final: float, n_points: int) -> list[int]:
    n_steps = int(round(t_final / dt))
    grid = np.linspace(0.0, t_final, n_points)
    return sorted({min(n_steps, int(round(t / dt))) for t in grid})


def resolve_backend(model: ModelSpec, chi_max: int, backend: str) -> str:
    if backend in ("mps", "dense"):
        return backend
    if backend != "auto":
        raise ValueError(f"unknown backend {backend!r}")
    dim = model.d**model.n
    unrestricted = chi_max >= model.d ** (model.n // 2)
    return "dense" if (dim <= 256 and unrestricted) else "mps"


def resolve_canonicalize(policy, model: ModelSpec, mode: str) -> str:
    if mode in ("substep", "layer"):
        return mode
    if mode != "auto":
        raise ValueError(f"unknown canonicalisation mode {mode!r}")
    # Small chains restore the gauge after every substep (exact expectation
    # values, exact backend equivalence).  Large chains amortise the
    # restoring sweep over the layer; the adaptive policy then reads its
    # selection data off the slightly stale gauge, which costs at most
    # optimality, never validity.
    return "substep" if model.d**model.n <= 256 else "layer"


def _policy_choice(policy, state, channel: JumpChannel, channel_index: int,
                   cut: int, allow_stale: bool = False):
    if isinstance(policy, FixedNumber):
        return Number(), None
    if isinstance(policy, FixedHomodyne):
        return Homodyne(policy.phases[channel_index]), None
    choice, rate = choose_propagator(state, channel, cut, allow_stale=allow_stale)
    return choice, rate


def _check_finite(state, step: int, t: float) -> None:
    if isinstance(state, DenseState):
        ok = np.all(np.isfinite(state.amplitudes.view(float)))
    else:
        ok = all(np.all(np.isfinite(l)) for l in state.lambdas) and all(
            np.all(np.isfinite(g.view(float))) for g in state.gammas
        )
    if not ok:
        raise TrajectoryAbort(f"non-finite state data at step {step} (t={t:g})")


def _initial_state(model: ModelSpec, backend: str, chi_max: int,
                   trunc_threshold: float):
    if backend == "dense":
        return DenseState.from_vector(model.initial_dense_vector(), model.d)
    if model.initial_kets is not None:
        return mpslib.product_state(model.n, model.d, model.initial_kets,
                                    chi_max=chi_max, trunc_threshold=trunc_threshold)
    return mpslib.from_state_vector(model.initial_dense_vector(), model.d,
                                    chi_max=chi_max, trunc_threshold=trunc_threshold)


def _measure(state, model, record: RecordSpec, cuts):
    if isinstance(state, DenseState):
        ee = np.array([state.entanglement_entropy(c) for c in cuts])
        ranks = [int(np.sum(state.schmidt_values(c) ** 2 > mpslib.EIG_FLOOR)) for c in cuts]
        chi = max(ranks) if ranks else 1
        obs = np.array([np.real(state.expect_product(o.factors)) for o in record.observables])
    else:
        ee = np.array([mpslib.entanglement_entropy(state, c) for c in cuts])
        chi = state.max_bond_dimension()
        obs = np.array([np.real(mpslib.expect_product(state, o.factors)) for o in record.observables])
    return ee, obs, chi


def run_trajectory(
    model: ModelSpec,
    policy: UnravellingPolicy,
    dt: float,
    t_final: float,
    chi_max: int,
    master_seed: int,
    trajectory_id: int = 0,
    record: RecordSpec | None = None,
    trunc_threshold: float = 1e-12,
    backend: str = "auto",
    canonicalize: str = "auto",
    frozen_circuit_seed: int | None = None,
    permute_channels: bool = False,
) -> TrajectoryRecord:
    """Integrate one trajectory and sample it on the recording grid."""
    record = record or RecordSpec()
    backend = resolve_backend(model, chi_max, backend)
    canon_mode = resolve_canonicalize(policy, model, canonicalize)
    if dt * model.max_rate() > 0.1 + 1e-12:
        raise ValueError("dt violates the rate*dt <= 0.1 guard")

    channels = sorted(model.channels, key=lambda ch: ch.site)
    if isinstance(policy, FixedHomodyne) and len(policy.phases) != len(channels):
        raise ValueError("one homodyne phase per channel required")
    cut_for_policy = (
        policy.cut
        if isinstance(policy, Eoqt) and policy.cut is not None
        else model.n // 2
    )
    cuts = record.cuts or tuple(range(1, model.n))
    for c in cuts:
        mpslib.Cut(c).validate(model.n)

    rng = trajectory_rng(master_seed, trajectory_id)
    circuit_rng = (
        np.random.default_rng(np.random.SeedSequence(entropy=frozen_circuit_seed))
        if frozen_circuit_seed is not None
        else rng
    )
    state = _initial_state(model, backend, chi_max, trunc_threshold)
    no_jump = [no_jump_operator(ch, dt) for ch in channels]

    n_steps = int(round(t_final / dt))
    steps_to_record = sample_steps(dt, t_final, record.n_points)
    m = len(channels)
    T = len(steps_to_record)
    out = TrajectoryRecord(
        trajectory_id=trajectory_id,
        master_seed=master_seed,
        times=np.array([s * dt for s in steps_to_record]),
        cuts=cuts,
        ee=np.zeros((T, len(cuts))),
        obs_names=tuple(o.name for o in record.observables),
        obs=np.zeros((T, len(record.observables))),
        frac_number=np.full((T, m), np.nan),
        mean_phase=np.full((T, m), np.nan),
        max_chi=np.zeros(T, dtype=int),
        discarded_weight=np.zeros(T),
    )

    win_num = np.zeros(m, dtype=int)
    win_hom = np.zeros(m, dtype=int)
    win_phase = np.zeros(m)
    cum_discarded = 0.0
    rec_idx = 0

    def record_point(idx: int, step: int) -> int:
        ee, obs, chi = _measure(state, model, record, cuts)
        out.ee[idx] = ee
        out.obs[idx] = obs
        out.max_chi[idx] = chi
        out.discarded_weight[idx] = cum_discarded
        if step > 0:
            tot = win_num + win_hom
            with np.errstate(invalid="ignore"):
                out.frac_number[idx] = np.where(tot > 0, win_num / np.maximum(tot, 1), np.nan)
                out.mean_phase[idx] = np.where(win_hom > 0, win_phase / np.maximum(win_hom, 1), np.nan)
        win_num[:] = 0
        win_hom[:] = 0
        win_phase[:] = 0.0
        return idx + 1

    if steps_to_record[rec_idx] == 0:
        rec_idx = record_point(rec_idx, 0)

    renorm = canon_mode == "substep" or isinstance(state, DenseState)
    for step in range(1, n_steps + 1):
        t = (step - 1) * dt
        order = rng.permutation(m) if permute_channels else range(m)
        for j in order:
            ch = channels[j]
            choice, rate = _policy_choice(policy, state, ch, j, cut_for_policy,
                                          allow_stale=not renorm)
            draw = draw_for(choice, rng, dt)
            if isinstance(choice, Homodyne):
                homodyne_step(state, ch, choice.phase, draw.wiener, dt,
                              no_jump_op=no_jump[j], renormalize=renorm)
                win_hom[j] += 1
                win_phase[j] += choice.phase
            else:
                number_step(state, ch, draw.uniform, dt,
                            no_jump_op=no_jump[j], renormalize=renorm)
                win_num[j] += 1
            if record.collect_decisions:
                out.decisions.append((t, j, type(choice).__name__.lower(),
                                      getattr(choice, "phase", np.nan), rate))
        if not renorm:
            mpslib.canonicalize(state)
        for bond, gate in model.gate_layer(t, dt, circuit_rng):
            if isinstance(state, DenseState):
                state.apply_bond_gate(bond, gate)
            else:
                cum_discarded += mpslib.apply_two_site_gate(state, bond, gate)
        _check_finite(state, step, step * dt)
        if rec_idx < T and step == steps_to_record[rec_idx]:
            rec_idx = record_point(rec_idx, step)
    return out


# ---------------------------------------------------------------------------
# Ensembles
# ---------------------------------------------------------------------------


def _nan_stats(stack: np.ndarray):
    import warnings

    n = np.sum(~np.isnan(stack), axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(stack, axis=0)
        std = np.nanstd(stack, axis=0, ddof=1)
    std = np.where(np.isfinite(std), std, 0.0)
    stderr = np.where(n > 1, std / np.sqrt(np.maximum(n, 1)), 0.0)
    return mean, stderr


def aggregate(records: list[TrajectoryRecord], failures=None) -> EnsembleStats:
    if not records:
        raise ValueError("no successful trajectories to aggregate")
    ref = records[0]
    ee = np.stack([r.ee for r in records])
    obs = np.stack([r.obs for r in records])
    frac = np.stack([r.frac_number for r in records])
    phase = np.stack([r.mean_phase for r in records])
    chi = np.stack([r.max_chi for r in records])
    disc = np.stack([r.discarded_weight for r in records])
    n = len(records)
    if n > 1:
        ee_m = ee.mean(axis=0)
        ee_se = ee.std(axis=0, ddof=1) / np.sqrt(n)
        obs_m = obs.mean(axis=0)
        obs_se = obs.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        ee_m, ee_se = ee[0], np.zeros_like(ee[0])
        obs_m, obs_se = obs[0], np.zeros_like(obs[0])
    frac_m, frac_se = _nan_stats(frac)
    phase_m, _ = _nan_stats(phase)
    return EnsembleStats(
        times=ref.times.copy(),
        n=n,
        cuts=ref.cuts,
        ee_mean=ee_m,
        ee_stderr=ee_se,
        obs_names=ref.obs_names,
        obs_mean=obs_m,
        obs_stderr=obs_se,
        frac_number_mean=frac_m,
        frac_number_stderr=frac_se,
        mean_phase_mean=phase_m,
        max_chi_mean=chi.mean(axis=0),
        discarded_weight_mean=disc.mean(axis=0),
        failures=list(failures or []),
    )


def _trajectory_task(args) -> TrajectoryRecord:
    (name, params, policy, dt, t_final, chi_max, master_seed, tid, record,
     trunc_threshold, backend, canonicalize, frozen_seed, permute) = args
    model = build_model(name, params)
    return run_trajectory(model, policy, dt, t_final, chi_max, master_seed,
                          trajectory_id=tid, record=record,
                          trunc_threshold=trunc_threshold, backend=backend,
                          canonicalize=canonicalize,
                          frozen_circuit_seed=frozen_seed,
                          permute_channels=permute)


def run_ensemble(
    model: ModelSpec,
    policy: UnravellingPolicy,
    n_traj: int,
    dt: float,
    t_final: float,
    chi_max: int,
    master_seed: int,
    workers: int = 1,
    record: RecordSpec | None = None,
    trunc_threshold: float = 1e-12,
    backend: str = "auto",
    canonicalize: str = "auto",
    strategy: str = "auto",
    frozen_circuit_seed: int | None = None,
    permute_channels: bool = False,
    keep_records: bool = False,
):
    """Run ``n_traj`` trajectories and aggregate them.

    ``strategy='sequential'`` integrates the trajectories one by one with
    per-trajectory random streams (reference semantics, any backend,
    multi-process capable).  ``strategy='batched'`` advances the whole
    ensemble in lock-step on the dense backend from a single seeded stream;
    statistics agree, individual trajectories differ.  ``'auto'`` picks
    batched when the dense backend applies and the run is purely statistical
    (no per-trajectory output requested).
    """
    record = record or RecordSpec()
    resolved_backend = resolve_backend(model, chi_max, backend)
    if strategy == "auto":
        strategy = "batched" if (resolved_backend == "dense"
                                 and not record.collect_decisions) else "sequential"
    if strategy == "batched":
        from .batched import run_batched_dense

        dim_ok = model.d**model.n <= 256
        chi_ok = chi_max == 1 or chi_max >= model.d ** (model.n // 2)
        if not (dim_ok and chi_ok):
            raise ValueError(
                "batched strategy needs a small chain and chi_max of 1 or unrestricted")
        records = run_batched_dense(model, policy, n_traj, dt, t_final,
                                    master_seed, record,
                                    frozen_circuit_seed=frozen_circuit_seed,
                                    chi_max=chi_max)
        stats = aggregate(records)
        return (stats, records) if keep_records else (stats, None)

    tasks = [
        (model.name, model.params, policy, dt, t_final, chi_max, master_seed,
         tid, record, trunc_threshold, resolved_backend, canonicalize,
         frozen_circuit_seed, permute_channels)
        for tid in range(n_traj)
    ]
    records: list[TrajectoryRecord] = []
    failures: list[tuple[int, str]] = []
    if workers > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(_trajectory_task_safe, tasks)
        for tid, res in enumerate(results):
            if isinstance(res, TrajectoryRecord):
                records.append(res)
            else:
                failures.append((tid, res))
    else:
        for task in tasks:
            try:
                records.append(_trajectory_task(task))
            except TrajectoryAbort as exc:
                failures.append((task[7], str(exc)))
    records.sort(key=lambda r: r.trajectory_id)
    stats = aggregate(records, failures)
    return (stats, records if keep_records else None)


def _trajectory_task_safe(args):
    try:
        return _trajectory_task(args)
    except TrajectoryAbort as exc:
        return str(exc)


def variance_report(records: list[TrajectoryRecord]) -> dict[str, np.ndarray]:
    """Across-trajectory sample variance per recorded quantity and time."""
    if len(records) < 2:
        raise ValueError("variance needs at least two records")
    t0 = records[0].times
    for r in records[1:]:
        if not np.array_equal(r.times, t0):
            raise ValueError("records have mismatched time grids")
    out: dict[str, np.ndarray] = {}
    obs = np.stack([r.obs for r in records])
    for i, name in enumerate(records[0].obs_names):
        out[name] = obs[:, :, i].var(axis=0, ddof=1)
    ee = np.stack([r.ee for r in records])
    for i, c in enumerate(records[0].cuts):
        out[f"ee:{c}"] = ee[:, :, i].var(axis=0, ddof=1)
    return out


def connected_correlation(records: list[TrajectoryRecord], name_ab: str,
                          name_a: str, name_b: str):
    """Ensemble connected correlator <AB> - <A><B> with a delta-method error.

    The trajectory average of the product observable minus the product of the
    averages, linearised per trajectory for the standard error.
    """
    idx = {n: i for i, n in enumerate(records[0].obs_names)}
    ab = np.stack([r.obs[:, idx[name_ab]] for r in records])
    a = np.stack([r.obs[:, idx[name_a]] for r in records])
    b = np.stack([r.obs[:, idx[name_b]] for r in records])
    n = ab.shape[0]
    value = ab.mean(0) - a.mean(0) * b.mean(0)
    infl = ab - b.mean(0) * a - a.mean(0) * b
    stderr = infl.std(0, ddof=1) / np.sqrt(n)
    return value, stderr
