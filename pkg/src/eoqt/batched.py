"""Lock-step vectorised ensemble runner for the dense backend.

Advances all trajectories simultaneously as one (N, dim) array.  Each
channel substep needs only two batched local applications (the no-click
damping and the channel operator); the click probabilities, quadrature
expectations and even the adaptive per-trajectory propagator selection are
evaluated as batched linear algebra.  Statistically equivalent to the
sequential runner; individual trajectories differ because the whole batch
draws from a single seeded stream.
"""

from __future__ import annotations

import numpy as np

from .ensemble import (
    Eoqt,
    FixedHomodyne,
    FixedNumber,
    RecordSpec,
    TrajectoryAbort,
    TrajectoryRecord,
    sample_steps,
)
from .mps import EIG_FLOOR
from .models import ModelSpec
from .propagators import GAMMA_DT_GUARD, no_jump_operator
from .rates import batched_choose


def _apply_local(psis: np.ndarray, n: int, d: int, site: int, op: np.ndarray):
    dl, dr = d**site, d ** (n - site - 1)
    shaped = psis.reshape(psis.shape[0], dl, d, dr)
    return np.einsum("ij,bajc->baic", op, shaped).reshape(psis.shape)


def _apply_bond(psis: np.ndarray, n: int, d: int, bond: int, gate: np.ndarray):
    dl, dr = d ** (bond - 1), d ** (n - bond - 1)
    shaped = psis.reshape(psis.shape[0], dl, d * d, dr)
    return np.einsum("ij,bajc->baic", gate, shaped).reshape(psis.shape)


def _row_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("bi,bi->b", a.conj(), b)


def _entropies(psis: np.ndarray, d: int, n: int, cuts) -> tuple[np.ndarray, np.ndarray]:
    ees = np.zeros((psis.shape[0], len(cuts)))
    ranks = np.ones(psis.shape[0], dtype=int)
    for i, c in enumerate(cuts):
        s = np.linalg.svd(psis.reshape(psis.shape[0], d**c, -1), compute_uv=False)
        w = s**2
        ees[:, i] = -np.sum(
            np.where(w > EIG_FLOOR, w * np.log2(np.clip(w, EIG_FLOOR, None)), 0.0), axis=1
        )
        ranks = np.maximum(ranks, np.sum(w > EIG_FLOOR, axis=1))
    return ees, ranks


def _project_rank_one(psis: np.ndarray, n: int, d: int, bond: int) -> np.ndarray:
    """Keep only the leading Schmidt dyad across ``bond`` (chi_max = 1)."""
    da = d**bond
    mats = psis.reshape(psis.shape[0], da, -1)
    u, s, vh = np.linalg.svd(mats, full_matrices=False)
    lead = np.einsum("ba,bc->bac", u[:, :, 0], vh[:, 0, :])
    return lead.reshape(psis.shape)


def run_batched_dense(
    model: ModelSpec,
    policy,
    n_traj: int,
    dt: float,
    t_final: float,
    master_seed: int,
    record: RecordSpec | None = None,
    frozen_circuit_seed: int | None = None,
    chi_max: int | None = None,
) -> list[TrajectoryRecord]:
    """Lock-step ensemble integration.

    ``chi_max`` may be None (unrestricted) or 1; the rank-one cap reproduces
    the product-state (chi = 1) tensor-network evolution exactly, since a
    two-site gate on a product state entangles only the bond it acts on.
    """
    record = record or RecordSpec()
    n, d = model.n, model.d
    if chi_max is not None and chi_max != 1 and chi_max < d ** (n // 2):
        raise ValueError("batched runner supports chi_max = 1 or unrestricted only")
    rank_one = chi_max == 1
    if dt * model.max_rate() > GAMMA_DT_GUARD + 1e-12:
        raise ValueError("dt violates the rate*dt <= 0.1 guard")
    channels = sorted(model.channels, key=lambda ch: ch.site)
    m = len(channels)
    if isinstance(policy, FixedHomodyne) and len(policy.phases) != m:
        raise ValueError("one homodyne phase per channel required")
    cut_policy = (policy.cut if isinstance(policy, Eoqt) and policy.cut is not None
                  else n // 2)
    cuts = record.cuts or tuple(range(1, n))

    rng = np.random.default_rng(np.random.SeedSequence(entropy=master_seed))
    circuit_rng = (
        np.random.default_rng(np.random.SeedSequence(entropy=frozen_circuit_seed))
        if frozen_circuit_seed is not None
        else rng
    )
    psi0 = model.initial_dense_vector()
    psis = np.tile(psi0, (n_traj, 1)).astype(complex)
    no_jump = [no_jump_operator(ch, dt) for ch in channels]
    sqdt = np.sqrt(dt)

    n_steps = int(round(t_final / dt))
    steps_to_record = sample_steps(dt, t_final, record.n_points)
    T = len(steps_to_record)
    times = np.array([s * dt for s in steps_to_record])
    ee_all = np.zeros((T, n_traj, len(cuts)))
    obs_all = np.zeros((T, n_traj, len(record.observables)))
    chi_all = np.zeros((T, n_traj), dtype=int)
    frac_all = np.full((T, n_traj, m), np.nan)
    phase_all = np.full((T, n_traj, m), np.nan)

    win_num = np.zeros((n_traj, m), dtype=np.int32)
    win_hom = np.zeros((n_traj, m), dtype=np.int32)
    win_phase = np.zeros((n_traj, m))

    def measure(idx: int, step: int) -> None:
        ee_all[idx], chi_all[idx] = _entropies(psis, d, n, cuts)
        for k, ob in enumerate(record.observables):
            cur = psis
            for site, op in ob.factors:
                cur = _apply_local(cur, n, d, site, np.asarray(op, dtype=complex))
            obs_all[idx, :, k] = np.real(_row_dot(psis, cur))
        if step > 0:
            tot = win_num + win_hom
            with np.errstate(invalid="ignore"):
                frac_all[idx] = np.where(tot > 0, win_num / np.maximum(tot, 1), np.nan)
                phase_all[idx] = np.where(win_hom > 0,
                                          win_phase / np.maximum(win_hom, 1), np.nan)
        win_num[:] = 0
        win_hom[:] = 0
        win_phase[:] = 0.0

    rec_idx = 0
    if steps_to_record[0] == 0:
        measure(0, 0)
        rec_idx = 1

    for step in range(1, n_steps + 1):
        t = (step - 1) * dt
        for j, ch in enumerate(channels):
            g = ch.rate
            op = ch.op
            a_psis = _apply_local(psis, n, d, ch.site, no_jump[j])
            c_psis = _apply_local(psis, n, d, ch.site, op)
            if isinstance(policy, FixedNumber):
                use_number = np.ones(n_traj, dtype=bool)
                phases = None
            elif isinstance(policy, FixedHomodyne):
                use_number = np.zeros(n_traj, dtype=bool)
                phases = np.full(n_traj, policy.phases[j])
            else:
                use_number, phases, _ = batched_choose(psis, n, d, cut_policy, ch)
                win_num[:, j] += use_number
                win_hom[:, j] += ~use_number
                win_phase[:, j] += np.where(use_number, 0.0, phases)
            if isinstance(policy, FixedNumber):
                win_num[:, j] += 1
            elif isinstance(policy, FixedHomodyne):
                win_hom[:, j] += 1
                win_phase[:, j] += policy.phases[j]

            hom_mask = ~use_number
            new = np.empty_like(psis)
            draws_w = rng.normal(0.0, sqdt, size=n_traj)
            draws_u = (rng.uniform(size=n_traj)
                       if (isinstance(policy, (FixedNumber, Eoqt))) else None)
            if np.any(hom_mask):
                eiphi = np.exp(1j * phases[hom_mask])
                quad = 2.0 * np.real(eiphi * _row_dot(psis[hom_mask], c_psis[hom_mask]))
                dxi = np.sqrt(g) * quad * dt + draws_w[hom_mask]
                coef = np.sqrt(g) * eiphi * dxi
                new[hom_mask] = a_psis[hom_mask] + coef[:, None] * c_psis[hom_mask]
            if np.any(use_number):
                p = g * dt * np.real(_row_dot(c_psis[use_number], c_psis[use_number]))
                if np.any(p >= 1.0):
                    raise ValueError("click probability >= 1; decrease dt")
                jump = draws_u[use_number] < p
                sub = np.where(jump[:, None], c_psis[use_number], a_psis[use_number])
                new[use_number] = sub
            norms = np.sqrt(np.real(_row_dot(new, new)))
            if not np.all(np.isfinite(norms)) or np.any(norms < 1e-300):
                raise TrajectoryAbort(f"non-finite batch state at step {step}")
            psis = new / norms[:, None]
        for bond, gate in model.gate_layer(t, dt, circuit_rng):
            psis = _apply_bond(psis, n, d, bond, np.asarray(gate, dtype=complex))
            if rank_one:
                psis = _project_rank_one(psis, n, d, bond)
        if rec_idx < T and step == steps_to_record[rec_idx]:
            measure(rec_idx, step)
            rec_idx += 1

    records = []
    for k in range(n_traj):
        records.append(
            TrajectoryRecord(
                trajectory_id=k,
                master_seed=master_seed,
                times=times.copy(),
                cuts=cuts,
                ee=ee_all[:, k, :].copy(),
                obs_names=tuple(o.name for o in record.observables),
                obs=obs_all[:, k, :].copy(),
                frac_number=frac_all[:, k, :].copy(),
                mean_phase=phase_all[:, k, :].copy(),
                max_chi=chi_all[:, k].copy(),
                discarded_weight=np.zeros(T),
            )
        )
    return records
