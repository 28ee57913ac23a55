"""Expected entanglement-growth rates and the per-channel propagator selector.

Given a pure state, a bipartition and one local dissipative channel, the
functions here evaluate the closed-form ensemble-averaged entanglement-entropy
change rates for counting and quadrature monitoring, optimise the quadrature
phase analytically, and evaluate the interpolation formula covering arbitrary
single-channel environment measurements.  The minimum over all measurements is
always attained by counting or by the best quadrature, so the greedy selector
only has to compare those two.

All rate formulas are written over trailing axes ``(..., chi)`` /
``(..., chi, chi)`` so they evaluate identically for a single state or for a
whole batch of trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dense import DenseState
from .mps import EIG_FLOOR, MpsState, schmidt_operator_block
from .propagators import Homodyne, JumpChannel, Number, PropagatorChoice

KERNEL_REL_TOL = 1e-8  # switch to the 1/xi limit below this relative gap
TIE_TOL = 1e-12  # rate differences below this count as a tie (-> quadrature)
_LN2 = np.log(2.0)


@dataclass
class RateInputs:
    """Schmidt-basis data of one (state, cut, channel) triple.

    ``xi``: Schmidt weights at the cut (descending, summing to one).
    ``a_mat[k, l]``: matrix elements of the half-chain-traced ``op * phi`` in
    the Schmidt basis; its trace is ``a0 = tr(op*phi)``.  ``reduced_jump`` is
    the same object for ``op phi op†`` with trace ``jump_weight``.
    """

    xi: np.ndarray
    a0: complex
    a_mat: np.ndarray
    jump_weight: float
    reduced_jump: np.ndarray
    gamma: float

    def validate(self, atol: float = 1e-9) -> None:
        if np.any(self.xi < -atol):
            raise ValueError("negative Schmidt weight")
        if abs(float(np.sum(self.xi)) - 1.0) > 1e-8:
            raise ValueError("Schmidt weights do not sum to 1")
        if abs(complex(np.trace(self.a_mat)) - self.a0) > 1e-7:
            raise ValueError("trace of a_mat inconsistent with a0")
        if abs(float(np.real(np.trace(self.reduced_jump))) - self.jump_weight) > 1e-7:
            raise ValueError("trace of reduced_jump inconsistent with jump_weight")
        if np.min(np.linalg.eigvalsh(self.reduced_jump)) < -1e-7:
            raise ValueError("reduced_jump not positive semidefinite")


@dataclass(frozen=True)
class GeneralMeasurementParams:
    """Sufficient statistics (r, beta, s) of an arbitrary channel measurement.

    ``s**2`` is the one-quantum weight carried by outcomes that overlap the
    bath vacuum, ``r**2 * exp(-2i*beta)`` its phase-coherent part; ``s = 1``
    restricts to measurements that never resolve the vacuum exactly.
    """

    r: float
    beta: float
    s: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.r <= self.s <= 1.0:
            raise ValueError("need 0 <= r <= s <= 1")


def log_ratio_kernel(xi: np.ndarray) -> np.ndarray:
    """(ln xi_k - ln xi_l) / (xi_k - xi_l) with the 1/xi diagonal limit.

    Pairs involving weights at or below the eigenvalue floor are excluded
    (their matrix elements vanish for one-sided channels).
    """
    x = xi[..., :, None]
    y = xi[..., None, :]
    keep = (x > EIG_FLOOR) & (y > EIG_FLOOR)
    mx = np.maximum(x, y)
    safe_mx = np.clip(mx, EIG_FLOOR, None)
    close = np.abs(x - y) < KERNEL_REL_TOL * mx
    xs = np.clip(x, EIG_FLOOR * 1e-6, None)
    ys = np.clip(y, EIG_FLOOR * 1e-6, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        kern = (np.log(xs) - np.log(ys)) / (x - y)
    kern = np.where(close, 1.0 / safe_mx, kern)
    return np.where(keep, kern, 0.0)


def _number_rate_arrays(
    xi: np.ndarray, reduced_jump: np.ndarray, jump_weight: np.ndarray, gamma
) -> np.ndarray:
    w = np.asarray(jump_weight, dtype=float)
    eigs = np.linalg.eigvalsh(reduced_jump)
    ent_jump = np.sum(np.where(eigs > EIG_FLOOR, eigs * np.log2(np.clip(eigs, EIG_FLOOR, None)), 0.0), axis=-1)
    jdiag = np.real(np.einsum("...kk->...k", reduced_jump))
    logxi = np.log2(np.clip(xi, EIG_FLOOR, None))
    cross = np.sum(np.where(xi > EIG_FLOOR, jdiag * logxi, 0.0), axis=-1)
    wlogw = np.where(w > EIG_FLOOR, w * np.log2(np.clip(w, EIG_FLOOR, None)), 0.0)
    rate = gamma * (wlogw + cross - ent_jump)
    return np.where(w > EIG_FLOOR, rate, 0.0)


def _homodyne_rate_arrays(xi, a0, a_mat, gamma, phase) -> np.ndarray:
    # The phase enters with the sign that makes this the expected rate of the
    # executable quadrature update K = exp(-rate*dt*op†op/2) + sqrt(rate)
    # e^{+i phase} op dxi at the same phase argument.
    e = np.exp(1j * np.asarray(phase))
    ea = np.asarray(e)[..., None, None] * a_mat
    m = ea + np.conj(np.swapaxes(ea, -1, -2))
    kern = log_ratio_kernel(xi)
    term = np.sum(kern * np.abs(m) ** 2, axis=(-2, -1))
    first = 4.0 * np.real(e * a0) ** 2
    return gamma / (2.0 * _LN2) * (first - term)


def _phase_mismatch_arrays(xi, a0, a_mat, gamma) -> np.ndarray:
    """gamma*(|a0|^2 - sum_kl kernel_kl |a_kl|^2)/ln2: the two-quadrature mean."""
    kern = log_ratio_kernel(xi)
    s2 = np.sum(kern * np.abs(a_mat) ** 2, axis=(-2, -1))
    return gamma * (np.abs(a0) ** 2 - s2) / _LN2


def _optimal_phase_arrays(xi, a0, a_mat, gamma):
    """The rate is exactly u + v*cos(2phi) + w*sin(2phi); solve it from 3 samples."""
    r0 = _homodyne_rate_arrays(xi, a0, a_mat, gamma, 0.0)
    r45 = _homodyne_rate_arrays(xi, a0, a_mat, gamma, np.pi / 4)
    r90 = _homodyne_rate_arrays(xi, a0, a_mat, gamma, np.pi / 2)
    u = 0.5 * (r0 + r90)
    v = 0.5 * (r0 - r90)
    w = r45 - u
    phi = np.mod(0.5 * np.arctan2(-w, -v), np.pi)
    return phi, u - np.hypot(v, w)


def rate_number(inputs: RateInputs) -> float:
    """Expected entanglement change rate (bits per unit time) under counting."""
    return float(
        _number_rate_arrays(
            inputs.xi, inputs.reduced_jump, inputs.jump_weight, inputs.gamma
        )
    )


def rate_homodyne(inputs: RateInputs, phase: float) -> float:
    """Expected entanglement change rate under quadrature monitoring at ``phase``."""
    return float(
        _homodyne_rate_arrays(inputs.xi, inputs.a0, inputs.a_mat, inputs.gamma, phase)
    )


def optimal_phase(inputs: RateInputs) -> tuple[float, float]:
    """Analytically optimal quadrature phase and its rate."""
    phi, rate = _optimal_phase_arrays(inputs.xi, inputs.a0, inputs.a_mat, inputs.gamma)
    return float(phi), float(rate)


def phase_average_reference(inputs: RateInputs) -> float:
    """Exact value of (rate(phi) + rate(phi + pi/2)) / 2 for any phi."""
    return float(_phase_mismatch_arrays(inputs.xi, inputs.a0, inputs.a_mat, inputs.gamma))


def rate_general(
    inputs: RateInputs,
    params: GeneralMeasurementParams,
    rate_num: float | None = None,
    rate_hom_at_beta: float | None = None,
) -> float:
    """Rate of an arbitrary measurement with statistics (r, beta, s).

    Convex interpolation between the best-phase-coherent quadrature part, the
    phase-averaged quadrature part, and the counting part; hence never below
    ``min(rate_number, best homodyne)``.
    """
    if rate_num is None:
        rate_num = rate_number(inputs)
    if rate_hom_at_beta is None:
        rate_hom_at_beta = rate_homodyne(inputs, params.beta)
    mid = phase_average_reference(inputs)
    r2, s2 = params.r**2, params.s**2
    return r2 * rate_hom_at_beta + (s2 - r2) * mid + (1.0 - s2) * rate_num


# ---------------------------------------------------------------------------
# Rate inputs from the two state backends
# ---------------------------------------------------------------------------


def rate_inputs_from_mps(state: MpsState, cut: int, channel: JumpChannel,
                         allow_stale: bool = False) -> RateInputs:
    blocks = schmidt_operator_block(state, cut, channel.site, channel.op,
                                    allow_stale=allow_stale)
    return RateInputs(
        xi=blocks.xi,
        a0=blocks.a0,
        a_mat=blocks.block,
        jump_weight=blocks.jump_weight,
        reduced_jump=blocks.reduced_jump,
        gamma=channel.rate,
    )


def _dense_schmidt(state: DenseState, cut: int):
    mat = state.amplitudes.reshape(state.d**cut, -1)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    return u, s, vh


def _dense_blocks(u, s, vh, n, d, cut, site, op):
    """Schmidt-basis blocks for a local op, mirroring the tensor-network path."""
    if site >= cut:  # operator acts in B: sandwich between the right vectors
        dl = d ** (site - cut)
        dr = d ** (n - site - 1)
        r = vh.reshape(-1, dl, d, dr)
        opr = np.einsum("ij,kajb->kaib", op, r).reshape(vh.shape)
        env = opr @ vh.conj().T  # env[k, l] = <R_l| op |R_k>
    else:  # operator acts in A: sandwich between the left vectors
        dl = d**site
        dr = d ** (cut - site - 1)
        l = u.T.reshape(-1, dl, d, dr)
        opl = np.einsum("ij,kajb->kaib", op, l).reshape(u.shape[1], -1)
        env = opl @ u.conj()  # env[k, l] = <L_l| op |L_k>
    return s[:, None] * env * s[None, :]


def rate_inputs_from_dense(state: DenseState, cut: int, channel: JumpChannel) -> RateInputs:
    u, s, vh = _dense_schmidt(state, cut)
    op = channel.op
    a_mat = _dense_blocks(u, s, vh, state.n, state.d, cut, channel.site, op)
    jmp = _dense_blocks(u, s, vh, state.n, state.d, cut, channel.site, op.conj().T @ op)
    jmp = 0.5 * (jmp + jmp.conj().T)
    return RateInputs(
        xi=s**2,
        a0=complex(np.trace(a_mat)),
        a_mat=a_mat,
        jump_weight=float(np.real(np.trace(jmp))),
        reduced_jump=jmp,
        gamma=channel.rate,
    )


def rate_inputs_for(state, cut: int, channel: JumpChannel,
                    allow_stale: bool = False) -> RateInputs:
    if isinstance(state, MpsState):
        return rate_inputs_from_mps(state, cut, channel, allow_stale=allow_stale)
    if isinstance(state, DenseState):
        return rate_inputs_from_dense(state, cut, channel)
    raise TypeError(f"unsupported state backend {type(state)!r}")


def choose_propagator(
    state, channel: JumpChannel, cut: int, allow_stale: bool = False
) -> tuple[PropagatorChoice, float]:
    """Greedy per-channel selection of the propagator minimising the rate.

    Ties (|difference| < 1e-12) resolve to the quadrature choice, which keeps
    the selection deterministic on dark and product states.
    """
    inputs = rate_inputs_for(state, cut, channel, allow_stale=allow_stale)
    r_num = rate_number(inputs)
    phi, r_hom = optimal_phase(inputs)
    if r_num < r_hom - TIE_TOL:
        return Number(), r_num
    return Homodyne(phi), r_hom


# ---------------------------------------------------------------------------
# Batched versions for the vectorised dense ensemble runner
# ---------------------------------------------------------------------------


def batched_dense_blocks(psis: np.ndarray, n: int, d: int, cut: int, site: int,
                         op: np.ndarray):
    """(xi, a_mat, reduced_jump, jump_weight) for a batch of dense states."""
    dim_a = d**cut
    mats = psis.reshape(psis.shape[0], dim_a, -1)
    u, s, vh = np.linalg.svd(mats, full_matrices=False)
    opdop = op.conj().T @ op
    if site >= cut:
        dl = d ** (site - cut)
        dr = d ** (n - site - 1)
        r = vh.reshape(vh.shape[0], vh.shape[1], dl, d, dr)
        opr = np.einsum("ij,bkajc->bkaic", op, r).reshape(vh.shape)
        jpr = np.einsum("ij,bkajc->bkaic", opdop, r).reshape(vh.shape)
        env_a = np.einsum("bkx,blx->bkl", opr, vh.conj())
        env_j = np.einsum("bkx,blx->bkl", jpr, vh.conj())
    else:
        dl = d**site
        dr = d ** (cut - site - 1)
        ut = np.swapaxes(u, -1, -2)  # (B, chi, dim_a)
        l = ut.reshape(ut.shape[0], ut.shape[1], dl, d, dr)
        opl = np.einsum("ij,bkajc->bkaic", op, l).reshape(ut.shape)
        jpl = np.einsum("ij,bkajc->bkaic", opdop, l).reshape(ut.shape)
        env_a = np.einsum("bkx,blx->bkl", opl, ut.conj())
        env_j = np.einsum("bkx,blx->bkl", jpl, ut.conj())
    weights = s[..., :, None] * s[..., None, :]
    a_mat = weights * env_a
    jmp = weights * env_j
    jmp = 0.5 * (jmp + np.conj(np.swapaxes(jmp, -1, -2)))
    jw = np.real(np.einsum("bkk->b", jmp))
    return s**2, a_mat, jmp, jw


def batched_choose(psis: np.ndarray, n: int, d: int, cut: int,
                   channel: JumpChannel):
    """Vectorised propagator selection; returns (use_number, phase, rate)."""
    xi, a_mat, jmp, jw = batched_dense_blocks(psis, n, d, cut, channel.site, channel.op)
    a0 = np.einsum("bkk->b", a_mat)
    r_num = _number_rate_arrays(xi, jmp, jw, channel.rate)
    phi, r_hom = _optimal_phase_arrays(xi, a0, a_mat, channel.rate)
    use_number = r_num < r_hom - TIE_TOL
    rate = np.where(use_number, r_num, r_hom)
    return use_number, phi, rate
