"""Stochastic single-channel update operators.

Both update rules act through a single-site operator only, so they can never
raise the bond dimension of a tensor-network state.  They work on any state
object exposing ``expect_local(site, op)`` and ``apply_local(site, op,
renormalize)`` -- i.e. on both the MPS and the dense backend -- and, given
the same random increments, the two backends produce the same trajectory.

The expectation values entering the increment ``dxi`` and the click
probability ``p`` are always taken on the state entering that channel's
substep, matching the sequential per-channel splitting of the stochastic
layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA_DT_GUARD = 0.1  # coarser steps leave the O(dt) expansion uncontrolled


@dataclass(frozen=True)
class JumpChannel:
    """One dissipative channel: local operator ``op`` at ``site``, rate >= 0."""

    site: int
    op: np.ndarray
    rate: float

    def __post_init__(self):
        object.__setattr__(self, "op", np.asarray(self.op, dtype=complex))
        if self.op.ndim != 2 or self.op.shape[0] != self.op.shape[1]:
            raise ValueError("channel operator must be a square single-site matrix")
        if self.rate < 0:
            raise ValueError("channel rate must be non-negative")


@dataclass(frozen=True)
class Number:
    """Photon-counting monitoring: jump/no-jump branches."""


@dataclass(frozen=True)
class Homodyne:
    """Quadrature monitoring at a fixed local-oscillator phase."""

    phase: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.phase):
            raise ValueError("homodyne phase must be finite")
        object.__setattr__(self, "phase", float(self.phase) % (2.0 * np.pi))


PropagatorChoice = Number | Homodyne


@dataclass(frozen=True)
class StochasticDraw:
    """One recorded random increment: a Wiener step or a uniform variate."""

    wiener: float | None = None
    uniform: float | None = None


def draw_for(choice: PropagatorChoice, rng: np.random.Generator, dt: float) -> StochasticDraw:
    if isinstance(choice, Homodyne):
        return StochasticDraw(wiener=rng.normal(0.0, np.sqrt(dt)))
    return StochasticDraw(uniform=rng.uniform())


def _check_step(channel: JumpChannel, dt: float) -> None:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if channel.rate * dt > GAMMA_DT_GUARD:
        raise ValueError(
            f"rate*dt = {channel.rate * dt:.3g} exceeds the {GAMMA_DT_GUARD} guard"
        )


def no_jump_operator(channel: JumpChannel, dt: float) -> np.ndarray:
    """exp(-rate*dt*op†op/2), computed exactly on the local dimension."""
    cdc = channel.op.conj().T @ channel.op
    w, v = np.linalg.eigh(cdc)
    return (v * np.exp(-0.5 * channel.rate * dt * w)) @ v.conj().T


def homodyne_step(
    state,
    channel: JumpChannel,
    phase: float,
    dW: float,
    dt: float,
    no_jump_op: np.ndarray | None = None,
    renormalize: bool = True,
) -> float:
    """One diffusive update; returns the increment ``dxi`` actually applied.

    With ``renormalize=False`` the state is left un-normalised (and, for a
    tensor-network state, un-gauged); callers are then responsible for one
    restoring pass at the end of the stochastic layer.
    """
    _check_step(channel, dt)
    if channel.rate == 0.0:
        return dW
    g = channel.rate
    eiphi = np.exp(1j * phase)
    quad = 2.0 * np.real(eiphi * state.expect_local(channel.site, channel.op))
    dxi = np.sqrt(g) * quad * dt + dW
    a = no_jump_op if no_jump_op is not None else no_jump_operator(channel, dt)
    k = a + np.sqrt(g) * eiphi * dxi * channel.op
    state.apply_local(channel.site, k, renormalize=renormalize)
    return dxi


def number_step(
    state,
    channel: JumpChannel,
    u: float,
    dt: float,
    no_jump_op: np.ndarray | None = None,
    renormalize: bool = True,
) -> bool:
    """One counting update; returns True when the jump branch fired."""
    _check_step(channel, dt)
    if channel.rate == 0.0:
        return False
    cdc = channel.op.conj().T @ channel.op
    p = channel.rate * dt * np.real(state.expect_local(channel.site, cdc))
    if p >= 1.0:
        raise ValueError(f"click probability {p:.3g} >= 1; decrease dt")
    if u < p:
        # The sqrt(rate*dt) prefactor cancels against the renormalisation.
        state.apply_local(channel.site, channel.op, renormalize=renormalize)
        return True
    a = no_jump_op if no_jump_op is not None else no_jump_operator(channel, dt)
    state.apply_local(channel.site, a, renormalize=renormalize)
    return False


def rbc_exponential_form_step(
    state, channel: JumpChannel, phase: float, dW: float, dt: float
) -> float:
    """Exponential-form diffusive update, valid when op†op = identity.

    Equivalent to :func:`homodyne_step` up to contributions vanishing as
    dt^{3/2}; used for the discretisation-equivalence checks and for
    unitary-channel discussions.
    """
    _check_step(channel, dt)
    cdc = channel.op.conj().T @ channel.op
    if np.max(np.abs(cdc - np.eye(cdc.shape[0]))) > 1e-10:
        raise ValueError("exponential form requires op†op = identity")
    g = channel.rate
    eiphi = np.exp(1j * phase)
    quad = 2.0 * np.real(eiphi * state.expect_local(channel.site, channel.op))
    dxi = np.sqrt(g) * quad * dt + dW
    from scipy.linalg import expm

    k = expm(eiphi * np.sqrt(g) * dxi * channel.op)
    state.apply_local(channel.site, k, renormalize=True)
    return dxi


def apply_choice(
    state,
    channel: JumpChannel,
    choice: PropagatorChoice,
    draw: StochasticDraw,
    dt: float,
    no_jump_op: np.ndarray | None = None,
) -> bool:
    """Dispatch one stochastic substep; returns the jump flag (False for diffusion)."""
    if isinstance(choice, Homodyne):
        homodyne_step(state, channel, choice.phase, draw.wiener, dt, no_jump_op)
        return False
    return number_step(state, channel, draw.uniform, dt, no_jump_op)


def dense_trajectory_step(state, choice: PropagatorChoice, channel: JumpChannel,
                          dt: float, rng: np.random.Generator) -> bool:
    """Draw-and-apply convenience wrapper (dense or MPS state alike)."""
    return apply_choice(state, channel, choice, draw_for(choice, rng, dt), dt)
