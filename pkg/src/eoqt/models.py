"""Benchmark model library: gate-layer generators, channels, initial states.

A model bundles everything a trajectory run needs: the chain geometry, the
dissipative channels, a generator producing the two-site gate layer that
implements one coherent Trotter step, an initial state, and (when available)
the dense Hamiltonian for master-equation reference runs.

Single-site Hamiltonian terms are folded symmetrically into the adjacent
bond gates (boundary sites fold fully into their single bond), and the
coherent step is emitted as a symmetric odd/even/odd split so the per-step
Trotter error is third order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from .dense import embed_local
from .propagators import JumpChannel

SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, -1j], [1j, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
ID2 = np.eye(2, dtype=complex)
PAULI = [ID2, SX, SY, SZ]

GateLayer = list[tuple[int, np.ndarray]]  # (bond index, d^2 x d^2 unitary)


@dataclass
class ModelSpec:
    name: str
    n: int
    d: int
    channels: list[JumpChannel]
    initial_kets: list[np.ndarray] | None
    initial_vector: np.ndarray | None
    gate_layer: Callable[[float, float, np.random.Generator], GateLayer]
    dense_hamiltonian: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def initial_dense_vector(self) -> np.ndarray:
        if self.initial_vector is not None:
            return self.initial_vector.copy()
        psi = np.array([1.0 + 0j])
        for k in self.initial_kets:
            psi = np.kron(psi, k)
        return psi

    def max_rate(self) -> float:
        return max((ch.rate for ch in self.channels), default=0.0)


def _bond_exponentials(n: int, bond_terms: list[np.ndarray], dt: float) -> GateLayer:
    """Symmetric odd/even/odd Trotter layer from per-bond Hamiltonian terms."""
    odd = [b for b in range(1, n) if b % 2 == 1]
    even = [b for b in range(1, n) if b % 2 == 0]
    gates_half = {b: expm(-0.5j * dt * bond_terms[b - 1]) for b in odd}
    gates_full = {b: expm(-1j * dt * bond_terms[b - 1]) for b in even}
    layer = [(b, gates_half[b]) for b in odd]
    layer += [(b, gates_full[b]) for b in even]
    layer += [(b, gates_half[b]) for b in odd]
    return layer


def _fold_fields(n: int, d: int, bond_coupling: list[np.ndarray],
                 site_field: list[np.ndarray]) -> list[np.ndarray]:
    """Distribute single-site terms onto bonds: half-half inside, full at edges."""
    eye = np.eye(d, dtype=complex)
    terms = []
    for b in range(1, n):
        wl = 1.0 if b - 1 == 0 else 0.5
        wr = 1.0 if b == n - 1 else 0.5
        h = bond_coupling[b - 1].astype(complex).copy()
        h += wl * np.kron(site_field[b - 1], eye)
        h += wr * np.kron(eye, site_field[b])
        terms.append(h)
    return terms


def _static_model(name, n, d, channels, kets, bond_terms, h_dense, params) -> ModelSpec:
    def gate_layer(t, dt, rng, _cache={}):
        key = round(dt, 15)
        if key not in _cache:
            _cache[key] = _bond_exponentials(n, bond_terms, dt)
        return _cache[key]

    if not bond_terms:  # single site or H = 0
        gate_layer = lambda t, dt, rng: []
    return ModelSpec(
        name=name, n=n, d=d, channels=channels, initial_kets=kets,
        initial_vector=None, gate_layer=gate_layer,
        dense_hamiltonian=h_dense, params=params,
    )


def bell_model(gamma: float = 1.0) -> ModelSpec:
    """Two undriven qubits starting in a Bell pair, each with an excited-state
    dephasing channel |1><1| of strength gamma."""
    proj1 = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
    channels = [JumpChannel(site=j, op=proj1, rate=gamma) for j in range(2)]
    bell = np.zeros(4, dtype=complex)
    bell[0] = bell[3] = 1.0 / np.sqrt(2.0)
    spec = _static_model("bell", 2, 2, channels, None, [], None, {"gamma": gamma})
    spec.initial_vector = bell
    spec.dense_hamiltonian = np.zeros((4, 4), dtype=complex)
    return spec


def ising_model(h: float, g: float, J: float, n: int, gamma: float = 1.0) -> ModelSpec:
    """Transverse-plus-longitudinal-field Ising chain with local decay |0><1|."""
    if n < 2:
        raise ValueError("chain models need n >= 2")
    field_term = h * SZ - g * SX
    bond_coupling = [J * np.kron(SZ, SZ) for _ in range(n - 1)]
    bond_terms = _fold_fields(n, 2, bond_coupling, [field_term] * n)
    lower = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # |0><1|
    channels = [JumpChannel(site=j, op=lower, rate=gamma) for j in range(n)]
    kets = [np.array([0.0, 1.0], dtype=complex)] * n  # fully excited
    h_dense = sum(embed_local(field_term, n, 2, j) for j in range(n))
    for b in range(1, n):
        h_dense = h_dense + J * (embed_local(SZ, n, 2, b - 1) @ embed_local(SZ, n, 2, b))
    return _static_model("ising", n, 2, channels, kets, bond_terms, h_dense,
                         {"h": h, "g": g, "J": J, "n": n, "gamma": gamma})


def eit_model(omega1: float, omega2: float, V: float, n: int,
              gamma: float = 1.0) -> ModelSpec:
    """Driven three-level chain (levels g1, g2, r) with |r><r| dephasing.

    The density-density interaction couples sz1 = |r><r| - |g1><g1| on
    neighbouring sites.  Basis order: index 0 = g1, 1 = g2, 2 = r.
    """
    if n < 2:
        raise ValueError("chain models need n >= 2")
    g1r = np.zeros((3, 3), dtype=complex); g1r[0, 2] = 1.0  # |g1><r|
    g2r = np.zeros((3, 3), dtype=complex); g2r[1, 2] = 1.0  # |g2><r|
    sz1 = np.diag([-1.0, 0.0, 1.0]).astype(complex)         # |r><r| - |g1><g1|
    proj_r = np.diag([0.0, 0.0, 1.0]).astype(complex)
    field_term = -0.5 * omega1 * (g1r + g1r.conj().T) - 0.5 * omega2 * (g2r + g2r.conj().T)
    bond_coupling = [V * np.kron(sz1, sz1) for _ in range(n - 1)]
    bond_terms = _fold_fields(n, 3, bond_coupling, [field_term] * n)
    channels = [JumpChannel(site=j, op=proj_r, rate=gamma) for j in range(n)]
    kets = [np.array([1.0, 0.0, 0.0], dtype=complex)] * n
    h_dense = None
    if 3**n <= 1024:
        h_dense = sum(embed_local(field_term, n, 3, j) for j in range(n))
        for b in range(1, n):
            h_dense = h_dense + V * (embed_local(sz1, n, 3, b - 1) @ embed_local(sz1, n, 3, b))
    return _static_model("eit", n, 3, channels, kets, bond_terms, h_dense,
                         {"omega1": omega1, "omega2": omega2, "V": V, "n": n, "gamma": gamma})


@dataclass(frozen=True)
class RbcParams:
    """Brownian two-site couplings: iid N(0, alpha/dt) per step and bond."""

    alpha: float
    gamma: float
    include_identity_term: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("coupling variance must be non-negative")


def sample_rbc_couplings(params: RbcParams, dt: float,
                         rng: np.random.Generator) -> np.ndarray:
    """One bond's 4x4 coupling table g[k, l] over the two-site Pauli basis."""
    g = rng.normal(0.0, np.sqrt(params.alpha / dt), size=(4, 4))
    if not params.include_identity_term:
        g[0, 0] = 0.0
    return g


def rbc_bond_gate(g: np.ndarray, dt: float) -> np.ndarray:
    h = np.zeros((4, 4), dtype=complex)
    for k in range(4):
        for l in range(4):
            if g[k, l] != 0.0:
                h += g[k, l] * np.kron(PAULI[k], PAULI[l])
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * w)) @ v.conj().T


def rbc_layer(params: RbcParams, n: int, dt: float,
              rng: np.random.Generator) -> GateLayer:
    """Odd then even bond gates with fresh white-noise couplings each call."""
    layer = []
    for b in [b for b in range(1, n) if b % 2 == 1] + [b for b in range(1, n) if b % 2 == 0]:
        layer.append((b, rbc_bond_gate(sample_rbc_couplings(params, dt, rng), dt)))
    return layer


def rbc_model(alpha: float, gamma: float, n: int,
              include_identity_term: bool = True) -> ModelSpec:
    """Open Brownian circuit: white-noise two-site couplings + sz dephasing."""
    if n < 2:
        raise ValueError("chain models need n >= 2")
    params = RbcParams(alpha=alpha, gamma=gamma,
                       include_identity_term=include_identity_term)
    channels = [JumpChannel(site=j, op=SZ, rate=gamma) for j in range(n)]
    kets = [np.array([0.0, 1.0], dtype=complex)] * n
    return ModelSpec(
        name="rbc", n=n, d=2, channels=channels, initial_kets=kets,
        initial_vector=None,
        gate_layer=lambda t, dt, rng: rbc_layer(params, n, dt, rng),
        dense_hamiltonian=None,
        params={"alpha": alpha, "gamma": gamma, "n": n,
                "include_identity_term": include_identity_term},
    )


# ---------------------------------------------------------------------------
# Closed-form references for the dephased Bell pair
# ---------------------------------------------------------------------------


def sigma_entropy(s) -> np.ndarray | float:
    """sigma(s) = [(1+e^-s) ln(1+e^-s) + s e^-s] / (2 ln 2); sigma(0) = 1.

    Evaluated in the overflow-safe form L + e^-s * log1p(e^s) with
    L = softplus(-s), which tends to (1 - s)/(2 ln 2) for s -> -inf.
    """
    arr = np.asarray(s, dtype=float)
    scalar = arr.ndim == 0
    s = np.atleast_1d(arr).copy()
    softplus = np.log1p(np.exp(-np.abs(s)))
    neg = s <= 0
    softplus[neg] -= s[neg]
    # tail = e^{-s} * (softplus + s) = e^{-s} * log1p(e^{s}), -> 1 as s -> -inf
    tail = np.ones_like(s)
    mod = (s > -30.0) & neg
    tail[mod] = np.exp(-s[mod]) * np.log1p(np.exp(s[mod]))
    pos = ~neg
    tail[pos] = np.exp(-s[pos]) * (softplus[pos] + s[pos])
    val = (softplus + tail) / (2.0 * np.log(2.0))
    return float(val[0]) if scalar else val.reshape(arr.shape)


def bell_eaee_number(gamma_t) -> np.ndarray | float:
    """Ensemble-averaged entanglement of the counting unravelling."""
    return sigma_entropy(2.0 * np.asarray(gamma_t, dtype=float))


def bell_eaee_homodyne(gamma_t: float, phi1: float = 0.0, phi2: float = 0.0,
                       tol: float = 1e-8) -> float:
    """Quadrature-unravelling average: Gaussian smearing of sigma.

    tau = gamma*t*(cos^2 phi1 + cos^2 phi2); the integral runs over the whole
    real line (sigma grows only linearly for negative arguments).
    """
    tau = float(gamma_t) * (np.cos(phi1) ** 2 + np.cos(phi2) ** 2)
    if tau <= 0.0:
        return 1.0
    scale = 2.0 * np.sqrt(tau)

    def integrand(z):
        return sigma_entropy(2.0 * tau + scale * z) * np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)

    val, _ = quad(integrand, -np.inf, np.inf, epsabs=tol, epsrel=1e-10, limit=200)
    return float(val)


def bell_entanglement_of_formation(gamma_t) -> np.ndarray | float:
    """Closed-form lower bound for the dephased Bell pair."""
    gt = np.asarray(gamma_t, dtype=float)
    root = np.sqrt(1.0 - np.exp(-2.0 * gt))
    rp = 0.5 * (1.0 + root)
    rm = 0.5 * (1.0 - root)

    def xlog(x):
        return np.where(x > 0, x * np.log2(np.clip(x, 1e-300, None)), 0.0)

    val = -(xlog(rp) + xlog(rm))
    return val if val.ndim else float(val)


MODEL_BUILDERS = {
    "bell": lambda p: bell_model(gamma=p.get("gamma", 1.0)),
    "ising": lambda p: ising_model(h=p["h"], g=p["g"], J=p["J"], n=p["n"],
                                   gamma=p.get("gamma", 1.0)),
    "eit": lambda p: eit_model(omega1=p["omega1"], omega2=p["omega2"], V=p["V"],
                               n=p["n"], gamma=p.get("gamma", 1.0)),
    "rbc": lambda p: rbc_model(alpha=p["alpha"], gamma=p.get("gamma", 1.0),
                               n=p["n"],
                               include_identity_term=p.get("include_identity_term", True)),
}


def build_model(name: str, params: dict) -> ModelSpec:
    if name not in MODEL_BUILDERS:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(MODEL_BUILDERS)}")
    return MODEL_BUILDERS[name](params)
