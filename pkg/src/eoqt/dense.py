"""Exact dense-state machinery for small chains.

Everything here is deliberately simple and auditable: dense vectors and
density matrices, a fixed-step RK4 Lindblad integrator, the two-qubit
entanglement of formation, and the CNOT-copy measurement-strategy fixtures.
These are the ground truth the tensor-network path is checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mps import entropy_from_schmidt

_SIZE_LIMIT_QUBITS = 20  # n * log2(d) cap for the master-equation integrator


@dataclass
class DenseState:
    """Normalised pure state of an n-site chain with local dimension d."""

    amplitudes: np.ndarray
    n: int
    d: int

    @classmethod
    def from_vector(cls, psi: np.ndarray, d: int) -> "DenseState":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        n = int(round(np.log(psi.size) / np.log(d)))
        if d**n != psi.size:
            raise ValueError(f"vector length {psi.size} is not a power of d={d}")
        nrm = np.linalg.norm(psi)
        if nrm == 0:
            raise ValueError("zero state vector")
        return cls(psi / nrm, n, d)

    def copy(self) -> "DenseState":
        return DenseState(self.amplitudes.copy(), self.n, self.d)

    def _split_shape(self, site: int) -> tuple[int, int, int]:
        dl = self.d**site
        dr = self.d ** (self.n - site - 1)
        return dl, self.d, dr

    def expect_local(self, site: int, op: np.ndarray) -> complex:
        psi = self.amplitudes.reshape(self._split_shape(site))
        opsi = np.einsum("ij,ajb->aib", np.asarray(op, dtype=complex), psi)
        return complex(np.vdot(psi, opsi))

    def apply_local(self, site: int, op: np.ndarray, renormalize: bool = True) -> None:
        psi = self.amplitudes.reshape(self._split_shape(site))
        psi = np.einsum("ij,ajb->aib", np.asarray(op, dtype=complex), psi).reshape(-1)
        if renormalize:
            nrm = np.linalg.norm(psi)
            if nrm < 1e-300:
                raise FloatingPointError("state annihilated by local operator")
            psi = psi / nrm
        self.amplitudes = psi

    def apply_bond_gate(self, bond: int, gate: np.ndarray) -> None:
        """Apply a (d^2 x d^2) gate to sites (bond-1, bond)."""
        dl = self.d ** (bond - 1)
        dr = self.d ** (self.n - bond - 1)
        psi = self.amplitudes.reshape(dl, self.d * self.d, dr)
        psi = np.einsum("ij,ajb->aib", np.asarray(gate, dtype=complex), psi)
        self.amplitudes = psi.reshape(-1)

    def schmidt_values(self, cut: int) -> np.ndarray:
        mat = self.amplitudes.reshape(self.d**cut, -1)
        return np.linalg.svd(mat, compute_uv=False)

    def entanglement_entropy(self, cut: int) -> float:
        return entropy_from_schmidt(self.schmidt_values(cut) ** 2)

    def expect_product(self, ops: list[tuple[int, np.ndarray]]) -> complex:
        psi = self.copy()
        for site, op in ops:
            psi.apply_local(site, op, renormalize=False)
        return complex(np.vdot(self.amplitudes, psi.amplitudes))

    def density_matrix(self) -> np.ndarray:
        return np.outer(self.amplitudes, self.amplitudes.conj())


@dataclass
class DenseDensityMatrix:
    rho: np.ndarray

    def validate(self, atol: float = 1e-8) -> None:
        r = self.rho
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("density matrix must be square")
        if np.max(np.abs(r - r.conj().T)) > atol:
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(r).real - 1.0) > atol:
            raise ValueError("density matrix trace differs from 1")
        if np.min(np.linalg.eigvalsh(0.5 * (r + r.conj().T))) < -1e-7:
            raise ValueError("density matrix has a significant negative eigenvalue")


def embed_local(op: np.ndarray, n: int, d: int, site: int) -> np.ndarray:
    """Kronecker embedding of a single-site operator into the full space."""
    left = np.eye(d**site)
    right = np.eye(d ** (n - site - 1))
    return np.kron(np.kron(left, np.asarray(op, dtype=complex)), right)


def _apply_local_rho(rho: np.ndarray, op: np.ndarray, n: int, d: int, site: int,
                     side: str) -> np.ndarray:
    """op @ rho or rho @ op† with a local operator, without building kroneckers."""
    dim = d**n
    dl, dr = d**site, d ** (n - site - 1)
    if side == "left":
        r = rho.reshape(dl, d, dr, dim)
        return np.einsum("ij,ajbc->aibc", op, r).reshape(dim, dim)
    r = rho.reshape(dim, dl, d, dr)
    return np.einsum("aijb,kj->aikb", r, op.conj()).reshape(dim, dim)


def lindblad_rhs(rho: np.ndarray, hamiltonian: np.ndarray | None, channels,
                 n: int, d: int) -> np.ndarray:
    """Right-hand side of the Lindblad master equation.

    ``channels`` is an iterable of objects with ``site``, ``op`` (d x d) and
    ``rate`` attributes.  Channel terms are applied through local
    contractions, so the cost stays O(m d^2 dim^2) rather than O(m dim^3).
    """
    if rho.shape[0] != d**n:
        raise ValueError("density matrix dimension does not match (n, d)")
    out = np.zeros_like(rho, dtype=complex)
    if hamiltonian is not None:
        out += -1j * (hamiltonian @ rho - rho @ hamiltonian)
    for ch in channels:
        c = np.asarray(ch.op, dtype=complex)
        cdc = c.conj().T @ c
        crho = _apply_local_rho(rho, c, n, d, ch.site, "left")
        crhocd = _apply_local_rho(crho, c, n, d, ch.site, "right")
        anti = _apply_local_rho(rho, cdc, n, d, ch.site, "left")
        anti += _apply_local_rho(rho, cdc.conj().T, n, d, ch.site, "right")
        out += ch.rate * (crhocd - 0.5 * anti)
    return out


def integrate_me(
    rho0: np.ndarray,
    hamiltonian,
    channels,
    n: int,
    d: int,
    dt: float,
    t_final: float,
    sample_times: np.ndarray | None = None,
):
    """Fixed-step RK4 integration of the master equation.

    ``hamiltonian`` may be None, a constant matrix, or a callable ``t -> H``.
    The state is re-symmetrised each step; a trace drift beyond 1e-6 aborts.
    Returns ``(times, rhos)`` sampled at ``sample_times`` (default: 50 points).
    """
    if n * np.log2(d) > _SIZE_LIMIT_QUBITS + 1e-9:
        raise ValueError("system too large for the dense master-equation oracle")
    rho = np.asarray(rho0, dtype=complex).copy()
    h_of_t = hamiltonian if callable(hamiltonian) else (lambda t: hamiltonian)
    n_steps = int(round(t_final / dt))
    if sample_times is None:
        sample_times = np.linspace(0.0, t_final, 51)
    sample_steps = sorted({int(round(ts / dt)) for ts in sample_times})
    out_t, out_rho = [], []
    if 0 in sample_steps:
        out_t.append(0.0)
        out_rho.append(rho.copy())
    for k in range(n_steps):
        t = k * dt
        k1 = lindblad_rhs(rho, h_of_t(t), channels, n, d)
        k2 = lindblad_rhs(rho + 0.5 * dt * k1, h_of_t(t + 0.5 * dt), channels, n, d)
        k3 = lindblad_rhs(rho + 0.5 * dt * k2, h_of_t(t + 0.5 * dt), channels, n, d)
        k4 = lindblad_rhs(rho + dt * k3, h_of_t(t + dt), channels, n, d)
        rho = rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        drift = abs(np.trace(rho).real - 1.0)
        if drift > 1e-6:
            raise FloatingPointError(
                f"trace drift {drift:.2e} at step {k + 1} (t={t + dt:g}); reduce dt"
            )
        if (k + 1) in sample_steps:
            out_t.append((k + 1) * dt)
            out_rho.append(rho.copy())
    return np.array(out_t), out_rho


def _binary_entropy_bits(x: float) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return float(-x * np.log2(x) - (1 - x) * np.log2(1 - x))


def entanglement_of_formation_2q(rho: np.ndarray) -> float:
    """Wootters' concurrence-based entanglement of formation, in bits."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError("entanglement of formation implemented for two qubits only")
    if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -1e-8:
        raise ValueError("density matrix has a significant negative eigenvalue")
    sy = np.array([[0.0, -1j], [1j, 0.0]])
    yy = np.kron(sy, sy)
    r = rho @ yy @ rho.conj() @ yy
    eigs = np.linalg.eigvals(r).real
    eigs = np.sqrt(np.clip(eigs, 0.0, None))
    eigs.sort()
    concurrence = max(0.0, eigs[-1] - eigs[-2] - eigs[-3] - eigs[-4])
    return _binary_entropy_bits(0.5 * (1.0 + np.sqrt(1.0 - concurrence**2)))


# ---------------------------------------------------------------------------
# CNOT-copy fixtures: two system qubits maximally entangled, two environment
# qubits initialised in |00>, each environment qubit CNOT-copied from its
# system partner.  Measuring the environment in different (possibly adaptive)
# bases decomposes the same maximally mixed system state into ensembles with
# very different entanglement.
# ---------------------------------------------------------------------------


def _ket(bits: str) -> np.ndarray:
    v = np.zeros(4, dtype=complex)
    v[int(bits, 2)] = 1.0
    return v


def toy_example_decompositions():
    """Three measurement strategies on the CNOT-copy fixture.

    Returns a dict mapping strategy name to a list of ``(probability,
    normalised system state)``.  Each ensemble averages to the maximally
    mixed two-qubit state; the average entanglement entropies are 0 bits
    (site-local basis), 1 bit (conjugate basis) and 1/2 bit (adaptive:
    conjugate basis first, outcome decides the second basis).
    """
    psi_s = 0.5 * (_ket("00") + _ket("01") + _ket("10") - _ket("11"))
    # joint state after copying: sum_s c_s |s>_S |s>_E
    joint = np.zeros((4, 4), dtype=complex)  # [system, environment]
    for s in range(4):
        joint[s, s] = psi_s[s]

    zero = np.array([1.0, 0.0], dtype=complex)
    one = np.array([0.0, 1.0], dtype=complex)
    plus = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2)
    minus = np.array([1.0, -1.0], dtype=complex) / np.sqrt(2)

    def project(env1: np.ndarray, env2: np.ndarray):
        env = np.kron(env1, env2)
        unnorm = joint @ env.conj()
        p = float(np.vdot(unnorm, unnorm).real)
        return p, unnorm / np.sqrt(p)

    computational = [project(a, b) for a in (zero, one) for b in (zero, one)]
    conjugate = [project(a, b) for a in (plus, minus) for b in (plus, minus)]
    # Adaptive: first environment qubit measured in the +/- basis; outcome +
    # selects the computational basis for the second qubit, outcome - keeps
    # the +/- basis.  Half the outcomes are product states, half Bell-like.
    adaptive = [project(plus, b) for b in (zero, one)]
    adaptive += [project(minus, b) for b in (plus, minus)]
    return {
        "computational": computational,
        "conjugate": conjugate,
        "adaptive": adaptive,
    }


def ensemble_average_state(ensemble) -> np.ndarray:
    """Weighted average projector of a pure-state ensemble."""
    dim = ensemble[0][1].size
    rho = np.zeros((dim, dim), dtype=complex)
    for p, psi in ensemble:
        rho += p * np.outer(psi, psi.conj())
    return rho


def ensemble_average_entropy(ensemble, n: int, d: int, cut: int) -> float:
    total = 0.0
    for p, psi in ensemble:
        total += p * DenseState.from_vector(psi, d).entanglement_entropy(cut)
    return total
