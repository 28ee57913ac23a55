"""Matrix product states in Vidal's Gamma-lambda canonical form.

Index convention (fixed throughout the package): every site tensor
``Gamma[j]`` has shape ``(left bond, physical, right bond)``; the boundary
bonds have dimension 1.  Schmidt coefficient vectors ``lambdas[b-1]`` live on
bond ``b`` (``b = 1 .. n-1``), are sorted descending and normalised so that
``sum(lam**2) == 1``.  A cut at bond ``b`` splits the chain into
``A = sites 0..b-1`` and ``B = sites b..n-1`` (0-based sites).

In canonical form the reduced density matrix on either side of any bond is
diagonal in the Schmidt basis with eigenvalues ``lambda**2``, which is what
makes single-bond entropies and the Schmidt-basis operator blocks cheap.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

# Schmidt weights (lambda**2) below this floor are treated as exact zeros in
# entropies and rate kernels.
EIG_FLOOR = 1e-12
# Divisors smaller than this are pseudo-inverted to zero when restoring the
# Gamma-lambda gauge after an SVD (the classic near-product-state pitfall).
DIVISOR_FLOOR = 1e-12
# Singular values below this (relative to the largest) are always dropped,
# even when the bond-dimension budget would allow keeping them.
SVAL_NOISE_FLOOR = 1e-14

CHECKPOINT_MAGIC = b"EOQTMPS1"

_DENSE_SITE_LIMIT = 24  # enforce n*log2(d) <= 24 for dense reconstruction


@dataclass(frozen=True)
class Cut:
    """Bipartition at bond ``bond``: A = sites 0..bond-1, B = sites bond..n-1."""

    bond: int

    def validate(self, n: int) -> None:
        if not 1 <= self.bond <= n - 1:
            raise ValueError(f"cut bond {self.bond} outside 1..{n - 1}")


def _as_bond(cut: int | Cut, n: int) -> int:
    b = cut.bond if isinstance(cut, Cut) else int(cut)
    Cut(b).validate(n)
    return b


@dataclass
class MpsState:
    n: int
    d: int
    gammas: list[np.ndarray]
    lambdas: list[np.ndarray]
    chi_max: int
    trunc_threshold: float = 1e-12
    canonical: bool = True

    def copy(self) -> "MpsState":
        return MpsState(
            n=self.n,
            d=self.d,
            gammas=[g.copy() for g in self.gammas],
            lambdas=[l.copy() for l in self.lambdas],
            chi_max=self.chi_max,
            trunc_threshold=self.trunc_threshold,
            canonical=self.canonical,
        )

    def bond_dimensions(self) -> list[int]:
        return [len(l) for l in self.lambdas]

    def max_bond_dimension(self) -> int:
        return max(self.bond_dimensions(), default=1)

    # Convenience wrappers; the module-level functions are the primary API.
    def entanglement_entropy(self, cut: int | Cut) -> float:
        return entanglement_entropy(self, cut)

    def expect_local(self, site: int, op: np.ndarray) -> complex:
        return expect_local(self, site, op)

    def apply_local(self, site: int, op: np.ndarray, renormalize: bool = True) -> None:
        apply_single_site(self, site, op, renormalize=renormalize)


def _safe_inverse(lam: np.ndarray) -> np.ndarray:
    """Pseudo-inverse of a Schmidt vector: entries below the floor become 0."""
    inv = np.zeros_like(lam)
    big = lam > DIVISOR_FLOOR
    inv[big] = 1.0 / lam[big]
    return inv


def product_state(
    n: int,
    d: int,
    local_kets: list[np.ndarray] | np.ndarray,
    chi_max: int = 2**30,
    trunc_threshold: float = 1e-12,
) -> MpsState:
    """Build the canonical MPS of a product state from per-site kets."""
    if n < 1:
        raise ValueError("need at least one site")
    kets = [np.asarray(k, dtype=complex).reshape(-1) for k in local_kets]
    if len(kets) != n:
        raise ValueError(f"expected {n} kets, got {len(kets)}")
    gammas = []
    for k in kets:
        if k.shape != (d,):
            raise ValueError(f"local ket has dimension {k.shape[0]}, expected {d}")
        nrm = np.linalg.norm(k)
        if abs(nrm - 1.0) > 1e-8:
            raise ValueError(f"local ket not normalised (norm {nrm})")
        gammas.append((k / nrm).reshape(1, d, 1))
    lambdas = [np.ones(1) for _ in range(n - 1)]
    return MpsState(n, d, gammas, lambdas, chi_max, trunc_threshold, canonical=True)


def from_state_vector(
    psi: np.ndarray,
    d: int,
    chi_max: int = 2**30,
    trunc_threshold: float = 1e-12,
) -> MpsState:
    """Exact (up to truncation settings) MPS factorisation of a dense vector."""
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    n = int(round(np.log(psi.size) / np.log(d)))
    if d**n != psi.size:
        raise ValueError(f"vector length {psi.size} is not a power of d={d}")
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError("state vector not normalised")
    psi = psi / nrm

    gammas: list[np.ndarray] = []
    lambdas: list[np.ndarray] = []
    lam_left = np.ones(1)
    m = psi.reshape(1, -1)
    for _ in range(n - 1):
        chi_l = m.shape[0]
        m = m.reshape(chi_l * d, -1)
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        keep = _kept_rank(s, chi_max, trunc_threshold)
        u, s, vh = u[:, :keep], s[:keep], vh[:keep, :]
        s = s / np.linalg.norm(s)
        gam = u.reshape(chi_l, d, keep) * _safe_inverse(lam_left)[:, None, None]
        gammas.append(gam)
        lambdas.append(s)
        m = s[:, None] * vh
        lam_left = s
    gammas.append((m.reshape(-1, d, 1) * _safe_inverse(lam_left)[:, None, None]))
    state = MpsState(n, d, gammas, lambdas, chi_max, trunc_threshold, canonical=True)
    # One restoring sweep removes the O(eps) gauge error left by the chain of
    # truncated SVDs when trunc_threshold is loose.
    canonicalize(state)
    return state


def to_dense(state: MpsState) -> np.ndarray:
    """Contract the chain into a normalised dense state vector."""
    if state.n * np.log2(state.d) > _DENSE_SITE_LIMIT + 1e-9:
        raise ValueError("chain too large for dense reconstruction")
    acc = state.gammas[0].reshape(state.d, -1)  # (dim_phys, chi_r)
    for b in range(1, state.n):
        acc = acc * state.lambdas[b - 1][None, :]
        acc = np.tensordot(acc, state.gammas[b], axes=(1, 0))  # (phys, d, chi_r)
        acc = acc.reshape(acc.shape[0] * state.d, -1)
    psi = acc.reshape(-1)
    return psi / np.linalg.norm(psi)


def _kept_rank(s: np.ndarray, chi_max: int, threshold: float) -> int:
    """How many singular values survive the value floor and the chi cap."""
    floor = max(threshold, SVAL_NOISE_FLOOR) * (s[0] if s.size else 1.0)
    keep = int(np.sum(s > floor))
    return max(1, min(keep, chi_max))


def _theta(state: MpsState, bond: int) -> np.ndarray:
    """Two-site block lambda_L Gamma[b-1] lambda_b Gamma[b] lambda_R at a bond."""
    jl, jr = bond - 1, bond
    theta = state.gammas[jl].copy()
    if jl > 0:
        theta = theta * state.lambdas[jl - 1][:, None, None]
    theta = theta * state.lambdas[bond - 1][None, None, :]
    theta = np.tensordot(theta, state.gammas[jr], axes=(2, 0))  # (chiL, d, d, chiR)
    if jr < state.n - 1:
        theta = theta * state.lambdas[jr][None, None, None, :]
    return theta


def _split_theta(state: MpsState, bond: int, theta: np.ndarray, value_floor: float) -> float:
    """SVD a two-site block back into Gamma-lambda pieces. Returns discarded weight."""
    chi_l, d = theta.shape[0], state.d
    chi_r = theta.shape[3]
    mat = theta.reshape(chi_l * d, d * chi_r)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    total = float(np.sum(s**2))
    if total <= 0.0:
        raise FloatingPointError(f"two-site block at bond {bond} has zero norm")
    floor = max(value_floor, SVAL_NOISE_FLOOR) * s[0]
    keep = max(1, min(int(np.sum(s > floor)), state.chi_max))
    discarded = float(np.sum(s[keep:] ** 2)) / total
    s = s[:keep]
    s = s / np.linalg.norm(s)
    u = u[:, :keep].reshape(chi_l, d, keep)
    vh = vh[:keep, :].reshape(keep, d, chi_r)

    jl, jr = bond - 1, bond
    if jl > 0:
        u = u * _safe_inverse(state.lambdas[jl - 1])[:, None, None]
    if jr < state.n - 1:
        vh = vh * _safe_inverse(state.lambdas[jr])[None, None, :]
    state.gammas[jl] = u
    state.gammas[jr] = vh
    state.lambdas[bond - 1] = s
    return discarded


def apply_two_site_gate(state: MpsState, bond: int, gate: np.ndarray | None) -> float:
    """Apply a (d^2 x d^2) gate to the site pair at ``bond``; returns discarded weight.

    ``gate=None`` performs the identity update (re-SVD of the block), which is
    the building block of canonicalisation sweeps.  Gate rows/columns are
    indexed as ``i_left * d + i_right``.
    """
    b = _as_bond(bond, state.n)
    d = state.d
    theta = _theta(state, b)
    if gate is not None:
        # gate[(i', j'), (i, j)] with row/col index i*d + j
        g = np.asarray(gate, dtype=complex).reshape(d, d, d, d)
        theta = np.einsum("ijkl,xkly->xijy", g, theta)
    value_floor = state.trunc_threshold if gate is not None else 0.0
    return _split_theta(state, b, theta, value_floor)


def _identity_update(state: MpsState, bond: int) -> None:
    _split_theta(state, bond, _theta(state, bond), 0.0)


def canonicalize(state: MpsState) -> None:
    """Reinstate the Gamma-lambda gauge and unit norm via identity-TEBD sweeps.

    One left-to-right sweep makes every ``lambda Gamma`` left-isometric, the
    returning sweep then yields the true Schmidt data at every bond.
    """
    if state.n == 1:
        g = state.gammas[0]
        state.gammas[0] = g / np.linalg.norm(g)
        state.canonical = True
        return
    for b in range(1, state.n):
        _identity_update(state, b)
    for b in range(state.n - 1, 0, -1):
        _identity_update(state, b)
    state.canonical = True


def _canonicalize_after_local(state: MpsState, site: int) -> None:
    """Restore the gauge after a single-site operation at ``site``.

    Left isometries below the site and right isometries above it survive a
    local update, so one outward pass from the site (up, then down) suffices.
    """
    if state.n == 1:
        g = state.gammas[0]
        state.gammas[0] = g / np.linalg.norm(g)
        state.canonical = True
        return
    for b in range(site + 1, state.n):
        _identity_update(state, b)
    for b in range(min(site, state.n - 1), 0, -1):
        _identity_update(state, b)
    state.canonical = True


def apply_single_site(
    state: MpsState, site: int, op: np.ndarray, renormalize: bool = True
) -> None:
    """Contract a (d x d) operator into ``Gamma[site]``.

    With ``renormalize=True`` the global norm and the canonical gauge are
    restored immediately (identity-TEBD pass around the site).  With
    ``renormalize=False`` the state is left un-normalised and flagged
    non-canonical; callers batching several local operators should finish
    with :func:`canonicalize`.
    """
    if not 0 <= site < state.n:
        raise ValueError(f"site {site} outside 0..{state.n - 1}")
    op = np.asarray(op, dtype=complex)
    state.gammas[site] = np.einsum("ij,ajb->aib", op, state.gammas[site])
    if renormalize:
        _canonicalize_after_local(state, site)
    else:
        state.canonical = False


def entanglement_entropy(state: MpsState, cut: int | Cut) -> float:
    """Bipartite von Neumann entropy in bits at a cut (canonical states only)."""
    if not state.canonical:
        raise ValueError("entanglement entropy requires a canonical state")
    b = _as_bond(cut, state.n)
    return entropy_from_schmidt(state.lambdas[b - 1] ** 2)


def entropy_from_schmidt(weights: np.ndarray) -> float:
    w = weights[weights > EIG_FLOOR]
    if w.size == 0:
        return 0.0
    return float(-np.sum(w * np.log2(w)))


def expect_local(state: MpsState, site: int, op: np.ndarray) -> complex:
    """<op_site> from the weighted centre tensor, self-normalised.

    Exact on canonical states.  On a mid-layer (non-canonical) state this is
    the stale-gauge local estimate whose error vanishes with the step size;
    use :func:`expect_local_exact` when exactness is required off-gauge.
    """
    c = _weighted_center(state, site)
    num = np.einsum("aib,ij,ajb->", c.conj(), np.asarray(op, dtype=complex), c)
    den = np.einsum("aib,aib->", c.conj(), c)
    return complex(num / den)


def _weighted_center(state: MpsState, site: int) -> np.ndarray:
    c = state.gammas[site]
    if site > 0:
        c = c * state.lambdas[site - 1][:, None, None]
    if site < state.n - 1:
        c = c * state.lambdas[site][None, None, :]
    return c


def expect_local_exact(state: MpsState, site: int, op: np.ndarray) -> complex:
    """<op_site> by full transfer contraction; no gauge assumption."""
    return expect_product(state, [(site, np.asarray(op, dtype=complex))])


def expect_product(state: MpsState, ops: list[tuple[int, np.ndarray]]) -> complex:
    """Expectation of a product of single-site operators (exact contraction)."""
    site_ops = dict(ops)
    env = np.ones((1, 1), dtype=complex)
    nrm = np.ones((1, 1), dtype=complex)
    for j in range(state.n):
        a = state.gammas[j]
        if j > 0:
            a = a * state.lambdas[j - 1][:, None, None]
        o = site_ops.get(j)
        ak = np.einsum("ij,ajb->aib", o, a) if o is not None else a
        env = _transfer(env, a, ak)
        nrm = _transfer(nrm, a, a)
    return complex(env[0, 0] / nrm[0, 0])


def _transfer(env: np.ndarray, bra: np.ndarray, ket: np.ndarray) -> np.ndarray:
    """env[bra, ket] -> sum_x,a,i env[x,a] bra*[x,i,b] ket[a,i,c]."""
    tmp = np.tensordot(env, bra.conj(), axes=(0, 0))  # (a, i, b)
    return np.tensordot(tmp, ket, axes=((0, 1), (0, 1)))  # (b, c)


@dataclass
class SchmidtBlocks:
    """Schmidt-basis data for one local operator relative to one cut.

    ``block[k, l]`` holds ``<xi_k| tr_far(op |psi><psi|) |xi_l>`` where
    ``tr_far`` traces out the half-chain containing ``site`` and ``|xi_k>``
    are the Schmidt vectors of the other half (eigenvectors of its reduced
    density matrix, eigenvalues ``xi``).  ``reduced_jump`` is the same object
    for ``op (.) op^dagger``; its trace ``jump_weight`` and ``a0 = tr(op phi)``
    come along for free.
    """

    xi: np.ndarray
    block: np.ndarray
    reduced_jump: np.ndarray
    a0: complex = field(default=0j)
    jump_weight: float = 0.0

    def __post_init__(self):
        self.a0 = complex(np.trace(self.block))
        self.jump_weight = float(np.real(np.trace(self.reduced_jump)))


def schmidt_operator_block(
    state: MpsState, cut: int | Cut, site: int, op: np.ndarray,
    allow_stale: bool = False,
) -> SchmidtBlocks:
    """Schmidt-basis matrix elements of ``tr_far(op phi)`` and ``tr_far(op phi op†)``.

    ``site`` must lie strictly on one side of the cut (single-site operators
    always do).  When the operator sits in B the traced side is B and the
    matrix lives in A's Schmidt basis; when it sits in A everything mirrors.
    Cost: O(distance * chi^3 * d).

    ``allow_stale=True`` evaluates the contraction on a mid-layer state whose
    gauge has been perturbed by earlier single-site updates; the blocks are
    then accurate to the size of those updates, which is adequate for
    propagator selection.
    """
    if not state.canonical and not allow_stale:
        raise ValueError("schmidt_operator_block requires a canonical state")
    b = _as_bond(cut, state.n)
    op = np.asarray(op, dtype=complex)
    lam = state.lambdas[b - 1]
    opdop = op.conj().T @ op
    if site >= b:  # operator in B: contract rightwards using right isometries
        e_op = _right_env(state, b, site, op)
        e_jmp = _right_env(state, b, site, opdop)
    else:  # operator in A: mirrored contraction using left isometries
        e_op = _left_env(state, b, site, op)
        e_jmp = _left_env(state, b, site, opdop)
    block = lam[:, None] * e_op * lam[None, :]
    reduced = lam[:, None] * e_jmp * lam[None, :]
    reduced = 0.5 * (reduced + reduced.conj().T)
    return SchmidtBlocks(xi=lam**2, block=block, reduced_jump=reduced)


def _right_env(state: MpsState, bond: int, site: int, op: np.ndarray) -> np.ndarray:
    """E[k, l] = <R_l| op_site |R_k> for the right Schmidt vectors of ``bond``.

    Sites beyond ``site`` collapse to the identity by right-isometry, so the
    contraction starts at ``site`` and walks down to the cut.
    """
    env = None
    for j in range(site, bond - 1, -1):
        bjk = state.gammas[j]
        if j < state.n - 1:
            bjk = bjk * state.lambdas[j][None, None, :]
        if j == site:
            ket = np.einsum("ij,ajb->aib", op, bjk)
            env = np.tensordot(ket, bjk.conj(), axes=((1, 2), (1, 2)))
        else:
            tmp = np.tensordot(bjk, env, axes=(2, 0))  # (a, i, c)
            env = np.tensordot(tmp, bjk.conj(), axes=((1, 2), (1, 2)))
    # env[ket bond, bra bond]: E[k, l] = <R_l| op |R_k>
    return np.ascontiguousarray(env)


def _left_env(state: MpsState, bond: int, site: int, op: np.ndarray) -> np.ndarray:
    """Mirror of :func:`_right_env` for an operator inside A."""
    env = None
    for j in range(site, bond):
        ajk = state.gammas[j]
        if j > 0:
            ajk = ajk * state.lambdas[j - 1][:, None, None]
        if j == site:
            ket = np.einsum("ij,ajb->aib", op, ajk)
            env = np.tensordot(ket, ajk.conj(), axes=((0, 1), (0, 1)))
        else:
            tmp = np.tensordot(env, ajk, axes=(0, 0))  # (b, i, c)
            env = np.tensordot(tmp, ajk.conj(), axes=((0, 1), (0, 1)))
    return np.ascontiguousarray(env)


def check_canonical(state: MpsState, atol: float = 1e-9) -> float:
    """Largest gauge-condition violation (test helper)."""
    dev = 0.0
    for b in range(1, state.n):
        lam = state.lambdas[b - 1]
        dev = max(dev, abs(float(np.sum(lam**2)) - 1.0))
    for j in range(state.n):
        a = state.gammas[j]
        if j > 0:
            a = a * state.lambdas[j - 1][:, None, None]
        gram = np.einsum("aib,aic->bc", a.conj(), a)
        dev = max(dev, float(np.max(np.abs(gram - np.eye(gram.shape[0])))))
        bt = state.gammas[j]
        if j < state.n - 1:
            bt = bt * state.lambdas[j][None, None, :]
        gram = np.einsum("aib,cib->ac", bt, bt.conj())
        dev = max(dev, float(np.max(np.abs(gram - np.eye(gram.shape[0])))))
    return dev


# ---------------------------------------------------------------------------
# Binary checkpoint format: header (magic, n, d, chi_max as little-endian
# uint32 after the 8-byte magic), then per site 3 uint32 dims + row-major
# complex128 (little-endian f64 pairs), then per bond uint32 length + f64.
# ---------------------------------------------------------------------------


def save_mps(state: MpsState, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<III", state.n, state.d, state.chi_max))
        fh.write(struct.pack("<d", state.trunc_threshold))
        for g in state.gammas:
            fh.write(struct.pack("<III", *g.shape))
            fh.write(np.ascontiguousarray(g, dtype="<c16").tobytes())
        for lam in state.lambdas:
            fh.write(struct.pack("<I", lam.size))
            fh.write(np.ascontiguousarray(lam, dtype="<f8").tobytes())


def load_mps(path: str) -> MpsState:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not an MPS checkpoint (magic {magic!r})")
        n, d, chi_max = struct.unpack("<III", fh.read(12))
        (thresh,) = struct.unpack("<d", fh.read(8))
        gammas = []
        for _ in range(n):
            shape = struct.unpack("<III", fh.read(12))
            count = shape[0] * shape[1] * shape[2]
            buf = fh.read(16 * count)
            gammas.append(np.frombuffer(buf, dtype="<c16").reshape(shape).copy())
        lambdas = []
        for _ in range(n - 1):
            (size,) = struct.unpack("<I", fh.read(4))
            lambdas.append(np.frombuffer(fh.read(8 * size), dtype="<f8").copy())
    return MpsState(n, d, gammas, lambdas, chi_max, thresh, canonical=True)
