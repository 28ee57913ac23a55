import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eoqt import mps
from eoqt.dense import DenseState

from conftest import dense_entropy, fidelity, random_state

CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=float)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=float)


def bell_vector():
    v = np.zeros(4, dtype=complex)
    v[0] = v[3] = 1 / np.sqrt(2)
    return v


class TestProductState:
    def test_two_site(self):
        st_ = mps.product_state(2, 2, [np.array([0, 1.0]), np.array([0, 1.0])])
        assert st_.max_bond_dimension() == 1
        assert mps.entanglement_entropy(st_, 1) == 0.0

    def test_sixteen_sites_all_excited(self):
        st_ = mps.product_state(16, 2, [np.array([0, 1.0])] * 16)
        for b in range(1, 16):
            assert mps.entanglement_entropy(st_, b) == 0.0

    def test_three_level_chain(self):
        ket = np.array([1.0, 0, 0])
        st_ = mps.product_state(4, 3, [ket] * 4)
        assert st_.d == 3
        assert mps.check_canonical(st_) < 1e-12

    def test_rejects_unnormalised(self):
        with pytest.raises(ValueError, match="normalised"):
            mps.product_state(2, 2, [np.array([1.0, 1.0]), np.array([1, 0.0])])


class TestFromStateVector:
    def test_bell(self):
        st_ = mps.from_state_vector(bell_vector(), 2)
        assert np.allclose(st_.lambdas[0], [1 / np.sqrt(2)] * 2)
        assert abs(mps.entanglement_entropy(st_, 1) - 1.0) < 1e-12

    def test_product_vector_chi_one(self):
        psi = np.zeros(4, dtype=complex)
        psi[1] = 1.0  # |01>
        st_ = mps.from_state_vector(psi, 2)
        assert st_.max_bond_dimension() == 1

    def test_round_trip_random(self, rng):
        psi = random_state(rng, 16)
        st_ = mps.from_state_vector(psi, 2)
        assert fidelity(mps.to_dense(st_), psi) >= 1 - 1e-10

    def test_rejects_bad_length(self):
        with pytest.raises(ValueError, match="power"):
            mps.from_state_vector(np.ones(6) / np.sqrt(6), 2)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(2, 6))
    def test_round_trip_property(self, seed, n):
        psi = random_state(np.random.default_rng(seed), 2**n)
        st_ = mps.from_state_vector(psi, 2)
        assert fidelity(mps.to_dense(st_), psi) >= 1 - 1e-9
        assert mps.check_canonical(st_) < 1e-9


class TestToDense:
    def test_product_round_trip(self, rng):
        kets = [random_state(rng, 2) for _ in range(3)]
        st_ = mps.product_state(3, 2, kets)
        ref = np.kron(np.kron(kets[0], kets[1]), kets[2])
        assert fidelity(mps.to_dense(st_), ref) >= 1 - 1e-12

    def test_size_guard(self):
        st_ = mps.product_state(2, 2, [np.array([1.0, 0])] * 2)
        st_.n = 40  # simulate an oversized chain
        with pytest.raises(ValueError, match="too large"):
            mps.to_dense(st_)

    def test_matches_dense_gate_sequence(self, rng):
        n = 4
        psi = random_state(rng, 2**n)
        st_ = mps.from_state_vector(psi, 2)
        dense = DenseState.from_vector(psi, 2)
        for _ in range(10):
            b = int(rng.integers(1, n))
            h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            h = h + h.conj().T
            w, v = np.linalg.eigh(h)
            gate = (v * np.exp(-1j * w)) @ v.conj().T
            mps.apply_two_site_gate(st_, b, gate)
            dense.apply_bond_gate(b, gate)
        assert fidelity(mps.to_dense(st_), dense.amplitudes) >= 1 - 1e-8


class TestTwoSiteGate:
    def test_identity_gate_noop(self, rng):
        psi = random_state(rng, 16)
        st_ = mps.from_state_vector(psi, 2)
        dw = mps.apply_two_site_gate(st_, 2, np.eye(4))
        assert dw < 1e-12
        assert fidelity(mps.to_dense(st_), psi) >= 1 - 1e-12

    def test_swap_product_state(self, rng):
        k0, k1 = random_state(rng, 2), random_state(rng, 2)
        st_ = mps.product_state(2, 2, [k0, k1])
        mps.apply_two_site_gate(st_, 1, SWAP)
        assert st_.max_bond_dimension() == 1
        assert fidelity(mps.to_dense(st_), np.kron(k1, k0)) >= 1 - 1e-12

    def test_cnot_creates_one_bit(self):
        plus = np.array([1.0, 1.0]) / np.sqrt(2)
        st_ = mps.product_state(2, 2, [plus, np.array([1.0, 0])])
        mps.apply_two_site_gate(st_, 1, CNOT)
        assert np.allclose(np.sort(st_.lambdas[0]), [1 / np.sqrt(2)] * 2)
        assert abs(mps.entanglement_entropy(st_, 1) - 1.0) < 1e-12

    def test_truncation_monotone_in_chi(self, rng):
        psi = random_state(rng, 2**6)
        h = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        h = h + h.conj().T
        w, v = np.linalg.eigh(h)
        gate = (v * np.exp(-1j * w)) @ v.conj().T
        weights = []
        for chi in (1, 2, 4, 8):
            st_ = mps.from_state_vector(psi, 2)
            st_.chi_max = chi
            weights.append(mps.apply_two_site_gate(st_, 3, gate))
        assert all(a >= b - 1e-15 for a, b in zip(weights, weights[1:]))

    def test_schmidt_normalised_after_every_op(self, rng):
        st_ = mps.from_state_vector(random_state(rng, 2**5), 2)
        st_.chi_max = 3
        for b in (1, 2, 3, 4, 2):
            mps.apply_two_site_gate(st_, b, SWAP if b % 2 else CNOT)
            for lam in st_.lambdas:
                assert abs(np.sum(lam**2) - 1.0) < 1e-10


class TestSingleSite:
    def test_identity_noop(self, rng):
        psi = random_state(rng, 8)
        st_ = mps.from_state_vector(psi, 2)
        mps.apply_single_site(st_, 1, np.eye(2))
        assert fidelity(mps.to_dense(st_), psi) >= 1 - 1e-12

    def test_sz_flips_plus_to_minus(self):
        plus = np.array([1.0, 1.0]) / np.sqrt(2)
        st_ = mps.product_state(3, 2, [plus] * 3)
        mps.apply_single_site(st_, 1, np.diag([1.0, -1.0]))
        minus = np.array([1.0, -1.0]) / np.sqrt(2)
        ref = np.kron(np.kron(plus, minus), plus)
        assert fidelity(mps.to_dense(st_), ref) >= 1 - 1e-12

    def test_nonunitary_matches_dense(self, rng):
        psi = random_state(rng, 2**4)
        st_ = mps.from_state_vector(psi, 2)
        op = np.diag([1.0, np.exp(-0.2)])
        mps.apply_single_site(st_, 2, op, renormalize=True)
        ref = DenseState.from_vector(psi, 2)
        ref.apply_local(2, op, renormalize=True)
        assert fidelity(mps.to_dense(st_), ref.amplitudes) >= 1 - 1e-10
        assert mps.check_canonical(st_) < 1e-9

    def test_deferred_renormalisation(self, rng):
        psi = random_state(rng, 2**4)
        st_ = mps.from_state_vector(psi, 2)
        op = np.diag([1.0, 0.5])
        mps.apply_single_site(st_, 0, op, renormalize=False)
        assert not st_.canonical
        mps.canonicalize(st_)
        ref = DenseState.from_vector(psi, 2)
        ref.apply_local(0, op, renormalize=True)
        assert fidelity(mps.to_dense(st_), ref.amplitudes) >= 1 - 1e-10


class TestEntropy:
    def test_ghz_any_cut(self):
        ghz = np.zeros(16, dtype=complex)
        ghz[0] = ghz[15] = 1 / np.sqrt(2)
        st_ = mps.from_state_vector(ghz, 2)
        for b in (1, 2, 3):
            assert abs(mps.entanglement_entropy(st_, b) - 1.0) < 1e-10

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31), n=st.integers(2, 6))
    def test_matches_dense_reduced_spectrum(self, seed, n):
        psi = random_state(np.random.default_rng(seed), 2**n)
        st_ = mps.from_state_vector(psi, 2)
        for b in range(1, n):
            assert abs(mps.entanglement_entropy(st_, b) - dense_entropy(psi, 2, b)) < 1e-9

    def test_requires_canonical(self, rng):
        st_ = mps.from_state_vector(random_state(rng, 8), 2)
        mps.apply_single_site(st_, 0, np.diag([1.0, 0.3]), renormalize=False)
        with pytest.raises(ValueError, match="canonical"):
            mps.entanglement_entropy(st_, 1)


class TestSchmidtOperatorBlock:
    def test_identity_gives_schmidt_weights(self, rng):
        st_ = mps.from_state_vector(random_state(rng, 16), 2)
        blocks = mps.schmidt_operator_block(st_, 2, 2, np.eye(2))
        assert np.allclose(blocks.block, np.diag(st_.lambdas[1] ** 2), atol=1e-10)

    def test_bell_projector(self):
        st_ = mps.from_state_vector(bell_vector(), 2)
        blocks = mps.schmidt_operator_block(st_, 1, 1, np.diag([0.0, 1.0]))
        expect = np.zeros((2, 2))
        expect[1, 1] = 0.5  # single entry at the |1><1| position
        assert np.allclose(blocks.block, expect, atol=1e-12)
        assert abs(blocks.a0 - 0.5) < 1e-12
        assert abs(blocks.jump_weight - 0.5) < 1e-12

    def test_matches_dense_partial_trace(self, rng):
        n = 4
        psi = random_state(rng, 2**n)
        st_ = mps.from_state_vector(psi, 2)
        for cut, site in [(1, 2), (2, 0), (2, 3), (3, 1)]:
            op = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            blocks = mps.schmidt_operator_block(st_, cut, site, op)
            ref = _brute_blocks(psi, n, 2, cut, site, op)
            k = len(blocks.xi)
            assert np.allclose(np.abs(blocks.block), np.abs(ref[1][:k, :k]), atol=1e-9)
            assert abs(blocks.a0 - np.trace(ref[1])) < 1e-9
            assert abs(blocks.jump_weight - np.trace(ref[2]).real) < 1e-9
            ev_mine = np.sort(np.linalg.eigvalsh(blocks.reduced_jump))
            ev_ref = np.sort(np.linalg.eigvalsh(ref[2]))[-k:]
            assert np.allclose(ev_mine, ev_ref, atol=1e-9)


def _brute_blocks(psi, n, d, cut, site, op):
    from eoqt.dense import embed_local

    phi = np.outer(psi, psi.conj())
    full = embed_local(op, n, d, site)
    da, db = d**cut, d ** (n - cut)

    def ptrace_far(m):
        m4 = m.reshape(da, db, da, db)
        if site >= cut:
            return np.trace(m4, axis1=1, axis2=3)
        return np.einsum("abac->bc", m4)

    red = ptrace_far(phi)
    blk = ptrace_far(full @ phi)
    jmp = ptrace_far(full @ phi @ full.conj().T)
    w, v = np.linalg.eigh(red)
    order = np.argsort(w)[::-1]
    v = v[:, order]
    return w[order], v.conj().T @ blk @ v, v.conj().T @ jmp @ v


class TestCanonicalisation:
    def test_full_sweep_restores_gauge(self, rng):
        st_ = mps.from_state_vector(random_state(rng, 2**5), 2)
        for site in (0, 2, 4):
            mps.apply_single_site(st_, site, np.diag([1.0, 0.7]), renormalize=False)
        mps.canonicalize(st_)
        assert mps.check_canonical(st_) < 1e-9

    def test_near_product_state_division_guard(self):
        # states driven almost to product form exercise the small-divisor path
        eps = 1e-9
        psi = np.array([1.0, 0, 0, eps], dtype=complex)
        psi /= np.linalg.norm(psi)
        st_ = mps.from_state_vector(psi, 2)
        mps.apply_two_site_gate(st_, 1, CNOT)
        assert np.all(np.isfinite(st_.gammas[0])) and np.all(np.isfinite(st_.gammas[1]))
        assert abs(np.sum(st_.lambdas[0] ** 2) - 1.0) < 1e-10


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        st_ = mps.from_state_vector(random_state(rng, 2**4), 2)
        path = tmp_path / "state.mps"
        mps.save_mps(st_, str(path))
        back = mps.load_mps(str(path))
        assert back.n == st_.n and back.d == st_.d and back.chi_max == st_.chi_max
        assert fidelity(mps.to_dense(back), mps.to_dense(st_)) >= 1 - 1e-12
        with open(path, "rb") as fh:
            assert fh.read(8) == b"EOQTMPS1"

    def test_rejects_wrong_magic(self, tmp_path):
        path = tmp_path / "bogus.mps"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            mps.load_mps(str(path))
