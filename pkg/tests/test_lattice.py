import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from speclocal.lattice import (FiberExtension, Layout, LatticeError, assemble, ball_sites, box_sites, compress,
                               export_matrix, fiber_operator, identity, load_matrix, measured_range, onsite,
                               position_commutator, tensor_extend)
from speclocal.models import UP
from speclocal.pauli import S0, S1, S2, S3


def _rand_hops(rng, d, L, n=3):
    hops = []
    for _ in range(n):
        off = tuple(int(c) for c in rng.integers(-1, 2, size=d))
        hops.append((off, rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))))
    return hops


def test_nearest_neighbour_chain():
    A = assemble([((1,), np.array([[1.0]]))], box_sites(2, 1))
    M = A.dense()
    assert M.shape == (5, 5)
    assert np.allclose(M, np.diag(np.ones(4), 1) + np.diag(np.ones(4), -1))
    assert A.is_hermitian()


def test_empty_hopping_list_is_zero():
    A = assemble([], box_sites(3, 1), layout=Layout.plain(2))
    assert A.matrix.nnz == 0 and A.shape == (14, 14)


def test_duplicate_offset_needs_merge():
    hops = [((1,), np.eye(1)), ((1,), 2 * np.eye(1))]
    with pytest.raises(LatticeError):
        assemble(hops, box_sites(2, 1))
    A = assemble(hops, box_sites(2, 1), merge=True)
    assert np.isclose(A.dense()[1, 0], 3)


def test_block_dimension_mismatch():
    with pytest.raises(LatticeError):
        assemble([((0,), np.eye(2)), ((1,), np.eye(3))], box_sites(2, 1))
    with pytest.raises(LatticeError):
        assemble([((0, 1), np.eye(2))], box_sites(2, 1))


def test_ssh_ring_matches_bloch_symbol():
    n, t1, t2 = 12, 1.0, 0.7
    H = assemble([((0,), t1 * S1), ((1,), t2 * UP)], [(x,) for x in range(n)], periodic=True)
    M = H.dense()
    ev = np.sort(np.linalg.eigvalsh(M))
    ks = 2 * np.pi * np.arange(n) / n
    a = t1 + t2 * np.exp(-1j * ks)
    ref = np.sort(np.r_[np.abs(a), -np.abs(a)])
    assert np.allclose(ev, ref, atol=1e-12)
    # DFT block check: <k|H|k> restricted to the fiber equals the symbol
    for k in ks[:4]:
        phase = np.exp(1j * k * np.arange(n))
        U = np.kron(phase[:, None], np.eye(2)) / np.sqrt(n)
        Hk = U.conj().T @ M @ U
        ref_k = np.array([[0, t1 + t2 * np.exp(-1j * k)], [t1 + t2 * np.exp(1j * k), 0]])
        assert np.allclose(Hk, ref_k, atol=1e-12)


def test_ball_counts():
    assert ball_sites(2, 1) == ((-2,), (-1,), (0,), (1,), (2,))
    assert len(ball_sites(2, 2)) == 13
    assert len(ball_sites(np.sqrt(2), 2)) == 9  # ties at |x| = rho included


def test_compress_d1_and_identity():
    A = assemble([((1,), np.eye(3))], box_sites(4, 1))
    assert compress(A, 2).shape == (15, 15)
    I = identity(box_sites(3, 2), 2)
    C = compress(I, 2)
    assert np.allclose(C, np.eye(13 * 2))


def test_ball_exceeding_window_raises():
    A = assemble([((1,), np.eye(1))], box_sites(2, 1))
    with pytest.raises(LatticeError):
        compress(A, 3)


def test_tensor_extend_examples(rng):
    win = box_sites(2, 1)
    A = assemble(_rand_hops(rng, 1, 2), win, merge=True)
    B = tensor_extend(A, FiberExtension(np.eye(2), "gamma"))
    assert B.fiber_dim == 4
    assert np.allclose(np.sort(np.linalg.eigvalsh(B.dense())),
                       np.sort(np.repeat(np.linalg.eigvalsh(A.dense()), 2)))
    one = identity([(0,)], 1)
    Z = tensor_extend(one, FiberExtension(S3, "sigma"))
    assert np.allclose(Z.dense(), np.diag([1, -1]))
    X = tensor_extend(A, FiberExtension(S1, "gamma"))
    assert np.allclose((X @ X).dense(), np.kron(A.dense() @ A.dense(), S0))


def test_tensor_extend_canonical_order():
    # start with an s factor, extend by tau: tau is outer in the canonical order
    A = onsite(lambda x: S3, [(0,)], layout=Layout((("s", 2),)))
    B = tensor_extend(A, FiberExtension(S1, "tau"))
    assert B.layout.names() == ("tau", "s")
    assert np.allclose(B.dense(), np.kron(S1, S3))
    assert np.allclose(fiber_operator({"tau": S1, "s": S3}, B.layout), np.kron(S1, S3))


def test_fiber_extension_validation():
    with pytest.raises(LatticeError):
        FiberExtension(np.array([[1, 1], [0, 1]]), "s")
    with pytest.raises(LatticeError):
        FiberExtension(S1, "spin")
    FiberExtension(1j * S2, "nu")  # anti-Hermitian unitary allowed


def test_position_commutator_entries(rng):
    A = assemble(_rand_hops(rng, 2, 2), box_sites(2, 2), hermitize=False, merge=True)
    C = position_commutator(A, 1).dense()
    X = np.kron(np.diag(A.coords()[:, 1]), np.eye(2))
    assert np.allclose(C, X @ A.dense() - A.dense() @ X)


def test_measured_range():
    A = assemble([((1, 1), np.eye(1)), ((2, 0), np.eye(1))], box_sites(3, 2))
    assert np.isclose(measured_range(A), 2.0)
    assert A.hopping_range >= measured_range(A)


def test_export_roundtrip(tmp_path, rng):
    M = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    export_matrix(tmp_path / "m", M, [(0,), (1,), (2,)], Layout((("sigma", 2),)), {"tag": 1})
    back, meta = load_matrix(tmp_path / "m")
    assert np.array_equal(back, M)
    assert meta["order"] == "column-major" and meta["fiber_order"] == [["sigma", 2]]
    raw = np.fromfile(tmp_path / "m.bin", dtype="<c16")
    assert raw[1] == M[1, 0]  # column-major layout


@given(st.integers(1, 3), st.integers(1, 2), st.integers(0, 2**31))
def test_adjoint_properties(d, L, seed):
    rng = np.random.default_rng(seed)
    win = box_sites(2, d)
    A = assemble(_rand_hops(rng, d, L), win, hermitize=False, merge=True)
    B = assemble(_rand_hops(rng, d, L), win, hermitize=False, merge=True)
    assert np.array_equal(A.adjoint().adjoint().dense(), A.dense())
    assert np.allclose((A @ B).adjoint().dense(), (B.adjoint() @ A.adjoint()).dense(), atol=1e-12)
    assert np.allclose(compress(A, 1.5).conj().T, compress(A.adjoint(), 1.5))


@given(st.integers(1, 2), st.floats(1.0, 3.0), st.integers(0, 2**31))
def test_compress_agrees_with_larger_window(d, rho, seed):
    rng = np.random.default_rng(seed)
    hops = _rand_hops(rng, d, 2)
    small = assemble(hops, ball_sites(rho, d), merge=True)
    big = assemble(hops, box_sites(int(np.ceil(rho)) + 2, d), merge=True)
    assert np.allclose(compress(small, rho), compress(big, rho))


@given(st.integers(0, 2**31))
def test_assembled_hermitian_flag(seed):
    rng = np.random.default_rng(seed)
    A = assemble(_rand_hops(rng, 2, 3), box_sites(2, 2), merge=True)
    M = A.matrix
    assert A.hermitian
    assert abs(M - M.conj().T).max() < 1e-14
    assert sp.issparse(M)
