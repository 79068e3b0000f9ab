"""Clifford representations, Dirac operators and their real symmetries.

The representation is built recursively in steps of two dimensions:

    gamma_1 = s1 ⊗ 1,   gamma_j = s2 ⊗ c_{j-1} (j = 2..d),   grading = s3 ⊗ 1

where c_1..c_{d-1} are the d-2 matrices plus grading of the lower even
representation.  Odd real / even imaginary holds by induction.  Odd d uses
the d-1 representation together with its grading as the last matrix.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache, reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .lattice import BlockLatticeOperator, Layout, Site, compress, onsite, site_norm
from .pauli import CAYLEY, S0, S1, S2, S3


class CliffordError(ValueError):
    pass


class UndefinedOperator(KeyError):
    pass


def _even_rep(n: int) -> list:
    """n gammas followed by the grading, n even."""
    if n == 0:
        return [np.ones((1, 1), dtype=complex)]
    lower = _even_rep(n - 2)
    one = np.eye(lower[0].shape[0], dtype=complex)
    return [np.kron(S1, one)] + [np.kron(S2, c) for c in lower] + [np.kron(S3, one)]


def _prod(ms):
    return reduce(np.matmul, ms)


def _g(gammas, *idx):
    """Product of gamma matrices with 1-based indices."""
    return _prod([gammas[i - 1] for i in idx])


# name -> (relation sign, defining product, phase); relation Op* conj(D) Op = sign * D
_DIRAC_ROWS = {
    1: {"Sigma0": (+1, (), 1)},
    2: {"Gamma2": (-1, None, None), "Sigma0": (+1, None, None)},
    3: {"Gamma2": (-1, (2,), 1)},
    4: {"Gamma2": (-1, (1, 3), 1j), "Sigma2": (+1, (2, 4), 1j)},
    5: {"Sigma2": (+1, (2, 4), 1j)},
    6: {"Gamma1": (-1, (2, 4, 6), 1j), "Sigma2": (+1, (1, 3, 5), 1j)},
    7: {"Gamma1": (-1, (2, 4, 6), 1j)},
    8: {"Gamma1": (-1, (1, 3, 5, 7), 1), "Sigma3": (+1, (2, 4, 6, 8), 1)},
}

# Hardy/Dirac-phase row: (object, relation, Sigma^2)
HARDY_ROWS = {
    1: ("E", "bar", +1),
    2: ("F", "transpose", +1),
    3: ("E", "bar_complement", -1),
    4: ("F", "bar", -1),
    5: ("E", "bar", -1),
    6: ("F", "transpose", -1),
    7: ("E", "bar_complement", +1),
    8: ("F", "bar", +1),
}


@dataclass(frozen=True, eq=False)
class CliffordRep:
    d: int
    gammas: tuple
    grading: np.ndarray | None
    basis: np.ndarray  # unitary W; first-row operators act on D' = W* D W
    dirac_ops: dict = field(default_factory=dict)
    hardy_sigma: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.gammas[0].shape[0]

    def dirac_op(self, name: str) -> np.ndarray:
        if name not in self.dirac_ops:
            raise UndefinedOperator(f"{name} is not defined for d={self.d}")
        return self.dirac_ops[name]

    def relation_sign(self, name: str) -> int:
        if name not in _DIRAC_ROWS[self.d]:
            raise UndefinedOperator(f"{name} is not defined for d={self.d}")
        return _DIRAC_ROWS[self.d][name][0]

    def transformed_gammas(self) -> list:
        W = self.basis
        return [W.conj().T @ g @ W for g in self.gammas]

    def half_gammas(self) -> list:
        """Blocks c_j with D_0 = x_1 - i sum_{j>=2} x_j c_j (even d)."""
        if self.d % 2:
            raise CliffordError("half-space blocks exist only for even d")
        h = self.dim // 2
        out = [self.gammas[0][:h, h:]]
        for g in self.gammas[1:]:
            out.append(1j * g[:h, h:])
        return out


def _hermitian_involution(M, tol=1e-12) -> bool:
    n = M.shape[0]
    return np.allclose(M, M.conj().T, atol=tol) and np.allclose(M @ M, np.eye(n), atol=tol)


def _relation_holds(op, gammas, sign, tol=1e-12) -> bool:
    return all(np.allclose(op.conj().T @ g.conj() @ op, sign * g, atol=tol) for g in gammas)


def _cayley_search(gammas: list, entries: dict):
    """First W = ⊗ w_q (w_q in {1, C, conj C}) and phases making all operators valid.

    Deterministic enumeration order; returns None if nothing passes.
    """
    n = gammas[0].shape[0]
    q = int(round(np.log2(n)))
    blocks = (S0, CAYLEY, CAYLEY.conj())
    phases = (1, 1j)
    names = list(entries)
    for choice in itertools.product(range(3), repeat=q):
        W = reduce(np.kron, [blocks[c] for c in choice]) if q else np.eye(1, dtype=complex)
        gp = [W.conj().T @ g @ W for g in gammas]
        for ph in itertools.product(phases, repeat=len(names)):
            ops = {}
            ok = True
            for name, p in zip(names, ph):
                sign, prod = entries[name]
                U = p * (_g(gammas, *prod) if prod else np.eye(n, dtype=complex))
                op = W.T @ U @ W
                if not (_hermitian_involution(op) and _relation_holds(op, gp, sign)):
                    ok = False
                    break
                ops[name] = op
            if not ok:
                continue
            vals = list(ops.values())
            if all(np.allclose(a @ b, b @ a) for a, b in itertools.combinations(vals, 2)):
                return W, ops
    return None


def _hardy_sigma(d: int, gammas: list, half: list | None) -> np.ndarray:
    g = lambda *i: _g(gammas, *i)  # noqa: E731
    if d == 1:
        return np.ones((1, 1), dtype=complex)
    if d == 3:
        return 1j * g(2)
    if d == 5:
        return g(2, 4)
    if d == 7:
        return 1j * g(2, 4, 6)
    c = half
    h = c[0].shape[0]
    if d == 2:
        return np.eye(h, dtype=complex)
    if d == 4:
        return 1j * c[2]
    if d == 6:
        return c[2] @ c[4]
    if d == 8:
        return 1j * c[2] @ c[4] @ c[6]
    raise CliffordError(d)


@lru_cache(maxsize=None)
def build_clifford(d: int) -> CliffordRep:
    if not isinstance(d, (int, np.integer)) or not 1 <= d <= 8:
        raise CliffordError(f"Clifford dimension {d} outside 1..8")
    d = int(d)
    if d % 2 == 0:
        full = _even_rep(d)
        gammas, grading = full[:d], full[d]
    else:
        gammas, grading = _even_rep(d - 1), None
    for m in gammas:
        m.setflags(write=False)
    n = gammas[0].shape[0]
    rows = _DIRAC_ROWS[d]
    if d == 2:
        # Cayley basis in which D' is real; Gamma_2 = gamma_2 there
        W = CAYLEY.copy()
        ops = {"Gamma2": gammas[1].copy(), "Sigma0": np.eye(n, dtype=complex)}
    elif d == 6:
        res = _cayley_search(gammas, {k: (v[0], v[1]) for k, v in rows.items()})
        if res is None:  # reported as unsupported rather than guessed
            W, ops = np.eye(n, dtype=complex), {}
        else:
            W, ops = res
    else:
        W = np.eye(n, dtype=complex)
        ops = {}
        for name, (sign, prod, phase) in rows.items():
            ops[name] = phase * (_g(gammas, *prod) if prod else np.eye(n, dtype=complex))
    half = None
    if d % 2 == 0:
        h = n // 2
        half = [gammas[0][:h, h:]] + [1j * m[:h, h:] for m in gammas[1:]]
    sig = _hardy_sigma(d, list(gammas), half)
    return CliffordRep(d, tuple(gammas), grading, W, ops, sig)


def clifford_defects(rep: CliffordRep) -> dict:
    """Max residual of every defining identity; all should vanish."""
    d, G = rep.d, rep.gammas
    n = rep.dim
    I = np.eye(n)
    out = {}
    out["anticommutation"] = max(
        np.abs(G[i] @ G[j] + G[j] @ G[i] - 2 * (i == j) * I).max()
        for i in range(d) for j in range(d)
    )
    out["self_adjoint"] = max(np.abs(g - g.conj().T).max() for g in G)
    # 1-based: odd real, even imaginary
    out["reality"] = max(
        np.abs(g.imag).max() if (i + 1) % 2 else np.abs(g.real).max() for i, g in enumerate(G)
    )
    if rep.grading is not None:
        gr = rep.grading
        out["grading_anticommutes"] = max(np.abs(gr @ g + g @ gr).max() for g in G)
        diag = np.diag(np.r_[np.ones(n // 2), -np.ones(n // 2)])
        out["grading_diagonal"] = np.abs(gr - diag).max()
    return out


# Dirac operator data

@dataclass(frozen=True, eq=False)
class DiracData:
    rep: CliffordRep
    fiber_dim: int
    sites: tuple
    D: BlockLatticeOperator
    D0: BlockLatticeOperator | None

    def compressed(self, rho: float) -> np.ndarray:
        return compress(self.D, rho)

    def compressed_D0(self, rho: float) -> np.ndarray:
        if self.D0 is None:
            raise CliffordError("D0 exists only for even d")
        return compress(self.D0, rho)


def dirac_block(rep: CliffordRep, x: Sequence[int], L: int = 1) -> np.ndarray:
    b = sum(float(xi) * g for xi, g in zip(x, rep.gammas))
    if not isinstance(b, np.ndarray):
        b = np.zeros((rep.dim, rep.dim), dtype=complex)
    return np.kron(np.eye(L), b)


def d0_block(rep: CliffordRep, x: Sequence[int], L: int = 1) -> np.ndarray:
    c = rep.half_gammas()
    b = float(x[0]) * c[0] - 1j * sum(float(xi) * cj for xi, cj in zip(x[1:], c[1:]))
    return np.kron(np.eye(L), np.asarray(b, dtype=complex))


def build_dirac(rep: CliffordRep, fiber_dim: int, window: Sequence[Site]) -> DiracData:
    sites = tuple(sorted(tuple(x) for x in window))
    if sites and len(sites[0]) != rep.d:
        raise CliffordError(f"window of dimension {len(sites[0])} for a d={rep.d} representation")
    lay = Layout.plain(fiber_dim).insert("gamma", rep.dim)[0]
    D = onsite(lambda x: dirac_block(rep, x, fiber_dim), sites, layout=lay)
    D = BlockLatticeOperator(D.sites, D.fiber_dim, D.matrix, 0.0, True, lay)
    D0 = None
    if rep.d % 2 == 0:
        h = rep.dim // 2
        lay0 = Layout.plain(fiber_dim).insert("gamma", h)[0]
        D0 = onsite(lambda x: d0_block(rep, x, fiber_dim), sites, layout=lay0)
    return DiracData(rep, fiber_dim, sites, D, D0)


def cayley_dirac(data: DiracData) -> BlockLatticeOperator:
    """D' = W* D W sitewise, W the basis of the first-row operators."""
    W = np.kron(np.eye(data.fiber_dim), data.rep.basis)
    return data.D.fiber_map(left=W.conj().T, right=W)


@dataclass(frozen=True, eq=False)
class HardyData:
    sites: tuple
    E: np.ndarray
    F: np.ndarray | None


def hardy_data(data: DiracData, rho: float) -> HardyData:
    """E = chi(D >= 0) and, for even d, the phase F of D_0 on the closed ball.

    The origin's whole fiber belongs to E and F(0) = 1.
    """
    from .lattice import compress_sites

    rep, L = data.rep, data.fiber_dim
    sites = compress_sites(data.D, rho)
    n = rep.dim
    eblocks, fblocks = [], []
    for x in sites:
        r = site_norm(x)
        if r == 0:
            eblocks.append(np.eye(n * L, dtype=complex))
            if rep.d % 2 == 0:
                fblocks.append(np.eye(n // 2 * L, dtype=complex))
            continue
        eblocks.append(0.5 * (np.eye(n * L) + dirac_block(rep, x, L) / r))
        if rep.d % 2 == 0:
            fblocks.append(d0_block(rep, x, L) / r)
    E = sp.block_diag(eblocks, format="csr").toarray()
    F = sp.block_diag(fblocks, format="csr").toarray() if fblocks else None
    return HardyData(sites, E, F)
