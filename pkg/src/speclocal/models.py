"""Reference tight-binding models.

Hopping convention: (offset δ, block B) means <x+δ|H|x> = B, adjoints added.
The Bloch symbol is then H(k) = sum_δ B_δ exp(-i k·δ) (+ h.c.).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .lattice import (BlockLatticeOperator, Layout, assemble, ball_sites, box_sites, default_window,
                      onsite)
from .pauli import S0, S1, S2, S3, kron
from .symmetry import SymmetrySpec

UP = np.array([[0, 1], [0, 0]], dtype=complex)  # (σ1 + iσ2)/2


class ModelError(ValueError):
    pass


def _encode(c: int) -> int:
    return 2 * c if c >= 0 else -2 * c - 1


@dataclass(frozen=True)
class Disorder:
    """On-site disorder sum_c w_{x,c} M_c, w uniform in [-W/2, W/2], keyed by site."""

    W: float = 0.0
    seed: int = 0
    channels: tuple = ()

    def block(self, x: Sequence[int], L: int) -> np.ndarray:
        if self.W == 0 or not self.channels:
            return np.zeros((L, L), dtype=complex)
        key = tuple(_encode(int(c)) for c in x)
        rng = np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=key))
        w = rng.uniform(-0.5 * self.W, 0.5 * self.W, size=len(self.channels))
        return sum(wi * M for wi, M in zip(w, self.channels))


@dataclass(frozen=True, eq=False)
class BlochClosure:
    d: int
    hoppings: tuple
    grid_n: int = 64

    def symbol(self, k) -> np.ndarray:
        k = np.atleast_1d(np.asarray(k, dtype=float))
        out = None
        for off, B in self.hoppings:
            ph = np.exp(-1j * float(np.dot(k, off))) if self.d else 1.0
            term = B * ph
            if any(off):
                term = term + (B * ph).conj().T
            else:
                term = 0.5 * (B + B.conj().T)
            out = term if out is None else out + term
        return out

    def dim(self) -> int:
        return self.hoppings[0][1].shape[0]

    def grid(self, n: int | None = None):
        n = n or self.grid_n
        ks = 2 * np.pi * np.arange(n) / n
        return ks

    def spectra(self, n: int | None = None) -> np.ndarray:
        ks = self.grid(n)
        pts = np.array(np.meshgrid(*([ks] * self.d), indexing="ij")).reshape(self.d, -1).T
        return np.array([np.linalg.eigvalsh(self.symbol(k)) for k in pts])


@dataclass(frozen=True, eq=False)
class ModelInstance:
    name: str
    params: dict
    d: int
    layout: Layout
    hoppings: tuple
    disorder: Disorder
    declared_symmetries: tuple
    bloch: BlochClosure | None
    real_space: BlockLatticeOperator | None = None
    info: dict = field(default_factory=dict)

    @property
    def fiber_dim(self) -> int:
        return self.layout.dim

    @property
    def hopping_range(self) -> float:
        return max((math.sqrt(sum(c * c for c in o)) for o, _ in self.hoppings), default=0.0)

    @property
    def clean(self) -> bool:
        return self.disorder.W == 0

    def operator(self, window=None, periodic: bool = False) -> BlockLatticeOperator:
        if window is None:
            if self.real_space is None:
                raise ModelError("no window given")
            return self.real_space
        H = assemble(self.hoppings, window, hermitize=True, merge=True, periodic=periodic,
                     layout=self.layout)
        if self.disorder.W:
            V = onsite(lambda x: self.disorder.block(x, self.fiber_dim), H.sites, layout=self.layout)
            H = H + V
        return BlockLatticeOperator(H.sites, H.fiber_dim, H.matrix, self.hopping_range, True, self.layout)

    def window_for(self, rho: float, buffer: float | None = None) -> tuple:
        return default_window(rho, self.d, self.hopping_range, buffer)

    def with_window(self, window, periodic: bool = False) -> "ModelInstance":
        return _replace(self, real_space=self.operator(window, periodic))


def _replace(m: ModelInstance, **kw) -> ModelInstance:
    fields_ = dict(m.__dict__)
    fields_.update(kw)
    return ModelInstance(**fields_)


def _finish(name, params, d, layout, hoppings, disorder, syms, window, info=None) -> ModelInstance:
    hop = tuple((tuple(o), np.asarray(b, dtype=complex)) for o, b in hoppings)
    bloch = BlochClosure(d, hop) if disorder.W == 0 else None
    m = ModelInstance(name, dict(params), d, layout, hop, disorder, tuple(syms), bloch, None, info or {})
    if window is not None:
        if d and len(window) and len(next(iter(window))) != d:
            raise ModelError(f"window dimension does not match d={d}")
        m = m.with_window(window)
        rng = m.hopping_range
        if d and len(m.real_space.sites) < 2 and rng > 0:
            raise ModelError("window too small for the hopping range")
    return m


def _nonneg(**kw):
    for k, v in kw.items():
        if v < 0:
            raise ModelError(f"{k} must be nonnegative, got {v}")


# d = 1

def ssh(t1: float = 1.0, t2: float = 0.5, W: float = 0.0, window=None, seed: int = 0) -> ModelInstance:
    """SSH chain in the sublattice grading σ: A = t1 + t2 S, symbol t1 + t2 e^{-ik}."""
    _nonneg(W=W)
    lay = Layout((("sigma", 2),))
    hop = [((0,), t1 * S1), ((1,), t2 * UP)]
    dis = Disorder(W, seed, (S1, S2))  # random complex intracell hopping keeps chirality
    syms = [SymmetrySpec("CHS", S3, "sigma3")]
    return _finish("ssh", dict(t1=t1, t2=t2, W=W), 1, lay, hop, dis, syms, window,
                   {"chiral": "sigma"})


def ssh_perturbed(t1: float = 1.0, t2: float = 0.5, eps: float = 0.1, W: float = 0.0, window=None,
                  seed: int = 0) -> ModelInstance:
    """SSH plus eps·σ3: approximate chirality with η = 2|eps|."""
    _nonneg(W=W)
    lay = Layout((("sigma", 2),))
    hop = [((0,), t1 * S1 + eps * S3), ((1,), t2 * UP)]
    dis = Disorder(W, seed, (S1, S2))
    syms = [SymmetrySpec("ApproxChiral", S3, "sigma3")]
    return _finish("ssh_perturbed", dict(t1=t1, t2=t2, eps=eps, W=W), 1, lay, hop, dis, syms, window,
                   {"chiral": "sigma"})


def ssh_pair(t1: float = 1.0, t2: float = 1.5, c: float = 0.1, case: str = "ii", W: float = 0.0,
             window=None, seed: int = 0) -> ModelInstance:
    """Two SSH chains in a second grading ν commuting with the chiral σ3.

    In the ν grading the chiral block is A = [[A+, B], [C, A-]].  Case "ii": A± are
    SSH symbols t1 + t2 e^{∓ik} and B = C = c.  Case "i": B, C are those symbols and
    A± = c.  Either way η = 2|c| for the corresponding ν3 law.
    """
    _nonneg(W=W)
    if case not in ("i", "ii"):
        raise ModelError("case must be 'i' or 'ii'")
    E = {(a, b): np.outer(S0[a], S0[b]) for a in (0, 1) for b in (0, 1)}
    if case == "ii":
        chains, const = ((0, 0), (1, 1)), ((0, 1), (1, 0))
    else:
        chains, const = ((0, 1), (1, 0)), ((0, 0), (1, 1))
    # coefficients of 1, e^{-ik}, e^{+ik} in A
    A0 = t1 * (E[chains[0]] + E[chains[1]]) + c * (E[const[0]] + E[const[1]])
    A1, Am1 = t2 * E[chains[0]], t2 * E[chains[1]]
    z = np.zeros((2, 2))
    on = np.block([[z, A0], [A0.conj().T, z]])   # σ outer
    hop1 = np.block([[z, A1], [Am1.conj().T, z]])
    P = _swap_perm(2, 2)
    lay = Layout((("nu", 2), ("sigma", 2)))
    dis = Disorder(W, seed, (kron(S0, S1), kron(S0, S2), kron(S3, S1)))
    syms = [SymmetrySpec("CHS", kron(S0, S3), "sigma3")]
    return _finish("ssh_pair", dict(t1=t1, t2=t2, c=c, case=case, W=W), 1, lay,
                   [((0,), P @ on @ P.T), ((1,), P @ hop1 @ P.T)], dis, syms, window,
                   {"chiral": "sigma", "twist": "nu"})


def _kitaev_blocks(mu, t, delta):
    onsite_ = -mu * S3
    hop = np.array([[-t, -delta], [np.conj(delta), t]], dtype=complex)
    return onsite_, hop


def kitaev_chain(mu: float = 1.0, t: float = 1.0, delta: float = 1.0, W: float = 0.0, window=None,
                 seed: int = 0, stacked: bool = False, g: float = 2.0, beta: float = 1.0,
                 eps: float = 0.0) -> ModelInstance:
    """Kitaev BdG chain, layout τ; PHS τ1* conj(H) τ1 = -H.

    ``stacked`` gives the two-chain variant in the ν grading,
    H = [[eps·h, A], [A^*, -eps·h]] with A = h + (i g + beta sin k) τ1, so that
    ν3 is an approximate chiral symmetry with η = 2|eps|·||h||.
    """
    _nonneg(W=W)
    h0, h1 = _kitaev_blocks(mu, t, delta)
    if not stacked:
        lay = Layout((("tau", 2),))
        hop = [((0,), h0), ((1,), h1)]
        dis = Disorder(W, seed, (S3,))
        syms = [SymmetrySpec("PHS", S1, "tau1"), SymmetrySpec("Conservation", S3, "tau3")]
        return _finish("kitaev_chain", dict(mu=mu, t=t, delta=delta, W=W), 1, lay, hop, dis,
                       syms[:1], window, {"bdg": "tau"})
    # blocks written with ν outer, then reordered to τ ⊗ ν
    lay = Layout((("tau", 2), ("nu", 2)))
    P = _swap_perm(2, 2)

    # onsite: [[eps h0, A0], [A0^*, -eps h0]], A0 = h0 + i g τ1
    A0 = h0 + 1j * g * S1
    on = np.block([[eps * h0, A0], [A0.conj().T, -eps * h0]])
    # sin k = (i/2)(e^{-ik} - e^{ik}), so <x+1|A|x> = h1 + (i beta/2) τ1 and
    # <x-1|A|x> = h1^† - (i beta/2) τ1; the latter's adjoint is <x+1|A^*|x>
    A1p = h1 + 0.5j * beta * S1
    A1m = h1.conj().T - 0.5j * beta * S1
    hop1 = np.block([[eps * h1, A1p], [A1m.conj().T, -eps * h1]])
    hop = [((0,), P @ on @ P.T), ((1,), P @ hop1 @ P.T)]
    dis = Disorder(W, seed, (kron(S3, S1),))  # enters A only
    syms = [SymmetrySpec("PHS", kron(S1, S0), "tau1"), SymmetrySpec("ApproxChiral", kron(S0, S3), "nu3")]
    return _finish("kitaev_stacked", dict(mu=mu, t=t, delta=delta, W=W, g=g, beta=beta, eps=eps), 1, lay,
                   hop, dis, syms, window, {"chiral": "nu", "bdg": "tau"})


def _swap_perm(a: int, b: int) -> np.ndarray:
    """Permutation matrix taking (i_a outer, i_b inner) to (i_b outer, i_a inner)."""
    n = a * b
    P = np.zeros((n, n))
    for i in range(a):
        for j in range(b):
            P[j * a + i, i * b + j] = 1
    return P


# d = 2

def _qwz_hop(m: float):
    return [((0, 0), m * S3), ((1, 0), 0.5 * (S3 + 1j * S1)), ((0, 1), 0.5 * (S3 + 1j * S2))]


def qwz(m: float = 1.0, W: float = 0.0, window=None, seed: int = 0) -> ModelInstance:
    """sin k1 σ1 + sin k2 σ2 + (m + cos k1 + cos k2) σ3."""
    _nonneg(W=W)
    lay = Layout((("orb", 2),))
    dis = Disorder(W, seed, (S0,))
    return _finish("qwz", dict(m=m, W=W), 2, lay, _qwz_hop(m), dis, [], window)


def bhz_rashba(mass: float = 1.0, lam: float = 0.0, W: float = 0.0, window=None, seed: int = 0) -> ModelInstance:
    """diag(h_m, conj h_m) in spin s plus Rashba λ(s1 sin k2 - s2 sin k1), layout s ⊗ orb.

    s2-TRS is exact for all λ; the Rashba term is the only s3-breaking part.
    """
    _nonneg(W=W)
    lay = Layout((("s", 2), ("orb", 2)))
    up = np.diag([1, 0]).astype(complex)
    dn = np.diag([0, 1]).astype(complex)
    hop = {}
    for off, B in _qwz_hop(mass):
        # conj of the real-space hopping block
        hop[off] = np.kron(up, B) + np.kron(dn, B.conj())
    # sin k = (i/2)(e^{-ik} - e^{ik}): offset +1 block i/2 (hermitized)
    one = np.eye(2)
    hop[(1, 0)] = hop[(1, 0)] + lam * np.kron(-S2, 0.5j * one)
    hop[(0, 1)] = hop[(0, 1)] + lam * np.kron(S1, 0.5j * one)
    dis = Disorder(W, seed, (np.eye(4, dtype=complex),))
    syms = [SymmetrySpec("TRS", kron(S2, S0), "s2"),
            SymmetrySpec("Conservation" if lam == 0 else "ApproxConservation", kron(S3, S0), "s3")]
    return _finish("bhz_rashba", dict(mass=mass, lam=lam, W=W), 2, lay, list(hop.items()), dis, syms, window,
                   {"conserved": "s"})


# d = 0

def random_bdg(L: int = 2, delta_scale: float = 0.1, seed: int = 0, max_tries: int = 100) -> ModelInstance:
    """Random BdG matrix [[h, Δ], [Δ^*, -conj h]], Δ^T = -Δ, ||Δ|| = delta_scale·g(h).

    Draws violating ||[H, τ3]|| < 2 g(H) are rejected and redrawn.
    """
    if L < 1:
        raise ModelError("L must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        X = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
        h = 0.5 * (X + X.conj().T)
        gh = np.abs(np.linalg.eigvalsh(h)).min()
        if gh < 1e-3:
            continue
        Y = rng.standard_normal((L, L)) + 1j * rng.standard_normal((L, L))
        dl = Y - Y.T
        if L > 1 and np.linalg.norm(dl, 2) > 0:
            dl = dl * (delta_scale * gh / np.linalg.norm(dl, 2))
        else:
            dl = np.zeros((L, L), dtype=complex)
        H = np.block([[h, dl], [dl.conj().T, -h.conj()]])
        g = np.abs(np.linalg.eigvalsh(H)).min()
        eta = 2 * np.linalg.norm(dl, 2)
        if eta < 2 * g:
            break
    else:
        raise ModelError("could not draw an admissible BdG matrix")
    lay = Layout((("tau", 2),) + ((("orb", L),) if L > 1 else ()))
    hop = [((), H)]
    syms = [SymmetrySpec("PHS", kron(S1, np.eye(L)), "tau1")]
    m = _finish("random_bdg", dict(L=L, delta_scale=delta_scale, seed=seed), 0, lay, hop,
                Disorder(), syms, [()], {"bdg": "tau", "h": h, "delta": dl})
    return m


def bdg_from_blocks(h, delta) -> np.ndarray:
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    dl = np.atleast_2d(np.asarray(delta, dtype=complex))
    return np.block([[h, dl], [dl.conj().T, -h.conj()]])


REGISTRY: dict = {
    "ssh": ssh,
    "ssh_perturbed": ssh_perturbed,
    "ssh_pair": ssh_pair,
    "kitaev_chain": kitaev_chain,
    "qwz": qwz,
    "bhz_rashba": bhz_rashba,
    "random_bdg": random_bdg,
}


def build(name: str, **params) -> ModelInstance:
    if name not in REGISTRY:
        raise ModelError(f"unknown model {name!r}")
    return REGISTRY[name](**params)
