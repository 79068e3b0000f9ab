"""Finite-range block operators on windows of Z^d.

Operators are stored as sparse matrices over (site, fiber) with the site index
slowest.  Sites are integer tuples kept in lexicographic order; the empty tuple
is the single site of the d = 0 lattice.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

Site = tuple  # tuple[int, ...]

# canonical tensor order of named fiber factors, outermost first
FIBER_ORDER = ("tau", "s", "nu", "sigma", "orb", "gamma")

MAX_DIM = 8


class LatticeError(ValueError):
    pass


def sq_norm(x: Sequence[int]) -> int:
    return int(sum(int(c) * int(c) for c in x))


def site_norm(x: Sequence[int]) -> float:
    return math.sqrt(sq_norm(x))


def ball_sites(rho: float, d: int) -> tuple:
    """Closed Euclidean ball {|x| <= rho}, lexicographic."""
    if not 0 <= d <= MAX_DIM:
        raise LatticeError(f"dimension {d} outside 0..{MAX_DIM}")
    r = int(math.floor(rho + 1e-12))
    r2 = rho * rho + 1e-9
    rng = range(-r, r + 1)
    return tuple(x for x in itertools.product(rng, repeat=d) if sq_norm(x) <= r2)


def box_sites(radius: int, d: int) -> tuple:
    """Cube max|x_i| <= radius, lexicographic."""
    if not 0 <= d <= MAX_DIM:
        raise LatticeError(f"dimension {d} outside 0..{MAX_DIM}")
    rng = range(-int(radius), int(radius) + 1)
    return tuple(itertools.product(rng, repeat=d))


def default_window(rho: float, d: int, hopping_range: float, buffer: float | None = None) -> tuple:
    b = 2.0 * hopping_range if buffer is None else buffer
    return box_sites(int(math.ceil(rho + b)), d)


@dataclass(frozen=True)
class Layout:
    """Named fiber factors in canonical order, e.g. (("s", 2), ("orb", 2))."""

    factors: tuple = ()

    @property
    def dim(self) -> int:
        return int(np.prod([k for _, k in self.factors])) if self.factors else 1

    def names(self) -> tuple:
        return tuple(n for n, _ in self.factors)

    @staticmethod
    def plain(L: int) -> "Layout":
        return Layout(() if L == 1 else (("orb", int(L)),))

    def insert(self, name: str, k: int) -> tuple["Layout", int]:
        """New layout plus the position of the inserted factor."""
        if name not in FIBER_ORDER:
            raise LatticeError(f"unknown fiber factor {name!r}")
        if name in self.names():
            raise LatticeError(f"fiber factor {name!r} already present")
        rank = FIBER_ORDER.index(name)
        pos = sum(1 for n, _ in self.factors if FIBER_ORDER.index(n) < rank)
        f = list(self.factors)
        f.insert(pos, (name, int(k)))
        return Layout(tuple(f)), pos

    def to_json(self):
        return [[n, k] for n, k in self.factors]


@dataclass(frozen=True)
class FiberExtension:
    factor: np.ndarray
    name: str

    def __post_init__(self):
        f = np.asarray(self.factor, dtype=complex)
        if f.ndim != 2 or f.shape[0] != f.shape[1]:
            raise LatticeError("fiber factor must be square")
        k = f.shape[0]
        if not np.allclose(f.conj().T @ f, np.eye(k), atol=1e-12):
            raise LatticeError("fiber factor must be unitary")
        if not (np.allclose(f, f.conj().T, atol=1e-12) or np.allclose(f, -f.conj().T, atol=1e-12)):
            raise LatticeError("fiber factor must be Hermitian or anti-Hermitian")
        if self.name not in FIBER_ORDER:
            raise LatticeError(f"unknown placement {self.name!r}")
        f.setflags(write=False)
        object.__setattr__(self, "factor", f)


@dataclass(frozen=True, eq=False)
class BlockLatticeOperator:
    sites: tuple
    fiber_dim: int
    matrix: sp.csr_matrix
    hopping_range: float = 0.0
    hermitian: bool = False
    layout: Layout = field(default_factory=Layout)

    def __post_init__(self):
        n = len(self.sites) * self.fiber_dim
        if self.matrix.shape != (n, n):
            raise LatticeError(f"matrix shape {self.matrix.shape} does not match {n}")
        if self.layout.dim != self.fiber_dim:
            object.__setattr__(self, "layout", Layout.plain(self.fiber_dim))
        m = sp.csr_matrix(self.matrix)
        m.sum_duplicates()
        object.__setattr__(self, "matrix", m)

    # basic data
    @property
    def d(self) -> int:
        return len(self.sites[0]) if self.sites else 0

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def site_index(self) -> dict:
        return {x: i for i, x in enumerate(self.sites)}

    def coords(self) -> np.ndarray:
        return np.array(self.sites, dtype=np.int64).reshape(len(self.sites), self.d)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def block(self, x: Site, y: Site) -> np.ndarray:
        idx = self.site_index()
        L = self.fiber_dim
        i, j = idx[tuple(x)], idx[tuple(y)]
        return self.matrix[i * L:(i + 1) * L, j * L:(j + 1) * L].toarray()

    def _like(self, matrix, hermitian=None, layout=None, hopping_range=None) -> "BlockLatticeOperator":
        lay = self.layout if layout is None else layout
        return BlockLatticeOperator(
            self.sites, lay.dim, sp.csr_matrix(matrix),
            self.hopping_range if hopping_range is None else hopping_range,
            self.hermitian if hermitian is None else hermitian, lay,
        )

    # algebra
    def adjoint(self) -> "BlockLatticeOperator":
        return self._like(self.matrix.conj().T)

    def conj(self) -> "BlockLatticeOperator":
        return self._like(self.matrix.conj())

    def _check(self, other: "BlockLatticeOperator"):
        if self.sites != other.sites or self.fiber_dim != other.fiber_dim:
            raise LatticeError("operators live on different windows or fibers")

    def __add__(self, other):
        self._check(other)
        return self._like(self.matrix + other.matrix, hermitian=self.hermitian and other.hermitian,
                          hopping_range=max(self.hopping_range, other.hopping_range))

    def __sub__(self, other):
        self._check(other)
        return self._like(self.matrix - other.matrix, hermitian=self.hermitian and other.hermitian,
                          hopping_range=max(self.hopping_range, other.hopping_range))

    def __neg__(self):
        return self._like(-self.matrix)

    def scale(self, c) -> "BlockLatticeOperator":
        herm = self.hermitian and np.isreal(c)
        return self._like(self.matrix * c, hermitian=herm)

    def __matmul__(self, other):
        self._check(other)
        return self._like(self.matrix @ other.matrix, hermitian=False,
                          hopping_range=self.hopping_range + other.hopping_range)

    def fiber_map(self, left: np.ndarray | None = None, right: np.ndarray | None = None,
                  antilinear: bool = False, transpose: bool = False) -> "BlockLatticeOperator":
        """Sitewise (1 ⊗ left) M' (1 ⊗ right), M' = conj/transpose of M as requested."""
        m = self.matrix
        if antilinear:
            m = m.conj()
        if transpose:
            m = m.T
        n = len(self.sites)
        if left is not None:
            m = sp.kron(sp.identity(n), sp.csr_matrix(left)) @ m
        if right is not None:
            m = m @ sp.kron(sp.identity(n), sp.csr_matrix(right))
        return self._like(m, hermitian=False)

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = self.matrix - self.matrix.conj().T
        if diff.nnz == 0:
            return True
        scale = max(1.0, abs(self.matrix).max())
        return abs(diff).max() <= tol * scale


def _offsets_range(offsets: Iterable[Sequence[int]]) -> float:
    r = 0.0
    for o in offsets:
        r = max(r, site_norm(o))
    return r


def measured_range(A: BlockLatticeOperator) -> float:
    coo = A.matrix.tocoo()
    if coo.nnz == 0:
        return 0.0
    L = A.fiber_dim
    c = A.coords()
    diff = c[coo.row // L] - c[coo.col // L]
    return float(np.sqrt((diff * diff).sum(axis=1).max()))


def assemble(hoppings, window: Sequence[Site], hermitize: bool = True, merge: bool = False,
             periodic: bool = False, layout: Layout | None = None) -> BlockLatticeOperator:
    """Translation-invariant operator from hoppings (offset, block): <x+offset|A|x> = block.

    Open boundary: pairs with an endpoint outside the window are dropped.  With
    ``periodic`` the window must be a full box and offsets wrap around it.
    With ``hermitize`` each nonzero offset also receives the adjoint hopping and
    on-site blocks are symmetrized.
    """
    sites = tuple(sorted(tuple(int(c) for c in x) for x in window))
    if not sites:
        raise LatticeError("empty window")
    d = len(sites[0])
    if any(len(x) != d for x in sites):
        raise LatticeError("mixed site dimensions in window")
    hop = list(hoppings)
    L = None
    if layout is not None:
        L = layout.dim
    table: dict = {}
    for off, blk in hop:
        off = tuple(int(c) for c in off)
        blk = np.atleast_2d(np.asarray(blk, dtype=complex))
        if len(off) != d:
            raise LatticeError(f"offset {off} has length {len(off)}, expected {d}")
        if blk.shape[0] != blk.shape[1]:
            raise LatticeError("hopping block must be square")
        if L is None:
            L = blk.shape[0]
        if blk.shape[0] != L:
            raise LatticeError(f"block of size {blk.shape[0]} in an L={L} operator")
        keys = [off]
        if hermitize and any(off):
            keys.append(tuple(-c for c in off))
        for k in keys:
            if (k in table) and not merge:
                raise LatticeError(f"duplicate offset {off} (pass merge=True to add)")
        if off in table:
            table[off] = table[off] + blk
        else:
            table[off] = blk
    if L is None:
        L = layout.dim if layout is not None else 1
    full: dict = {}
    for off, blk in table.items():
        if hermitize and not any(off):
            blk = 0.5 * (blk + blk.conj().T)
            full[off] = full.get(off, 0) + blk
            continue
        full[off] = full.get(off, 0) + blk
        if hermitize:
            neg = tuple(-c for c in off)
            full[neg] = full.get(neg, 0) + blk.conj().T

    index = {x: i for i, x in enumerate(sites)}
    n = len(sites)
    if periodic:
        lo = [min(x[i] for x in sites) for i in range(d)]
        hi = [max(x[i] for x in sites) for i in range(d)]
        span = [h - l + 1 for l, h in zip(lo, hi)]
        if int(np.prod(span)) != n:
            raise LatticeError("periodic assembly needs a full box window")
    rows, cols, vals = [], [], []
    eye_r, eye_c = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    for off, blk in full.items():
        if not np.any(blk):
            continue
        for x, j in index.items():
            y = tuple(a + b for a, b in zip(x, off))
            if periodic:
                y = tuple(lo[i] + (y[i] - lo[i]) % span[i] for i in range(d))
            i = index.get(y)
            if i is None:
                continue
            rows.append((i * L + eye_r).ravel())
            cols.append((j * L + eye_c).ravel())
            vals.append(blk.ravel())
    if rows:
        m = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n * L, n * L)).tocsr()
    else:
        m = sp.csr_matrix((n * L, n * L), dtype=complex)
    rng = _offsets_range(full.keys()) if full else 0.0
    lay = layout if layout is not None else Layout.plain(L)
    herm = hermitize or all(
        np.allclose(full.get(tuple(-c for c in o), np.zeros((L, L))), b.conj().T) for o, b in full.items()
    )
    return BlockLatticeOperator(sites, L, m, rng, bool(herm), lay)


def onsite(blocks, window: Sequence[Site], layout: Layout | None = None) -> BlockLatticeOperator:
    """Block-diagonal operator from a callable site -> block or a list aligned with the window."""
    sites = tuple(sorted(tuple(int(c) for c in x) for x in window))
    if callable(blocks):
        bl = [np.atleast_2d(np.asarray(blocks(x), dtype=complex)) for x in sites]
    else:
        lookup = dict(zip((tuple(x) for x in window), blocks))
        bl = [np.atleast_2d(np.asarray(lookup[x], dtype=complex)) for x in sites]
    m = sp.block_diag(bl, format="csr") if bl else sp.csr_matrix((0, 0))
    L = bl[0].shape[0]
    herm = all(np.allclose(b, b.conj().T) for b in bl)
    return BlockLatticeOperator(sites, L, m, 0.0, herm, layout or Layout.plain(L))


def identity(window: Sequence[Site], L: int = 1, layout: Layout | None = None) -> BlockLatticeOperator:
    sites = tuple(sorted(tuple(x) for x in window))
    return BlockLatticeOperator(sites, L, sp.identity(len(sites) * L, dtype=complex, format="csr"),
                                0.0, True, layout or Layout.plain(L))


def _fiber_permutation(n_sites: int, before: int, after: int, k: int) -> np.ndarray:
    """Index map from (site, before, after, k) ordering to (site, before, k, after)."""
    idx = np.arange(n_sites * before * after * k).reshape(n_sites, before, after, k)
    return idx.transpose(0, 1, 3, 2).ravel()


def tensor_extend(A: BlockLatticeOperator, ext: FiberExtension) -> BlockLatticeOperator:
    """A ⊗ factor with the factor placed at its canonical slot of the fiber."""
    f = ext.factor
    k = f.shape[0]
    lay, pos = A.layout.insert(ext.name, k)
    before = int(np.prod([kk for _, kk in A.layout.factors[:pos]])) if pos else 1
    after = A.fiber_dim // before
    m = sp.kron(A.matrix, sp.csr_matrix(f), format="csr")
    if after > 1:
        perm = _fiber_permutation(len(A.sites), before, after, k)
        m = m[perm][:, perm]
    fh = np.allclose(f, f.conj().T)
    return BlockLatticeOperator(A.sites, A.fiber_dim * k, sp.csr_matrix(m), A.hopping_range,
                                A.hermitian and fh, lay)


def fiber_operator(factors: dict, layout: Layout) -> np.ndarray:
    """Single-fiber matrix acting as given factors on named slots, identity elsewhere."""
    unknown = set(factors) - set(layout.names())
    if unknown:
        raise LatticeError(f"layout {layout.names()} lacks factors {sorted(unknown)}")
    out = np.ones((1, 1), dtype=complex)
    for name, k in layout.factors:
        out = np.kron(out, np.asarray(factors.get(name, np.eye(k)), dtype=complex))
    return out


def ball_indices(A: BlockLatticeOperator, rho: float) -> np.ndarray:
    """Row indices of A belonging to the closed ball of radius rho."""
    c = A.coords()
    r2 = (c * c).sum(axis=1) if A.d else np.zeros(len(A.sites), dtype=np.int64)
    inside = np.flatnonzero(r2 <= rho * rho + 1e-9)
    # every lattice point of the ball has to be present
    if A.d and inside.size != len(ball_sites(rho, A.d)):
        raise LatticeError(f"ball of radius {rho} exceeds the window")
    L = A.fiber_dim
    return (inside[:, None] * L + np.arange(L)[None, :]).ravel()


def compress(A: BlockLatticeOperator, rho: float) -> np.ndarray:
    """Dense pi_rho A pi_rho^* on the closed ball, lexicographic site order."""
    idx = ball_indices(A, rho)
    return A.matrix[idx][:, idx].toarray()


def compress_sites(A: BlockLatticeOperator, rho: float) -> tuple:
    c = A.coords()
    r2 = (c * c).sum(axis=1) if A.d else np.zeros(len(A.sites))
    return tuple(x for x, q in zip(A.sites, r2) if q <= rho * rho + 1e-9)


def position_commutator(A: BlockLatticeOperator, i: int) -> BlockLatticeOperator:
    """[X_i, A] with entries (x_i - y_i) <x|A|y>."""
    coo = A.matrix.tocoo()
    L = A.fiber_dim
    c = A.coords()
    w = c[coo.row // L, i] - c[coo.col // L, i]
    m = sp.coo_matrix((coo.data * w, (coo.row, coo.col)), shape=A.shape).tocsr()
    return A._like(m, hermitian=False)


def export_matrix(stem: str | Path, matrix, sites: Sequence[Site], layout: Layout, extra: dict | None = None):
    """Column-major complex128 binary plus JSON sidecar."""
    stem = Path(stem)
    m = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    m = np.asarray(m, dtype="<c16")
    stem.parent.mkdir(parents=True, exist_ok=True)
    bin_path = stem.with_suffix(".bin")
    with open(bin_path, "wb") as fh:
        fh.write(np.asfortranarray(m).tobytes(order="F"))
    meta = {
        "rows": int(m.shape[0]),
        "cols": int(m.shape[1]),
        "dtype": "complex128-le",
        "order": "column-major",
        "sites": [list(map(int, x)) for x in sites],
        "fiber_order": layout.to_json(),
        "fiber_dim": layout.dim,
    }
    if extra:
        meta.update(extra)
    json_path = stem.with_suffix(".json")
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return bin_path, json_path


def load_matrix(stem: str | Path) -> tuple[np.ndarray, dict]:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    raw = np.fromfile(stem.with_suffix(".bin"), dtype="<c16")
    return raw.reshape((meta["rows"], meta["cols"]), order="F"), meta
