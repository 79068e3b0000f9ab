"""Exact and approximate symmetries: residuals, gaps, CAZ class, basis changes."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse as sp

from . import kernels
from .lattice import BlockLatticeOperator, Layout, LatticeError, fiber_operator
from .pauli import CAYLEY, S0, S1, S2, S3, cayley, kron

KINDS = ("TRS", "PHS", "CHS", "Conservation", "ApproxChiral", "ApproxConservation")
EXACT_TOL = 1e-12


class SymmetryError(ValueError):
    pass


class NotAnInsulator(SymmetryError):
    pass


class BasisChangeError(SymmetryError):
    pass


@dataclass(frozen=True, eq=False)
class SymmetrySpec:
    kind: str
    operator: np.ndarray  # single-fiber unitary in the model's fiber
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SymmetryError(f"unknown symmetry kind {self.kind!r}")
        U = np.asarray(self.operator, dtype=complex)
        if not np.allclose(U.conj().T @ U, np.eye(U.shape[0]), atol=1e-12):
            raise SymmetryError("symmetry operator must be unitary")
        object.__setattr__(self, "operator", U)

    @property
    def antilinear(self) -> bool:
        return self.kind in ("TRS", "PHS")

    @property
    def parity(self) -> str | None:
        """odd if the antiunitary S·C squares to -1."""
        if not self.antilinear:
            return None
        sq = self.operator @ self.operator.conj()
        return "odd" if np.allclose(sq, -np.eye(sq.shape[0])) else "even"

    @property
    def sign(self) -> int:
        # relation S* op(H) S = sign * H
        return -1 if self.kind in ("PHS", "CHS", "ApproxChiral") else +1


def _fiber_lift(U: np.ndarray, n_sites: int) -> sp.csr_matrix:
    return sp.kron(sp.identity(n_sites), sp.csr_matrix(U), format="csr")


def residual_operator(H, spec: SymmetrySpec):
    """S* op(H) S - sign H as a sparse (lattice) or dense (d = 0) matrix."""
    if isinstance(H, BlockLatticeOperator):
        M, n = H.matrix, len(H.sites)
    else:
        M, n = sp.csr_matrix(np.asarray(H, dtype=complex)), 1
    U = spec.operator
    if U.shape[0] * n != M.shape[0]:
        raise SymmetryError(f"operator of size {U.shape[0]} incompatible with fiber of H")
    Ul = _fiber_lift(U, n)
    Hm = M.conj() if spec.antilinear else M
    return (Ul.conj().T @ Hm @ Ul - spec.sign * M).tocsr()


def residual(H, spec: SymmetrySpec) -> float:
    R = residual_operator(H, spec)
    if R.nnz == 0:
        return 0.0
    R.eliminate_zeros()
    if R.nnz == 0 or abs(R).max() == 0:
        return 0.0
    return kernels.operator_norm(R)


def residual_bloch(bloch, spec: SymmetrySpec, n: int = 64) -> float:
    """Same residual via the symbol: op(H)(k) = conj H(-k) for antilinear laws."""
    U = spec.operator
    best = 0.0
    for k in _kgrid(bloch.d, n):
        Hk = bloch.symbol(k)
        Hop = bloch.symbol(-k).conj() if spec.antilinear else Hk
        R = U.conj().T @ Hop @ U - spec.sign * Hk
        best = max(best, np.linalg.norm(R, 2))
    return float(best)


# gaps and norms

def _kgrid(d: int, n: int):
    ks = 2 * np.pi * np.arange(n) / n
    if d == 0:
        return np.zeros((1, 0))
    return np.array(np.meshgrid(*([ks] * d), indexing="ij")).reshape(d, -1).T


def _refine(f, k0, d):
    if d == 0:
        return f(k0)
    res = sopt.minimize(f, k0, method="Nelder-Mead", options=dict(xatol=1e-10, fatol=1e-14, maxiter=2000))
    return min(float(res.fun), f(k0))


def bloch_extrema(bloch, n: int | None = None, refine: bool = True) -> tuple[float, float]:
    """(min |eig H(k)|, max |eig H(k)|) over a grid, polished by local search."""
    d = bloch.d
    n = n or (512 if d == 1 else 64 if d == 2 else 16)
    pts = _kgrid(d, n)
    mins, maxs = [], []
    for k in pts:
        ev = np.abs(np.linalg.eigvalsh(bloch.symbol(k)))
        mins.append(ev.min())
        maxs.append(ev.max())
    mins, maxs = np.array(mins), np.array(maxs)
    gmin, gmax = mins.min(), maxs.max()
    if refine and d:
        fmin = lambda k: float(np.abs(np.linalg.eigvalsh(bloch.symbol(k))).min())  # noqa: E731
        fmax = lambda k: -float(np.abs(np.linalg.eigvalsh(bloch.symbol(k))).max())  # noqa: E731
        for i in np.argsort(mins)[:4]:
            gmin = min(gmin, _refine(fmin, pts[i], d))
        for i in np.argsort(-maxs)[:4]:
            gmax = max(gmax, -_refine(fmax, pts[i], d))
    return float(gmin), float(gmax)


def gap_operator(H, tol: float = 1e-8) -> float:
    """g = ||H^{-1}||^{-1} of the given finite matrix."""
    M = H.matrix if isinstance(H, BlockLatticeOperator) else H
    if isinstance(H, BlockLatticeOperator) and H.hermitian:
        g = kernels.min_abs_eig(M)
    else:
        g = kernels.extremal_singular_values(M)[0]
    scale = max(1.0, kernels.operator_norm(sp.csr_matrix(M)) if M.shape[0] else 1.0)
    if g <= tol * scale:
        raise NotAnInsulator(f"gap {g:.3e} below tolerance")
    return float(g)


def gap(H, tol: float = 1e-8) -> float:
    """Invertibility gap; Bloch closures use the k-grid minimum."""
    from .models import BlochClosure

    if isinstance(H, BlochClosure):
        g, top = bloch_extrema(H)
        if g <= tol * max(top, 1.0):
            raise NotAnInsulator(f"Bloch gap {g:.3e} below tolerance")
        return g
    return gap_operator(H, tol)


@dataclass(frozen=True)
class Scales:
    g: float
    norm_H: float
    estimator: str


def model_scales(model, radius: int | None = None) -> Scales:
    """g and ||H|| of a model: Bloch route when clean, periodic box otherwise."""
    if model.clean and model.bloch is not None and model.d > 0:
        g, nh = bloch_extrema(model.bloch)
        if g <= 1e-8 * max(nh, 1.0):
            raise NotAnInsulator(f"Bloch gap {g:.3e} below tolerance")
        return Scales(g, nh, "bloch")
    if model.d == 0:
        H = model.operator()
        ev = np.abs(np.linalg.eigvalsh(H.dense()))
        if ev.min() <= 1e-10 * max(ev.max(), 1.0):
            raise NotAnInsulator("zero eigenvalue")
        return Scales(float(ev.min()), float(ev.max()), "dense")
    from .lattice import box_sites

    r = radius or (40 if model.d == 1 else 12)
    H = model.operator(box_sites(r, model.d), periodic=True)
    return Scales(gap_operator(H), kernels.operator_norm(H.matrix), "periodic")


# Majorana / Cayley

def cayley_majorana(H, tol: float = 1e-10) -> np.ndarray:
    """H_Maj = τ_C* H τ_C for an even-PHS BdG matrix (τ outermost)."""
    H = np.asarray(H.dense() if isinstance(H, BlockLatticeOperator) else H, dtype=complex)
    n = H.shape[0]
    if n % 2:
        raise SymmetryError("BdG matrix must have even dimension")
    L = n // 2
    spec = SymmetrySpec("PHS", kron(S1, np.eye(L)), "tau1")
    r = np.linalg.norm(residual_operator(H, spec).toarray(), 2)
    if r > tol * max(1.0, np.linalg.norm(H, 2)):
        raise SymmetryError(f"PHS residual {r:.2e} too large for the Majorana transform")
    C = cayley(L)
    Hm = C.conj().T @ H @ C
    scale = max(1.0, np.abs(Hm).max())
    if np.abs(Hm.real).max() > 1e-10 * scale or np.abs(Hm + Hm.T).max() > 1e-10 * scale:
        raise SymmetryError("Majorana form not imaginary antisymmetric")
    return 1j * Hm.imag


# basis changes

@dataclass(frozen=True, eq=False)
class BasisChange:
    name: str
    matrix: np.ndarray
    in_factors: tuple
    out_factors: tuple
    identities: tuple  # (kind, X, Y): kind 'adj' M* X M = Y, 'T' M^T X M = Y

    def check(self, tol: float = 1e-12):
        M = self.matrix
        if not np.allclose(M.conj().T @ M, np.eye(M.shape[0]), atol=tol):
            raise BasisChangeError(f"{self.name} is not unitary")
        for kind, X, Y in self.identities:
            Z = (M.conj().T if kind == "adj" else M.T) @ X @ M
            if not np.allclose(Z, Y, atol=1e-10):
                raise BasisChangeError(f"identity check failed for {self.name} (wrong tensor order?)")
        return True


def _intertwiner(pairs) -> np.ndarray:
    """Unitary M with X M = M Y for all (X, Y): null space then polar factor."""
    n = pairs[0][0].shape[0]
    I = np.eye(n)
    rows = [np.kron(I, X) - np.kron(Y.T, I) for X, Y in pairs]  # column-major vec
    K = sla.null_space(np.vstack(rows))
    if K.shape[1] == 0:
        raise BasisChangeError("no intertwiner exists")
    cands = [K[:, i] for i in range(K.shape[1])]
    if K.shape[1] > 1:
        cands += [K[:, 0] + K[:, 1], K[:, 0] + 1j * K[:, 1]]
    for v in cands:
        M = v.reshape(n, n, order="F")
        if np.linalg.cond(M) < 1e8:
            U, _ = sla.polar(M)
            # deterministic phase: first entry of largest modulus real positive
            j = np.argmax(np.abs(U.ravel()) > 1e-8)
            ph = U.ravel()[j] / abs(U.ravel()[j])
            return U / ph
    raise BasisChangeError("null space of intertwiners contains no invertible candidate")


def _basis_changes() -> dict:
    r = 1 / math.sqrt(2)
    M3 = r * np.array([[0, 1, 0, 1], [1, 0, 1, 0], [-1j, 0, 1j, 0], [0, 1j, 0, -1j]])
    N = r * np.array([[1, 0, 1, 0], [0, 1, 0, 1], [0, 1, 0, -1], [-1, 0, 1, 0]], dtype=complex)
    M5 = r * np.array([[0, 1, 1, 0], [1, 0, 0, -1], [1, 0, 0, 1], [0, -1, 1, 0]], dtype=complex)
    k = kron
    out = {
        "M_j3": BasisChange("M_j3", M3, ("tau", "s"), ("sigma", "nu"), (
            ("adj", k(S1, S2), k(S3, S0)),
            ("adj", k(S3, S3), -k(S0, S3)),
            # holds with +i, not -i (the phase is irrelevant downstream)
            ("T", k(S1, S0), 1j * k(S2, S2)),
        )),
        "N": BasisChange("N", N, ("sigma", "nu"), ("sigma", "nu"), (
            ("adj", k(S3, S0), k(S1, S0)),
            ("adj", k(S2, S2), k(S3, S0)),
            ("T", k(S2, S2), k(S3, S0)),
        )),
        "M_j5": BasisChange("M_j5", M5, ("tau", "s"), ("sigma", "nu"), (
            ("adj", k(S2, S2), k(S3, S0)),
            ("adj", k(S1, S1), k(S0, S3)),
            ("adj", k(S0, S2), -k(S0, S2)),
        )),
    }
    pairs = [(k(S2, S2), -k(S3, S0)), (k(S3, S0), k(S1, S0)), (k(S2, S0), k(S3, S2))]
    M54 = _intertwiner(pairs)
    out["M_54"] = BasisChange("M_54", M54, ("tau", "s"), ("sigma", "nu"),
                              tuple(("adj", X, Y) for X, Y in pairs))
    for b in out.values():
        b.check()
    return out


BASIS_CHANGES = _basis_changes()


def _order_perm(layout: Layout, first: tuple) -> np.ndarray:
    """Permutation matrix Q with (canonical basis) = Q (basis ordered as first + rest)."""
    names = layout.names()
    dims = dict(layout.factors)
    for f in first:
        if f not in dims:
            raise BasisChangeError(f"layout {names} lacks factor {f!r}")
    order = list(first) + [n for n in names if n not in first]
    shape = [dims[n] for n in names]
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    perm = idx.transpose([names.index(n) for n in order]).ravel()
    Q = np.zeros((len(perm), len(perm)))
    Q[perm, np.arange(len(perm))] = 1
    return Q


def basis_change(H: BlockLatticeOperator, which, inverse: bool = False) -> BlockLatticeOperator:
    """Sitewise M* H M with M acting on the named factors; output in canonical order."""
    bc = BASIS_CHANGES[which] if isinstance(which, str) else which
    bc.check()
    lay = H.layout
    dims = dict(lay.factors)
    src, dst = (bc.out_factors, bc.in_factors) if inverse else (bc.in_factors, bc.out_factors)
    M = bc.matrix.conj().T if inverse else bc.matrix
    Qin = _order_perm(lay, src)
    rest = [(n, k) for n, k in lay.factors if n not in src]
    new = Layout(tuple(rest))
    for n in dst:
        new = new.insert(n, 2)[0]
    Qout = _order_perm(new, dst)
    rest_dim = int(np.prod([k for _, k in rest])) if rest else 1
    U = Qin @ np.kron(M, np.eye(rest_dim)) @ Qout.T
    out = H.fiber_map(left=U.conj().T, right=U)
    return BlockLatticeOperator(out.sites, out.fiber_dim, out.matrix, H.hopping_range,
                                H.hermitian, new)


# classification

_CAZ_INDEX = {(+1, 0): 0, (+1, +1): 1, (0, +1): 2, (-1, +1): 3, (-1, 0): 4, (-1, -1): 5, (0, -1): 6, (+1, -1): 7}
CAZ_NAMES = {0: "AI", 1: "BDI", 2: "D", 3: "DIII", 4: "AII", 5: "CII", 6: "C", 7: "CI"}


@dataclass
class AuditReport:
    eta: dict
    gap_g: float
    norm_H: float
    thresholds: dict
    verdicts: dict
    caz_class: object
    caz_name: str
    definable: dict = field(default_factory=dict)
    contradictions: list = field(default_factory=list)
    estimator: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        d["g"] = d.pop("gap_g")
        return d


def verdict(eta: float, g: float, norm_H: float = 1.0) -> str:
    if eta < EXACT_TOL * max(norm_H, 1.0):
        return "exact"
    if eta < 2 * g / 3:
        return "admissible"
    return "inadmissible"


def caz_index(trs: int, phs: int, chs: bool) -> object:
    if trs == 0 and phs == 0:
        return "AIII" if chs else "A"
    return _CAZ_INDEX[(trs, phs)]


def classify(H, specs, g: float | None = None, norm_H: float | None = None, estimator: str = "operator",
             etas: dict | None = None) -> AuditReport:
    """j index from the exact antiunitary laws, verdicts for the approximate ones."""
    if g is None:
        g = gap(H)
    if norm_H is None:
        M = H.matrix if isinstance(H, BlockLatticeOperator) else sp.csr_matrix(H)
        norm_H = kernels.operator_norm(M)
    etas = dict(etas or {})
    for s in specs:
        if s.label not in etas:
            etas[s.label or s.kind] = residual(H, s)
    tol = EXACT_TOL * max(norm_H, 1.0)
    trs, phs, chs = set(), set(), False
    verdicts, definable = {}, {}
    for s in specs:
        e = etas[s.label or s.kind]
        exact = e < tol
        if s.kind == "TRS" and exact:
            trs.add(+1 if s.parity == "even" else -1)
        elif s.kind == "PHS" and exact:
            phs.add(+1 if s.parity == "even" else -1)
        elif s.kind == "CHS" and exact:
            chs = True
        verdicts[s.label or s.kind] = verdict(e, g, norm_H)
        definable[s.label or s.kind] = bool(e < 2 * g)
    contradictions = []
    if len(trs) > 1:
        contradictions.append("TRS of both parities holds exactly")
    if len(phs) > 1:
        contradictions.append("PHS of both parities holds exactly")
    t = next(iter(trs)) if len(trs) == 1 else 0
    p = next(iter(phs)) if len(phs) == 1 else 0
    j = caz_index(t, p, chs)
    name = CAZ_NAMES[j] if isinstance(j, int) else j
    return AuditReport(
        eta={k: float(v) for k, v in etas.items()}, gap_g=float(g), norm_H=float(norm_H),
        thresholds={"2g": 2 * g, "2g/3": 2 * g / 3}, verdicts=verdicts, caz_class=j, caz_name=name,
        definable=definable, contradictions=contradictions, estimator=estimator,
    )


def audit_model(model, radius: int | None = None) -> AuditReport:
    sc = model_scales(model, radius)
    if model.d == 0:
        H = model.operator()
    else:
        from .lattice import box_sites

        r = radius or (40 if model.d == 1 else 12)
        H = model.operator(box_sites(r, model.d), periodic=True)
    etas = {}
    if model.clean and model.bloch is not None and model.d > 0:
        for s in model.declared_symmetries:
            etas[s.label] = residual_bloch(model.bloch, s)
    return classify(H, model.declared_symmetries, sc.g, sc.norm_H, sc.estimator, etas)


def neumann_check(H_blocks: tuple, g: float, eta: float) -> float:
    """min singular value of diag(H+, H-); should exceed g - eta/2 when eta < 2g."""
    D = sla.block_diag(*H_blocks)
    return float(np.linalg.svd(D, compute_uv=False)[-1])
