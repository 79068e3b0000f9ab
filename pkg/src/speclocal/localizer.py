"""Spectral localizers, admissibility checks and the signature pipeline."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .clifford import CliffordRep, build_clifford
from .lattice import ball_sites, compress, fiber_operator, position_commutator
from .models import BlochClosure, ModelInstance
from .pauli import S3
from .symmetry import NotAnInsulator, model_scales

VARIANTS = {
    # name: (parity of d, factor denominator, bound family)
    "OddStandard": ("odd", 2, "standard"),
    "EvenStandard": ("even", 2, "standard"),
    "OddTwistedChiral": ("odd", 4, "prop31"),
    "OddReduced": ("odd", 2, "prop31"),
    "EvenTwistedConservation": ("even", 4, "prop32"),
    "OddTwistedCommuting_i": ("odd", 4, "prop31"),
    "OddTwistedCommuting_ii": ("odd", 4, "prop31"),
}


class LocalizerError(ValueError):
    pass


class GradingError(LocalizerError):
    pass


class GapClosure(ArithmeticError):
    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


class CertificationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class LocalizerSpec:
    variant: str
    kappa: float | None = None
    rho: float | None = None
    strict_mode: bool = False
    gap_fraction: float = 0.25
    chiral_slot: str = "sigma"
    conserved_slot: str = "s"
    twist_slot: str = "nu"
    kappa_rule: str = "kappa_rho"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise LocalizerError(f"unknown variant {self.variant!r}")
        if self.kappa is not None and self.kappa <= 0:
            raise LocalizerError("kappa must be positive")
        if self.rho is not None and self.rho <= 0:
            raise LocalizerError("rho must be positive")

    @property
    def factor(self) -> int:
        return VARIANTS[self.variant][1]


# hopping tables

def full_hoppings(hoppings) -> dict:
    """Hermitized (offset, block) list expanded to the full operator's hopping table."""
    out: dict = {}
    for off, B in hoppings:
        off = tuple(off)
        if any(off):
            out[off] = out.get(off, 0) + B
            neg = tuple(-c for c in off)
            out[neg] = out.get(neg, 0) + B.conj().T
        else:
            out[off] = out.get(off, 0) + 0.5 * (B + B.conj().T)
    return out


def _slot_indices(layout, slot):
    G = np.real(np.diag(fiber_operator({slot: S3}, layout)))
    return np.flatnonzero(G > 0), np.flatnonzero(G < 0)


def _symbol(table: dict, k) -> np.ndarray:
    return sum(B * np.exp(-1j * float(np.dot(k, o))) for o, B in table.items())


def _comm_symbol(table: dict, k, i: int) -> np.ndarray:
    return sum(o[i] * B * np.exp(-1j * float(np.dot(k, o))) for o, B in table.items())


def _kgrid(d, n):
    ks = 2 * np.pi * np.arange(n) / n
    return np.array(np.meshgrid(*([ks] * d), indexing="ij")).reshape(d, -1).T


def _dirac_comm_symbol(table: dict, rep: CliffordRep, k, even: bool) -> np.ndarray:
    d = rep.d
    Cs = [_comm_symbol(table, k, i) for i in range(d)]
    if even:
        c = rep.half_gammas()
        out = np.kron(Cs[0], c[0])
        for j in range(1, d):
            out = out - 1j * np.kron(Cs[j], c[j])
        return out
    return sum(np.kron(Ci, g) for Ci, g in zip(Cs, rep.gammas))


def dirac_commutator_norm_bloch(table: dict, rep: CliffordRep, even: bool = False, n: int | None = None) -> float:
    """sup_k ||sum_i C_i(k) ⊗ gamma_i|| with C_i the symbol of [X_i, A]."""
    d = rep.d
    n = n or (256 if d == 1 else 48 if d == 2 else 12)
    best = 0.0
    for k in _kgrid(d, n):
        best = max(best, np.linalg.norm(_dirac_comm_symbol(table, rep, k, even), 2))
    return float(best)


def dirac_commutator_operator(A, rep: CliffordRep, even: bool = False) -> sp.csr_matrix:
    """[D, A ⊗ 1] (odd) or [D_0, A ⊗ 1] (even) from position-weighted entries."""
    d = rep.d
    if even:
        c = rep.half_gammas()
        out = sp.kron(position_commutator(A, 0).matrix, sp.csr_matrix(c[0]))
        for j in range(1, d):
            out = out - 1j * sp.kron(position_commutator(A, j).matrix, sp.csr_matrix(c[j]))
        return out.tocsr()
    out = None
    for i in range(d):
        t = sp.kron(position_commutator(A, i).matrix, sp.csr_matrix(rep.gammas[i]))
        out = t if out is None else out + t
    return out.tocsr()


def _sub_table(table: dict, rows, cols) -> dict:
    return {o: B[np.ix_(rows, cols)] for o, B in table.items()}


# assembly

@dataclass
class Assembled:
    matrix: np.ndarray
    sites: tuple
    variant: str
    kappa: float
    rho: float


def _ball_operator(model: ModelInstance, rho: float):
    sites = ball_sites(rho, model.d)
    return model.operator(sites)


def _grade(n_sites: int, G: np.ndarray, dg: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(n_sites), G), np.eye(dg))


def dirac_on_ball(sites, rep: CliffordRep, L: int) -> np.ndarray:
    X = np.array(sites, dtype=float).reshape(len(sites), rep.d)
    out = np.zeros((len(sites) * L * rep.dim,) * 2, dtype=complex)
    for i in range(rep.d):
        out += np.kron(np.kron(np.diag(X[:, i]), np.eye(L)), rep.gammas[i])
    return out


def d0_on_ball(sites, rep: CliffordRep, L: int) -> np.ndarray:
    X = np.array(sites, dtype=float).reshape(len(sites), rep.d)
    c = rep.half_gammas()
    out = np.kron(np.kron(np.diag(X[:, 0]), np.eye(L)), c[0]).astype(complex)
    for j in range(1, rep.d):
        out -= 1j * np.kron(np.kron(np.diag(X[:, j]), np.eye(L)), c[j])
    return out


def assemble(spec: LocalizerSpec, model: ModelInstance, kappa: float, rho: float,
             check_grading: bool = True) -> Assembled:
    """Compressed localizer matrix of the requested variant on the closed ball."""
    parity, _, _ = VARIANTS[spec.variant]
    d = model.d
    if d == 0 or (d % 2 == 1) != (parity == "odd"):
        raise LocalizerError(f"variant {spec.variant} needs {parity} d, model has d={d}")
    rep = build_clifford(d)
    Hb = _ball_operator(model, rho)
    sites = Hb.sites
    ns = len(sites)
    H = Hb.dense()
    lay = model.layout
    LH = model.fiber_dim
    dg = rep.dim
    v = spec.variant
    normH = max(np.abs(H).max(), 1.0)

    def tile(idx, L):
        return (np.arange(ns)[:, None] * L + idx[None, :]).ravel()

    if v in ("OddStandard", "OddTwistedChiral", "OddReduced", "OddTwistedCommuting_i", "OddTwistedCommuting_ii"):
        if spec.chiral_slot not in lay.names():
            raise GradingError(f"model layout {lay.names()} has no chiral slot {spec.chiral_slot!r}")
        ip, im = _slot_indices(lay, spec.chiral_slot)
        rp, rm = tile(ip, LH), tile(im, LH)
        A = H[np.ix_(rp, rm)]
        Lh = LH // 2
        D = kappa * dirac_on_ball(sites, rep, Lh)
        Ag = np.kron(A, np.eye(dg)) if dg > 1 else A
        if v == "OddStandard":
            if check_grading:
                diag_part = max(np.abs(H[np.ix_(rp, rp)]).max(initial=0), np.abs(H[np.ix_(rm, rm)]).max(initial=0))
                if diag_part > 1e-12 * normH:
                    raise GradingError("H is not off-diagonal in the chiral grading")
            M = np.block([[D, Ag], [Ag.conj().T, -D]])
        elif v == "OddReduced":
            Hp = np.kron(H[np.ix_(rp, rp)], np.eye(dg))
            Hm = np.kron(H[np.ix_(rm, rm)], np.eye(dg))
            M = np.block([[Hp + D, Ag], [Ag.conj().T, Hm - D]])
        elif v == "OddTwistedChiral":
            Hg = np.kron(H, np.eye(dg))
            G = np.real(np.diag(fiber_operator({spec.chiral_slot: S3}, lay)))
            Dfull = kappa * dirac_on_ball(sites, rep, LH)
            tw = _grade(ns, np.diag(G), dg) @ Dfull
            M = np.block([[tw, Hg], [Hg, tw]])
        else:
            sub = _sub_layout(lay, spec.chiral_slot)
            if spec.twist_slot not in sub.names():
                raise GradingError(f"chiral block layout {sub.names()} lacks twist slot {spec.twist_slot!r}")
            Gn = np.real(np.diag(fiber_operator({spec.twist_slot: S3}, sub)))
            tw = _grade(ns, np.diag(Gn), dg) @ D
            if v == "OddTwistedCommuting_i":
                M = np.block([[tw, Ag], [Ag.conj().T, tw]])
            else:
                M = np.block([[tw, Ag], [Ag.conj().T, -tw]])
    elif v == "EvenStandard":
        h = dg // 2
        Hg = np.kron(H, np.eye(h))
        D0 = kappa * d0_on_ball(sites, rep, LH)
        M = np.block([[Hg, D0], [D0.conj().T, -Hg]])
    elif v == "EvenTwistedConservation":
        if spec.conserved_slot not in lay.names():
            raise GradingError(f"model layout {lay.names()} has no conserved slot {spec.conserved_slot!r}")
        h = dg // 2
        Hg = np.kron(H, np.eye(h))
        D0 = d0_on_ball(sites, rep, LH)
        G = np.real(np.diag(fiber_operator({spec.conserved_slot: S3}, lay)))
        Pp = _grade(ns, np.diag((1 + G) / 2), h)
        Pm = _grade(ns, np.diag((1 - G) / 2), h)
        # D_0 on the S = +1 part, D_0^* on the S = -1 part
        D0s = kappa * (D0 @ Pp + D0.conj().T @ Pm)
        M = np.block([[Hg, D0s], [D0s.conj().T, -Hg]])
    else:  # pragma: no cover
        raise LocalizerError(v)
    herm = np.abs(M - M.conj().T).max()
    if herm > 1e-12 * max(np.abs(M).max(), 1.0):
        raise LocalizerError(f"assembled localizer not Hermitian ({herm:.2e})")
    return Assembled(0.5 * (M + M.conj().T), sites, v, kappa, rho)


def literal_conservation_localizer(model: ModelInstance, kappa: float, rho: float, slot: str = "s") -> np.ndarray:
    """[[H, κ D_0 σ1], [κ σ1 D_0^*, -H]] with σ1 on the conserved slot (diagnostic only)."""
    from .pauli import S1

    rep = build_clifford(model.d)
    Hb = _ball_operator(model, rho)
    ns = len(Hb.sites)
    h = rep.dim // 2
    Hg = np.kron(Hb.dense(), np.eye(h))
    D0 = d0_on_ball(Hb.sites, rep, model.fiber_dim)
    X1 = np.kron(np.kron(np.eye(ns), fiber_operator({slot: S1}, model.layout)), np.eye(h))
    B = kappa * D0 @ X1
    return np.block([[Hg, B], [B.conj().T, -Hg]])


def _sub_layout(layout, slot):
    from .lattice import Layout

    return Layout(tuple((n, k) for n, k in layout.factors if n != slot))


# scales and admissibility

@dataclass
class ModelData:
    g: float
    norm_H: float
    eta: float
    comm_norm: float
    estimator: str


def _eta(spec: LocalizerSpec, model: ModelInstance, table: dict | None) -> float:
    v = spec.variant
    lay = model.layout
    if v in ("OddStandard", "EvenStandard"):
        return 0.0
    if v in ("OddTwistedChiral", "OddReduced"):
        S, sign = fiber_operator({spec.chiral_slot: S3}, lay), -1
    elif v == "EvenTwistedConservation":
        S, sign = fiber_operator({spec.conserved_slot: S3}, lay), +1
    else:
        S = fiber_operator({spec.twist_slot: S3}, lay)
        sign = -1 if v == "OddTwistedCommuting_i" else +1
    if table is not None:
        best = 0.0
        for k in _kgrid(model.d, 256 if model.d == 1 else 48):
            Hk = _symbol(table, k)
            best = max(best, np.linalg.norm(S @ Hk @ S - sign * Hk, 2))
        return float(best)
    from .lattice import box_sites
    from .symmetry import SymmetrySpec, residual

    r = 40 if model.d == 1 else 12
    H = model.operator(box_sites(r, model.d), periodic=True)
    kind = "ApproxChiral" if sign < 0 else "ApproxConservation"
    return residual(H, SymmetrySpec(kind, S))


def model_data(spec: LocalizerSpec, model: ModelInstance, rho: float | None = None) -> ModelData:
    sc = model_scales(model)
    rep = build_clifford(model.d)
    v = spec.variant
    lay = model.layout
    use_bloch = model.clean and model.bloch is not None
    table = full_hoppings(model.hoppings) if use_bloch else None
    if v == "EvenStandard":
        target, even = ("H", None), True
    elif v == "EvenTwistedConservation":
        target, even = ("Hpm", spec.conserved_slot), False
    else:
        target, even = ("A", spec.chiral_slot), False
    if use_bloch:
        if target[0] == "H":
            c = dirac_commutator_norm_bloch(table, rep, even=True)
        elif target[0] == "A":
            ip, im = _slot_indices(lay, target[1])
            c = dirac_commutator_norm_bloch(_sub_table(table, ip, im), rep)
        else:
            ip, im = _slot_indices(lay, target[1])
            c = max(dirac_commutator_norm_bloch(_sub_table(table, ip, ip), rep),
                    dirac_commutator_norm_bloch(_sub_table(table, im, im), rep))
        est = "bloch"
    else:
        rr = (rho or 10) + 2 * model.hopping_range
        from .lattice import BlockLatticeOperator, default_window

        H = model.operator(default_window(rr, model.d, model.hopping_range))
        if target[0] == "H":
            c = kernels.operator_norm(dirac_commutator_operator(H, rep, even=True))
        else:
            ip, im = _slot_indices(lay, target[1])
            pairs = [(ip, im)] if target[0] == "A" else [(ip, ip), (im, im)]
            c = 0.0
            for a, b in pairs:
                blk = _block_operator(H, a, b)
                c = max(c, kernels.operator_norm(dirac_commutator_operator(blk, rep)))
        est = sc.estimator + "+window"
    eta = _eta(spec, model, table)
    return ModelData(sc.g, sc.norm_H, eta, float(c), est)


def _block_operator(H, rows, cols):
    from .lattice import BlockLatticeOperator

    ns, L = len(H.sites), H.fiber_dim
    r = (np.arange(ns)[:, None] * L + np.asarray(rows)[None, :]).ravel()
    c = (np.arange(ns)[:, None] * L + np.asarray(cols)[None, :]).ravel()
    m = H.matrix[r][:, c]
    if len(rows) != len(cols):
        raise GradingError("block extraction needs equal sizes")
    return BlockLatticeOperator(H.sites, len(rows), sp.csr_matrix(m), H.hopping_range, False)


@dataclass
class Admissibility:
    verdict: str
    kappa_bound: float
    rho_bound: float
    eta_bound: float | None
    margins: dict = field(default_factory=dict)
    bounds_hold: bool = False


def admissibility_bounds(variant: str, g: float, norm_H: float, comm: float, kappa: float, rho: float,
                         eta: float = 0.0) -> Admissibility:
    """A-priori bounds of the variant; verdict 'strict' or 'unverified' (to be settled a posteriori)."""
    fam = VARIANTS[variant][2]
    denom = norm_H * comm
    if fam == "standard":
        kb = g ** 3 / (12 * denom) if denom > 0 else math.inf
        rb = 2 * g / kappa
        eb = None
    else:
        kb = 2 * g ** 3 / (81 * denom) if denom > 0 else math.inf
        rb = 8 * g / (3 * kappa)
        eb = 2 * g / 3
    m = {"kappa": kb - kappa, "rho": rho - rb}
    ok = kappa <= kb and rho > rb
    if eb is not None:
        m["eta"] = eb - eta
        ok = ok and eta < eb
    return Admissibility("strict" if ok else "unverified", kb, rb, eb, m, ok)


def admissibility(variant: str, g: float, norm_H: float, comm: float, kappa: float, rho: float,
                  eta: float = 0.0, localizer_gap: float | None = None, gap_fraction: float = 0.25) -> Admissibility:
    a = admissibility_bounds(variant, g, norm_H, comm, kappa, rho, eta)
    if a.bounds_hold:
        return a
    if localizer_gap is not None and localizer_gap >= gap_fraction * g:
        a.verdict = "empirical"
    else:
        a.verdict = "violated"
    return a


def default_parameters(g: float, comm: float, rho: float | None = None, kappa: float | None = None,
                       rule: str = "kappa_rho"):
    """Empirical defaults, ρ >= 12 and κ clipped to [1e-3, 1].

    rule "kappa_rho": κ = 2.5 g / ρ, so κρ = 2.5 g sits above the ρ > 2g/κ bound.
    rule "gap_over_commutator": κ = g / (2 ||[D,A]|| ρ).
    Given κ only, ρ = max(2g/κ + 1, 12).
    """
    if rho is None and kappa is None:
        rho = 12.0
    if kappa is None:
        if rule == "kappa_rho":
            kappa = 2.5 * g / rho
        elif rule == "gap_over_commutator":
            kappa = g / (2 * comm * rho) if comm > 0 else 1.0
        else:
            raise LocalizerError(f"unknown kappa rule {rule!r}")
        kappa = min(max(kappa, 1e-3), 1.0)
    if rho is None:
        rho = max(2 * g / kappa + 1, 12.0)
    return float(kappa), float(rho)


def sector_models(model: ModelInstance, slot: str) -> tuple:
    """The S-diagonal blocks H+ and H- of a model as models of their own (S = σ3 on ``slot``)."""
    from .models import Disorder, _finish

    ip, im = _slot_indices(model.layout, slot)
    sub = _sub_layout(model.layout, slot)
    out = []
    for sel, tag in ((ip, "+"), (im, "-")):
        hop = [(o, B[np.ix_(sel, sel)]) for o, B in model.hoppings]
        dis = Disorder(model.disorder.W, model.disorder.seed,
                       tuple(C[np.ix_(sel, sel)] for C in model.disorder.channels))
        out.append(_finish(f"{model.name}[{slot}{tag}]", model.params, model.d, sub, hop, dis,
                           (), None, dict(model.info)))
    return tuple(out)


# pipeline

@dataclass
class InvariantReport:
    variant: str
    signature: int
    invariant: int | None
    z2: int | None
    admissibility: str
    localizer_gap: float
    eta: float
    g: float
    kappa: float
    rho: float
    norm_H: float
    comm_norm: float
    dim: int
    divisible: bool
    gap_certificate: bool
    margins: dict = field(default_factory=dict)
    difference: int | None = None
    estimator: str = ""
    warnings: list = field(default_factory=list)
    wall_time_ms: float = 0.0

    def to_json(self) -> dict:
        return asdict(self)


def localizer_gap(M: np.ndarray) -> float:
    return kernels.min_abs_eig(M)


def invariant(spec: LocalizerSpec, model: ModelInstance, data: ModelData | None = None) -> InvariantReport:
    t0 = time.perf_counter()
    data = data or model_data(spec, model, spec.rho)
    if data.g <= 0:
        raise NotAnInsulator("gap vanishes")
    kappa, rho = default_parameters(data.g, data.comm_norm, spec.rho, spec.kappa, spec.kappa_rule)
    bounds = admissibility_bounds(spec.variant, data.g, data.norm_H, data.comm_norm, kappa, rho, data.eta)
    if spec.strict_mode and not bounds.bounds_hold:
        raise CertificationError(f"{spec.variant}: a-priori bounds fail (margins {bounds.margins})")
    L = assemble(spec, model, kappa, rho)
    sig = kernels.hermitian_signature(L.matrix)
    lg = localizer_gap(L.matrix)
    adm = admissibility(spec.variant, data.g, data.norm_H, data.comm_norm, kappa, rho, data.eta, lg,
                        spec.gap_fraction)
    warn = []
    cert = lg >= data.g / 2 - 1e-8 * max(1.0, np.abs(L.matrix).max())
    if adm.verdict == "strict" and not cert:
        msg = f"gap bound violated in strict mode: {lg:.3e} < g/2 = {data.g / 2:.3e}"
        if spec.strict_mode:
            raise CertificationError(msg)
        warn.append(msg)
    if adm.verdict != "strict" and not cert:
        warn.append(f"localizer gap {lg:.3e} below g/2")
    f = spec.factor
    s = sig.signature
    divisible = s % f == 0
    inv = s // f if divisible else None
    if not divisible:
        warn.append(f"signature {s} not divisible by {f}")
    diff = s // 2 if spec.variant == "EvenTwistedConservation" and s % 2 == 0 else None
    z2 = inv % 2 if inv is not None else None
    for w in warn:
        warnings.warn(w, RuntimeWarning, stacklevel=2)
    return InvariantReport(
        spec.variant, int(s), inv, z2, adm.verdict, float(lg), float(data.eta), float(data.g), kappa, rho,
        float(data.norm_H), float(data.comm_norm), int(L.matrix.shape[0]), bool(divisible), bool(cert),
        {k: float(v) for k, v in adm.margins.items()}, diff, data.estimator, warn,
        (time.perf_counter() - t0) * 1e3,
    )


def homotopy_scan(path, ts, spec: LocalizerSpec, require_constant: bool = True) -> list:
    """Signatures along t -> model(t); gap closures are reported with the offending t."""
    sigs = []
    prev = None
    for t in ts:
        m = path(t)
        try:
            rep = invariant(spec, m)
        except (NotAnInsulator, kernels.NearSingular) as exc:
            raise GapClosure(f"gap closes at t = {t}: {exc}", t) from exc
        if rep.localizer_gap < spec.gap_fraction * rep.g:
            raise GapClosure(f"localizer gap {rep.localizer_gap:.3e} too small at t = {t}", t)
        if require_constant and prev is not None and rep.signature != prev[1]:
            raise GapClosure(f"signature jumps between t = {prev[0]} and t = {t}", t)
        prev = (t, rep.signature)
        sigs.append(rep.signature)
    return sigs


def scale_blocks(model: ModelInstance, slot: str, diag: float = 1.0, offdiag: float = 1.0) -> ModelInstance:
    """Model with the slot-diagonal blocks scaled by ``diag`` and off-diagonal by ``offdiag``."""
    from .models import _replace

    ip, im = _slot_indices(model.layout, slot)
    F = np.full((model.fiber_dim,) * 2, offdiag, dtype=float)
    F[np.ix_(ip, ip)] = diag
    F[np.ix_(im, im)] = diag
    hop = tuple((o, B * F) for o, B in model.hoppings)
    bl = BlochClosure(model.d, hop) if model.bloch is not None else None
    return _replace(model, hoppings=hop, bloch=bl, real_space=None,
                    params={**model.params, f"{slot}_diag": diag, f"{slot}_offdiag": offdiag})
