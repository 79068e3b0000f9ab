"""Acceptance criteria 1-11, one test each, one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
written to the terminal even when output capture is on.
"""
import time

import numpy as np
import pytest

from speclocal import kernels
from speclocal.clifford import HARDY_ROWS, build_clifford, clifford_defects, d0_block, dirac_block
from speclocal.localizer import GapClosure, LocalizerSpec, admissibility_bounds, invariant, homotopy_scan, \
    model_data, scale_blocks, sector_models
from speclocal.models import bhz_rashba, qwz, random_bdg, ssh, ssh_perturbed
from speclocal.oracles import chern_number, model_winding, spin_chern, zero_dim_invariant
from speclocal.symmetry import cayley_majorana, model_scales

pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, msg):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {msg}")
        assert ok, msg
    return emit


# 1. odd case, SSH

def test_criterion_01_ssh_odd(verdict):
    lines, ok = [], True
    for t2 in (0.5, 1.5):
        m = ssh(1.0, t2)
        t0 = time.perf_counter()
        rep = invariant(LocalizerSpec("OddStandard", rho=20), m)
        dt = time.perf_counter() - t0
        w = model_winding(m)
        good = rep.invariant == w and dt < 5 and rep.dim <= 200
        ok &= good
        lines.append(f"t2={t2}: Sig/2={rep.invariant} winding={w} dim={rep.dim} {dt:.2f}s")
    verdict(1, ok, "; ".join(lines))


# 2. even case, QWZ

def _qwz_masses():
    rng = np.random.default_rng(2024)
    out = []
    while len(out) < 10:
        m = float(rng.uniform(-3.5, 3.5))
        if min(abs(m), abs(abs(m) - 2)) > 0.2:
            out.append(round(m, 6))
    return [-1.0, 1.0, 3.0] + out


def _qwz_rho(g):
    return 12 if g >= 0.5 else 14


def test_criterion_02_qwz_even(verdict):
    lines, ok = [], True
    for m in _qwz_masses():
        model = qwz(m)
        g = model_scales(model).g
        t0 = time.perf_counter()
        rep = invariant(LocalizerSpec("EvenStandard", rho=_qwz_rho(g)), model)
        dt = time.perf_counter() - t0
        c = chern_number(model.bloch, grid_n=64)
        good = rep.invariant == c and dt < 60 and rep.dim <= 2500
        ok &= good
        lines.append(f"m={m:+.3f}:{rep.invariant}/{c}{'' if good else '!'}")
    verdict(2, ok, "Sig/2 vs Chern " + " ".join(lines))


# 3. gap certificate at strict points

def _strict_point(model, variant, kappa, rho, **kw):
    rep = invariant(LocalizerSpec(variant, kappa=kappa, rho=rho, strict_mode=True, **kw), model)
    tol = 1e-8 * max(1.0, rep.norm_H + kappa * rho)
    return rep, rep.admissibility == "strict" and rep.localizer_gap >= rep.g / 2 - tol


def test_criterion_03_gap_certificate(verdict):
    lines, ok = [], True
    pts = [(ssh(1.0, 0.5), "OddStandard", 0.0138, 73), (ssh(1.0, 1.5), "OddStandard", 0.0027, 375),
           (ssh(1.0, 0.3), "OddStandard", None, None), (qwz(10.0), "EvenStandard", 1.7, 10),
           (qwz(-10.0), "EvenStandard", 1.0, 17)]
    for model, var, kappa, rho in pts:
        if kappa is None:  # exactly on the kappa bound, just past the rho bound
            d = model_data(LocalizerSpec(var), model)
            a = admissibility_bounds(var, d.g, d.norm_H, d.comm_norm, 1.0, 1.0)
            kappa = a.kappa_bound
            rho = 2 * d.g / kappa + 1
        rep, good = _strict_point(model, var, kappa, rho)
        ok &= good
        lines.append(f"{model.name}{model.params}: lg={rep.localizer_gap:.3f} g/2={rep.g / 2:.3f} "
                     f"dim={rep.dim} inv={rep.invariant}")
    verdict(3, ok, "strict points certified: " + "; ".join(lines))


# 4. approximate chiral symmetry

def test_criterion_04_twisted_chiral(verdict):
    t1, t2 = 1.0, 1.5
    g0 = abs(t1 - t2)
    eps_star = g0 / np.sqrt(8)  # 2ε < (2/3) sqrt(g0² + ε²)
    w = model_winding(ssh(t1, t2))
    lines, ok = [], True
    for f in (0.2, 0.4, 0.6, 0.8, 1.0):
        eps = 0.9 * eps_star * f
        m = ssh_perturbed(t1, t2, eps)
        tw = invariant(LocalizerSpec("OddTwistedChiral", rho=20), m)
        rd = invariant(LocalizerSpec("OddReduced", rho=20), m)
        good = tw.invariant == w == rd.invariant and tw.eta < 2 * tw.g / 3
        ok &= good
        lines.append(f"eps={eps:.4f}: {tw.invariant}/{rd.invariant}")
    verdict(4, ok, f"Sig/4 twisted and Sig/2 reduced vs winding {w}: " + " ".join(lines))


# 5. spin Chern with Rashba

def test_criterion_05_spin_chern(verdict):
    lines, ok = [], True
    for mass, lam in [(1.0, 0.0), (1.0, 0.05), (1.0, 0.1), (-1.0, 0.0), (-1.0, 0.1), (3.0, 0.1)]:
        m = bhz_rashba(mass, lam)
        rep = invariant(LocalizerSpec("EvenTwistedConservation", rho=8), m)
        z2_known = 1 if abs(mass) < 2 else 0
        good = rep.eta < 2 * rep.g / 3 and rep.invariant is not None and rep.invariant % 2 == z2_known
        if lam == 0:
            good &= rep.invariant == spin_chern(m)
        ok &= good
        lines.append(f"({mass:+g},{lam:g}):{rep.invariant}")
    verdict(5, ok, "Sig/4 conservation localizer " + " ".join(lines))


# 6. sum of indices

def test_criterion_06_sum_index(verdict):
    m = bhz_rashba(1.0, 0.0)
    hp, hm = sector_models(m, "s")
    spec = LocalizerSpec("EvenStandard", rho=8)
    ip, im = invariant(spec, hp).invariant, invariant(spec, hm).invariant
    full = invariant(spec, m).invariant
    verdict(6, ip + im == full == 0, f"Ind(H+)={ip} Ind(H-)={im} Ind(H)={full}")


# 7. d = 0 Pfaffian formula

def test_criterion_07_pfaffian(verdict):
    rng = np.random.default_rng(7)
    agree = 0
    n = 1000
    for i in range(n):
        L = int(rng.integers(1, 5))
        scale = float(rng.uniform(0.0, 0.9))
        r = zero_dim_invariant(random_bdg(L, scale, seed=int(rng.integers(2**31))).operator().dense())
        agree += r.agree and r.eta < 2 * r.g
    brute_ok = True
    for L in range(1, 7):
        H = random_bdg(L, 0.5, seed=100 + L).operator().dense()
        M = np.real(1j * cayley_majorana(H))
        brute_ok &= np.isclose(kernels.pfaffian(M), kernels.pfaffian_brute(M), rtol=1e-9)
    det_ok = True
    for dim in (2, 10, 20, 50, 100):
        A = rng.standard_normal((dim, dim))
        det_ok &= kernels.pfaffian_det_residual(A - A.T) < 1e-8
    verdict(7, agree == n and brute_ok and det_ok,
            f"{agree}/{n} formula agreements, brute force (dim<=12) {brute_ok}, Pf^2=det (dim<=100) {det_ok}")


# 8. homotopy

def test_criterion_08_homotopy(verdict):
    ts = np.linspace(0.0, 1.0, 5)
    s31 = homotopy_scan(lambda t: scale_blocks(ssh_perturbed(1.0, 1.5, 0.15), "sigma", diag=t), ts,
                        LocalizerSpec("OddTwistedChiral", rho=20))
    s32 = homotopy_scan(lambda t: scale_blocks(bhz_rashba(1.0, 0.1), "s", offdiag=t), ts,
                        LocalizerSpec("EvenTwistedConservation", rho=8))
    fired = None
    try:
        homotopy_scan(lambda t: ssh(1.0, t), np.linspace(0.5, 1.5, 5), LocalizerSpec("OddStandard", rho=20))
    except GapClosure as exc:
        fired = exc.t
    ok = len(set(s31)) == 1 and len(set(s32)) == 1 and fired is not None
    verdict(8, ok, f"chiral path {s31}, conservation path {s32}, SSH crossing flagged at t={fired}")


# 9. kernels

def test_criterion_09_kernels(verdict):
    rng = np.random.default_rng(9)
    sig_ok = 0
    for i in range(500):
        n = int(rng.integers(1, 301)) if i % 10 == 0 else int(rng.integers(1, 60))
        X = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        M = X + X.conj().T
        sig_ok += kernels.hermitian_signature(M).signature == kernels.eig_signature(M)
    syl_ok = 0
    for _ in range(100):
        n = int(rng.integers(2, 40))
        X = rng.standard_normal((n, n))
        M = X + X.T
        S = rng.standard_normal((n, n)) + 2 * np.eye(n)
        syl_ok += kernels.hermitian_signature(S.T @ M @ S).signature == kernels.hermitian_signature(M).signature
    verdict(9, sig_ok == 500 and syl_ok == 100, f"signature {sig_ok}/500, Sylvester {syl_ok}/100")


# 10. Clifford and symmetry table

def _table_ok(d, rng):
    rep = build_clifford(d)
    if max(clifford_defects(rep).values()) > 1e-13:
        return False
    G = rep.transformed_gammas()
    for name, op in rep.dirac_ops.items():
        s = rep.relation_sign(name)
        if not all(np.allclose(op.conj().T @ g.conj() @ op, s * g) for g in G):
            return False
    obj, rel, sq = HARDY_ROWS[d]
    S = rep.hardy_sigma
    if not (np.allclose(S, S.conj()) and np.allclose(S @ S, sq * np.eye(S.shape[0]))):
        return False
    for _ in range(3):
        x = rng.integers(-2, 3, size=d)
        x[0] = x[0] or 1
        r = np.linalg.norm(x)
        if obj == "E":
            E = 0.5 * (np.eye(rep.dim) + dirac_block(rep, x) / r)
            want = E if rel == "bar" else np.eye(rep.dim) - E
            if not np.allclose(S.conj().T @ E.conj() @ S, want):
                return False
        else:
            D0 = d0_block(rep, x)
            op = (lambda M: M.T) if rel == "transpose" else np.conj
            if not (np.allclose(S.conj().T @ op(D0 / r) @ S, D0 / r) and np.allclose(S.conj().T @ op(D0) @ S, D0)):
                return False
    return True


def test_criterion_10_clifford(verdict):
    rng = np.random.default_rng(10)
    t0 = time.perf_counter()
    res = {d: _table_ok(d, rng) for d in range(1, 9)}
    dt = time.perf_counter() - t0
    if not build_clifford(6).dirac_ops:
        res[6] = False
    verdict(10, all(res.values()) and dt < 1.0, f"d=1..8 {res} in {dt:.3f}s")


# 11. stability

def test_criterion_11_stability(verdict):
    lines, ok = [], True
    cases = [(ssh(1.0, 0.5), "OddStandard", 20, lambda **k: ssh(1.0, 0.5, **k), 0),
             (ssh(1.0, 1.5), "OddStandard", 20, lambda **k: ssh(1.0, 1.5, **k), -1)]
    cases += [(qwz(m), "EvenStandard", 12, (lambda mm: lambda **k: qwz(mm, **k))(m), c)
              for m, c in [(-1.0, -1), (1.0, 1), (3.0, 0)]]
    for model, var, rho, make, expect in cases:
        base = invariant(LocalizerSpec(var, rho=rho), model)
        vals = [base.invariant,
                invariant(LocalizerSpec(var, rho=rho + 2), model).invariant,
                invariant(LocalizerSpec(var, kappa=base.kappa / 2, rho=rho), model).invariant]
        W = 0.2 * base.g
        for seed in (1, 2, 3):
            vals.append(invariant(LocalizerSpec(var, kappa=base.kappa, rho=rho), make(W=W, seed=seed)).invariant)
        good = set(vals) == {expect}
        ok &= good
        lines.append(f"{model.name}{tuple(model.params.values())[:2]}:{vals}")
    verdict(11, ok, "rho+2, kappa/2, W=0.2g x3 seeds: " + " ".join(lines))
