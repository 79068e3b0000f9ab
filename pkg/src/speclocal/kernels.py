"""Dense kernels: inertia, Pfaffian sign, extremal singular values, projections."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_LIMIT = 2000
DEFAULT_PIVOT_TOL = 1e-10


class KernelError(ArithmeticError):
    pass


class NearSingular(KernelError):
    pass


class ConvergenceError(KernelError):
    def __init__(self, msg, iterations=None):
        super().__init__(msg)
        self.iterations = iterations


class GapError(KernelError):
    pass


@dataclass(frozen=True)
class SignatureResult:
    n_plus: int
    n_minus: int
    min_abs_eig_lower_bound: float | None = None

    @property
    def signature(self) -> int:
        return self.n_plus - self.n_minus

    @property
    def dim(self) -> int:
        return self.n_plus + self.n_minus


def _as_dense(M) -> np.ndarray:
    return M.toarray() if sp.issparse(M) else np.asarray(M)


def hermitian_signature(M, pivot_tol: float = DEFAULT_PIVOT_TOL, bound: bool = False) -> SignatureResult:
    """Inertia from a Bunch-Kaufman LDL^* factorization.

    1x1 pivots contribute their sign, 2x2 pivot blocks contribute the signs of
    their two eigenvalues.  A pivot eigenvalue below ``pivot_tol * ||M||_1``
    raises NearSingular.  With ``bound`` a lower bound on min |eig M| is
    returned: min |eig(D)| / ||L^{-1}||^2 (Ostrowski), computed densely.
    """
    A = _as_dense(M)
    n = A.shape[0]
    if A.shape != (n, n):
        raise KernelError("matrix must be square")
    if n == 0:
        return SignatureResult(0, 0, math.inf)
    norm1 = np.abs(A).sum(axis=0).max()
    herm_err = np.abs(A - A.conj().T).max()
    if herm_err > 1e-12 * max(norm1, 1.0):
        raise KernelError(f"matrix not Hermitian (residual {herm_err:.2e})")
    A = 0.5 * (A + A.conj().T)
    cplx = np.iscomplexobj(A) and np.abs(A.imag).max() > 0
    if not cplx:
        A = A.real
    lu, dmat, perm = sla.ldl(A, lower=True, hermitian=True, check_finite=True)
    thresh = pivot_tol * max(norm1, np.finfo(float).tiny)
    npos = nneg = 0
    min_piv = math.inf
    i = 0
    while i < n:
        if i + 1 < n and dmat[i + 1, i] != 0:
            ev = np.linalg.eigvalsh(dmat[i:i + 2, i:i + 2])
            i += 2
        else:
            ev = np.array([dmat[i, i].real])
            i += 1
        for e in ev:
            min_piv = min(min_piv, abs(e))
            if abs(e) <= thresh:
                raise NearSingular(f"pivot {e:.3e} below tolerance {thresh:.3e}")
            if e > 0:
                npos += 1
            else:
                nneg += 1
    lb = None
    if bound:
        Lp = lu[perm]
        linv = sla.solve_triangular(Lp, np.eye(n), lower=True, unit_diagonal=True)
        lb = float(min_piv / np.linalg.norm(linv, 2) ** 2)
    return SignatureResult(npos, nneg, lb)


def eig_signature(M) -> int:
    """Oracle: sign count of eigenvalues."""
    ev = np.linalg.eigvalsh(_as_dense(M))
    return int((ev > 0).sum() - (ev < 0).sum())


# Pfaffian

def _check_antisym(M) -> np.ndarray:
    A = _as_dense(M)
    if np.iscomplexobj(A):
        if np.abs(A.imag).max() > 0:
            raise KernelError("Pfaffian path takes real matrices only")
        A = A.real
    n = A.shape[0]
    if A.shape != (n, n):
        raise KernelError("matrix must be square")
    if n % 2:
        raise KernelError("odd dimension")
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    if np.abs(A + A.T).max() > 1e-12 * scale:
        raise KernelError("matrix not antisymmetric")
    return np.array(A, dtype=float)


def _parlett_reid(A: np.ndarray) -> tuple[float, float]:
    """(sign, log|Pf|) by pivoted skew Gauss elimination."""
    A = A.copy()
    n = A.shape[0]
    sign, logabs = 1.0, 0.0
    scale = max(np.abs(A).max(), np.finfo(float).tiny)
    for k in range(0, n - 1, 2):
        kp = k + 1 + int(np.abs(A[k + 1:, k]).argmax())
        if kp != k + 1:
            A[[k + 1, kp], k:] = A[[kp, k + 1], k:]
            A[k:, [k + 1, kp]] = A[k:, [kp, k + 1]]
            sign = -sign
        piv = A[k, k + 1]
        if abs(piv) <= 1e-14 * scale:
            raise NearSingular("singular antisymmetric matrix")
        sign *= np.sign(piv)
        logabs += math.log(abs(piv))
        if k + 2 < n:
            tau = A[k, k + 2:] / piv
            col = A[k + 2:, k + 1].copy()
            A[k + 2:, k + 2:] += np.outer(tau, col) - np.outer(col, tau)
    return float(sign), logabs


def pfaffian(M) -> float:
    s, la = _parlett_reid(_check_antisym(M))
    return s * math.exp(la)


def pfaffian_sign(M) -> int:
    s, _ = _parlett_reid(_check_antisym(M))
    return int(s)


def pfaffian_brute(M) -> float:
    """Recursive expansion along the first row (dim <= 12)."""
    A = np.asarray(_as_dense(M))
    n = A.shape[0]
    if n > 12:
        raise KernelError("brute-force Pfaffian limited to dim <= 12")
    if n % 2:
        return 0.0

    def rec(idx):
        if not idx:
            return 1.0
        i0, rest = idx[0], idx[1:]
        total = 0.0
        for pos, j in enumerate(rest):
            a = A[i0, j]
            if a == 0:
                continue
            total += (-1) ** pos * a * rec(rest[:pos] + rest[pos + 1:])
        return total

    return float(np.real(rec(tuple(range(n)))))


def pfaffian_det_residual(M) -> float:
    """|Pf^2 - det| / |det|."""
    A = _check_antisym(M)
    s, la = _parlett_reid(A)
    sd, ld = np.linalg.slogdet(A)
    return abs(math.exp(2 * la - ld) - 1.0) if sd > 0 else math.inf


# singular values and projections

def _start_vector(n: int, seed: int = 12345) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(n)


def extremal_singular_values(M, dense_limit: int = DENSE_LIMIT, tol: float = 1e-10,
                             maxiter: int | None = None) -> tuple[float, float]:
    """(smallest, largest) singular value.

    Dense SVD below ``dense_limit``; above it ARPACK Lanczos with a fixed start
    vector, the smallest via shift-invert at 0 on M^*M.
    """
    n = M.shape[0]
    if n == 0:
        return 0.0, 0.0
    if min(M.shape) < dense_limit:
        s = np.linalg.svd(_as_dense(M), compute_uv=False)
        return float(s[-1]), float(s[0])
    S = sp.csr_matrix(M)
    G = (S.conj().T @ S).tocsc()
    v0 = _start_vector(G.shape[0])
    maxiter = maxiter or 20 * G.shape[0]
    try:
        big = spla.eigsh(G, k=1, which="LA", v0=v0, tol=tol, maxiter=maxiter, return_eigenvectors=False)
        small = spla.eigsh(G, k=1, sigma=0.0, which="LM", v0=v0, tol=tol, maxiter=maxiter,
                           return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"ARPACK failed after {maxiter} iterations", maxiter) from exc
    except RuntimeError as exc:  # singular factorization at shift 0
        raise ConvergenceError(str(exc)) from exc
    return float(math.sqrt(max(small[0].real, 0.0))), float(math.sqrt(big[0].real))


def operator_norm(M, **kw) -> float:
    if sp.issparse(M) and M.nnz == 0:
        return 0.0
    if min(M.shape) < kw.get("dense_limit", DENSE_LIMIT):
        return float(np.linalg.norm(_as_dense(M), 2)) if M.shape[0] else 0.0
    S = sp.csr_matrix(M)
    G = S.conj().T @ S
    try:
        big = spla.eigsh(G, k=1, which="LA", v0=_start_vector(G.shape[0]), tol=kw.get("tol", 1e-10),
                         return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError("ARPACK norm estimate did not converge") from exc
    return float(math.sqrt(max(big[0].real, 0.0)))


def min_abs_eig(M, dense_limit: int = DENSE_LIMIT) -> float:
    """Smallest |eigenvalue| of a Hermitian matrix."""
    n = M.shape[0]
    if n < dense_limit:
        return float(np.abs(np.linalg.eigvalsh(_as_dense(M))).min())
    S = sp.csc_matrix(M)
    try:
        ev = spla.eigsh(S, k=1, sigma=0.0, which="LM", v0=_start_vector(n), return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError("shift-invert eigensolver did not converge") from exc
    except RuntimeError:
        return 0.0
    return float(abs(ev[0]))


def spectral_projection(M, side: str = "negative", gap_tol: float = 1e-10) -> np.ndarray:
    """chi(M < 0) ('negative') or chi(M >= 0) ('nonneg')."""
    A = _as_dense(M)
    ev, U = np.linalg.eigh(0.5 * (A + A.conj().T))
    scale = max(np.abs(ev).max(initial=0.0), 1.0)
    if ev.size and np.abs(ev).min() <= gap_tol * scale:
        raise GapError(f"spectral gap {np.abs(ev).min():.2e} below tolerance")
    if side == "negative":
        sel = ev < 0
    elif side == "nonneg":
        sel = ev >= 0
    else:
        raise ValueError(f"unknown side {side!r}")
    V = U[:, sel]
    return V @ V.conj().T
