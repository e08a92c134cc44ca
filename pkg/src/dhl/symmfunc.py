"""Elementary symmetric functions, their derivatives and the Garding cone.

Spectra are plain 1-D arrays (or :class:`SymSpectrum`); most routines also
accept stacks with the spectrum on the last axis so that whole grids can be
processed at once.  Object arrays of :class:`fractions.Fraction` are carried
through the recurrences unchanged, which gives an exact-arithmetic mode.

Indices are zero-based throughout (``zeroed=(0,)`` removes the first entry).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ArgumentError, NumericError, PreconditionError

#: absolute strictness tolerance used to separate the open cone from its closure
CONE_TOL = 1e-12

SYM_TOL = 1e-14
JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 60


@dataclass(frozen=True)
class SymSpectrum:
    """Eigenvalue (or curvature) vector; ``sorted`` means descending order."""

    values: np.ndarray
    sorted: bool = False

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.dtype != object:
            vals = vals.astype(float)
        if vals.ndim != 1 or vals.size < 1:
            raise ArgumentError("a spectrum is a non-empty 1-D vector")
        if self.sorted and np.any(vals[:-1] < vals[1:]):
            raise ArgumentError("spectrum flagged sorted but not descending")
        object.__setattr__(self, "values", vals)

    @classmethod
    def descending(cls, values) -> "SymSpectrum":
        vals = np.asarray(values, dtype=float)
        return cls(np.sort(vals)[::-1].copy(), sorted=True)

    @property
    def n(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class ConeStatus:
    label: str  # "interior" | "boundary" | "outside"
    margin: float

    @property
    def interior(self) -> bool:
        return self.label == "interior"


def _as_values(lam) -> np.ndarray:
    if isinstance(lam, SymSpectrum):
        return lam.values
    arr = np.asarray(lam)
    if arr.dtype != object:
        arr = arr.astype(float)
    if arr.ndim < 1 or arr.shape[-1] < 1:
        raise ArgumentError("spectrum must have at least one entry")
    return arr


def _check_order(k, n, lo=0):
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise ArgumentError(f"order index must be an integer, got {k!r}")
    if k < lo or k > n:
        raise ArgumentError(f"order index {k} outside [{lo}, {n}]")


def sigma_all(lam, kmax: int | None = None) -> np.ndarray:
    """All of sigma_0..sigma_kmax along a new last axis.

    Uses the prefix-polynomial recurrence e_j <- e_j + lam_i * e_{j-1}, i.e.
    the coefficients of prod_i (1 + lam_i t) built one factor at a time.
    """
    vals = _as_values(lam)
    n = vals.shape[-1]
    kmax = n if kmax is None else kmax
    _check_order(kmax, n)
    batch = vals.shape[:-1]
    if vals.dtype == object:
        e = np.zeros(batch + (kmax + 1,), dtype=object)
        e[...] = 0
    else:
        e = np.zeros(batch + (kmax + 1,))
    e[..., 0] = 1
    for i in range(n):
        x = vals[..., i]
        for j in range(min(i + 1, kmax), 0, -1):
            e[..., j] = e[..., j] + x * e[..., j - 1]
    return e


def sigma(lam, k: int):
    """sigma_k of a spectrum (sigma_0 = 1).  Works on stacks of spectra."""
    vals = _as_values(lam)
    _check_order(k, vals.shape[-1])
    out = sigma_all(vals, k)[..., k]
    return out[()] if out.ndim == 0 else out


def sigma_truncated(lam, m: int, zeroed: Sequence[int]):
    """sigma_m with the entries listed in ``zeroed`` set to zero."""
    vals = np.array(_as_values(lam), copy=True)
    n = vals.shape[-1]
    _check_order(m, n)
    idx = list(zeroed)
    if len(set(idx)) != len(idx):
        raise ArgumentError(f"duplicate index in {idx}")
    for i in idx:
        if not isinstance(i, (int, np.integer)) or not 0 <= i < n:
            raise ArgumentError(f"index {i!r} outside [0, {n})")
    vals[..., idx] = 0
    return sigma(vals, m)


def cone_margin(lam, k: int) -> np.ndarray:
    """min over m=1..k of sigma_m; positive exactly on the open cone."""
    vals = _as_values(lam)
    _check_order(k, vals.shape[-1], lo=1)
    return sigma_all(vals, k)[..., 1:].min(axis=-1)


def classify_margin(margin: float, tol: float = CONE_TOL) -> str:
    if margin > tol:
        return "interior"
    if margin >= -tol:
        return "boundary"
    return "outside"


def cone_status(lam, k: int, tol: float = CONE_TOL) -> ConeStatus:
    if tol < 0:
        raise ArgumentError("tolerance must be non-negative")
    margin = float(cone_margin(lam, k))
    return ConeStatus(classify_margin(margin, tol), margin)


def in_cone(lam, k: int) -> bool:
    """Strict membership in the open cone (no tolerance)."""
    return bool(cone_margin(lam, k) > 0)


# ---------------------------------------------------------------- matrices


def _check_symmetric(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ArgumentError(f"expected square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ArgumentError("matrix has non-finite entries")
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    if np.abs(A - np.swapaxes(A, -1, -2)).max(initial=0.0) > SYM_TOL * scale:
        raise ArgumentError("matrix is not symmetric")
    return A


def matrix_sigmas(A, k: int):
    """sigma_0..sigma_k of lambda(A) and the gradient of sigma_k.

    Newton/Faddeev recurrence on the matrix itself: with B_0 = I,
    sigma_m = tr(A B_{m-1}) / m and B_m = sigma_m I - A B_{m-1}.  The gradient
    d sigma_k / d a_ij equals (B_{k-1})_ji, a polynomial in A, so it stays
    smooth across repeated eigenvalues.  Accepts stacks (..., n, n).
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    _check_order(k, n)
    eye = np.broadcast_to(np.eye(n), A.shape)
    B = np.array(eye)
    sig = [np.ones(A.shape[:-2])]
    grad = np.zeros_like(A)
    for m in range(1, k + 1):
        AB = A @ B
        s = np.trace(AB, axis1=-2, axis2=-1) / m
        sig.append(s)
        if m == k:
            grad = np.swapaxes(B, -1, -2)
        B = s[..., None, None] * eye - AB
    return np.stack(sig, axis=-1), grad


def sigma_of_matrix(A, k: int):
    """sigma_k(lambda(A)) without an eigen-decomposition."""
    return matrix_sigmas(A, k)[0][..., k]


def sigma_gradient(A, k: int) -> np.ndarray:
    """sigma_k^{ij}(A) = d sigma_k(lambda(A)) / d a_ij."""
    A = _check_symmetric(A)
    return matrix_sigmas(A, k)[1]


def sigma_hessian_diagonal(lam, k: int) -> np.ndarray:
    """Second derivatives sigma_k^{ij,pq} at A = diag(lam), shape (n, n, n, n).

    Nonzero entries: [i,i,p,p] = sigma_{k-2; i,p} and [i,p,p,i] = -sigma_{k-2; i,p}
    for i != p.
    """
    vals = _as_values(lam)
    if vals.ndim != 1:
        raise ArgumentError("sigma_hessian_diagonal takes a single spectrum")
    n = vals.size
    if n < 2 or not isinstance(k, (int, np.integer)) or k < 2 or k > n:
        raise ArgumentError(f"need n >= 2 and 2 <= k <= n (n={n}, k={k!r})")
    H = np.zeros((n, n, n, n))
    for i in range(n):
        for p in range(n):
            if i != p:
                v = float(sigma_truncated(vals, k - 2, (i, p)))
                H[i, i, p, p] = v
                H[i, p, p, i] = -v
    return H


# ----------------------------------------------------------- inequalities


def newton_maclaurin(lam, k: int, l: int, r: int, s: int) -> tuple[float, float]:
    """Both sides of the generalized Newton-MacLaurin inequality (lhs <= rhs).

    lhs = [(sigma_k/C(n,k)) / (sigma_l/C(n,l))]^(1/(k-l)),
    rhs = [(sigma_r/C(n,r)) / (sigma_s/C(n,s))]^(1/(r-s)).
    """
    vals = _as_values(lam)
    n = vals.shape[-1]
    for q in (k, l, r, s):
        _check_order(q, n)
    if not (k > l >= 0 and r > s >= 0 and k >= r and l >= s):
        raise ArgumentError(f"need k>l>=0, r>s>=0, k>=r, l>=s; got {(k, l, r, s)}")
    sig = sigma_all(vals, k).astype(float)
    if k >= 1 and not np.all(sig[..., 1:].min(axis=-1) > 0):
        raise PreconditionError("spectrum is not in the open cone Gamma_k")

    def ratio(a, b):
        num = sig[..., a] / comb(n, a)
        den = sig[..., b] / comb(n, b)
        return (num / den) ** (1.0 / (a - b))

    lhs, rhs = ratio(k, l), ratio(r, s)
    if np.ndim(lhs) == 0:
        return float(lhs), float(rhs)
    return lhs, rhs


class DominantEigenvalueProbe(NamedTuple):
    holds_i: bool
    holds_ii: bool
    conclusion: bool


def dominant_eigenvalue_bound(lam, k: int, delta_bar: float, eps: float) -> DominantEigenvalueProbe:
    """Check when lam_1 carries almost all of sigma_k.

    (i)  sigma_k <= eps * lam_1^k
    (ii) |lam_i| <= eps * lam_1 for the trailing entries i > k
    conclusion: lam_1 * sigma_{k-1;1} >= (1 - delta_bar) * sigma_k
    """
    vals = lam.values if isinstance(lam, SymSpectrum) else np.asarray(lam, dtype=float)
    vals = np.asarray(vals, dtype=float)
    n = vals.size
    _check_order(k, n, lo=1)
    if np.any(vals[:-1] < vals[1:]):
        raise ArgumentError("dominant_eigenvalue_bound needs a descending spectrum")
    if not 0 < delta_bar < 1:
        raise ArgumentError("delta_bar must lie in (0, 1)")
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    if not in_cone(vals, k):
        raise PreconditionError("spectrum is not in the open cone Gamma_k")
    sk = float(sigma(vals, k))
    lam1 = vals[0]
    holds_i = sk <= eps * lam1**k
    holds_ii = bool(np.all(np.abs(vals[k:]) <= eps * lam1))
    lhs = lam1 * float(sigma_truncated(vals, k - 1, (0,)))
    return DominantEigenvalueProbe(bool(holds_i), holds_ii, bool(lhs >= (1 - delta_bar) * sk))


def trace_lower_bound_constant(n: int, k: int) -> float:
    """c0 in sum_i sigma_k^{ii} >= c0 sigma_k^{1-1/(k-1)} sigma_1^{1/(k-1)}."""
    if not 2 <= k <= n:
        raise ArgumentError("need 2 <= k <= n")
    return (n - k + 1) * (comb(n, k - 1) / comb(n, k)) * (comb(n, k) / comb(n, 1)) ** (1.0 / (k - 1))


def sigma_bruteforce(lam, k: int) -> float:
    """Subset-enumeration reference; kept for oracles and debugging only."""
    vals = list(np.asarray(lam, dtype=float))
    return float(sum(np.prod([vals[i] for i in c]) for c in combinations(range(len(vals)), k)))


# ------------------------------------------------------------------ eigen


class EigenResult(NamedTuple):
    spectrum: SymSpectrum
    vectors: np.ndarray  # columns are eigenvectors, same order as spectrum


def jacobi_eigh(A, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi on a stack of symmetric matrices.

    Returns ``(w, V)`` with ``w`` descending along the last axis and the
    eigenvectors in the columns of ``V``.  Raises :class:`NumericError` if the
    off-diagonal mass has not dropped below ``tol * ||A||_F`` after
    ``max_sweeps`` sweeps.
    """
    A = np.asarray(A, dtype=float)
    shape = A.shape
    n = shape[-1]
    a = A.reshape(-1, n, n).copy()
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    scale = np.sqrt((a * a).sum(axis=(1, 2)))
    scale = np.where(scale > 0, scale, 1.0)
    iu = np.triu_indices(n, 1)

    def off_norm():
        return np.sqrt(2.0 * (a[:, iu[0], iu[1]] ** 2).sum(axis=1))

    converged = False
    for _ in range(max_sweeps + 1):
        off = off_norm()
        if np.all(off <= tol * scale):
            converged = True
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[:, p, q]
                active = apq != 0.0
                if not active.any():
                    continue
                safe = np.where(active, apq, 1.0)
                with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                    theta = (a[:, q, q] - a[:, p, p]) / (2.0 * safe)
                    t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t = np.where(active & np.isfinite(t), t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = a[:, :, p].copy(), a[:, :, q].copy()
                a[:, :, p] = c[:, None] * ap - s[:, None] * aq
                a[:, :, q] = s[:, None] * ap + c[:, None] * aq
                ap, aq = a[:, p, :].copy(), a[:, q, :].copy()
                a[:, p, :] = c[:, None] * ap - s[:, None] * aq
                a[:, q, :] = s[:, None] * ap + c[:, None] * aq
                a[:, p, q] = np.where(active, 0.0, a[:, p, q])
                a[:, q, p] = a[:, p, q]
                vp, vq = v[:, :, p].copy(), v[:, :, q].copy()
                v[:, :, p] = c[:, None] * vp - s[:, None] * vq
                v[:, :, q] = s[:, None] * vp + c[:, None] * vq
    w = np.diagonal(a, axis1=1, axis2=2).copy()
    if not converged:
        raise NumericError(
            f"Jacobi did not converge in {max_sweeps} sweeps", residual=float(off_norm().max())
        )
    order = np.argsort(-w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    v = np.take_along_axis(v, order[:, None, :], axis=2)
    return w.reshape(shape[:-1]), v.reshape(shape)


def eigvals_sym(A) -> np.ndarray:
    """Descending eigenvalues of a stack of symmetric matrices."""
    return jacobi_eigh(A)[0]


def eigen_sym(A) -> EigenResult:
    A = _check_symmetric(A)
    if A.ndim != 2:
        raise ArgumentError("eigen_sym takes one matrix; use jacobi_eigh for stacks")
    if A.shape[0] > 8:
        raise ArgumentError("eigen_sym supports n <= 8")
    w, V = jacobi_eigh(A)
    norm = max(np.linalg.norm(A, 2), np.finfo(float).tiny)
    res = np.linalg.norm(A @ V - V * w, axis=0).max()
    if res > 1e-11 * norm and res > 1e-300:
        raise NumericError("eigenpair residual above 1e-11 ||A||", residual=float(res))
    return EigenResult(SymSpectrum(w, sorted=True), V)
