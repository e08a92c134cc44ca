"""Monitors for the weighted second-derivative bounds and related inequalities.

All quantities are sups over interior nodes of discrete fields, so they only
approximate the continuous statements; ``sweep_verdict`` turns a sequence of
them into a bounded / not-bounded call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import symmfunc as sf
from .errors import ArgumentError, PreconditionError
from .grid import ScalarField, check_same_grid, gradient_central, hessian_central
from .hypgeom import hyp_pogorelov_weight, hyp_second_fundamental_form

ORDER_TOL = 1e-8
PSI_TOL = 1e-12
HYPERBOLIC_ALPHA = 4.0


def hessian_alpha(k: int) -> float:
    """Default exponent for the Hessian kind: k - 1, except 2 when k = 2."""
    if k < 1:
        raise ArgumentError("k must be positive")
    return 2.0 if k <= 2 else float(k - 1)


def curvature_alpha(k: int) -> float:
    """Default exponent for the curvature kind: max(3, k - 1)."""
    if k < 1:
        raise ArgumentError("k must be positive")
    return float(max(3, k - 1))


@dataclass(frozen=True)
class PogorelovRecord:
    eps: float | None
    alpha: float
    quantity: float
    argmax: int  # flat node index of the maximizer (-1 if every term is 0)


@dataclass(frozen=True)
class SweepReport:
    records: tuple
    bounded: bool
    ratio: float


def _weight(ubar: ScalarField, u: ScalarField) -> np.ndarray:
    check_same_grid(ubar, u)
    gap = ubar.interior_values() - u.interior_values()
    worst = float(gap.min())
    if worst < -ORDER_TOL:
        raise PreconditionError(f"ubar < u by {-worst:.3e} at an interior node")
    return np.maximum(gap, 0.0)


def _record(grid, weight, size, alpha, eps) -> PogorelovRecord:
    if alpha < 0:
        raise ArgumentError("alpha must be non-negative")
    terms = weight**alpha * size
    i = int(np.argmax(terms))
    q = float(terms[i])
    return PogorelovRecord(eps, float(alpha), q, int(grid.interior_index[i]) if q > 0 else -1)


def pogorelov_hessian(u: ScalarField, ubar: ScalarField, k: int, alpha: float | None = None, eps=None):
    """sup (ubar - u)^alpha * max(lambda_max(D^2 u), 0)."""
    weight = _weight(ubar, u)
    lam_max = sf.eigvals_sym(hessian_central(u))[:, 0]
    a = hessian_alpha(k) if alpha is None else alpha
    return _record(u.grid, weight, np.maximum(lam_max, 0.0), a, eps)


def pogorelov_curvature(u: ScalarField, ubar: ScalarField, k: int, alpha: float | None = None, eps=None):
    """sup (ubar - u)^alpha * |D^2u / w|, Frobenius norm."""
    weight = _weight(ubar, u)
    du = gradient_central(u)
    w = np.sqrt(1.0 + (du * du).sum(axis=1))
    size = np.linalg.norm(hessian_central(u), axis=(1, 2)) / w
    a = curvature_alpha(k) if alpha is None else alpha
    return _record(u.grid, weight, size, a, eps)


def pogorelov_hyperbolic(
    u: ScalarField, ubar: ScalarField, c: float, alpha: float = HYPERBOLIC_ALPHA, eps=None
):
    """sup (ubar^2 - u^2 - c)_+^alpha * |h~| with h~ the hyperbolic second fundamental form."""
    g = check_same_grid(ubar, u)
    weight = hyp_pogorelov_weight(ubar, u, c).interior_values()
    ui = u.interior_values()
    if np.any(ui <= 0):
        raise PreconditionError("hyperbolic graphs need u > 0 at interior nodes")
    ht = hyp_second_fundamental_form(ui, gradient_central(u), hessian_central(u))
    return _record(g, weight, np.linalg.norm(ht, axis=(1, 2)), alpha, eps)


class BlockiResult(NamedTuple):
    violation: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.violation <= self.slack


def blocki_check(psi: ScalarField, dist: ScalarField) -> BlockiResult:
    """Gradient bound for a non-negative function in terms of its square root.

    violation = max over interior nodes of
    |D psi| - max(|D psi| / dist, 1 + sup lambda_max(D^2 psi)) * sqrt(psi),
    slack = 10 h (1 + sup lambda_max) for the discrete derivatives.
    """
    g = check_same_grid(psi, dist)
    vals = psi.active_values()
    if np.any(vals < -PSI_TOL):
        raise PreconditionError(f"psi is negative ({vals.min():.3e})")
    grad = np.linalg.norm(gradient_central(psi), axis=1)
    top = float(sf.eigvals_sym(hessian_central(psi))[:, 0].max())
    d = np.maximum(dist.interior_values(), g.spacing)
    root = np.sqrt(np.maximum(psi.interior_values(), 0.0))
    bound = np.maximum(grad / d, 1.0 + top) * root
    return BlockiResult(float((grad - bound).max()), 10.0 * g.spacing * (1.0 + max(top, 0.0)))


class DistanceFit(NamedTuple):
    B: float
    gradient_proxy: float


def distance_comparison(ubar: ScalarField, u: ScalarField, dist: ScalarField) -> DistanceFit:
    """Fitted B in ubar - u <= B d, alongside sup |D(ubar - u)|."""
    g = check_same_grid(ubar, u, dist)
    gap = _weight(ubar, u)
    B = float((gap / np.maximum(dist.interior_values(), g.spacing)).max())
    diff = ScalarField(g, ubar.values - u.values)
    proxy = float(np.linalg.norm(gradient_central(diff), axis=1).max())
    return DistanceFit(B, proxy)


def sweep_verdict(records: Sequence[PogorelovRecord], factor: float = 2.0) -> SweepReport:
    """Bounded iff max q <= factor * q(first) and the last three q agree within factor."""
    if len(records) < 3:
        raise ArgumentError("a sweep verdict needs at least three records")
    if factor < 1:
        raise ArgumentError("factor must be at least 1")
    recs = list(records)
    if all(r.eps is not None for r in recs):
        recs.sort(key=lambda r: -r.eps)
    q = np.array([r.quantity for r in recs])
    q0, qmax = q[0], q.max()
    ratio = qmax / q0 if q0 > 0 else (1.0 if qmax == 0 else np.inf)
    tail = q[-3:]
    plateau = tail.max() <= factor * tail.min() or tail.max() == 0
    bounded = bool(qmax <= factor * q0 and plateau)
    return SweepReport(tuple(recs), bounded, float(ratio))


def verdict_text(report: SweepReport, label: str = "pogorelov") -> str:
    lines = [f"[{label}]"]
    for r in report.records:
        lines.append(f"  eps={r.eps!r:>10}  alpha={r.alpha:g}  quantity={r.quantity:.6g}")
    lines.append(f"  ratio={report.ratio:.6g}")
    lines.append(f"  verdict: {'bounded' if report.bounded else 'not bounded'}")
    return "\n".join(lines)


def write_report_csv(report: SweepReport, path) -> None:
    with open(path, "w") as fh:
        fh.write("eps,alpha,quantity,argmax\n")
        for r in report.records:
            eps = "" if r.eps is None else f"{r.eps:.17g}"
            fh.write(f"{eps},{r.alpha:.17g},{r.quantity:.17g},{r.argmax}\n")
        fh.write(f"# bounded={str(report.bounded).lower()} ratio={report.ratio:.17g}\n")
