"""Pointwise geometry of Euclidean graphs x -> (x, u(x)).

Everything here takes the second-order jet (u, Du, D^2u) at a point.  The
``*_batch`` helpers do the same on stacks of jets for field-level work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import symmfunc as sf
from .errors import ArgumentError, PreconditionError


@dataclass(frozen=True)
class Jet2:
    u: float
    du: np.ndarray
    d2u: np.ndarray

    def __post_init__(self):
        du = np.atleast_1d(np.asarray(self.du, dtype=float))
        d2u = np.asarray(self.d2u, dtype=float)
        if du.ndim != 1 or d2u.shape != (du.size, du.size):
            raise ArgumentError(f"jet shapes disagree: du {du.shape}, d2u {d2u.shape}")
        if not (np.isfinite(self.u) and np.all(np.isfinite(du)) and np.all(np.isfinite(d2u))):
            raise ArgumentError("jet has non-finite entries")
        if np.abs(d2u - d2u.T).max() > sf.SYM_TOL * max(1.0, np.abs(d2u).max()):
            raise ArgumentError("d2u is not symmetric")
        object.__setattr__(self, "u", float(self.u))
        object.__setattr__(self, "du", du)
        object.__setattr__(self, "d2u", 0.5 * (d2u + d2u.T))

    @property
    def n(self) -> int:
        return self.du.size


@dataclass(frozen=True)
class GraphFrame:
    w: float
    gamma_up: np.ndarray
    gamma_down: np.ndarray
    metric: np.ndarray
    normal: np.ndarray
    v: float


@dataclass(frozen=True)
class CurvatureData:
    a: np.ndarray
    kappa: sf.SymSpectrum
    h: np.ndarray
    cone: sf.ConeStatus


def gamma_batch(du: np.ndarray):
    """w and gamma^{ij} = delta_ij - u_i u_j / (w (1 + w)) for stacks of gradients."""
    du = np.asarray(du, dtype=float)
    n = du.shape[-1]
    w = np.sqrt(1.0 + (du * du).sum(axis=-1))
    outer = du[..., :, None] * du[..., None, :]
    gam = np.eye(n) - outer / (w * (1.0 + w))[..., None, None]
    return w, gam


def curvature_matrix_batch(du: np.ndarray, d2u: np.ndarray) -> np.ndarray:
    """a = (1/w) gamma D^2u gamma, whose eigenvalues are the principal curvatures."""
    w, gam = gamma_batch(du)
    a = gam @ d2u @ gam / w[..., None, None]
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def graph_frame(jet: Jet2) -> GraphFrame:
    du = jet.du
    n = du.size
    w, gam = gamma_batch(du)
    w = float(w)
    outer = np.outer(du, du)
    gamma_down = np.eye(n) + outer / (1.0 + w)
    normal = np.append(-du, 1.0) / w
    return GraphFrame(
        w=w,
        gamma_up=gam,
        gamma_down=gamma_down,
        metric=np.eye(n) + outer,
        normal=normal,
        v=1.0 / w,
    )


def curvature_matrix(jet: Jet2, k: int, tol: float = sf.CONE_TOL) -> CurvatureData:
    a = curvature_matrix_batch(jet.du, jet.d2u)
    w = float(np.sqrt(1.0 + jet.du @ jet.du))
    kappa = sf.eigen_sym(a).spectrum
    return CurvatureData(a=a, kappa=kappa, h=jet.d2u / w, cone=sf.cone_status(kappa, k, tol))


def admissible(jet: Jet2, k: int, tol: float = sf.CONE_TOL) -> sf.ConeStatus:
    """Cone status of the principal curvatures (graph k-convexity)."""
    return curvature_matrix(jet, k, tol).cone


def projected_hessian(jet: Jet2, d2v, k: int, tol: float = sf.CONE_TOL):
    """Project a Hessian onto the tangent frame of the graph.

    Returns ``(tvt, margins)`` where ``tvt = gamma D^2v gamma`` and
    ``margins[j-1] = sigma_j(tvt) - sigma_j(D^2v) / w^2`` for j = 1..k.  When
    D^2v is (k+1)-convex (convex if k = n) every margin is non-negative.
    """
    d2v = sf._check_symmetric(d2v)
    n = jet.n
    if d2v.shape != (n, n):
        raise ArgumentError("d2v dimension does not match the jet")
    if not 1 <= k <= n:
        raise ArgumentError(f"order {k} outside [1, {n}]")
    kk = min(k + 1, n)
    sig_v = sf.matrix_sigmas(d2v, kk)[0]
    scale = max(1.0, float(np.abs(d2v).max())) ** np.arange(kk + 1)
    for m in range(1, kk + 1):
        if sig_v[m] < -tol * scale[m]:
            raise PreconditionError(
                f"sigma_{m}(D^2 v) = {sig_v[m]:.3e} < 0: D^2 v is not in the closed cone Gamma_{kk}"
            )
    w, gam = gamma_batch(jet.du)
    tvt = gam @ d2v @ gam
    tvt = 0.5 * (tvt + tvt.T)
    sig_t = sf.matrix_sigmas(tvt, k)[0]
    margins = sig_t[1:] - sig_v[1 : k + 1] / float(w) ** 2
    return tvt, margins
