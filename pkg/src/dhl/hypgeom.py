"""Graphs in the upper half-space model of hyperbolic space.

A graph x -> (x, u(x)) with u > 0 is viewed with the metric |dX|^2 / x_{n+1}^2.
Its hyperbolic principal curvatures are the eigenvalues of
a = (1/w) (I + u gamma D^2u gamma).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import symmfunc as sf
from .errors import ArgumentError, DomainError
from .graphgeom import Jet2, gamma_batch
from .grid import ScalarField, check_same_grid, _offsets


@dataclass(frozen=True)
class HypJet:
    jet: Jet2

    def __post_init__(self):
        if not self.jet.u > 0:
            raise DomainError(f"hyperbolic graphs need u > 0, got u = {self.jet.u}")


@dataclass(frozen=True)
class HypCurvature:
    a_hyp: np.ndarray
    kappa_tilde: sf.SymSpectrum
    h_tilde: np.ndarray
    g_tilde: np.ndarray
    cone: sf.ConeStatus


def hyp_curvature_matrix_batch(u, du, d2u) -> np.ndarray:
    """Stacked hyperbolic curvature matrices; ``u`` must be positive."""
    u = np.asarray(u, dtype=float)
    w, gam = gamma_batch(du)
    n = gam.shape[-1]
    a = (np.eye(n) + u[..., None, None] * (gam @ d2u @ gam)) / w[..., None, None]
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def hyp_second_fundamental_form(u, du, d2u) -> np.ndarray:
    """h~_ij = (delta_ij + u_i u_j + u u_ij) / (u^2 w), stacked."""
    u = np.asarray(u, dtype=float)
    du = np.asarray(du, dtype=float)
    n = du.shape[-1]
    w = np.sqrt(1.0 + (du * du).sum(axis=-1))
    outer = du[..., :, None] * du[..., None, :]
    num = np.eye(n) + outer + u[..., None, None] * d2u
    return num / (u * u * w)[..., None, None]


def hyp_curvature_matrix(hj: HypJet, k: int, tol: float = sf.CONE_TOL) -> HypCurvature:
    jet = hj.jet
    n = jet.n
    a = hyp_curvature_matrix_batch(jet.u, jet.du, jet.d2u)
    g_tilde = (np.eye(n) + np.outer(jet.du, jet.du)) / jet.u**2
    kappa = sf.eigen_sym(a).spectrum
    return HypCurvature(
        a_hyp=a,
        kappa_tilde=kappa,
        h_tilde=hyp_second_fundamental_form(jet.u, jet.du, jet.d2u),
        g_tilde=g_tilde,
        cone=sf.cone_status(kappa, k, tol),
    )


def euclidean_relation(jet: Jet2) -> np.ndarray:
    """h/u + (v/u^2) g built from the Euclidean data; equals h~."""
    w = np.sqrt(1.0 + jet.du @ jet.du)
    h = jet.d2u / w
    g = np.eye(jet.n) + np.outer(jet.du, jet.du)
    return h / jet.u + g / (w * jet.u**2)


def level_set_domain(usub: ScalarField, eps: float):
    """Superlevel set {usub > eps} of a grid field.

    Returns ``(mask, boundary_index, boundary_value)``: the interior mask,
    flat indices of interior nodes that touch a non-interior node (stencil
    neighbourhood), and the Dirichlet value ``eps`` for each of them.
    """
    if eps <= 0:
        raise ArgumentError("eps must be positive")
    g = usub.grid
    vals = usub.values
    mask = np.isfinite(vals) & (np.nan_to_num(vals, nan=-np.inf) > eps)
    if not mask.any():
        raise DomainError(f"no node has usub > {eps}")
    flat = mask.ravel()
    strides = np.array([int(np.prod(g.dims[i + 1 :])) for i in range(g.ndim)])
    idx = np.flatnonzero(flat)
    multi = np.stack(np.unravel_index(idx, g.dims), axis=-1)
    touches = np.zeros(idx.size, dtype=bool)
    for o in _offsets(g.ndim):
        nm = multi + np.array(o)
        valid = np.all((nm >= 0) & (nm < np.array(g.dims)), axis=1)
        nb = np.where(valid, idx + int(np.dot(o, strides)), 0)
        touches |= ~valid | ~flat[nb]
    bidx = idx[touches]
    return mask, bidx, np.full(bidx.size, float(eps))


def hyp_pogorelov_weight(ubar: ScalarField, u: ScalarField, c: float) -> ScalarField:
    """Nodewise max(ubar^2 - u^2 - c, 0)."""
    g = check_same_grid(ubar, u)
    return ScalarField(g, np.maximum(ubar.values**2 - u.values**2 - c, 0.0))
