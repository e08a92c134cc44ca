"""Regularization, damped Newton and continuation for the three equation kinds.

The discrete unknowns are the interior node values; boundary nodes follow
from the grid closure.  At every interior node the kind's curvature matrix A
is formed from central differences and the equation reads
sigma_k(lambda(A)) = rhs(x, u).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from math import comb
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import symmfunc as sf
from .errors import ArgumentError, DomainError, NonConvergenceError, NumericError, PreconditionError
from .graphgeom import gamma_batch
from .grid import Disk, Domain, Ellipsoid, Grid, Rectangle, ScalarField, Sublevel, build_grid, check_same_grid

log = logging.getLogger(__name__)

KINDS = ("hessian", "curvature", "hyperbolic")
DEFAULT_SCHEDULE = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 3e-4, 1e-4)
LINEAR_RTOL = 1e-10
KRYLOV_ABOVE = 3000  # unknowns
ILU_DROP = 1e-2
ILU_FILL = 5
A_MAX = 1e6
BARRIER_LADDER_TOP = 0.1

FieldFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]
PointFunction = Callable[[np.ndarray], np.ndarray]


def _const_point_fn(c: float) -> PointFunction:
    return lambda x: np.full(len(x), float(c))


@dataclass(frozen=True)
class ProblemSpec:
    """sigma_k(kind matrix) = f(x, u) in dom, u = phi on the boundary.

    ``f(x, u)`` takes points of shape (N, n) and values (N,).  ``phi`` and
    ``usub`` take points only.  ``usub`` is required for the hyperbolic kind,
    whose domains are the superlevel sets {usub > eps}.
    """

    n: int
    k: int
    kind: str
    f: FieldFunction
    phi: PointFunction | float
    dom: Domain
    usub: PointFunction | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown equation kind {self.kind!r}")
        if self.n not in (2, 3):
            raise ArgumentError("dimension must be 2 or 3")
        if not 1 <= self.k <= self.n:
            raise ArgumentError(f"need 1 <= k <= n, got k={self.k}, n={self.n}")
        if self.dom.dim != self.n:
            raise ArgumentError("domain dimension does not match n")
        if self.kind == "hyperbolic" and self.usub is None:
            raise ArgumentError("the hyperbolic kind needs a subsolution usub")
        if not callable(self.phi):
            object.__setattr__(self, "phi", _const_point_fn(self.phi))
        x = _sample_points(self.dom, 256)
        fx = np.asarray(self.f(x, np.zeros(len(x))), dtype=float)
        if np.any(fx < -1e-14) or not np.all(np.isfinite(fx)):
            raise ArgumentError("f must be finite and non-negative on the domain")


@dataclass(frozen=True)
class SolverConfig:
    eps_schedule: tuple = DEFAULT_SCHEDULE
    newton_tol_abs: float = 1e-9
    newton_tol_rel: float = 1e-9
    max_newton_iters: int = 60
    damping_min: float = 2.0**-12
    lm_shift: float = 1e-8
    theta0: float | None = None
    jacobian: str = "lagged"  # "lagged" freezes gradient terms, "full" differentiates them

    def __post_init__(self):
        sched = tuple(float(e) for e in self.eps_schedule)
        if not sched or any(e <= 0 for e in sched):
            raise ArgumentError("eps schedule must be non-empty and positive")
        if any(a <= b for a, b in zip(sched, sched[1:])):
            raise ArgumentError("eps schedule must be strictly decreasing")
        if self.newton_tol_abs <= 0 or self.newton_tol_rel <= 0:
            raise ArgumentError("Newton tolerances must be positive")
        if self.max_newton_iters < 1 or not 0 < self.damping_min < 1:
            raise ArgumentError("bad iteration cap or damping floor")
        if self.theta0 is not None and self.theta0 <= 0:
            raise ArgumentError("theta0 must be positive")
        if self.jacobian not in ("lagged", "full"):
            raise ArgumentError("jacobian must be 'lagged' or 'full'")
        object.__setattr__(self, "eps_schedule", sched)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    residual_inf: float
    margin: float
    step: float


@dataclass(frozen=True)
class SolveResult:
    u: ScalarField
    residual_inf: float
    admissibility_margin: float
    newton_iters: int
    converged: bool
    eps: float | None = None
    history: tuple = field(default=(), repr=False)
    message: str = ""


# ------------------------------------------------------------ regularization


def cutoff_eta(t, theta0: float):
    """C^2 cut-off: 1 on [0, theta0/4], 0 on [theta0/2, inf), quintic blend between.

    |eta'| <= 7.5/theta0 and |eta''| <= 47/theta0^2.
    """
    if theta0 <= 0:
        raise ArgumentError("theta0 must be positive")
    t = np.asarray(t, dtype=float)
    s = np.clip((t - 0.25 * theta0) / (0.25 * theta0), 0.0, 1.0)
    out = 1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
    return out[()] if out.ndim == 0 else out


def f_epsilon(f_tilde, eps: float, k: int, theta0: float):
    """[f~ + eps * eta(f~)]^(k-1) with f~ = f^(1/(k-1))."""
    if k < 2:
        raise ArgumentError("the regularization needs k >= 2")
    ft = np.asarray(f_tilde, dtype=float)
    if np.any(ft < 0):
        raise ArgumentError("f~ must be non-negative")
    out = (ft + eps * cutoff_eta(ft, theta0)) ** (k - 1)
    return out[()] if np.ndim(out) == 0 else out


def j_regularized_rhs(f, j: int):
    if j < 1:
        raise ArgumentError("j must be a positive integer")
    return f + 1.0 / j


@dataclass(frozen=True)
class Rhs:
    """Right-hand side actually imposed: f, f_eps, f + 1/j or a constant."""

    mode: str = "plain"
    eps: float = 0.0
    theta0: float = 1.0
    j: int = 1
    value: float = 0.0

    def __call__(self, spec: ProblemSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if self.mode == "const":
            return np.full(len(x), float(self.value))
        f = np.asarray(spec.f(x, u), dtype=float)
        if self.mode == "plain":
            return f
        if self.mode == "eps":
            ft = np.maximum(f, 0.0) ** (1.0 / (spec.k - 1))
            return f_epsilon(ft, self.eps, spec.k, self.theta0)
        if self.mode == "j":
            return j_regularized_rhs(f, self.j)
        raise ArgumentError(f"unknown rhs mode {self.mode!r}")


# ----------------------------------------------------------------- operator


@dataclass
class _Operator:
    A: np.ndarray  # kind matrix per node
    sig: np.ndarray  # sigma_0..sigma_k per node
    S: np.ndarray  # gradient of sigma_k w.r.t. A
    margin: np.ndarray


def kind_matrix(kind: str, u, du, d2u) -> np.ndarray:
    """Stacked matrices whose eigenvalues enter sigma_k for the given kind."""
    if kind == "hessian":
        return np.asarray(d2u, dtype=float)
    w, gam = gamma_batch(du)
    core = gam @ d2u @ gam
    if kind == "curvature":
        a = core / w[:, None, None]
    elif kind == "hyperbolic":
        n = core.shape[-1]
        a = (np.eye(n) + np.asarray(u)[:, None, None] * core) / w[:, None, None]
    else:
        raise ArgumentError(f"unknown kind {kind!r}")
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _operator(kind, k, u, du, d2u) -> _Operator:
    A = kind_matrix(kind, u, du, d2u)
    sig, S = sf.matrix_sigmas(A, k)
    margin = sig[:, 1:].min(axis=1)
    if kind == "hyperbolic":
        margin = np.where(u > 0, margin, -np.inf)
    return _Operator(A, sig, S, margin)


@dataclass(frozen=True)
class ResidualField:
    field: ScalarField  # sigma_k - rhs at interior nodes, NaN elsewhere
    margin: np.ndarray  # cone margin per interior node
    inadmissible: int  # number of interior nodes outside the open cone

    @property
    def values(self) -> np.ndarray:
        return self.field.interior_values()

    @property
    def sup(self) -> float:
        return float(np.abs(self.values).max())


def residual(spec: ProblemSpec, u: ScalarField, rhs: Rhs = Rhs()) -> ResidualField:
    """Nodewise sigma_k(kind matrix) - rhs using the field values as given."""
    from .grid import gradient_central, hessian_central

    g = u.grid
    ui = u.interior_values()
    op = _operator(spec.kind, spec.k, ui, gradient_central(u), hessian_central(u))
    r = op.sig[:, spec.k] - rhs(spec, g.interior_points, ui)
    vals = np.full(g.n_nodes, np.nan)
    vals[g.interior_index] = r
    return ResidualField(ScalarField(g, vals), op.margin, int(np.sum(~(op.margin > 0))))


# ------------------------------------------------------------------- Newton


class _System:
    """Nonlinear nodal system on a grid for one right-hand side."""

    def __init__(self, spec: ProblemSpec, grid: Grid, rhs: Rhs, jacobian: str = "lagged"):
        self.spec, self.grid, self.rhs = spec, grid, rhs
        self.jacobian_mode = jacobian
        self.x = grid.interior_points
        self.stencil = grid.stencil
        self.D1E, self.D1c, self.D2E, self.D2c = grid.stencil.closed
        self.depends_on_u = spec.kind == "hyperbolic" or self._rhs_depends_on_u()

    def _rhs_depends_on_u(self) -> bool:
        if self.rhs.mode == "const":
            return False
        u0 = np.zeros(len(self.x))
        return not np.array_equal(self.rhs(self.spec, self.x, u0), self.rhs(self.spec, self.x, u0 + 1.0))

    def evaluate(self, U):
        du = self.stencil.gradient_from_unknowns(U)
        d2u = self.stencil.hessian_from_unknowns(U)
        op = _operator(self.spec.kind, self.spec.k, U, du, d2u)
        b = self.rhs(self.spec, self.x, U)
        F = op.sig[:, self.spec.k] - b
        if not np.all(np.isfinite(F)):
            F = np.where(np.isfinite(F), F, np.inf)
        return _Iterate(U, du, d2u, op, b, F)

    def jacobian(self, it: "_Iterate") -> sp.csr_matrix:
        spec, n = self.spec, self.grid.ndim
        S = it.op.S
        if spec.kind == "hessian":
            M = S
            zeroth = np.zeros(len(it.U))
        else:
            w, gam = gamma_batch(it.du)
            M = gam @ S @ gam / w[:, None, None]
            if spec.kind == "hyperbolic":
                core = gam @ it.d2u @ gam
                zeroth = np.einsum("nij,nij->n", S, core) / w
                M = M * it.U[:, None, None]
            else:
                zeroth = np.zeros(len(it.U))
        J = None
        for i in range(n):
            for j in range(i, n):
                coef = M[:, i, i] if i == j else M[:, i, j] + M[:, j, i]
                term = sp.diags(coef) @ self.D2E[i][j]
                J = term if J is None else J + term
        if self.jacobian_mode == "full" and spec.kind != "hessian":
            for l, coef in enumerate(self._gradient_sensitivity(it)):
                J = J + sp.diags(coef) @ self.D1E[l]
        diag = zeroth.copy()
        if self.depends_on_u and self.rhs.mode != "const":
            step = 1e-7 * (1.0 + np.abs(it.U))
            db = (self.rhs(spec, self.x, it.U + step) - self.rhs(spec, self.x, it.U - step)) / (2 * step)
            diag = diag - db
        if np.any(diag != 0):
            J = J + sp.diags(diag)
        return J.tocsr()

    def _gradient_sensitivity(self, it):
        out = []
        k = self.spec.k
        for l in range(self.grid.ndim):
            step = 1e-7 * (1.0 + np.abs(it.du[:, l]))
            dp, dm = it.du.copy(), it.du.copy()
            dp[:, l] += step
            dm[:, l] -= step
            sp_ = sf.matrix_sigmas(kind_matrix(self.spec.kind, it.U, dp, it.d2u), k)[0][:, k]
            sm_ = sf.matrix_sigmas(kind_matrix(self.spec.kind, it.U, dm, it.d2u), k)[0][:, k]
            out.append((sp_ - sm_) / (2 * step))
        return out


@dataclass
class _Iterate:
    U: np.ndarray
    du: np.ndarray
    d2u: np.ndarray
    op: _Operator
    b: np.ndarray
    F: np.ndarray

    @property
    def res_inf(self) -> float:
        return float(np.abs(self.F).max())

    @property
    def margin(self) -> float:
        return float(self.op.margin.min())


def _linear_solve(J: sp.csr_matrix, rhs: np.ndarray, lm_shift: float, cache: dict | None = None) -> np.ndarray:
    """Solve J x = rhs to relative residual LINEAR_RTOL.

    Large systems try ILU-preconditioned GMRES first (sparse LU fill-in is
    prohibitive for 3-D stencils); the ILU factors are kept in ``cache`` and
    reused for later Jacobians until GMRES misses the tolerance with them.
    Anything that still fails goes to sparse LU, then LU with a Levenberg shift.
    """
    cache = {} if cache is None else cache
    norm_b = np.linalg.norm(rhs)
    if norm_b == 0:
        return np.zeros_like(rhs)

    def accept(mat, x):
        if x is None or not np.all(np.isfinite(x)):
            return None
        if np.linalg.norm(mat @ x - rhs) > LINEAR_RTOL * norm_b:
            return None
        return x

    def krylov(mat, fresh):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            try:
                if fresh or "ilu" not in cache:
                    cache["ilu"] = spla.spilu(mat.tocsc(), drop_tol=ILU_DROP, fill_factor=ILU_FILL)
                pre = spla.LinearOperator(mat.shape, cache["ilu"].solve)
                x, _ = spla.gmres(mat, rhs, M=pre, rtol=1e-2 * LINEAR_RTOL, atol=0.0, restart=100, maxiter=20)
            except (RuntimeError, Warning):
                cache.pop("ilu", None)
                return None
        return accept(mat, x)

    def direct(mat):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            try:
                x = spla.splu(mat.tocsc()).solve(rhs)
            except (RuntimeError, Warning):
                return None
        return accept(mat, x)

    if J.shape[0] > KRYLOV_ABOVE:
        x = krylov(J, fresh=False)
        if x is None and "ilu" in cache:
            x = krylov(J, fresh=True)
        if x is not None:
            return x
    x = direct(J)
    if x is not None:
        return x
    N = J.shape[0]
    shift = lm_shift * J.diagonal().sum() / N
    x = direct(J + sp.identity(N) * shift)
    if x is None:
        raise NumericError("Jacobian solve failed even with the Levenberg shift")
    return x


def newton_solve(
    spec: ProblemSpec,
    config: SolverConfig,
    rhs: Rhs,
    warm_start: ScalarField,
    eps: float | None = None,
) -> SolveResult:
    """Admissibility-safeguarded damped Newton from ``warm_start``.

    Each step halves the step length (down to ``damping_min``) until the new
    iterate is strictly admissible at every interior node and the residual
    sup-norm has not increased.
    """
    grid = warm_start.grid
    system = _System(spec, grid, rhs, config.jacobian)
    it = system.evaluate(warm_start.interior_values().astype(float).copy())
    if not it.margin > 0:
        raise PreconditionError(
            f"warm start is not strictly admissible (min cone margin {it.margin:.3e})"
        )
    history = [IterationRecord(0, it.res_inf, it.margin, 0.0)]
    precond: dict = {}
    for n_iter in range(config.max_newton_iters + 1):
        target = config.newton_tol_abs + config.newton_tol_rel * float(np.abs(it.b).max())
        if it.res_inf <= target:
            return SolveResult(
                u=ScalarField.from_unknowns(grid, it.U),
                residual_inf=it.res_inf,
                admissibility_margin=it.margin,
                newton_iters=n_iter,
                converged=True,
                eps=eps,
                history=tuple(history),
            )
        if n_iter == config.max_newton_iters:
            break
        delta = _linear_solve(system.jacobian(it), -it.F, config.lm_shift, precond)
        t = 1.0
        while True:
            trial = system.evaluate(it.U + t * delta)
            if trial.margin > 0 and trial.res_inf <= it.res_inf * (1.0 + 1e-12):
                break
            t *= 0.5
            if t < config.damping_min:
                raise NonConvergenceError(
                    f"damping floor reached at iteration {n_iter + 1} (residual {it.res_inf:.3e})",
                    last_iterate=ScalarField.from_unknowns(grid, it.U),
                    residual=it.res_inf,
                    iterations=n_iter,
                )
        it = trial
        history.append(IterationRecord(n_iter + 1, it.res_inf, it.margin, t))
        log.debug("newton %d: residual %.3e margin %.3e step %g", n_iter + 1, it.res_inf, it.margin, t)
    raise NonConvergenceError(
        f"no convergence in {config.max_newton_iters} iterations (residual {it.res_inf:.3e})",
        last_iterate=ScalarField.from_unknowns(grid, it.U),
        residual=it.res_inf,
        iterations=config.max_newton_iters,
    )


# ------------------------------------------------------- sub/super solutions


def _sample_points(dom: Domain, m: int) -> np.ndarray:
    rng = np.random.default_rng(12345)
    lo, hi = dom.bbox
    pts = lo + (hi - lo) * rng.random((8 * m, len(lo)))
    inside = pts[dom.inside(pts)]
    if inside.size == 0:
        return 0.5 * (lo + hi)[None, :]
    return inside[:m]


def affine_fit(phi: PointFunction, dom: Domain, tol: float = 1e-10):
    """Return ``(c, p)`` with phi(x) = c + p.x if phi is affine on dom, else None."""
    x = _sample_points(dom, 64)
    y = np.asarray(phi(x), dtype=float)
    X = np.hstack([np.ones((len(x), 1)), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    scale = max(1.0, float(np.abs(y).max()))
    if np.abs(X @ coef - y).max() > tol * scale:
        return None
    return float(coef[0]), coef[1:]


def circumradius(dom: Domain, x0: np.ndarray) -> float:
    """An upper bound for sup |x - x0| over the closed domain."""
    if isinstance(dom, Disk):
        return float(dom.radius + np.linalg.norm(np.asarray(dom.center, float) - x0))
    if isinstance(dom, Ellipsoid):
        return float(np.max(dom.semi_axes) + np.linalg.norm(np.asarray(dom.center, float) - x0))
    lo, hi = dom.bbox
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(len(lo), -1).T
    return float(np.linalg.norm(corners - x0, axis=1).max())


@dataclass(frozen=True)
class QuadraticSubsolution:
    A: float
    center: np.ndarray
    R0: float
    c: float
    p: np.ndarray

    def __call__(self, x):
        r2 = ((x - self.center) ** 2).sum(axis=-1)
        return self.c + x @ self.p + 0.5 * self.A * (r2 - self.R0**2)

    def jets(self, x):
        du = self.p + self.A * (x - self.center)
        d2u = np.broadcast_to(self.A * np.eye(x.shape[1]), (len(x), x.shape[1], x.shape[1]))
        return self(x), du, d2u


def subsolution_quadratic(
    grid: Grid,
    phi_affine: tuple,
    k: int,
    f_bound: float,
    kind: str = "hessian",
    f: FieldFunction | None = None,
):
    """Paraboloid phi + A (|x - x0|^2 - R0^2) / 2 lying below phi on the domain.

    Hessian kind: A is the smallest value with C(n,k) A^k >= sup f + 1.
    Curvature kind: A is scanned upward from that value until sigma_k of the
    principal curvatures dominates ``f`` at every active node.
    Returns ``(field, params)``.
    """
    dom = grid.domain
    n = grid.ndim
    c, p = phi_affine
    x0 = 0.5 * (dom.bbox[0] + dom.bbox[1])
    R0 = circumradius(dom, x0)
    A = ((max(f_bound, 0.0) + 1.0) / comb(n, k)) ** (1.0 / k)
    if kind == "curvature":
        x = grid.coords(np.flatnonzero(grid.active_mask.ravel()))
        for scale in 2.0 ** (np.arange(-24, 80) / 4.0):
            trial = QuadraticSubsolution(A * scale, x0, R0, c, np.asarray(p, float))
            u, du, d2u = trial.jets(x)
            val = sf.matrix_sigmas(kind_matrix("curvature", u, du, d2u), k)[0][:, k]
            need = f(x, u) if f is not None else f_bound
            if trial.A > A_MAX:
                A = np.inf
                break
            if np.all(val >= need):
                A = trial.A
                break
        else:
            A = np.inf
        if not A <= A_MAX:
            raise PreconditionError("no paraboloid subsolution for the curvature kind with A <= 1e6")
    elif kind != "hessian":
        raise ArgumentError("quadratic subsolutions exist for the hessian and curvature kinds")
    if A > A_MAX:
        raise PreconditionError(f"subsolution needs A = {A:.3g} > 1e6")
    params = QuadraticSubsolution(float(A), x0, R0, c, np.asarray(p, float))
    return ScalarField.from_function(grid, params), params


def _admissible_clamp(spec, grid, U, center, R0):
    """Add mu (|x - x0|^2 - R0^2)/2 with the smallest mu in {0, 2^-6, 2^-5, ...}
    that makes every interior node strictly admissible."""
    system = _System(spec, grid, Rhs("const", value=0.0))
    bump = 0.5 * (((grid.interior_points - center) ** 2).sum(axis=1) - R0**2)
    for mu in [0.0] + [2.0**e for e in range(-6, 21)]:
        if system.evaluate(U + mu * bump).margin > 0:
            return U + mu * bump
    raise PreconditionError("could not make the initial guess admissible")


def initial_guess(spec: ProblemSpec, grid: Grid, f_bound: float | None = None) -> ScalarField:
    """Strictly admissible starting field for Newton."""
    if spec.kind == "hyperbolic":
        return _flattened_start(spec, grid)
    x = grid.interior_points
    if f_bound is None:
        f_bound = float(np.max(spec.f(x, np.zeros(len(x)))))
    x0 = 0.5 * (grid.domain.bbox[0] + grid.domain.bbox[1])
    R0 = circumradius(grid.domain, x0)
    aff = affine_fit(spec.phi, grid.domain)
    if aff is not None:
        try:
            field_, _ = subsolution_quadratic(grid, aff, spec.k, f_bound, spec.kind, spec.f)
        except PreconditionError:
            field_, _ = subsolution_quadratic(grid, aff, spec.k, f_bound, "hessian")
        U = field_.interior_values()
    else:
        U = _poisson_guess(spec, grid, f_bound)
    U = _admissible_clamp(spec, grid, U, x0, R0)
    return ScalarField.from_unknowns(grid, U)


def _flattened_start(spec, grid):
    """usub pulled toward the boundary level, base + s (usub - base), with the
    largest s in {1, 1/2, 1/4, ...} that is strictly admissible; horizontal
    graphs (s = 0) have all hyperbolic curvatures equal to one."""
    U = spec.usub(grid.interior_points)
    base = float(grid.bnd_value.min()) if grid.bnd_value.size else 0.0
    system = _System(spec, grid, Rhs("const"))
    for e in range(0, 13):
        trial = base + 2.0**-e * (U - base)
        if np.all(trial > 0) and system.evaluate(trial).margin > 0:
            return ScalarField.from_unknowns(grid, trial)
    raise PreconditionError("could not flatten usub into an admissible start")


def _poisson_guess(spec, grid, f_bound):
    """Solve the discrete Laplace problem with the matching constant source."""
    n, k = spec.n, spec.k
    source = n * max(f_bound, 0.0) ** (1.0 / k) * comb(n, k) ** (-1.0 / k)
    _, _, D2E, D2c = grid.stencil.closed
    L = sum(D2E[i][i] for i in range(n)).tocsc()
    b = np.full(grid.n_interior, source) - sum(D2c[i][i] for i in range(n))
    return spla.spsolve(L, b)


def default_theta0(spec: ProblemSpec, grid: Grid) -> float:
    """0.5 * min of (operator value of the start field)^(1/(k-1)), floored at 1e-3."""
    if spec.k < 2:
        raise ArgumentError("theta0 is defined for k >= 2")
    guess = initial_guess(spec, grid)
    system = _System(spec, grid, Rhs("const"))
    it = system.evaluate(guess.interior_values())
    val = np.maximum(it.op.sig[:, spec.k], 0.0) ** (1.0 / (spec.k - 1))
    return max(1e-3, 0.5 * float(val.min()))


# -------------------------------------------------------------- pipelines


def level_grid(spec: ProblemSpec, eps: float, resolution: int) -> Grid:
    """Grid of {usub > eps} inside the problem domain with boundary value eps."""
    dom = spec.dom
    lo, hi = dom.bbox
    h = float(np.max(hi - lo)) / (resolution - 1)
    usub = spec.usub
    sub = Sublevel(lambda x: np.maximum(eps - usub(x), dom.levelset(x)), tuple(lo), tuple(hi), "level")
    return build_grid(sub, resolution, eps, spacing=h)


def continuation_solve(
    spec: ProblemSpec,
    config: SolverConfig,
    grid: Grid | None = None,
    resolution: int | None = None,
) -> list[SolveResult]:
    """Solve along the eps schedule, warm-starting each step from the last.

    Hessian/curvature kinds regularize the right-hand side with f_eps on a
    fixed grid.  The hyperbolic kind solves on {usub > eps} with boundary
    value eps.  On non-convergence the failed attempt is appended with
    ``converged=False`` and the schedule stops.
    """
    results: list[SolveResult] = []
    if spec.kind == "hyperbolic":
        if resolution is None:
            raise ArgumentError("hyperbolic continuation needs a resolution")
        prev = None
        for i, eps in enumerate(config.eps_schedule):
            g = level_grid(spec, eps, resolution)
            start = initial_guess(spec, g)
            if prev is not None:
                start = _transfer(spec, prev, g, start)
            try:
                res = newton_solve(spec, config, Rhs("plain"), start, eps=eps)
            except NonConvergenceError as exc:
                if i == 0:
                    raise
                results.append(_failed(exc, eps))
                break
            results.append(res)
            prev = res.u
        return results
    if spec.k < 2:
        raise ArgumentError("continuation needs k >= 2")
    if grid is None:
        if resolution is None:
            raise ArgumentError("need a grid or a resolution")
        grid = build_grid(spec.dom, resolution, spec.phi)
    theta0 = config.theta0 if config.theta0 is not None else default_theta0(spec, grid)
    start = initial_guess(spec, grid)
    for i, eps in enumerate(config.eps_schedule):
        rhs = Rhs("eps", eps=eps, theta0=theta0)
        try:
            res = newton_solve(spec, config, rhs, start, eps=eps)
        except NonConvergenceError as exc:
            if i == 0:
                raise
            results.append(_failed(exc, eps))
            break
        results.append(res)
        start = res.u
    return results


def _failed(exc: NonConvergenceError, eps: float) -> SolveResult:
    u = exc.last_iterate
    return SolveResult(
        u=u,
        residual_inf=float(exc.residual) if exc.residual is not None else np.inf,
        admissibility_margin=np.nan,
        newton_iters=exc.iterations,
        converged=False,
        eps=eps,
        message=str(exc),
    )


def _transfer(spec: ProblemSpec, prev: ScalarField, grid: Grid, fallback: ScalarField) -> ScalarField:
    """Previous solution on shared interior nodes, fallback elsewhere, if admissible."""
    if prev.grid.dims != grid.dims:
        return fallback
    U = fallback.interior_values().copy()
    pv = prev.flat[grid.interior_index]
    shared = prev.grid.interior_mask.ravel()[grid.interior_index]
    U[shared] = pv[shared]
    if not _System(spec, grid, Rhs("const")).evaluate(U).margin > 0:
        return fallback
    return ScalarField.from_unknowns(grid, U)


def homogeneous_barrier(
    spec: ProblemSpec,
    delta: float,
    grid: Grid,
    config: SolverConfig | None = None,
) -> ScalarField:
    """Approximate solution of the homogeneous (sigma_k = 0) problem: rhs = delta."""
    if delta <= 0:
        raise ArgumentError("delta must be positive")
    config = config or SolverConfig()
    start = initial_guess(spec, grid, f_bound=delta)
    try:
        return newton_solve(spec, config, Rhs("const", value=delta), start).u
    except NonConvergenceError:
        if delta >= BARRIER_LADDER_TOP:
            raise
    # march delta down from a well-conditioned value, warm-starting each rung
    u = start
    rung = BARRIER_LADDER_TOP
    while True:
        u = newton_solve(spec, config, Rhs("const", value=rung), u).u
        if rung == delta:
            return u
        rung = max(delta, rung / np.sqrt(10.0))


def comparison_check(lower: ScalarField, mid: ScalarField, upper: ScalarField) -> float:
    """max(0, sup(lower - mid), sup(mid - upper)) over interior nodes."""
    g = check_same_grid(lower, mid, upper)
    lo, m, up = (f.interior_values() for f in (lower, mid, upper))
    return float(max(0.0, np.max(lo - m), np.max(m - up)))
