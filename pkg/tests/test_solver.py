from math import comb

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from dhl import symmfunc as sf
from dhl.errors import ArgumentError, PreconditionError
from dhl.grid import Disk, Ellipsoid, Rectangle, ScalarField, build_grid, hessian_central
from dhl.solver import (
    KRYLOV_ABOVE,
    ProblemSpec,
    Rhs,
    SolverConfig,
    _linear_solve,
    comparison_check,
    continuation_solve,
    cutoff_eta,
    f_epsilon,
    homogeneous_barrier,
    initial_guess,
    j_regularized_rhs,
    level_grid,
    newton_solve,
    residual,
    subsolution_quadratic,
)

from oracles import ellipsoid_ubar, ellipsoid_weights, sphere_cap_jet

UNIT_DISK = Disk((0.0, 0.0), 1.0)


def const(c):
    return lambda x, u: np.full(len(x), float(c))


# ------------------------------------------------------------ regularization


def test_cutoff_examples():
    assert cutoff_eta(0.0, 0.4) == 1.0
    assert cutoff_eta(0.4, 0.4) == 0.0
    assert 0.0 < cutoff_eta(0.15, 0.4) < 1.0
    with pytest.raises(ArgumentError):
        cutoff_eta(0.1, 0.0)


def test_cutoff_shape_and_derivative_bounds():
    for theta0 in (1e-3, 0.3, 5.0):
        t = np.linspace(0, theta0, 20001)
        eta = cutoff_eta(t, theta0)
        assert np.all(eta[t <= theta0 / 4] == 1) and np.all(eta[t >= theta0 / 2] == 0)
        assert np.all(np.diff(eta) <= 0)
        dt = t[1] - t[0]
        d1 = np.abs(np.diff(eta)) / dt
        d2 = np.abs(np.diff(eta, 2)) / dt**2
        assert d1.max() <= 100 / theta0
        assert d2.max() <= 100 / theta0**2


def test_f_epsilon_examples():
    assert f_epsilon(0.0, 0.1, 3, 0.5) == pytest.approx(0.1**2)
    assert f_epsilon(0.3, 0.1, 3, 0.5) == pytest.approx(0.3**2)
    assert f_epsilon(0.5 / 4, 0.1, 3, 0.5) == pytest.approx((0.5 / 4 + 0.1) ** 2)
    with pytest.raises(ArgumentError):
        f_epsilon(0.2, 0.1, 1, 0.5)


@given(st.floats(0, 10), st.floats(1e-8, 1), st.integers(2, 5), st.floats(1e-3, 5))
def test_f_epsilon_positive_and_at_least_f(ft, eps, k, theta0):
    v = f_epsilon(ft, eps, k, theta0)
    assert v > 0
    assert v >= ft ** (k - 1) * (1 - 1e-15)


@given(st.floats(0, 10), st.floats(1e-8, 1), st.floats(1e-8, 1), st.integers(2, 5), st.floats(1e-3, 5))
def test_f_epsilon_monotone_in_eps_and_exact_far_from_zero(ft, e1, e2, k, theta0):
    lo, hi = sorted((e1, e2))
    assert f_epsilon(ft, lo, k, theta0) <= f_epsilon(ft, hi, k, theta0) * (1 + 1e-15)
    if ft >= theta0 / 2:
        assert f_epsilon(ft, lo, k, theta0) == ft ** (k - 1)


def test_j_regularization_examples():
    assert j_regularized_rhs(0.0, 10) == pytest.approx(0.1)
    assert j_regularized_rhs(1.0, 10**12) == pytest.approx(1.0)
    assert j_regularized_rhs(2.0, 4) == 2.25
    with pytest.raises(ArgumentError):
        j_regularized_rhs(1.0, 0)


def test_rhs_modes():
    spec = ProblemSpec(2, 3 - 1, "hessian", lambda x, u: x[:, 0] ** 2, 0.0, UNIT_DISK)
    x = np.array([[0.5, 0.0], [0.0, 0.0]])
    u = np.zeros(2)
    np.testing.assert_allclose(Rhs("plain")(spec, x, u), [0.25, 0.0])
    np.testing.assert_allclose(Rhs("j", j=4)(spec, x, u), [0.5, 0.25])
    np.testing.assert_allclose(Rhs("const", value=3.0)(spec, x, u), [3.0, 3.0])
    np.testing.assert_allclose(Rhs("eps", eps=0.1, theta0=0.2)(spec, x, u), [0.25, 0.1])
    with pytest.raises(ArgumentError):
        Rhs("bogus")(spec, x, u)


# ------------------------------------------------------------ validation


def test_problem_spec_validation():
    with pytest.raises(ArgumentError):
        ProblemSpec(2, 3, "hessian", const(1), 0.0, UNIT_DISK)
    with pytest.raises(ArgumentError):
        ProblemSpec(2, 2, "hessian", const(-1), 0.0, UNIT_DISK)
    with pytest.raises(ArgumentError):
        ProblemSpec(2, 2, "hyperbolic", const(1), 0.0, UNIT_DISK)
    with pytest.raises(ArgumentError):
        ProblemSpec(3, 2, "hessian", const(1), 0.0, UNIT_DISK)
    with pytest.raises(ArgumentError):
        ProblemSpec(2, 2, "elliptic", const(1), 0.0, UNIT_DISK)


def test_solver_config_validation():
    with pytest.raises(ArgumentError):
        SolverConfig(eps_schedule=(0.1, 0.1))
    with pytest.raises(ArgumentError):
        SolverConfig(eps_schedule=())
    with pytest.raises(ArgumentError):
        SolverConfig(newton_tol_abs=0.0)
    with pytest.raises(ArgumentError):
        SolverConfig(jacobian="exact")


# ------------------------------------------------------------ residual


@pytest.mark.parametrize("n,k", [(2, 1), (2, 2), (3, 2), (3, 3)])
def test_residual_zero_on_quadratic(n, k):
    dom = Disk((0.0,) * n, 1.0)
    spec = ProblemSpec(n, k, "hessian", const(comb(n, k)), lambda x: 0.5 * (x * x).sum(1), dom)
    g = build_grid(dom, 17, spec.phi)
    r = residual(spec, ScalarField.from_function(g, spec.phi))
    assert r.sup <= 1e-9
    assert r.inadmissible == 0


def test_residual_of_zero_field():
    spec = ProblemSpec(2, 2, "hessian", const(1), 0.0, UNIT_DISK)
    g = build_grid(UNIT_DISK, 17, 0.0)
    r = residual(spec, ScalarField.from_function(g, lambda x: np.zeros(len(x))))
    np.testing.assert_array_equal(r.values, -1.0)


def test_curvature_residual_second_order():
    def cap(x):
        return -np.sqrt(4 - (x * x).sum(1))

    spec = ProblemSpec(2, 2, "curvature", const(0.25), cap, UNIT_DISK)
    sups = [residual(spec, ScalarField.from_function(build_grid(UNIT_DISK, r, cap), cap)).sup for r in (33, 65)]
    assert 3 <= sups[0] / sups[1] <= 5


def test_hyperbolic_residual_of_totally_geodesic_cap():
    def cap(x):
        return np.sqrt(np.maximum(4 - (x * x).sum(1), 0))

    spec = ProblemSpec(2, 2, "hyperbolic", const(0.0), 0.0, UNIT_DISK, usub=cap)
    sups = [residual(spec, ScalarField.from_function(build_grid(UNIT_DISK, r, cap), cap)).sup for r in (33, 65)]
    assert sups[0] <= 1e-6 and sups[0] / sups[1] >= 3


# ------------------------------------------------------------ Newton


def test_exact_warm_start_needs_at_most_one_iteration():
    def q(x):
        return 0.5 * (x * x).sum(1)

    square = Rectangle((0.0, 0.0), (1.0, 1.0))
    spec = ProblemSpec(2, 2, "hessian", const(1), q, square)
    g = build_grid(square, 33, q)
    res = newton_solve(spec, SolverConfig(), Rhs("plain"), ScalarField.from_unknowns(g, q(g.interior_points)))
    assert res.converged and res.newton_iters <= 1


@pytest.mark.parametrize("kind", ["hessian", "curvature"])
def test_manufactured_solution_recovery(kind):
    def ustar(x):
        return 0.5 * ((x * x).sum(1) - 1) + 0.1 * x[:, 0] ** 3

    square = Rectangle((-1.0, -1.0), (1.0, 1.0))
    spec0 = ProblemSpec(2, 2, kind, const(0), ustar, square)
    g = build_grid(square, 65, ustar)
    assert g.spacing == 1 / 32
    U = ustar(g.interior_points)
    rhs_at_nodes = residual(spec0, ScalarField.from_unknowns(g, U), Rhs("const", value=0.0)).values

    table = np.full(g.dims, rhs_at_nodes.min())
    table.ravel()[g.interior_index] = rhs_at_nodes

    def f(x, u):
        # nearest-node lookup; exact at grid nodes
        idx = np.clip(np.rint((x - g.origin) / g.spacing).astype(int), 0, np.array(g.dims) - 1)
        return table[tuple(idx.T)]

    spec = ProblemSpec(2, 2, kind, f, ustar, square)
    bump = 0.5 * ((g.interior_points**2).sum(1) - 2)
    cfg = SolverConfig()
    res = newton_solve(spec, cfg, Rhs("plain"), ScalarField.from_unknowns(g, U + 0.1 * bump))
    assert res.converged and res.newton_iters <= 25
    assert np.abs(res.u.interior_values() - U).max() <= 10 * cfg.newton_tol_abs
    assert all(h.margin > 0 for h in res.history)


def test_saddle_warm_start_rejected():
    spec = ProblemSpec(2, 2, "hessian", const(1), 0.0, UNIT_DISK)
    g = build_grid(UNIT_DISK, 17, 0.0)
    x = g.interior_points
    with pytest.raises(PreconditionError):
        newton_solve(spec, SolverConfig(), Rhs("plain"), ScalarField.from_unknowns(g, x[:, 0] ** 2 - x[:, 1] ** 2))


@pytest.mark.parametrize("kind", ["hessian", "curvature"])
@pytest.mark.parametrize("n,k", [(2, 2), (3, 2), (3, 3)])
def test_converged_results_honour_their_invariants(kind, n, k):
    dom = Disk((0.0,) * n, 1.0)
    spec = ProblemSpec(n, k, kind, const(0.5), 0.0, dom)
    g = build_grid(dom, 17 if n == 2 else 11, 0.0)
    cfg = SolverConfig()
    res = newton_solve(spec, cfg, Rhs("plain"), initial_guess(spec, g))
    assert res.converged
    assert res.residual_inf <= cfg.newton_tol_abs + cfg.newton_tol_rel * 0.5
    assert res.admissibility_margin > 0
    assert residual(spec, res.u).sup == pytest.approx(res.residual_inf, abs=1e-12)
    assert all(b.residual_inf <= a.residual_inf * (1 + 1e-12) for a, b in zip(res.history, res.history[1:]))


def test_full_and_lagged_jacobians_agree():
    spec = ProblemSpec(2, 2, "curvature", const(0.5), lambda x: 0.2 * x[:, 0], UNIT_DISK)
    g = build_grid(UNIT_DISK, 21, spec.phi)
    a = newton_solve(spec, SolverConfig(), Rhs("plain"), initial_guess(spec, g))
    b = newton_solve(spec, SolverConfig(jacobian="full"), Rhs("plain"), initial_guess(spec, g))
    assert np.abs(a.u.interior_values() - b.u.interior_values()).max() <= 1e-8
    assert b.newton_iters <= a.newton_iters


def test_krylov_path_matches_direct_solve():
    rng = np.random.default_rng(0)
    m = KRYLOV_ABOVE + 500
    L = sp.diags([-1.0, 2.2, -1.0], [-1, 0, 1], shape=(m, m))
    J = (L + sp.random(m, m, density=2e-4, random_state=1) * 0.1).tocsr()
    b = rng.normal(size=m)
    x = _linear_solve(J, b, 1e-8, {})
    assert np.linalg.norm(J @ x - b) <= 1e-9 * np.linalg.norm(b)


# ------------------------------------------------------------ continuation


def test_single_step_schedule_equals_newton_solve():
    spec = ProblemSpec(2, 2, "hessian", const(1), 0.0, UNIT_DISK)
    g = build_grid(UNIT_DISK, 33, 0.0)
    cfg = SolverConfig(eps_schedule=(1e-3,), theta0=0.5)
    [cont] = continuation_solve(spec, cfg, grid=g)
    direct = newton_solve(spec, cfg, Rhs("eps", eps=1e-3, theta0=0.5), initial_guess(spec, g))
    np.testing.assert_array_equal(cont.u.values, direct.u.values)


def test_degenerate_continuation_stays_sandwiched():
    def f(x, u):
        return np.maximum(np.linalg.norm(x, axis=1) - 0.5, 0.0) ** 2

    spec = ProblemSpec(2, 2, "hessian", f, 0.0, UNIT_DISK)
    g = build_grid(UNIT_DISK, 33, 0.0)
    cfg = SolverConfig()
    results = continuation_solve(spec, cfg, grid=g)
    assert len(results) == len(cfg.eps_schedule) and all(r.converged for r in results)
    lower, _ = subsolution_quadratic(g, (0.0, np.zeros(2)), 2, 0.25 + 1.0)
    upper = ScalarField.from_function(g, lambda x: np.zeros(len(x)))
    for r in results:
        assert comparison_check(lower, r.u, upper) <= 1e-8 + 10 * g.spacing**2
    # smaller eps means a smaller right-hand side, hence a larger solution
    for a, b in zip(results, results[1:]):
        assert np.all(b.u.interior_values() >= a.u.interior_values() - 1e-10)


def test_hyperbolic_continuation_uses_level_sets():
    def usub(x):
        return np.sqrt(np.maximum(4 - (x * x).sum(1), 0)) - 1

    dom = Disk((0.0, 0.0), 1.8)
    spec = ProblemSpec(2, 2, "hyperbolic", const(0.25), 0.0, dom, usub=usub)
    results = continuation_solve(spec, SolverConfig(eps_schedule=(0.2, 0.1)), resolution=33)
    assert [r.converged for r in results] == [True, True]
    for r in results:
        g = r.u.grid
        assert np.all(usub(g.interior_points) > r.eps)
        assert np.all(g.bnd_value == r.eps)
    with pytest.raises(ArgumentError):
        continuation_solve(spec, SolverConfig())


# ------------------------------------------------------------ sub/supersolutions


def test_subsolution_examples():
    g = build_grid(UNIT_DISK, 33, 0.0)
    _, p = subsolution_quadratic(g, (0.0, np.zeros(2)), 2, 0.0)
    assert comb(2, 2) * p.A**2 == pytest.approx(1.0)
    field, p = subsolution_quadratic(g, (0.0, np.zeros(2)), 2, 3.0)
    assert p.A == pytest.approx(2.0)
    H = hessian_central(field)
    assert np.all(sf.sigma(sf.eigvals_sym(H), 2) >= 3.0 - 1e-9)
    bnd = g.coords(g.bnd_index)
    assert np.all(p(bnd[np.linalg.norm(bnd, axis=1) <= 1]) <= 1e-14)


def test_curvature_subsolution_dominates_f():
    def f(x, u):
        return 0.05 + 0.02 * x[:, 0] ** 2

    g = build_grid(UNIT_DISK, 33, lambda x: 0.3 * x[:, 1])
    field, p = subsolution_quadratic(g, (0.0, np.array([0.0, 0.3])), 2, 0.07, kind="curvature", f=f)
    spec = ProblemSpec(2, 2, "curvature", f, lambda x: 0.3 * x[:, 1], UNIT_DISK)
    assert np.all(residual(spec, field, Rhs("plain")).values >= -1e-9)


def test_curvature_subsolution_unattainable_rhs():
    # a paraboloid graph over the unit disk never has Gauss curvature 1/2 near its rim
    g = build_grid(UNIT_DISK, 33, 0.0)
    with pytest.raises(PreconditionError):
        subsolution_quadratic(g, (0.0, np.zeros(2)), 2, 0.5, kind="curvature", f=const(0.5))


def test_hessian_barrier_tends_to_affine_data():
    def phi(x):
        return 0.2 + 0.3 * x[:, 0] - 0.1 * x[:, 1]

    spec = ProblemSpec(2, 2, "hessian", const(0.0), phi, UNIT_DISK)
    g = build_grid(UNIT_DISK, 33, phi)
    gaps = []
    for delta in (1e-2, 1e-4):
        ubar = homogeneous_barrier(spec, delta, g)
        gaps.append(np.abs(ubar.interior_values() - phi(g.interior_points)).max())
    # the gap scales like delta^(1/k): a factor 10 for k = 2 and a factor 100 in delta
    assert 5 <= gaps[0] / gaps[1] <= 20


def test_curvature_barrier_between_subsolution_and_data():
    spec = ProblemSpec(2, 2, "curvature", const(0.0), 0.0, UNIT_DISK)
    g = build_grid(UNIT_DISK, 33, 0.0)
    ubar = homogeneous_barrier(spec, 1e-3, g)
    lower, _ = subsolution_quadratic(g, (0.0, np.zeros(2)), 2, 1e-3, kind="curvature", f=const(1e-3))
    upper = ScalarField.from_function(g, lambda x: np.zeros(len(x)))
    assert comparison_check(lower, ubar, upper) <= 1e-8


def test_hyperbolic_barrier_matches_ellipsoid_closed_form():
    weights = ellipsoid_weights(2, 2)

    def ubar_exact(x):
        return ellipsoid_ubar(x, 1.0, weights)

    dom = Ellipsoid((0.0, 0.0), (1.0, np.sqrt(2)))
    spec = ProblemSpec(2, 2, "hyperbolic", const(0.0), 0.0, dom, usub=ubar_exact)
    errs, hs = [], []
    for res in (33, 65):
        g = level_grid(spec, 0.2, res)
        ubar = homogeneous_barrier(spec, 1e-4, g)
        errs.append(np.abs(ubar.interior_values() - ubar_exact(g.interior_points)).max())
        hs.append(g.spacing)
    assert errs[1] < errs[0]
    assert errs[1] <= 10 * hs[1] ** 2 + 10 * 1e-4


def test_barrier_rejects_nonpositive_delta():
    spec = ProblemSpec(2, 2, "hessian", const(0.0), 0.0, UNIT_DISK)
    with pytest.raises(ArgumentError):
        homogeneous_barrier(spec, 0.0, build_grid(UNIT_DISK, 17, 0.0))


def test_comparison_examples():
    g = build_grid(Rectangle((0.0, 0.0), (1.0, 1.0)), 17, 0.0)
    f = ScalarField.from_function(g, lambda x: x[:, 0])
    assert comparison_check(f, f, f) == 0
    hi = ScalarField(g, f.values + 0.5)
    assert comparison_check(hi, f, f) == pytest.approx(0.5)
    assert comparison_check(f, hi, f) == pytest.approx(0.5)


def test_hemisphere_oracle_matches_curvature_solver_data():
    # cross-check the hand-derived jet against the residual route at one node
    u, du, d2u = sphere_cap_jet(np.array([0.3, -0.2]), 2.0, -1.0)
    from dhl.graphgeom import curvature_matrix_batch

    a = curvature_matrix_batch(du[None], d2u[None])[0]
    assert sf.sigma_of_matrix(a, 2) == pytest.approx(0.25, rel=1e-13)
