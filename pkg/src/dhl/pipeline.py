"""Command implementations shared by the CLI and the acceptance tests.

Every command writes its files into the configured output directory and
returns a small result object; exit-status decisions live in :mod:`dhl.cli`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import expr as ex
from . import symmfunc as sf
from . import verify as vf
from .config import RunConfig
from .errors import ArgumentError, DomainError, NonConvergenceError, PreconditionError
from .graphgeom import Jet2, curvature_matrix
from .grid import (
    Grid,
    ScalarField,
    build_grid,
    load_field,
    write_field_binary,
    write_field_csv,
)
from .hypgeom import HypJet, hyp_curvature_matrix
from .solver import (
    Rhs,
    SolveResult,
    affine_fit,
    continuation_solve,
    default_theta0,
    homogeneous_barrier,
    initial_guess,
    level_grid,
    newton_solve,
    subsolution_quadratic,
    comparison_check,
)

RUN_COLUMNS = ("eps", "iter", "residual_inf", "margin", "pogorelov_h", "pogorelov_c")
MANIFEST = "fields.csv"


def _g(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_run_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(RUN_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_g(r.get(c)) for c in RUN_COLUMNS) + "\n")


# -------------------------------------------------------------------- solve


@dataclass
class SolveOutcome:
    result: SolveResult
    grid: Grid


def base_grid(cfg: RunConfig, spec) -> Grid:
    return build_grid(spec.dom, cfg.resolution, spec.phi)


def run_solve(cfg: RunConfig) -> SolveOutcome:
    """One Newton solve at the head of the eps schedule."""
    spec = cfg.problem()
    scfg = cfg.solver_config()
    eps = scfg.eps_schedule[0]
    if spec.kind == "hyperbolic":
        grid = level_grid(spec, eps, cfg.resolution)
        rhs = Rhs("plain")
    else:
        grid = base_grid(cfg, spec)
        if spec.k >= 2:
            theta0 = scfg.theta0 if scfg.theta0 is not None else default_theta0(spec, grid)
            rhs = Rhs("eps", eps=eps, theta0=theta0)
        else:
            rhs = Rhs("plain")
    res = newton_solve(spec, scfg, rhs, initial_guess(spec, grid), eps=eps)
    out = _out(cfg)
    write_field_csv(res.u, out / "solution.csv")
    write_field_binary(res.u, out / "solution.dhl")
    write_run_csv(
        out / "run.csv",
        [dict(eps=eps, iter=res.newton_iters, residual_inf=res.residual_inf, margin=res.admissibility_margin)],
    )
    return SolveOutcome(res, grid)


# -------------------------------------------------------------------- sweep


@dataclass
class SweepOutcome:
    results: list
    records: list
    report: vf.SweepReport | None
    comparison: list = field(default_factory=list)  # (eps, violation, allowed)
    aborted: bool = False

    @property
    def comparison_ok(self) -> bool:
        return all(v <= allowed for _, v, allowed in self.comparison)


def _monitor(kind: str, k: int, u: ScalarField, ubar: ScalarField, cfg: RunConfig, eps):
    if kind == "hessian":
        return vf.pogorelov_hessian(u, ubar, k, cfg.alpha, eps=eps)
    if kind == "curvature":
        return vf.pogorelov_curvature(u, ubar, k, cfg.alpha, eps=eps)
    alpha = vf.HYPERBOLIC_ALPHA if cfg.alpha is None else cfg.alpha
    return vf.pogorelov_hyperbolic(u, ubar, cfg.hyp_c, alpha, eps=eps)


def _comparison_bounds(spec, grid):
    """(lower, upper) fields for the sandwich check, or None when phi is not affine."""
    aff = affine_fit(spec.phi, spec.dom)
    if aff is None or spec.kind == "hyperbolic":
        return None
    x = grid.interior_points
    f_bound = float(np.max(spec.f(x, np.zeros(len(x))))) + 1.0  # rhs along the schedule stays below sup f + 1
    try:
        lower, _ = subsolution_quadratic(grid, aff, spec.k, f_bound, spec.kind, spec.f)
    except PreconditionError:
        return None
    upper = ScalarField.from_function(grid, spec.phi)
    return lower, upper


def _barrier(spec, delta, grid, scfg):
    try:
        return homogeneous_barrier(spec, delta, grid, scfg)
    except NonConvergenceError as exc:
        raise NonConvergenceError(f"barrier solve: {exc}", exc.last_iterate, exc.residual, exc.iterations) from None


def run_sweep(cfg: RunConfig) -> SweepOutcome:
    """Continuation over the schedule plus the weighted second-derivative monitor."""
    spec = cfg.problem()
    scfg = cfg.solver_config()
    out = _out(cfg)
    if spec.kind == "hyperbolic":
        results = continuation_solve(spec, scfg, resolution=cfg.resolution)
    else:
        grid = base_grid(cfg, spec)
        results = continuation_solve(spec, scfg, grid=grid)
    done = [r for r in results if r.converged]
    aborted = len(done) < len(results) or len(results) < len(scfg.eps_schedule)

    records, rows, manifest, comparison = [], [], [], []
    ubar_shared = None
    bounds = None
    if spec.kind != "hyperbolic":
        ubar_shared = _barrier(spec, cfg.barrier_delta, grid, scfg)
        write_field_binary(ubar_shared, out / "ubar.dhl")
        bounds = _comparison_bounds(spec, grid)
    for i, r in enumerate(done):
        if spec.kind == "hyperbolic":
            ubar = _barrier(spec, cfg.barrier_delta, r.u.grid, scfg)
            ubar_name = f"ubar_{i:02d}.dhl"
            write_field_binary(ubar, out / ubar_name)
        else:
            ubar, ubar_name = ubar_shared, "ubar.dhl"
        rec = _monitor(spec.kind, spec.k, r.u, ubar, cfg, r.eps)
        records.append(rec)
        u_name = f"u_{i:02d}.dhl"
        write_field_binary(r.u, out / u_name)
        manifest.append((i, r.eps, u_name, ubar_name))
        row = dict(eps=r.eps, iter=r.newton_iters, residual_inf=r.residual_inf, margin=r.admissibility_margin)
        row["pogorelov_h" if spec.kind == "hessian" else "pogorelov_c"] = rec.quantity
        rows.append(row)
        if bounds is not None:
            h = r.u.grid.spacing
            comparison.append((r.eps, comparison_check(bounds[0], r.u, bounds[1]), cfg.comparison_tol + 10 * h * h))
    for r in results[len(done):]:
        rows.append(dict(eps=r.eps, iter=r.newton_iters, residual_inf=r.residual_inf))
    write_run_csv(out / "run.csv", rows)
    write_manifest(out / MANIFEST, manifest)
    report = None
    if len(records) >= 3:
        report = vf.sweep_verdict(records, cfg.factor)
        vf.write_report_csv(report, out / "report.csv")
    return SweepOutcome(results, records, report, comparison, aborted)


def write_manifest(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("index,eps,u_file,ubar_file\n")
        for i, eps, u_name, ubar_name in rows:
            fh.write(f"{i},{_g(eps)},{u_name},{ubar_name}\n")


# ------------------------------------------------------------------- verify


def run_verify(cfg: RunConfig) -> SweepOutcome:
    """Recompute the monitors from the fields a previous sweep dumped."""
    spec = cfg.problem()
    out = Path(cfg.out_dir)
    path = out / MANIFEST
    if not path.exists():
        raise ArgumentError(f"no {MANIFEST} in {out}; run a sweep first")
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    grid = None if spec.kind == "hyperbolic" else base_grid(cfg, spec)
    records = []
    for row in rows:
        eps = float(row["eps"])
        g = level_grid(spec, eps, cfg.resolution) if grid is None else grid
        u = load_field(g, out / row["u_file"])
        ubar = load_field(g, out / row["ubar_file"])
        records.append(_monitor(spec.kind, spec.k, u, ubar, cfg, eps))
    report = vf.sweep_verdict(records, cfg.factor) if len(records) >= 3 else None
    if report is not None:
        vf.write_report_csv(report, out / "verify_report.csv")
    return SweepOutcome([], records, report)


# ----------------------------------------------------------------- geometry


@dataclass
class GeometryRow:
    point: tuple
    u: float
    kappa: tuple
    cone: str
    kappa_tilde: tuple | None
    hyp_cone: str | None


def run_geometry(cfg: RunConfig) -> list[GeometryRow]:
    """Principal curvatures (Euclidean and, where u > 0, hyperbolic) at sample points."""
    if cfg.geometry_u is None or not cfg.geometry_points:
        raise ArgumentError("[geometry] needs u and points")
    n = cfg.n
    names = [f"x{i + 1}" for i in range(n)]
    e = cfg.geometry_u
    grad = ex.gradient(e, names)
    hess = ex.hessian(e, names)
    rows = []
    for p in cfg.geometry_points:
        env = dict(zip(names, (float(c) for c in p)))
        u = float(ex.evaluate(e, env))
        du = np.array([float(ex.evaluate(gi, env)) for gi in grad])
        d2u = np.array([[float(ex.evaluate(hij, env)) for hij in row] for row in hess])
        jet = Jet2(u, du, d2u)
        cd = curvature_matrix(jet, cfg.k)
        kt, hc = None, None
        if u > 0:
            hyp = hyp_curvature_matrix(HypJet(jet), cfg.k)
            kt, hc = tuple(hyp.kappa_tilde.values.astype(float)), hyp.cone.label
        rows.append(GeometryRow(tuple(p), u, tuple(cd.kappa.values.astype(float)), cd.cone.label, kt, hc))
    out = _out(cfg)
    with open(out / "geometry.csv", "w") as fh:
        head = names + ["u"] + [f"kappa{i + 1}" for i in range(n)] + ["cone"]
        head += [f"kappa_tilde{i + 1}" for i in range(n)] + ["hyp_cone"]
        fh.write(",".join(head) + "\n")
        for r in rows:
            cells = [_g(c) for c in r.point] + [_g(r.u)] + [_g(c) for c in r.kappa] + [r.cone]
            cells += [_g(c) for c in r.kappa_tilde] if r.kappa_tilde else [""] * n
            cells.append(r.hyp_cone or "")
            fh.write(",".join(cells) + "\n")
    return rows
