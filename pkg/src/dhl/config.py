"""Run configuration: INI-style text with [problem], [grid], [solver], [verify],
[geometry] and [output] sections.  Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import expr as ex
from .errors import ArgumentError
from .grid import Disk, Ellipsoid, Rectangle, Sublevel
from .solver import DEFAULT_SCHEDULE, KINDS, ProblemSpec, SolverConfig

DOMAIN_KINDS = ("disk", "rectangle", "ellipsoid", "levelset")

_KEYS = {
    "problem": {"n", "k", "kind", "f", "phi", "usub", "domain", "center", "radius", "lo", "hi", "semi_axes", "levelset"},
    "grid": {"resolution"},
    "solver": {
        "eps_schedule",
        "newton_tol_abs",
        "newton_tol_rel",
        "max_newton_iters",
        "damping_min",
        "lm_shift",
        "theta0",
        "jacobian",
    },
    "verify": {"barrier_delta", "alpha", "factor", "hyp_c", "comparison_tol"},
    "geometry": {"u", "points"},
    "output": {"dir"},
}


def _floats(text: str, key: str) -> tuple:
    try:
        return tuple(float(t) for t in text.replace(" ", "").split(",") if t)
    except ValueError:
        raise ArgumentError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _fmt_floats(vals) -> str:
    return ",".join(repr(float(v)) for v in vals)


@dataclass(frozen=True)
class RunConfig:
    n: int
    k: int
    kind: str
    f: object  # expression AST
    phi: object
    domain: str
    usub: object | None = None
    center: tuple = ()
    radius: float | None = None
    lo: tuple = ()
    hi: tuple = ()
    semi_axes: tuple = ()
    levelset: object | None = None
    resolution: int = 65
    eps_schedule: tuple = DEFAULT_SCHEDULE
    newton_tol_abs: float = 1e-9
    newton_tol_rel: float = 1e-9
    max_newton_iters: int = 60
    damping_min: float = 2.0**-12
    lm_shift: float = 1e-8
    theta0: float | None = None
    jacobian: str = "lagged"
    barrier_delta: float = 1e-4
    alpha: float | None = None
    factor: float = 2.0
    hyp_c: float = 0.0
    comparison_tol: float = 1e-8
    geometry_u: object | None = None
    geometry_points: tuple = ()
    out_dir: str = "dhl-out"

    # ----------------------------------------------------------- building

    def domain_object(self):
        n = self.n
        if self.domain == "disk":
            return Disk(self.center, self.radius)
        if self.domain == "rectangle":
            return Rectangle(self.lo, self.hi)
        if self.domain == "ellipsoid":
            return Ellipsoid(self.center, self.semi_axes)
        return Sublevel(ex.point_function(self.levelset, n), self.lo, self.hi, ex.to_string(self.levelset))

    def problem(self) -> ProblemSpec:
        n = self.n
        usub = ex.point_function(self.usub, n) if self.usub is not None else None
        return ProblemSpec(
            n=n,
            k=self.k,
            kind=self.kind,
            f=ex.field_function(self.f, n),
            phi=ex.point_function(self.phi, n),
            dom=self.domain_object(),
            usub=usub,
        )

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            eps_schedule=self.eps_schedule,
            newton_tol_abs=self.newton_tol_abs,
            newton_tol_rel=self.newton_tol_rel,
            max_newton_iters=self.max_newton_iters,
            damping_min=self.damping_min,
            lm_shift=self.lm_shift,
            theta0=self.theta0,
            jacobian=self.jacobian,
        )

    def validate(self) -> "RunConfig":
        if self.kind not in KINDS:
            raise ArgumentError(f"kind must be one of {', '.join(KINDS)}")
        if self.n not in (2, 3):
            raise ArgumentError("n must be 2 or 3")
        if not 1 <= self.k <= self.n:
            raise ArgumentError(f"k must satisfy 1 <= k <= n (k={self.k}, n={self.n})")
        allowed = {f"x{i + 1}" for i in range(self.n)}
        for name, e, extra in (
            ("f", self.f, {"u"}),
            ("phi", self.phi, set()),
            ("usub", self.usub, set()),
            ("levelset", self.levelset, set()),
            ("geometry.u", self.geometry_u, set()),
        ):
            if e is not None and not ex.variables_of(e) <= allowed | extra:
                bad = sorted(ex.variables_of(e) - allowed - extra)
                raise ArgumentError(f"{name}: unknown variable(s) {', '.join(bad)}")
        if self.domain not in DOMAIN_KINDS:
            raise ArgumentError(f"domain must be one of {', '.join(DOMAIN_KINDS)}")
        need = {
            "disk": ("center", "radius"),
            "rectangle": ("lo", "hi"),
            "ellipsoid": ("center", "semi_axes"),
            "levelset": ("levelset", "lo", "hi"),
        }[self.domain]
        for key in need:
            v = getattr(self, key)
            if v is None or (isinstance(v, tuple) and not v):
                raise ArgumentError(f"domain {self.domain} needs {key}")
        for key in ("center", "lo", "hi", "semi_axes"):
            v = getattr(self, key)
            if key in need and len(v) != self.n:
                raise ArgumentError(f"{key} must have {self.n} components")
        if self.radius is not None and self.radius <= 0:
            raise ArgumentError("radius must be positive")
        if self.semi_axes and min(self.semi_axes) <= 0:
            raise ArgumentError("semi_axes must be positive")
        if self.lo and self.hi and any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ArgumentError("lo must be below hi in every coordinate")
        if self.resolution < 9:
            raise ArgumentError("resolution must be at least 9")
        if self.kind == "hyperbolic" and self.usub is None:
            raise ArgumentError("kind=hyperbolic needs usub")
        if self.barrier_delta <= 0 or self.factor < 1 or self.comparison_tol < 0:
            raise ArgumentError("bad verify options (barrier_delta > 0, factor >= 1, comparison_tol >= 0)")
        if self.alpha is not None and self.alpha < 0:
            raise ArgumentError("alpha must be non-negative")
        for p in self.geometry_points:
            if len(p) != self.n:
                raise ArgumentError(f"geometry point {p} must have {self.n} components")
        self.solver_config()
        self.problem()
        return self

    # ------------------------------------------------------- serialization

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        prob = {"n": str(self.n), "k": str(self.k), "kind": self.kind, "f": ex.to_string(self.f)}
        prob["phi"] = ex.to_string(self.phi)
        if self.usub is not None:
            prob["usub"] = ex.to_string(self.usub)
        prob["domain"] = self.domain
        for key in ("center", "lo", "hi", "semi_axes"):
            if getattr(self, key):
                prob[key] = _fmt_floats(getattr(self, key))
        if self.radius is not None:
            prob["radius"] = repr(float(self.radius))
        if self.levelset is not None:
            prob["levelset"] = ex.to_string(self.levelset)
        cp["problem"] = prob
        cp["grid"] = {"resolution": str(self.resolution)}
        solver = {
            "eps_schedule": _fmt_floats(self.eps_schedule),
            "newton_tol_abs": repr(self.newton_tol_abs),
            "newton_tol_rel": repr(self.newton_tol_rel),
            "max_newton_iters": str(self.max_newton_iters),
            "damping_min": repr(self.damping_min),
            "lm_shift": repr(self.lm_shift),
            "jacobian": self.jacobian,
        }
        if self.theta0 is not None:
            solver["theta0"] = repr(self.theta0)
        cp["solver"] = solver
        verify = {
            "barrier_delta": repr(self.barrier_delta),
            "factor": repr(self.factor),
            "hyp_c": repr(self.hyp_c),
            "comparison_tol": repr(self.comparison_tol),
        }
        if self.alpha is not None:
            verify["alpha"] = repr(self.alpha)
        cp["verify"] = verify
        geo = {}
        if self.geometry_u is not None:
            geo["u"] = ex.to_string(self.geometry_u)
        if self.geometry_points:
            geo["points"] = "; ".join(_fmt_floats(p) for p in self.geometry_points)
        if geo:
            cp["geometry"] = geo
        cp["output"] = {"dir": self.out_dir}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ArgumentError(f"config syntax: {exc}".replace("\n", " ")) from None
    for section in cp.sections():
        if section not in _KEYS:
            raise ArgumentError(f"unknown section [{section}]")
        unknown = set(cp[section]) - _KEYS[section]
        if unknown:
            raise ArgumentError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    if "problem" not in cp:
        raise ArgumentError("missing [problem] section")
    p = cp["problem"]
    for key in ("n", "k", "kind", "f", "domain"):
        if key not in p:
            raise ArgumentError(f"[problem] needs {key}")

    def integer(sec, key, default=None):
        if key not in sec:
            return default
        try:
            return int(sec[key])
        except ValueError:
            raise ArgumentError(f"{key}: expected an integer, got {sec[key]!r}") from None

    def real(sec, key, default=None):
        if key not in sec:
            return default
        try:
            return float(sec[key])
        except ValueError:
            raise ArgumentError(f"{key}: expected a number, got {sec[key]!r}") from None

    def expression(sec, key, label):
        if key not in sec:
            return None
        try:
            return ex.parse_expression(sec[key])
        except ex.ExprSyntaxError as exc:
            raise ArgumentError(f"{label}: {exc}") from None

    kw = dict(
        n=integer(p, "n"),
        k=integer(p, "k"),
        kind=p["kind"].strip(),
        f=expression(p, "f", "f"),
        phi=expression(p, "phi", "phi") or ex.Num(0.0),
        domain=p["domain"].strip(),
        usub=expression(p, "usub", "usub"),
        center=_floats(p.get("center", ""), "center"),
        radius=real(p, "radius"),
        lo=_floats(p.get("lo", ""), "lo"),
        hi=_floats(p.get("hi", ""), "hi"),
        semi_axes=_floats(p.get("semi_axes", ""), "semi_axes"),
        levelset=expression(p, "levelset", "levelset"),
    )
    if "grid" in cp:
        kw["resolution"] = integer(cp["grid"], "resolution", 65)
    if "solver" in cp:
        s = cp["solver"]
        if "eps_schedule" in s:
            kw["eps_schedule"] = _floats(s["eps_schedule"], "eps_schedule")
        for key in ("newton_tol_abs", "newton_tol_rel", "damping_min", "lm_shift", "theta0"):
            if key in s:
                kw[key] = real(s, key)
        if "max_newton_iters" in s:
            kw["max_newton_iters"] = integer(s, "max_newton_iters")
        if "jacobian" in s:
            kw["jacobian"] = s["jacobian"].strip()
    if "verify" in cp:
        v = cp["verify"]
        for key in ("barrier_delta", "alpha", "factor", "hyp_c", "comparison_tol"):
            if key in v:
                kw[key] = real(v, key)
    if "geometry" in cp:
        g = cp["geometry"]
        kw["geometry_u"] = expression(g, "u", "geometry.u")
        if "points" in g:
            kw["geometry_points"] = tuple(
                _floats(chunk, "points") for chunk in g["points"].split(";") if chunk.strip()
            )
    if "output" in cp and "dir" in cp["output"]:
        kw["out_dir"] = cp["output"]["dir"].strip()
    return RunConfig(**kw).validate()


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ArgumentError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
