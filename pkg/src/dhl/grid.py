"""Masked uniform finite-difference grids in two or three dimensions.

A :class:`Grid` has three kinds of nodes:

* interior nodes carry unknowns and the discrete equation;
* boundary nodes surround the interior (every node of the 3^n stencil of an
  interior node is interior or boundary).  Each boundary node carries a linear
  closure ``theta * u_node + (1 - theta) * u_anchor = value`` where ``anchor``
  is an interior node and ``value`` is the boundary datum at the point where
  the segment anchor->node leaves the domain.  Inside nodes closer to the
  boundary than ``snap`` of a grid step are also closure nodes: they sit on
  the segment from the crossing point back to an interior anchor, so theta > 1
  for them.  ``anchor == -1`` means the node value is simply ``value``;
* everything else is inactive and holds NaN in fields.

Linear interpolation through the boundary crossing keeps the closure exact on
affine data and second-order accurate overall, unlike plain nodal injection.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .errors import ArgumentError, DomainError

FIELD_MAGIC = b"DHLFLD01"
BISECTION_STEPS = 60
# closures amplify anchor values by (1 - theta) / theta; smaller snaps let
# that factor wreck Newton on some disk grids, larger ones cost accuracy
SNAP = 0.15

PointFunction = Callable[[np.ndarray], np.ndarray]


# ------------------------------------------------------------------ domains


class Domain:
    """Open set {levelset < 0} inside an axis-aligned bounding box."""

    kind = "domain"

    @property
    def dim(self) -> int:
        return len(self.bbox[0])

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def levelset(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inside(self, x: np.ndarray) -> np.ndarray:
        return self.levelset(x) < 0


@dataclass(frozen=True)
class Rectangle(Domain):
    lo: tuple
    hi: tuple
    kind = "rectangle"

    @property
    def bbox(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def levelset(self, x):
        lo, hi = self.bbox
        return np.maximum(lo - x, x - hi).max(axis=-1)


@dataclass(frozen=True)
class Disk(Domain):
    center: tuple
    radius: float
    kind = "disk"

    @property
    def bbox(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def levelset(self, x):
        return np.linalg.norm(x - np.asarray(self.center, float), axis=-1) - self.radius


@dataclass(frozen=True)
class Ellipsoid(Domain):
    """sum_i ((x_i - c_i) / a_i)^2 < 1."""

    center: tuple
    semi_axes: tuple
    kind = "ellipsoid"

    @property
    def bbox(self):
        c = np.asarray(self.center, float)
        a = np.asarray(self.semi_axes, float)
        return c - a, c + a

    def levelset(self, x):
        c = np.asarray(self.center, float)
        a = np.asarray(self.semi_axes, float)
        return np.sqrt((((x - c) / a) ** 2).sum(axis=-1)) - 1.0


@dataclass(frozen=True)
class Sublevel(Domain):
    """{x in box : func(x) < 0}; ``func`` maps (N, n) points to (N,) values."""

    func: PointFunction
    lo: tuple
    hi: tuple
    label: str = ""
    kind = "sublevel"

    @property
    def bbox(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def levelset(self, x):
        box = Rectangle(self.lo, self.hi).levelset(x)
        return np.maximum(np.asarray(self.func(x), dtype=float), box)


# --------------------------------------------------------------------- grid


@dataclass(frozen=True, eq=False)
class Grid:
    dims: tuple
    spacing: float
    origin: np.ndarray
    interior_mask: np.ndarray
    bnd_index: np.ndarray
    bnd_value: np.ndarray
    bnd_anchor: np.ndarray
    bnd_theta: np.ndarray
    domain: Domain | None = field(default=None, repr=False)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Flat indices of interior nodes in lexicographic (C) order."""
        return np.flatnonzero(self.interior_mask.ravel())

    @property
    def n_interior(self) -> int:
        return self.interior_index.size

    @cached_property
    def unknown_of(self) -> np.ndarray:
        """Map flat node index -> unknown number (-1 if not interior)."""
        m = np.full(self.n_nodes, -1, dtype=np.int64)
        m[self.interior_index] = np.arange(self.n_interior)
        return m

    @cached_property
    def active_mask(self) -> np.ndarray:
        mask = self.interior_mask.copy().ravel()
        mask[self.bnd_index] = True
        return mask.reshape(self.dims)

    @property
    def boundary_nodes(self):
        """List of (flat node index, Dirichlet value) pairs."""
        return list(zip(self.bnd_index.tolist(), self.bnd_value.tolist()))

    def coords(self, flat_index=None) -> np.ndarray:
        """Physical coordinates of nodes, shape (N, n)."""
        if flat_index is None:
            flat_index = np.arange(self.n_nodes)
        multi = np.stack(np.unravel_index(np.asarray(flat_index), self.dims), axis=-1)
        return self.origin + self.spacing * multi

    @cached_property
    def interior_points(self) -> np.ndarray:
        return self.coords(self.interior_index)

    @cached_property
    def stencil(self) -> "Stencil":
        return Stencil(self)

    @cached_property
    def closure(self):
        """Affine map (E, c) with full_values = E @ interior_values + c."""
        N, M = self.n_nodes, self.n_interior
        rows = [self.interior_index]
        cols = [np.arange(M)]
        vals = [np.ones(M)]
        c = np.zeros(N)
        theta = self.bnd_theta
        fixed = self.bnd_anchor < 0
        c[self.bnd_index] = np.where(fixed, self.bnd_value, self.bnd_value / theta)
        free = ~fixed
        rows.append(self.bnd_index[free])
        cols.append(self.unknown_of[self.bnd_anchor[free]])
        vals.append(-(1.0 - theta[free]) / theta[free])
        E = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, M)
        )
        return E, c

    def same_layout(self, other: "Grid") -> bool:
        return (
            self is other
            or (
                self.dims == other.dims
                and self.spacing == other.spacing
                and np.array_equal(self.origin, other.origin)
                and np.array_equal(self.interior_mask, other.interior_mask)
            )
        )


def _offsets(n: int) -> list[tuple]:
    return [o for o in itertools.product((-1, 0, 1), repeat=n) if any(o)]


def _crossing_fraction(levelset, p: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Fraction t in (0, 1] along p -> g where the levelset changes sign.

    ``p`` is inside (levelset < 0) and ``g`` is not.  Vectorized bisection.
    """
    lo = np.zeros(len(p))
    hi = np.ones(len(p))
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        inside = levelset(p + mid[:, None] * (g - p)) < 0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return hi


def axis_nodes(lo: float, hi: float, h: float, pad: int = 1) -> np.ndarray:
    """Nodes spaced h, symmetric about the box centre, covering [lo, hi] plus ``pad`` layers."""
    c = 0.5 * (lo + hi)
    half = int(np.ceil((hi - lo) / (2 * h) - 1e-9)) + pad
    return c + h * np.arange(-half, half + 1)


def build_grid(
    dom: Domain,
    resolution: int,
    phi: PointFunction | float = 0.0,
    spacing: float | None = None,
    snap: float | None = None,
) -> Grid:
    """Lay a uniform grid over ``dom`` and close it with boundary data ``phi``.

    ``resolution`` is the number of nodes across the longest side of the
    bounding box, so the spacing is ``extent / (resolution - 1)``.  Interior
    nodes are those strictly inside the domain, minus nodes whose distance to
    the boundary along some stencil direction is below ``snap`` (default
    ``SNAP``) of that stencil step; such nodes become closure nodes that
    interpolate linearly between the boundary crossing and the interior node
    behind them, which keeps every closure well conditioned.
    """
    if resolution < 9:
        raise ArgumentError("resolution must be at least 9")
    lo, hi = dom.bbox
    n = len(lo)
    if n not in (1, 2, 3):
        raise ArgumentError("only 1-D, 2-D and 3-D grids are supported")
    extent = float(np.max(hi - lo))
    h = float(spacing) if spacing is not None else extent / (resolution - 1)
    if h <= 0:
        raise ArgumentError("spacing must be positive")
    if snap is None:
        snap = SNAP
    axes = [axis_nodes(lo[i], hi[i], h) for i in range(n)]
    dims = tuple(len(a) for a in axes)
    origin = np.array([a[0] for a in axes])
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    inside = dom.levelset(mesh) < 0
    # keep a one-node margin so every stencil stays in the array
    margin = np.zeros(dims, dtype=bool)
    margin[tuple(slice(1, -1) for _ in range(n))] = True
    inside &= margin.ravel()
    if not inside.any():
        raise DomainError("domain has no interior nodes at this resolution")
    phi_fn = phi if callable(phi) else (lambda x, _c=float(phi): np.full(len(x), _c))

    strides = np.array([int(np.prod(dims[i + 1 :])) for i in range(n)])
    offsets = _offsets(n)
    inside_idx = np.flatnonzero(inside)

    # crossing fraction from each inside node toward each outside neighbour
    cross = {}
    snapped_t = np.full(mesh.shape[0], np.inf)
    snapped_val = np.zeros(mesh.shape[0])
    snapped_step = np.zeros(mesh.shape[0], dtype=np.int64)
    for o in offsets:
        nb = inside_idx + int(np.dot(o, strides))
        out = ~inside[nb]
        p, g = inside_idx[out], nb[out]
        if p.size == 0:
            continue
        t = _crossing_fraction(dom.levelset, mesh[p], mesh[g])
        cross[o] = (p, g, t)
        close = t < snap
        if close.any():
            pc, tc = p[close], t[close]
            better = tc < snapped_t[pc]
            pts = mesh[pc[better]] + tc[better, None] * (mesh[g[close][better]] - mesh[pc[better]])
            snapped_t[pc[better]] = tc[better]
            snapped_val[pc[better]] = phi_fn(pts)
            snapped_step[pc[better]] = int(np.dot(o, strides))
    snapped = np.isfinite(snapped_t)
    interior = inside & ~snapped
    if not interior.any():
        raise DomainError("every inside node lies within the snapping band")

    # ghost closures: best (largest theta) interior anchor per outside node
    best_t = np.full(mesh.shape[0], -1.0)
    best_anchor = np.full(mesh.shape[0], -1, dtype=np.int64)
    best_val = np.zeros(mesh.shape[0])
    for o, (p, g, t) in cross.items():
        keep = interior[p]
        p, g, t = p[keep], g[keep], t[keep]
        upd = t > best_t[g]
        p, g, t = p[upd], g[upd], t[upd]
        best_t[g] = t
        best_anchor[g] = p
        best_val[g] = phi_fn(mesh[p] + t[:, None] * (mesh[g] - mesh[p]))

    needed = np.zeros(mesh.shape[0], dtype=bool)
    int_idx = np.flatnonzero(interior)
    for o in offsets:
        needed[int_idx + int(np.dot(o, strides))] = True
    needed &= ~interior
    bnd = np.flatnonzero(needed)
    theta = np.ones(bnd.size)
    anchor = np.full(bnd.size, -1, dtype=np.int64)
    value = np.zeros(bnd.size)
    is_snapped = snapped[bnd]
    value[is_snapped] = snapped_val[bnd[is_snapped]]
    # a snapped node interpolates between its crossing point and the node behind it
    sidx = bnd[is_snapped]
    behind = sidx - snapped_step[sidx]
    ok = interior[behind]
    anchor[np.flatnonzero(is_snapped)[ok]] = behind[ok]
    theta[np.flatnonzero(is_snapped)[ok]] = 1.0 + snapped_t[sidx[ok]]
    ghost = ~is_snapped
    gidx = bnd[ghost]
    if np.any(best_anchor[gidx] < 0):
        raise DomainError("outside node without an interior anchor")  # cannot happen on a valid mask
    t = best_t[gidx]
    on_boundary = t >= 1.0
    anchor[ghost] = np.where(on_boundary, -1, best_anchor[gidx])
    theta[ghost] = np.where(on_boundary, 1.0, t)
    value[ghost] = best_val[gidx]

    return Grid(
        dims=dims,
        spacing=h,
        origin=origin,
        interior_mask=interior.reshape(dims),
        bnd_index=bnd,
        bnd_value=value,
        bnd_anchor=anchor,
        bnd_theta=theta,
        domain=dom,
    )


def grid_from_mask(template: Grid, mask: np.ndarray, boundary_value: float) -> Grid:
    """Grid with an explicit interior mask and nodal Dirichlet boundary data."""
    mask = np.asarray(mask, dtype=bool).reshape(template.dims)
    if not mask.any():
        raise DomainError("empty interior mask")
    n = template.ndim
    strides = np.array([int(np.prod(template.dims[i + 1 :])) for i in range(n)])
    flat = mask.ravel()
    idx = np.flatnonzero(flat)
    multi = np.stack(np.unravel_index(idx, template.dims), axis=-1)
    ok = np.all((multi > 0) & (multi < np.array(template.dims) - 1), axis=1)
    if not ok.all():
        raise DomainError("interior mask touches the array edge")
    needed = np.zeros(flat.size, dtype=bool)
    for o in _offsets(n):
        needed[idx + int(np.dot(o, strides))] = True
    bnd = np.flatnonzero(needed & ~flat)
    return Grid(
        dims=template.dims,
        spacing=template.spacing,
        origin=template.origin,
        interior_mask=mask,
        bnd_index=bnd,
        bnd_value=np.full(bnd.size, float(boundary_value)),
        bnd_anchor=np.full(bnd.size, -1, dtype=np.int64),
        bnd_theta=np.ones(bnd.size),
        domain=template.domain,
    )


# ------------------------------------------------------------------- fields


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray  # shape grid.dims, NaN on inactive nodes

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.dims:
            vals = vals.reshape(self.grid.dims)
        object.__setattr__(self, "values", vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def interior_values(self) -> np.ndarray:
        return self.flat[self.grid.interior_index]

    def active_values(self) -> np.ndarray:
        return self.flat[self.grid.active_mask.ravel()]

    @classmethod
    def from_function(cls, grid: Grid, func: PointFunction) -> "ScalarField":
        vals = np.full(grid.n_nodes, np.nan)
        act = np.flatnonzero(grid.active_mask.ravel())
        vals[act] = func(grid.coords(act))
        return cls(grid, vals)

    @classmethod
    def from_unknowns(cls, grid: Grid, interior_values: np.ndarray) -> "ScalarField":
        """Interior values plus boundary values implied by the closure."""
        E, c = grid.closure
        full = E @ np.asarray(interior_values, dtype=float) + c
        out = np.full(grid.n_nodes, np.nan)
        act = grid.active_mask.ravel()
        out[act] = full[act]
        return cls(grid, out)


def check_same_grid(*fields: ScalarField) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if not g.same_layout(f.grid):
            raise ArgumentError("fields live on different grids")
    return g


# ----------------------------------------------------------------- stencils


class Stencil:
    """Central-difference operators at interior nodes as sparse matrices.

    ``D1[i]`` and ``D2[i][j]`` map the full node vector to the first and
    second derivatives at interior nodes.  Cross derivatives use the 4-point
    diagonal stencil.  All of them are exact on quadratics.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        n = grid.ndim
        h = grid.spacing
        N, M = grid.n_nodes, grid.n_interior
        strides = [int(np.prod(grid.dims[i + 1 :])) for i in range(n)]
        idx = grid.interior_index
        rows = np.arange(M)

        def op(entries):
            r = np.concatenate([rows] * len(entries))
            c = np.concatenate([idx + off for off, _ in entries])
            v = np.concatenate([np.full(M, w) for _, w in entries])
            return sp.csr_matrix((v, (r, c)), shape=(M, N))

        self.D1 = [op([(strides[i], 0.5 / h), (-strides[i], -0.5 / h)]) for i in range(n)]
        self.D2 = [[None] * n for _ in range(n)]
        for i in range(n):
            self.D2[i][i] = op([(strides[i], 1 / h**2), (0, -2 / h**2), (-strides[i], 1 / h**2)])
            for j in range(i + 1, n):
                si, sj = strides[i], strides[j]
                w = 0.25 / h**2
                self.D2[i][j] = op([(si + sj, w), (si - sj, -w), (-si + sj, -w), (-si - sj, w)])
                self.D2[j][i] = self.D2[i][j]

    @cached_property
    def closed(self):
        """Operators composed with the boundary closure: (D1E, D1c, D2E, D2c)."""
        E, c = self.grid.closure
        n = self.grid.ndim
        D1E = [(D @ E).tocsr() for D in self.D1]
        D1c = [D @ c for D in self.D1]
        D2E = [[None] * n for _ in range(n)]
        D2c = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                D2E[i][j] = D2E[j][i] = (self.D2[i][j] @ E).tocsr()
                D2c[i][j] = D2c[j][i] = self.D2[i][j] @ c
        return D1E, D1c, D2E, D2c

    def gradient(self, full: np.ndarray) -> np.ndarray:
        return np.stack([D @ full for D in self.D1], axis=-1)

    def hessian(self, full: np.ndarray) -> np.ndarray:
        n = self.grid.ndim
        H = np.empty((self.grid.n_interior, n, n))
        for i in range(n):
            for j in range(i, n):
                H[:, i, j] = H[:, j, i] = self.D2[i][j] @ full
        return H

    def gradient_from_unknowns(self, U: np.ndarray) -> np.ndarray:
        D1E, D1c, _, _ = self.closed
        return np.stack([D1E[i] @ U + D1c[i] for i in range(self.grid.ndim)], axis=-1)

    def hessian_from_unknowns(self, U: np.ndarray) -> np.ndarray:
        _, _, D2E, D2c = self.closed
        n = self.grid.ndim
        H = np.empty((U.size, n, n))
        for i in range(n):
            for j in range(i, n):
                H[:, i, j] = H[:, j, i] = D2E[i][j] @ U + D2c[i][j]
        return H


def _full_values(f: ScalarField) -> np.ndarray:
    vals = f.flat
    act = f.grid.active_mask.ravel()
    if not np.all(np.isfinite(vals[act])):
        raise ArgumentError("field is not finite on interior and boundary nodes")
    return np.where(act, vals, 0.0)


def hessian_central(f: ScalarField) -> np.ndarray:
    """Discrete Hessians at interior nodes, shape (n_interior, n, n)."""
    return f.grid.stencil.hessian(_full_values(f))


def gradient_central(f: ScalarField) -> np.ndarray:
    """Discrete gradients at interior nodes, shape (n_interior, n)."""
    return f.grid.stencil.gradient(_full_values(f))


def distance_field(grid: Grid) -> ScalarField:
    """Approximate distance to the boundary (within about sqrt(n) h).

    Euclidean distance transform of the interior mask: the distance from each
    interior node to the nearest non-interior node.  Boundary nodes get 0.
    """
    d = ndimage.distance_transform_edt(grid.interior_mask, sampling=grid.spacing)
    vals = np.where(grid.active_mask, d, np.nan)
    return ScalarField(grid, vals)


# ----------------------------------------------------------------------- io


def write_field_csv(f: ScalarField, path) -> None:
    """Rows ``x,y[,z],value`` for every active node, 17 significant digits."""
    g = f.grid
    act = np.flatnonzero(g.active_mask.ravel())
    pts = g.coords(act)
    names = ["x", "y", "z"][: g.ndim]
    with open(path, "w") as fh:
        fh.write(",".join(names + ["value"]) + "\n")
        for p, v in zip(pts, f.flat[act]):
            fh.write(",".join(f"{c:.17g}" for c in (*p, v)) + "\n")


def write_field_binary(f: ScalarField, path) -> None:
    """Magic ``DHLFLD01``, int64 ndim, int64 dims, float64 spacing and origin,
    then the node values in column-major order (all little-endian)."""
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<q", g.ndim))
        fh.write(struct.pack(f"<{g.ndim}q", *g.dims))
        fh.write(struct.pack("<d", g.spacing))
        fh.write(struct.pack(f"<{g.ndim}d", *g.origin))
        fh.write(np.asarray(f.values, dtype="<f8").ravel(order="F").tobytes())


def read_field_binary(path):
    """Return ``(dims, spacing, origin, values)`` from a binary dump."""
    data = Path(path).read_bytes()
    if data[:8] != FIELD_MAGIC:
        raise ArgumentError(f"{path}: bad magic {data[:8]!r}")
    pos = 8
    (nd,) = struct.unpack_from("<q", data, pos)
    pos += 8
    dims = struct.unpack_from(f"<{nd}q", data, pos)
    pos += 8 * nd
    (h,) = struct.unpack_from("<d", data, pos)
    pos += 8
    origin = np.array(struct.unpack_from(f"<{nd}d", data, pos))
    pos += 8 * nd
    vals = np.frombuffer(data, dtype="<f8", offset=pos)
    if vals.size != int(np.prod(dims)):
        raise ArgumentError(f"{path}: truncated field")
    return tuple(dims), h, origin, vals.reshape(dims, order="F").astype(float)


def load_field(grid: Grid, path) -> ScalarField:
    dims, h, origin, vals = read_field_binary(path)
    if dims != grid.dims or not np.isclose(h, grid.spacing) or not np.allclose(origin, grid.origin):
        raise ArgumentError(f"{path}: field layout does not match the grid")
    return ScalarField(grid, vals)
