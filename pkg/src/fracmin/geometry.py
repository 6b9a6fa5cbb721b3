"""Grids, set representations, regions, signed distance and flatness measurement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, optimize

from .errors import DegenerateSetError, FracminError
from . import _kernels


@dataclass(frozen=True)
class Grid:
    """Regular cell grid. ``origin`` is the lower corner of the box; cell
    ``i`` has center ``origin + (i + 1/2) h``."""

    n: int
    dims: tuple
    origin: tuple
    h: float

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if self.n not in (1, 2, 3):
            raise FracminError(f"unsupported dimension n={self.n}")
        if len(self.dims) != self.n or len(self.origin) != self.n:
            raise FracminError("dims/origin length must equal n")
        if not self.h > 0:
            raise FracminError("grid spacing h must be positive")
        if min(self.dims) < 2:
            raise FracminError("need at least 2 cells per axis")

    @classmethod
    def covering(cls, lo: Sequence[float], hi: Sequence[float], cells: int) -> "Grid":
        """Cubic-cell grid covering the box [lo, hi] with ``cells`` cells
        along the longest side."""
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        h = float(np.max(hi - lo)) / cells
        dims = tuple(int(math.ceil(round((b - a) / h, 9))) for a, b in zip(lo, hi))
        return cls(len(lo), dims, tuple(lo), h)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.origin)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + self.h * np.asarray(self.dims)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def axes(self) -> list:
        return [self.origin[k] + (np.arange(self.dims[k]) + 0.5) * self.h for k in range(self.n)]

    def centers(self) -> np.ndarray:
        """Cell centers, shape dims + (n,)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack(mesh, axis=-1)

    def index_of(self, x) -> tuple:
        """Index of the cell containing ``x`` (clipped into the grid)."""
        x = np.asarray(x, float)
        idx = np.floor((x - self.lo) / self.h).astype(int)
        return tuple(int(np.clip(i, 0, d - 1)) for i, d in zip(idx, self.dims))

    def to_index_coords(self, points: np.ndarray) -> np.ndarray:
        """Continuous index coordinates (cell centers at integers), shape (n, ...)."""
        pts = np.asarray(points, float)
        c = (pts - self.lo) / self.h - 0.5
        return np.moveaxis(c, -1, 0)

    def contains_ball(self, center, radius: float, slack: float = 1e-12) -> bool:
        c = np.asarray(center, float)
        return bool(np.all(c - radius >= self.lo - slack) and np.all(c + radius <= self.hi + slack))

    def scaled(self, lam: float) -> "Grid":
        return Grid(self.n, self.dims, tuple(lam * o for o in self.origin), lam * self.h)

    def base(self) -> "Grid":
        """The (n-1)-dimensional grid of columns."""
        if self.n < 2:
            raise FracminError("base grid needs n >= 2")
        return Grid(self.n - 1, self.dims[:-1], self.origin[:-1], self.h)


EXTERIOR_KINDS = ("halfspace", "complement-halfspace", "empty", "full", "periodic-extend")


@dataclass(frozen=True)
class ExteriorRule:
    """How a set continues outside the grid box.

    ``halfspace`` means {x . nu < offset}; ``complement-halfspace`` is its
    complement {x . nu >= offset}.
    """

    kind: str = "empty"
    nu: Optional[tuple] = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in EXTERIOR_KINDS:
            raise FracminError(f"unknown exterior rule {self.kind!r}")
        if self.kind in ("halfspace", "complement-halfspace"):
            if self.nu is None:
                raise FracminError("halfspace rule needs a normal nu")
            nu = np.asarray(self.nu, float)
            norm = np.linalg.norm(nu)
            # leave unit normals untouched so serialization round-trips bit-exactly
            if abs(norm - 1.0) > 4e-16:
                nu = nu / norm
            object.__setattr__(self, "nu", tuple(float(v) for v in nu))

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, float)
        shape = pts.shape[:-1]
        if self.kind == "empty":
            return np.zeros(shape, bool)
        if self.kind == "full":
            return np.ones(shape, bool)
        if self.kind == "periodic-extend":
            raise FracminError("periodic rule needs the occupancy; use VoxelSet.contains")
        proj = pts @ np.asarray(self.nu)
        if self.kind == "halfspace":
            return proj < self.offset
        return proj >= self.offset

    def complement(self) -> "ExteriorRule":
        swap = {"halfspace": "complement-halfspace", "complement-halfspace": "halfspace",
                "empty": "full", "full": "empty", "periodic-extend": "periodic-extend"}
        return replace(self, kind=swap[self.kind])

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.nu is not None:
            d["nu"] = list(self.nu)
            d["offset"] = self.offset
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ExteriorRule":
        nu = d.get("nu")
        return cls(d["kind"], tuple(nu) if nu is not None else None, float(d.get("offset", 0.0)))


@dataclass(frozen=True, eq=False)
class VoxelSet:
    """Occupancy of a set E on a grid, plus the rule fixing E outside the box.

    ``level`` is an optional smooth implicit function sampled at cell centers
    with E = {level < 0}; when present it carries the sub-cell geometry used
    by curvature quadrature, and ``occupancy`` is derived from it.
    """

    grid: Grid
    occupancy: np.ndarray
    exterior: ExteriorRule = field(default_factory=ExteriorRule)
    level: Optional[np.ndarray] = None

    def __post_init__(self):
        occ = np.asarray(self.occupancy, bool).reshape(self.grid.dims)
        object.__setattr__(self, "occupancy", occ)
        if self.level is not None:
            lev = np.asarray(self.level, float).reshape(self.grid.dims)
            if not np.all(np.isfinite(lev)):
                raise FracminError("level values must be finite")
            object.__setattr__(self, "level", lev)

    @classmethod
    def from_level(cls, grid: Grid, level: np.ndarray, exterior: ExteriorRule) -> "VoxelSet":
        level = np.asarray(level, float).reshape(grid.dims)
        return cls(grid, level < 0, exterior, level)

    @classmethod
    def from_predicate(cls, grid: Grid, inside, exterior: ExteriorRule) -> "VoxelSet":
        return cls(grid, inside(grid.centers()), exterior)

    def complement(self) -> "VoxelSet":
        lev = None if self.level is None else -self.level
        return VoxelSet(self.grid, ~self.occupancy, self.exterior.complement(), lev)

    def with_occupancy(self, occ: np.ndarray) -> "VoxelSet":
        return VoxelSet(self.grid, occ, self.exterior, None)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership of arbitrary points, using the exterior rule off the box."""
        pts = np.asarray(points, float)
        g = self.grid
        idx = np.floor((pts - g.lo) / g.h).astype(np.int64)
        dims = np.asarray(g.dims)
        inside = np.all((idx >= 0) & (idx < dims), axis=-1)
        out = np.zeros(pts.shape[:-1], bool)
        if np.any(inside):
            ii = idx[inside]
            out[inside] = self.occupancy[tuple(ii.T)]
        if np.any(~inside):
            if self.exterior.kind == "periodic-extend":
                ii = np.mod(idx[~inside], dims)
                out[~inside] = self.occupancy[tuple(ii.T)]
            else:
                out[~inside] = self.exterior.contains(pts[~inside])
        return out

    def padded_occupancy(self, pad: int) -> np.ndarray:
        """Occupancy on the grid enlarged by ``pad`` cells per side."""
        g = self.grid
        big = Grid(g.n, tuple(d + 2 * pad for d in g.dims), tuple(o - pad * g.h for o in g.origin), g.h)
        occ = self.contains(big.centers())
        sl = tuple(slice(pad, pad + d) for d in g.dims)
        occ[sl] = self.occupancy
        return occ

    def level_function(self, smoothing: float = 3.0) -> np.ndarray:
        """Sub-cell level function: the stored one, else a Gaussian-smoothed
        occupancy (width ``smoothing`` cells) with the exterior rule as padding."""
        if self.level is not None:
            return self.level
        pad = int(math.ceil(4 * smoothing)) + 2
        occ = self.padded_occupancy(pad)
        field_ = np.where(occ, -1.0, 1.0)
        sm = ndimage.gaussian_filter(field_, smoothing, mode="nearest", truncate=4.0)
        sl = tuple(slice(pad, pad + d) for d in self.grid.dims)
        return self.grid.h * np.ascontiguousarray(sm[sl])

    def boundary_mask(self) -> np.ndarray:
        """Occupied cells with an unoccupied face neighbor (exterior rule at the box)."""
        occ = self.padded_occupancy(1)
        core = tuple(slice(1, -1) for _ in range(self.grid.n))
        inner = occ[core]
        has_empty = np.zeros_like(inner)
        for ax in range(self.grid.n):
            for sh in (-1, 1):
                nb = np.roll(occ, sh, axis=ax)[core]
                has_empty |= ~nb
        return inner & has_empty

    def boundary_faces(self):
        """Cell faces separating E from its complement inside or on the box.

        Returns (centers (F, n), axis (F,)) of the faces; faces are squares of
        side h normal to ``axis``.
        """
        g = self.grid
        occ = self.padded_occupancy(1)
        centers = []
        axes = []
        for ax in range(g.n):
            a = np.take(occ, np.arange(0, occ.shape[ax] - 1), axis=ax)
            b = np.take(occ, np.arange(1, occ.shape[ax]), axis=ax)
            diff = a != b
            # trim the padding along the other axes; keep faces touching the box
            sl = []
            for k in range(g.n):
                sl.append(slice(0, g.dims[k] + 1) if k == ax else slice(1, g.dims[k] + 1))
            diff = diff[tuple(sl)]
            idx = np.argwhere(diff).astype(float)
            if idx.size == 0:
                continue
            pos = np.empty_like(idx)
            for k in range(g.n):
                if k == ax:
                    pos[:, k] = g.origin[k] + idx[:, k] * g.h
                else:
                    pos[:, k] = g.origin[k] + (idx[:, k] + 0.5) * g.h
            centers.append(pos)
            axes.append(np.full(len(pos), ax, np.int64))
        if not centers:
            return np.zeros((0, g.n)), np.zeros(0, np.int64)
        return np.concatenate(centers), np.concatenate(axes)

    def normalize(self) -> "VoxelSet":
        """Drop connected components (of E and of its complement) smaller than
        two cells, a grid-scale version of keeping measure-theoretic interiors."""
        occ = self.occupancy.copy()
        for val in (True, False):
            lab, k = ndimage.label(occ == val)
            if k == 0:
                continue
            sizes = ndimage.sum(np.ones_like(lab), lab, index=np.arange(1, k + 1))
            for comp in np.nonzero(sizes < 2)[0] + 1:
                occ[lab == comp] = not val
        return self.with_occupancy(occ)


@dataclass(frozen=True, eq=False)
class GraphFunction:
    """Sampled heights u on an (n-1)-dimensional base grid (cell centers)."""

    base_grid: Grid
    values: np.ndarray
    lipschitz_hint: Optional[float] = None

    def __post_init__(self):
        v = np.asarray(self.values, float).reshape(self.base_grid.dims)
        if not np.all(np.isfinite(v)):
            raise FracminError("graph values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, base: Grid, u) -> "GraphFunction":
        return cls(base, u(base.centers()))

    def points(self) -> np.ndarray:
        return self.base_grid.centers()

    def interpolator(self, order: int = 3):
        """Spline interpolant of u as a callable on arrays of points (..., n-1)."""
        g = self.base_grid
        coeffs = ndimage.spline_filter(self.values, order=order, mode="nearest") if order > 1 else self.values

        def ev(pts):
            pts = np.asarray(pts, float)
            c = g.to_index_coords(pts)
            flat = c.reshape(g.n, -1)
            vals = ndimage.map_coordinates(coeffs, flat, order=order, mode="nearest", prefilter=False)
            return vals.reshape(pts.shape[:-1])

        return ev

    def subgraph(self, zlo: float, zhi: float, exterior: Optional[ExteriorRule] = None) -> VoxelSet:
        """Voxel set {x_n < u(x')} on the grid (base) x [zlo, zhi]."""
        b = self.base_grid
        nz = int(math.ceil(round((zhi - zlo) / b.h, 9)))
        grid = Grid(b.n + 1, b.dims + (nz,), b.origin + (zlo,), b.h)
        z = grid.axes()[-1]
        level = z.reshape((1,) * b.n + (-1,)) - self.values[..., None]
        if exterior is None:
            exterior = ExteriorRule("halfspace", tuple([0.0] * b.n + [1.0]), float(np.mean(self.values)))
        return VoxelSet.from_level(grid, level, exterior)


@dataclass(frozen=True)
class Cylinder:
    """K_rho(P) = {|x' - P'| < rho} x {|x . axis - P . axis| < rho}."""

    center: tuple
    rho: float
    axis: Optional[tuple] = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        object.__setattr__(self, "center", c)
        ax = self.axis if self.axis is not None else tuple([0.0] * (len(c) - 1) + [1.0])
        if abs(np.linalg.norm(ax) - 1.0) > 1e-12:
            raise FracminError("cylinder axis must be a unit vector")
        object.__setattr__(self, "axis", tuple(float(v) for v in ax))
        if not self.rho > 0:
            raise FracminError("cylinder radius must be positive")

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = np.asarray(points, float) - np.asarray(self.center)
        ax = np.asarray(self.axis)
        along = d @ ax
        perp = np.linalg.norm(d - along[..., None] * ax, axis=-1)
        return (perp < self.rho) & (np.abs(along) < self.rho)


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        d = np.asarray(points, float) - np.asarray(self.center, float)
        return np.linalg.norm(d, axis=-1) < self.radius

    @property
    def measure(self) -> float:
        n = len(self.center)
        return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius ** n


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, float)
        return np.all((p >= np.asarray(self.lo)) & (p < np.asarray(self.hi)), axis=-1)

    @property
    def measure(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))


def parse_region(text: str):
    """Parse ``ball:cx,cy:r`` or ``box:x0,y0:x1,y1``."""
    try:
        kind, a, b = text.split(":")
        if kind == "ball":
            return Ball(tuple(float(v) for v in a.split(",")), float(b))
        if kind == "box":
            return Box(tuple(float(v) for v in a.split(",")), tuple(float(v) for v in b.split(",")))
    except ValueError:
        pass
    raise FracminError(f"cannot parse region {text!r}")


def region_to_text(region) -> str:
    if isinstance(region, Ball):
        return "ball:" + ",".join(repr(float(c)) for c in region.center) + ":" + repr(float(region.radius))
    if isinstance(region, Box):
        return "box:" + ",".join(map(repr, region.lo)) + ":" + ",".join(map(repr, region.hi))
    return repr(region)


@dataclass(frozen=True, eq=False)
class SignedDistanceGrid:
    """Signed distance sampled at cell centers; >= 0 outside E."""

    grid: Grid
    values: np.ndarray

    def at(self, points) -> np.ndarray:
        """Multilinear interpolation of the sampled distance."""
        pts = np.asarray(points, float)
        c = self.grid.to_index_coords(pts).reshape(self.grid.n, -1)
        v = ndimage.map_coordinates(self.values, c, order=1, mode="nearest")
        return v.reshape(pts.shape[:-1])


@dataclass(frozen=True)
class SlabFit:
    nu: tuple
    half_width: float


def _rule_boundary_distance(rule: ExteriorRule, grid: Grid, pts: np.ndarray) -> np.ndarray:
    """Distance to the part of a halfspace rule's plane lying outside the box
    (exact when the nearest plane point is outside the box, else skipped)."""
    out = np.full(pts.shape[:-1], np.inf)
    if rule.kind not in ("halfspace", "complement-halfspace"):
        return out
    nu = np.asarray(rule.nu)
    t = pts @ nu - rule.offset
    foot = pts - t[..., None] * nu
    outside = np.any((foot < grid.lo) | (foot > grid.hi), axis=-1)
    out[outside] = np.abs(t[outside])
    return out


def signed_distance_at(E: VoxelSet, points: np.ndarray, faces=None) -> np.ndarray:
    """Exact signed distance from ``points`` to the voxel boundary of E
    (negative inside E), by brute force over boundary faces."""
    pts = np.asarray(points, float)
    if faces is None:
        faces = E.boundary_faces()
    fc, fax = faces
    flat = pts.reshape(-1, E.grid.n)
    if len(fc) == 0 and E.exterior.kind in ("empty", "full"):
        raise DegenerateSetError("degenerate set, distance undefined")
    d = _kernels.face_distance(np.ascontiguousarray(flat), np.ascontiguousarray(fc), fax, 0.5 * E.grid.h)
    d = np.minimum(d, _rule_boundary_distance(E.exterior, E.grid, flat))
    if not np.all(np.isfinite(d)):
        raise DegenerateSetError("degenerate set, distance undefined")
    inside = E.contains(flat)
    return np.where(inside, -d, d).reshape(pts.shape[:-1])


def nearest_boundary_point(E: VoxelSet, points: np.ndarray, faces=None) -> np.ndarray:
    """Closest point of the voxel boundary to each query point."""
    pts = np.asarray(points, float).reshape(-1, E.grid.n)
    if faces is None:
        faces = E.boundary_faces()
    fc, fax = faces
    k = _kernels.face_argmin(np.ascontiguousarray(pts), np.ascontiguousarray(fc), fax, 0.5 * E.grid.h)
    c = fc[k]
    a = fax[k]
    hh = 0.5 * E.grid.h
    lo = c - hh
    hi = c + hh
    rows = np.arange(len(pts))
    lo[rows, a] = c[rows, a]
    hi[rows, a] = c[rows, a]
    return np.clip(pts, lo, hi)


def signed_distance(E: VoxelSet) -> SignedDistanceGrid:
    """Signed distance of every cell center to the boundary of E."""
    if not E.occupancy.any() and E.exterior.kind in ("empty", "periodic-extend"):
        raise DegenerateSetError("degenerate set, distance undefined")
    if E.occupancy.all() and E.exterior.kind in ("full", "periodic-extend"):
        raise DegenerateSetError("degenerate set, distance undefined")
    vals = signed_distance_at(E, E.grid.centers())
    return SignedDistanceGrid(E.grid, vals)


def project_tangent(x, nu) -> np.ndarray:
    """pi_nu x = x - (x . nu) nu."""
    x = np.asarray(x, float)
    nu = np.asarray(nu, float)
    if abs(np.linalg.norm(nu) - 1.0) > 1e-12:
        raise FracminError("nu must be a unit vector")
    return x - (x @ nu)[..., None] * nu if x.ndim > 1 else x - (x @ nu) * nu


def _direction_sample(n: int, count: int = 720) -> np.ndarray:
    if n == 2:
        t = np.pi * np.arange(count) / count
        return np.stack([np.cos(t), np.sin(t)], axis=-1)
    # Fibonacci points on the upper hemisphere
    i = np.arange(count) + 0.5
    z = i / count
    phi = np.pi * (1 + 5 ** 0.5) * i
    r = np.sqrt(1 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)


def slab_fit(E: VoxelSet, region, count: int = 720) -> SlabFit:
    """Thinnest slab {|x . nu| <= w} through the origin containing the
    boundary cell centers of E inside ``region``."""
    mask = E.boundary_mask()
    pts = E.grid.centers()[mask]
    pts = pts[region.contains(pts)]
    if len(pts) == 0:
        raise FracminError("empty boundary in region")
    n = E.grid.n
    dirs = _direction_sample(n, count)
    widths = np.max(np.abs(pts @ dirs.T), axis=0)
    k = int(np.argmin(widths))
    if n == 2:
        t0 = np.pi * k / count
        step = np.pi / count

        def width(t):
            return float(np.max(np.abs(pts @ np.array([np.cos(t), np.sin(t)]))))

        res = optimize.minimize_scalar(width, bracket=None, bounds=(t0 - step, t0 + step),
                                       method="bounded", options={"xatol": 1e-10})
        best_t = res.x if res.fun < widths[k] else t0
        nu = np.array([np.cos(best_t), np.sin(best_t)])
    else:
        def width(a):
            v = np.array([np.sin(a[0]) * np.cos(a[1]), np.sin(a[0]) * np.sin(a[1]), np.cos(a[0])])
            return float(np.max(np.abs(pts @ v)))

        d = dirs[k]
        a0 = np.array([np.arccos(np.clip(d[2], -1, 1)), np.arctan2(d[1], d[0])])
        res = optimize.minimize(width, a0, method="Nelder-Mead",
                                options={"xatol": 1e-9, "fatol": 1e-12, "initial_simplex": None})
        a = res.x if res.fun < widths[k] else a0
        nu = np.array([np.sin(a[0]) * np.cos(a[1]), np.sin(a[0]) * np.sin(a[1]), np.cos(a[0])])
    if nu[-1] < 0 or (nu[-1] == 0 and nu[0] < 0):
        nu = -nu
    nu = nu / np.linalg.norm(nu)
    return SlabFit(tuple(float(v) for v in nu), float(np.max(np.abs(pts @ nu))))


def lipschitz_estimate(u: GraphFunction, region=None) -> float:
    """Largest difference quotient of u over grid neighbors (axis and
    diagonal) with both ends in ``region`` (a Ball in base coordinates)."""
    g = u.base_grid
    v = u.values
    pts = g.centers()
    inside = np.ones(g.dims, bool) if region is None else region.contains(pts)
    best = 0.0
    offsets = [o for o in np.ndindex(*([3] * g.n)) if any(c != 1 for c in o)]
    for off in offsets:
        o = np.array(off) - 1
        if tuple(-o) < tuple(o):
            continue
        src = tuple(slice(max(0, -k), d - max(0, k)) for k, d in zip(o, g.dims))
        dst = tuple(slice(max(0, k), d - max(0, -k)) for k, d in zip(o, g.dims))
        ok = inside[src] & inside[dst]
        if not ok.any():
            continue
        q = np.abs(v[dst] - v[src])[ok] / (g.h * np.linalg.norm(o))
        best = max(best, float(q.max()))
    return best
