"""Level sets {d_E = -delta} and {d_E = +delta} of the signed distance as
graphs, with the Lipschitz, touching and separation checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np
from scipy import optimize

from .errors import FracminError, HypothesisError, ResolutionError
from .geometry import Ball, GraphFunction, Grid, VoxelSet, lipschitz_estimate, nearest_boundary_point, \
    signed_distance_at

DEFAULT_C = 1.0 / 16
C_CHECK = 100.0


@dataclass(frozen=True)
class LevelSetSpec:
    """``side`` is ``"-"`` for {d_E = -delta} (inside E) or ``"+"``."""

    delta: float
    side: str
    gamma: float
    r: float

    def __post_init__(self):
        side = {"minus": "-", "plus": "+"}.get(self.side, self.side)
        object.__setattr__(self, "side", side)
        if side not in ("-", "+"):
            raise FracminError("side must be '+' or '-'")
        if not self.delta > 0:
            raise FracminError("delta must be positive")
        if not 0 <= self.gamma < self.r:
            raise FracminError("need 0 <= gamma < r")
        if not self.delta < self.r / 4:
            raise FracminError("need delta < r/4")

    @property
    def target(self) -> float:
        return -self.delta if self.side == "-" else self.delta


@dataclass(frozen=True)
class TouchingParaboloid:
    center: tuple
    radius: float

    @property
    def opening(self) -> float:
        return 1.0 / self.radius


def _column_centers(base: Grid, radius: float) -> np.ndarray:
    """Base cell centers strictly inside the (n-1)-ball of the given radius."""
    c = base.centers()
    return c[np.linalg.norm(c, axis=-1) < radius]


def check_trap(E: VoxelSet, gamma: float, r: float) -> None:
    """{x_n <= -gamma} ∩ K_r ⊆ E ∩ K_r ⊆ {x_n <= gamma} ∩ K_r on cell centers."""
    c = E.grid.centers()
    inK = (np.linalg.norm(c[..., :-1], axis=-1) < r) & (np.abs(c[..., -1]) < r)
    z = c[..., -1]
    below = inK & (z <= -gamma)
    above = inK & (z > gamma)
    if np.any(below & ~E.occupancy) or np.any(above & E.occupancy):
        raise HypothesisError("hypothesis (Gt) fails: E is not trapped between -gamma and gamma", "(Gt)")


def column_crossings(E: VoxelSet, target: float, columns: np.ndarray, zlo: float, zhi: float,
                     faces=None, strict: bool = True) -> np.ndarray:
    """Height z at which the signed distance equals ``target`` on each
    vertical line through ``columns``; exactly one crossing is required.

    Columns with no or several crossings raise when ``strict``, else get nan.
    """
    g = E.grid
    if faces is None:
        faces = E.boundary_faces()
    step = g.h / 2
    zs = np.linspace(zlo, zhi, max(3, int(math.ceil((zhi - zlo) / step)) + 1))
    m = len(columns)
    pts = np.empty((m, len(zs), g.n))
    pts[..., :-1] = columns[:, None, :]
    pts[..., -1] = zs[None, :]
    d = signed_distance_at(E, pts.reshape(-1, g.n), faces).reshape(m, len(zs)) - target
    out = np.full(m, np.nan)
    for i in range(m):
        above = d[i] > 0
        flips = np.nonzero(above[1:] != above[:-1])[0]
        if len(flips) != 1:
            if strict:
                raise FracminError(f"level set not a graph here (column {columns[i].tolist()}, "
                                   f"{len(flips)} crossings)")
            continue
        k = flips[0]
        col = columns[i]

        def f(z):
            p = np.append(col, z)[None]
            return float(signed_distance_at(E, p, faces)[0]) - target

        out[i] = optimize.brentq(f, zs[k], zs[k + 1], xtol=1e-13, rtol=1e-14)
    return out


def level_set_graph(E: VoxelSet, spec: LevelSetSpec, c: float = DEFAULT_C) -> GraphFunction:
    """S^± ∩ K_{r-2 delta} as heights over the base cells of the square
    |x'_i| < r - 2 delta; the single-crossing requirement is enforced on the
    ball |x'| < r - 2 delta and columns outside it that fail copy their
    nearest valid neighbor."""
    g = E.grid
    if spec.delta < 2 * g.h:
        raise ResolutionError("resolution insufficient: delta < 2h")
    if spec.gamma / spec.delta >= c:
        raise HypothesisError(f"hypothesis gamma/delta < c fails ({spec.gamma / spec.delta:.4g} >= {c:.4g})",
                              "gamma/delta < c")
    check_trap(E, spec.gamma, spec.r)
    rr = spec.r - 2 * spec.delta
    base = g.base()
    axes = base.axes()
    keep = [np.nonzero(np.abs(a) < rr)[0] for a in axes]
    if any(len(k) < 2 for k in keep):
        raise ResolutionError("resolution insufficient: too few columns in K_{r-2 delta}")
    sub = Grid(base.n, tuple(len(k) for k in keep),
               tuple(base.origin[i] + keep[i][0] * base.h for i in range(base.n)), base.h)
    cols = sub.centers().reshape(-1, base.n)
    inball = np.linalg.norm(cols, axis=-1) < rr
    faces = E.boundary_faces()
    vals = np.full(len(cols), np.nan)
    vals[inball] = column_crossings(E, spec.target, cols[inball], -spec.r, spec.r, faces, strict=True)
    if np.any(~inball):
        vals[~inball] = column_crossings(E, spec.target, cols[~inball], -spec.r, spec.r, faces, strict=False)
        bad = np.isnan(vals)
        if np.any(bad):
            good = np.nonzero(~bad)[0]
            near = good[np.argmin(np.linalg.norm(cols[bad][:, None] - cols[good][None], axis=-1), axis=1)]
            vals[bad] = vals[near]
    return GraphFunction(sub, vals.reshape(sub.dims))


@dataclass
class LipschitzReport:
    measured: float
    bound: float
    slack: float
    passed: bool
    lower_reference: float

    def to_json(self) -> dict:
        return asdict(self)


def lipschitz_bound_check(E: VoxelSet, spec: LevelSetSpec, c: float = DEFAULT_C,
                          c_check: float = C_CHECK) -> LipschitzReport:
    """Measured Lipschitz constant of S^± on K_{r-2 delta} against
    C sqrt(gamma/delta) with C = 100, plus slack 4h/delta."""
    u = level_set_graph(E, spec, c)
    region = Ball(tuple([0.0] * u.base_grid.n), spec.r - 2 * spec.delta)
    measured = lipschitz_estimate(u, region)
    ratio = math.sqrt(spec.gamma / spec.delta)
    bound = c_check * ratio
    slack = 4 * E.grid.h / spec.delta
    return LipschitzReport(measured, bound, slack, measured <= bound + slack, 0.5 * ratio)


@dataclass
class TouchReport:
    points: list
    passed: list

    @property
    def all_passed(self) -> bool:
        return all(self.passed)

    def to_json(self) -> dict:
        return {"points": self.points, "passed": self.passed, "all_passed": self.all_passed}


def paraboloid_touch_check(E: VoxelSet, spec: LevelSetSpec, sample_points=None, c: float = DEFAULT_C,
                           tol: float = 1e-8) -> TouchReport:
    """At each sampled graph point x, find the boundary point y nearest to x and
    verify |y - x| = delta within 2h and that nearby graph points stay outside
    B_delta(y) on the far side from E's boundary (below the lower cap for S^-,
    above the upper cap for S^+)."""
    u = level_set_graph(E, spec, c)
    g = E.grid
    cols = u.base_grid.centers().reshape(-1, u.base_grid.n)
    vals = u.values.ravel()
    if sample_points is None:
        idx = np.arange(len(cols))
    else:
        sp = np.atleast_2d(np.asarray(sample_points, float))
        idx = np.array([int(np.argmin(np.linalg.norm(cols - p, axis=-1))) for p in sp])
    faces = E.boundary_faces()
    x = np.column_stack([cols[idx], vals[idx]])
    y = nearest_boundary_point(E, x, faces)
    dist_y = np.abs(signed_distance_at(E, y, faces))
    points = []
    passed = []
    for k, i in enumerate(idx):
        ok = abs(np.linalg.norm(y[k] - x[k]) - spec.delta) <= 2 * g.h and dist_y[k] <= 2 * g.h
        off = np.linalg.norm(cols - y[k][:-1], axis=-1)
        near = off < spec.delta
        cap = np.sqrt(np.maximum(spec.delta ** 2 - off[near] ** 2, 0.0))
        if spec.side == "-":
            ok = ok and bool(np.all(vals[near] <= y[k][-1] - cap + tol))
        else:
            ok = ok and bool(np.all(vals[near] >= y[k][-1] + cap - tol))
        points.append([float(v) for v in x[k]])
        passed.append(bool(ok))
    return TouchReport(points, passed)


def boundary_graph(E: VoxelSet, columns: np.ndarray | None = None) -> GraphFunction:
    """Heights of the boundary of E along each column: the zero of the level
    function by linear interpolation when E has one, else the top face of the
    lowest occupied run."""
    g = E.grid
    base = g.base()
    z = g.axes()[-1]
    if E.level is not None:
        lev = E.level
        below = lev < 0
        first_out = np.argmax(~below, axis=-1)
        k = np.clip(first_out, 1, len(z) - 1)
        a = np.take_along_axis(lev, (k - 1)[..., None], -1)[..., 0]
        b = np.take_along_axis(lev, k[..., None], -1)[..., 0]
        t = a / (a - b)
        vals = z[k - 1] + t * g.h
    else:
        occ = E.occupancy
        first_out = np.argmax(~occ, axis=-1)
        vals = g.origin[-1] + first_out * g.h
    return GraphFunction(base, vals)


@dataclass
class SeparationReport:
    max_gap: float
    bound: float
    M_o: float
    passed: bool

    def to_json(self) -> dict:
        return asdict(self)


def separation_check(E: VoxelSet, E_star: VoxelSet, gamma: float, delta: float,
                     M_o: float | None = None) -> SeparationReport:
    """u^+ - u^- <= 2(2 + M_o)(gamma + delta) on |x'| <= 1/2.

    The neighborhood hypothesis is checked on the boundaries: every boundary
    face of E inside K_2 lies within gamma (plus h/2) of the boundary of
    E_star. M_o defaults to the Lipschitz estimate of E_star's boundary graph
    on |x'| < 2.
    """
    g = E.grid
    if E_star.grid != g:
        raise FracminError("E and E_star must share a grid")
    fc, fax = E.boundary_faces()
    inK = (np.linalg.norm(fc[:, :-1], axis=-1) < 2) & (np.abs(fc[:, -1]) < 2)
    if np.any(inK):
        d = np.abs(signed_distance_at(E_star, fc[inK]))
        if np.max(d) > gamma + 0.5 * g.h + 1e-12:
            raise HypothesisError(f"hypothesis (n992) fails: boundary of E strays {np.max(d):.4g} > gamma "
                                  f"from E_star", "(n992)")
    star = boundary_graph(E_star)
    zero = tuple([0.0] * star.base_grid.n)
    if M_o is None:
        M_o = lipschitz_estimate(star, Ball(zero, 2.0))
    cols = _column_centers(g.base(), 0.5 + 1e-12)
    faces = E.boundary_faces()
    # the level sets lie within gamma + delta of the graph of E_star
    near = Ball(zero, 0.5 + gamma + delta + g.h).contains(star.points())
    heights = star.values[near]
    zlo = max(g.lo[-1] + g.h, float(heights.min()) - gamma - 2 * delta, -2.0)
    zhi = min(g.hi[-1] - g.h, float(heights.max()) + gamma + 2 * delta, 2.0)
    up = column_crossings(E, delta, cols, zlo, zhi, faces)
    dn = column_crossings(E, -delta, cols, zlo, zhi, faces)
    gap = float(np.max(up - dn))
    bound = 2 * (2 + M_o) * (gamma + delta)
    return SeparationReport(gap, bound, float(M_o), gap <= bound)
