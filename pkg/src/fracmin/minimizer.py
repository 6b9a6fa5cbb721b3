"""Descent minimizers of J_s with frozen exterior data, Euler-Lagrange
residuals, the flatness ladder and the cone experiment."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .barrier import improvement_schedule
from .curvature import frac_curvature
from .energy import FlipModel, KernelSpec, js_energy
from .errors import FracminError
from .geometry import Ball, GraphFunction, VoxelSet, region_to_text, slab_fit
from . import fixtures


@dataclass(frozen=True)
class MinimizeConfig:
    """``sweep_order`` None visits cells in index order; an integer seeds a
    fixed permutation."""

    s: float = 0.9
    omega: object = field(default_factory=lambda: Ball((0.0, 0.0), 1.0))
    far_cutoff: Optional[float] = None
    max_sweeps: int = 200
    tol_energy: float = 1e-10
    mode: str = "graph"
    sweep_order: Optional[int] = None
    max_move: int = 3
    el_radius: float = 0.25

    def __post_init__(self):
        if not self.tol_energy > 0:
            raise FracminError("tol_energy must be positive")
        if self.max_sweeps < 1:
            raise FracminError("max_sweeps must be at least 1")
        if self.mode not in ("graph", "voxel"):
            raise FracminError(f"unknown mode {self.mode!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["omega"] = region_to_text(self.omega)
        return d


@dataclass
class MinimizeResult:
    set: VoxelSet
    trace: list
    sweeps: int
    flips: int
    converged: bool

    @property
    def energy(self) -> float:
        return self.trace[-1]


def _as_voxels(E0, omega) -> VoxelSet:
    if isinstance(E0, VoxelSet):
        return E0
    if isinstance(E0, GraphFunction):
        b = E0.base_grid
        half = b.h * b.dims[0] / 2
        return E0.subgraph(-half, half)
    raise FracminError("E0 must be a VoxelSet or GraphFunction")


def _order(count: int, seed) -> np.ndarray:
    if seed is None:
        return np.arange(count)
    return np.random.default_rng(seed).permutation(count)


def minimize(E0, cfg: MinimizeConfig) -> MinimizeResult:
    """Descent on J_s(., Omega) among sets equal to E0 outside Omega.

    Voxel mode flips single cells when that lowers the energy by more than a
    roundoff tolerance. Graph mode moves each column's interface by up to
    ``max_move`` cells to the best position in that range. Both stop when a
    sweep lowers the energy by less than ``tol_energy`` relative.
    """
    E = _as_voxels(E0, cfg.omega)
    g = E.grid
    kernel = KernelSpec(g.n, cfg.s)
    cutoff = g.diameter if cfg.far_cutoff is None else float(cfg.far_cutoff)
    model = FlipModel(E, cfg.omega, kernel, cutoff)
    energy = js_energy(E, cfg.omega, kernel, cutoff).total
    trace = [energy]
    scale = max(abs(energy), 1e-300)
    tol = 1e-12 * scale
    if cfg.mode == "graph":
        columns = _columns(model)
        order = _order(len(columns), cfg.sweep_order)
    else:
        order = _order(len(model.cells), cfg.sweep_order)
    flips = 0
    converged = False
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        deltas = []
        if cfg.mode == "voxel":
            for i in order:
                d = model.delta(int(i))
                if d < -tol:
                    model.flip(int(i))
                    deltas.append(d)
                    flips += 1
        else:
            for c in order:
                d, members = _best_column_move(model, columns[c], cfg.max_move, tol)
                if members:
                    for i in members:
                        model.flip(i)
                    deltas.append(d)
                    flips += len(members)
        change = math.fsum(deltas)
        energy = math.fsum([energy, change])
        trace.append(energy)
        if -change < cfg.tol_energy * scale:
            converged = True
            break
    if not converged:
        warnings.warn("minimize: max_sweeps reached before the energy settled", RuntimeWarning)
    return MinimizeResult(_carry_level(E, model.voxel_set()), trace, sweeps, flips, converged)


def _carry_level(E0: VoxelSet, E: VoxelSet) -> VoxelSet:
    """The input set itself (with its sub-cell level function) when no cell
    changed; a blended level would put spurious kinks into the spline
    used by the curvature quadrature, so a changed set keeps none."""
    if E0.level is not None and np.array_equal(E.occupancy, E0.occupancy):
        return E0
    return E


def _columns(model: FlipModel) -> list:
    """Per base column, the Omega-cell indices ordered by height; each column
    of the occupancy must be a subgraph (occupied below, empty above)."""
    g = model.grid
    occ = model.occ
    flat = occ.reshape(-1, g.dims[-1])
    if np.any(flat[:, 1:] & ~flat[:, :-1]):
        raise FracminError("graph mode needs a subgraph: occupancy must not increase with x_n")
    cols = {}
    for i, c in enumerate(model.cells.tolist()):
        cols.setdefault(tuple(c[:-1]), []).append((c[-1], i))
    out = []
    for key in sorted(cols):
        items = sorted(cols[key])
        out.append(([k for k, _ in items], [i for _, i in items]))
    return out


def _best_column_move(model: FlipModel, column, max_move: int, tol: float):
    heights, members = column
    occ = [model.sigma(i) > 0 for i in members]
    # interface position within the column: number of occupied Omega cells
    top = sum(occ)
    if any(occ[top:]) or not all(occ[:top]):
        return 0.0, []
    best, best_set = -tol, []
    for j in range(1, max_move + 1):
        for group in (members[top:top + j], members[max(0, top - j):top]):
            if len(group) != j:
                continue
            d = model.group_delta(group)
            if d < best:
                best, best_set = d, list(group)
    return best, best_set


# ---------------------------------------------------------------- residuals

@dataclass
class ELResidualReport:
    max_residual: float
    sample_count: int
    sign_violations: int
    tolerance: float
    values: list
    points: list

    def to_json(self) -> dict:
        return asdict(self)


def boundary_samples(E: VoxelSet, region, count: int) -> np.ndarray:
    """Evenly spaced picks from the boundary faces of E inside ``region``,
    ordered lexicographically."""
    fc, _ = E.boundary_faces()
    fc = fc[region.contains(fc)]
    if len(fc) == 0:
        raise FracminError("no boundary inside the sampling region")
    fc = fc[np.lexsort(fc.T[::-1])]
    idx = np.unique(np.linspace(0, len(fc) - 1, min(count, len(fc))).round().astype(int))
    return fc[idx]


def el_residual(E: VoxelSet, cfg: MinimizeConfig, sample_count: int = 12,
                region=None) -> ELResidualReport:
    """(1 - s) * integral of (chi_E - chi_{complement E}) |x - y|^{-n-s} over B_r(x)
    at boundary points x in Omega (by default at least 2h inside it),
    r = min(distance to the box edge, cfg.el_radius).

    A sign violation is a point where the value exceeds the tolerance
    5 (h + quadrature error), the one-sided form of the equation.
    """
    g = E.grid
    if region is None:
        # faces on cells just outside Omega belong to the frozen data
        om = cfg.omega
        region = Ball(om.center, om.radius - 2 * g.h) if isinstance(om, Ball) else om
    pts = boundary_samples(E, region, sample_count)
    vals = []
    errs = []
    used = []
    for p in pts:
        edge = float(np.min(np.minimum(p - g.lo, g.hi - p)))
        r = min(edge, cfg.el_radius) * (1 - 1e-9)
        if r <= 2 * g.h:
            continue
        rep = frac_curvature(E, p, r, cfg.s, epsrel=1e-6, epsabs=1e-4)
        vals.append((1 - cfg.s) * rep.raw_integral)
        errs.append(rep.quad_error_est)
        used.append(list(rep.x0))
    if not vals:
        raise FracminError("no usable boundary samples")
    tol = 5 * (g.h + max(errs))
    arr = np.abs(np.asarray(vals))
    return ELResidualReport(float(arr.max()), len(vals), int(np.sum(np.asarray(vals) > tol)), tol,
                            [float(v) for v in vals], used)


# ---------------------------------------------------------------- flatness

@dataclass(frozen=True)
class FlatnessLadder:
    K: int
    alpha: float

    @property
    def a(self) -> float:
        return 2.0 ** (-self.K * self.alpha)

    def required(self, i: int) -> float:
        return self.a * 2.0 ** (i * (1 + self.alpha))

    @property
    def levels(self) -> list:
        return [{"i": i, "radius": 2.0 ** i, "required": self.required(i)} for i in range(self.K + 1)]


@dataclass
class FlatnessReport:
    levels: list
    passed: bool
    d: float
    branch: str
    scale_used: float

    def to_json(self) -> dict:
        return asdict(self)


def flatness_ladder_check(E: VoxelSet, ladder: FlatnessLadder, mu: float = 0.5, M: float = 4.0) -> FlatnessReport:
    """Slab fits on B_{2^i}, i = 0..K, against a 2^{i(1+alpha)}, and the
    alternative at scale d = 1/(2 M^k0): boundary in B_d below a(1 - d^2)
    ("upper"), above a(-1 + d^2) ("lower"), "both" or "neither".

    When no boundary face lies in B_d the faces in B_{2h} are used and the
    radius actually used is reported.
    """
    g = E.grid
    if not g.contains_ball(np.zeros(g.n), 2.0 ** ladder.K):
        raise FracminError("grid box must contain B_{2^K}")
    levels = []
    ok = True
    for lv in ladder.levels:
        fit = slab_fit(E, Ball(tuple([0.0] * g.n), lv["radius"]))
        good = fit.half_width <= lv["required"]
        ok = ok and good
        levels.append({**lv, "nu": list(fit.nu), "half_width": fit.half_width, "passed": bool(good)})
    d = improvement_schedule(mu, M).d
    fc, _ = E.boundary_faces()
    rad = np.linalg.norm(fc, axis=-1)
    used = d
    sel = fc[rad < d]
    if len(sel) == 0:
        used = 2 * g.h
        sel = fc[rad < used]
    a = ladder.a
    z = sel[:, -1]
    upper = bool(len(z) and np.all(z <= a * (1 - d * d)))
    lower = bool(len(z) and np.all(z >= a * (-1 + d * d)))
    branch = "both" if upper and lower else "upper" if upper else "lower" if lower else "neither"
    return FlatnessReport(levels, bool(ok), d, branch, float(used))


def column_heights(E: VoxelSet) -> np.ndarray:
    """Interface height per base column: top face of the lowest occupied run."""
    g = E.grid
    occ = E.occupancy
    first_out = np.argmax(~occ, axis=-1)
    full = occ.all(axis=-1)
    h = g.origin[-1] + first_out * g.h
    return np.where(full, g.hi[-1], h)


def oscillation(E: VoxelSet, radius: float) -> float:
    """max - min of the interface heights over base columns with |x'| < radius."""
    g = E.grid
    base = g.base().centers()
    inside = np.linalg.norm(base, axis=-1) < radius
    h = column_heights(E)[inside]
    return float(h.max() - h.min())


# ---------------------------------------------------------------- cones

@dataclass
class ConeRow:
    s: float
    theta_deg: float
    cells: int
    h: float
    vertex_height: float
    cone_deviation: float
    line_deviation: float
    vertex_curvature: float
    energy_initial: float
    energy_final: float
    sweeps: int


def cone_experiment(angle: float, s_list, cfg: Optional[MinimizeConfig] = None, cells: int = 128) -> list:
    """Minimize from cone data {x_2 < |x_1| tan(angle)} for each s and measure
    the interior interface against the cone and against the best line
    through the origin (which, by symmetry, is horizontal)."""
    base = cfg or MinimizeConfig()
    rows = []
    t = math.tan(math.radians(angle))
    for s in s_list:
        E0 = fixtures.cone(angle, cells=cells)
        c = MinimizeConfig(s=float(s), omega=base.omega, far_cutoff=base.far_cutoff, max_sweeps=base.max_sweeps,
                           tol_energy=base.tol_energy, mode="graph", sweep_order=base.sweep_order,
                           max_move=base.max_move)
        g = E0.grid
        vertex = frac_curvature(E0, np.zeros(2), 0.25, float(s)).raw_integral * (1 - s)
        res = minimize(E0, c)
        x = g.base().centers()[..., 0]
        heights = column_heights(res.set)
        inner = np.abs(x) < base.omega.radius - g.h
        cone_dev = float(np.max(np.abs(heights[inner] - np.abs(x[inner]) * t)))
        line_dev = float(np.max(np.abs(heights[inner])))
        k0 = int(np.argmin(np.abs(x)))
        rows.append(ConeRow(float(s), float(angle), cells, g.h, float(heights[k0]), cone_dev, line_dev,
                            float(vertex), res.trace[0], res.trace[-1], res.sweeps))
    return rows
