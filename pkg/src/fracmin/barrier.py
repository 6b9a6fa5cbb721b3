"""The radial barrier Phi, its checks, the convex envelope used in the
measure estimate, the dyadic-ring detachment diagnostic and the
improvement schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import ndimage, optimize, spatial

from .curvature import frac_curvature
from .errors import FracminError, HypothesisError
from .geometry import Ball, ExteriorRule, GraphFunction, Grid, VoxelSet, lipschitz_estimate


# ---------------------------------------------------------------- barrier

@dataclass(frozen=True)
class BarrierSpec:
    """Constants of the barrier. ``mu_q=None`` picks the smallest amplitude
    with c0^q mu (c1^-q - (c1+c2)^-q) >= 6."""

    n: int = 2
    R: float = 1.0
    eps: float = 0.01
    q: float = 2.0
    mu_q: Optional[float] = None
    c0: float = 0.25
    c1: Optional[float] = None
    c2: Optional[float] = None
    c3: float = 1.0
    c4: float = 2.0
    c5: Optional[float] = None

    def __post_init__(self):
        root = math.sqrt(self.n)
        if self.c1 is None:
            object.__setattr__(self, "c1", 1.5 * root)
        if self.c2 is None:
            object.__setattr__(self, "c2", 1.5 * root)
        if self.c5 is None:
            object.__setattr__(self, "c5", 100 * root)
        if self.mu_q is None:
            object.__setattr__(self, "mu_q", footnote_mu(self.q, self.c0, self.c1, self.c2))
        if self.n not in (2, 3):
            raise FracminError("barrier supports n = 2, 3")
        if not (self.R > 0 and self.eps > 0):
            raise FracminError("R and eps must be positive")

    def footnote_margin(self) -> float:
        """c0^q mu (c1^-q - (c1+c2)^-q) - 6, nonnegative when the amplitude is large enough."""
        return self.c0 ** self.q * self.mu_q * (self.c1 ** -self.q - (self.c1 + self.c2) ** -self.q) - 6.0

    def violations(self) -> list:
        out = []
        if not 0 < self.c0 < self.c1:
            out.append("need 0 < c0 < c1")
        if not self.q > self.n - 3:
            out.append("need q > n - 3")
        if self.footnote_margin() < -1e-9:
            out.append("mu_q below the footnote bound")
        return out

    def to_json(self) -> dict:
        return asdict(self)


def footnote_mu(q, c0, c1, c2) -> float:
    return 6.0 / (c0 ** q * (c1 ** -q - (c1 + c2) ** -q))


class Barrier:
    """Phi(x') = R phi(|x'|/R) with the power tail beyond c0 and a core
    p(t) = a0 + a3 t^3 + a4 t^4 + a5 t^5 in t = |x'|^2 matching the tail to
    third order at t = c0^2 (so p'(0) = p''(0) = 0)."""

    def __init__(self, spec: BarrierSpec):
        self.spec = spec
        sp = spec
        self.A = sp.c0 ** sp.q * sp.mu_q / sp.c1 ** sp.q - 4.0
        self.B = sp.c0 ** sp.q * sp.mu_q
        t0 = sp.c0 ** 2
        e = -sp.q / 2
        # derivatives in t of eps (A - B t^e) at t0
        coef = [1.0, e, e * (e - 1), e * (e - 1) * (e - 2)]
        pw = [t0 ** (e - k) for k in range(4)]
        rhs = [sp.eps * (self.A - self.B * pw[0])] + [-sp.eps * self.B * coef[k] * pw[k] for k in (1, 2, 3)]
        mat = np.array([[1, t0 ** 3, t0 ** 4, t0 ** 5],
                        [0, 3 * t0 ** 2, 4 * t0 ** 3, 5 * t0 ** 4],
                        [0, 6 * t0, 12 * t0 ** 2, 20 * t0 ** 3],
                        [0, 6, 24 * t0, 60 * t0 ** 2]], float)
        self.core = np.linalg.solve(mat, rhs)

    def profile(self, rho):
        """phi(rho) for the unit scale R = 1."""
        rho = np.asarray(rho, float)
        sp = self.spec
        t = rho * rho
        a0, a3, a4, a5 = self.core
        core = a0 + t ** 3 * (a3 + t * (a4 + t * a5))
        with np.errstate(divide="ignore"):
            tail = sp.eps * (self.A - self.B * np.power(np.maximum(rho, sp.c0), -sp.q))
        return np.where(rho > sp.c0, tail, core)

    def profile_derivatives(self, rho):
        """(phi', phi'') in rho at unit scale."""
        rho = np.asarray(rho, float)
        sp = self.spec
        a0, a3, a4, a5 = self.core
        t = rho * rho
        dpt = 3 * a3 * t ** 2 + 4 * a4 * t ** 3 + 5 * a5 * t ** 4
        d2pt = 6 * a3 * t + 12 * a4 * t ** 2 + 20 * a5 * t ** 3
        core1 = 2 * rho * dpt
        core2 = 2 * dpt + 4 * t * d2pt
        r = np.maximum(rho, sp.c0)
        tail1 = sp.eps * self.B * sp.q * r ** (-sp.q - 1)
        tail2 = -sp.eps * self.B * sp.q * (sp.q + 1) * r ** (-sp.q - 2)
        return np.where(rho > sp.c0, tail1, core1), np.where(rho > sp.c0, tail2, core2)

    def __call__(self, x):
        """Phi at points x' (..., n-1)."""
        x = np.asarray(x, float)
        R = self.spec.R
        rho = np.linalg.norm(x, axis=-1) if x.ndim and x.shape[-1] == self.spec.n - 1 else np.abs(x)
        return R * self.profile(rho / R)

    def radial(self, rho):
        return self.spec.R * self.profile(np.asarray(rho, float) / self.spec.R)


def build_barrier(spec: BarrierSpec, base: Optional[Grid] = None, strict: bool = True) -> GraphFunction:
    """Sample Phi on ``base`` (default: the square of half-width
    (c1 + c2 + c5 + c3) R with 1024 cells per side in 1-D, 256 in 2-D)."""
    if strict:
        bad = spec.violations()
        if bad:
            raise FracminError("; ".join(bad))
    phi = Barrier(spec)
    if base is None:
        half = (spec.c1 + spec.c2 + spec.c5 + spec.c3) * spec.R
        m = spec.n - 1
        base = Grid.covering([-half] * m, [half] * m, 1024 if m == 1 else 256)
    return GraphFunction(base, phi(base.centers()))


@dataclass
class BarrierPropertyReport:
    sup_grad: float
    R_sup_hess: float
    C_report: float
    outer_level_ok: bool
    inner_level_ok: bool
    monotone_ok: bool
    footnote_level_ok: bool
    sup_abs_over_eps_R: float
    passed: bool
    failures: list

    def to_json(self) -> dict:
        return asdict(self)


def barrier_property_check(spec: BarrierSpec, samples: int = 20001, C_max: float = math.inf) -> BarrierPropertyReport:
    """Finite differences of Phi on a declared radial grid
    rho_k = k (c1 + c2 + c5 + c3) R / (samples - 1), plus the two level conditions
    Phi > eps R on |x'| >= (c1 + c2) R and Phi <= -4 eps R on |x'| <= c1 R, and
    the amplitude level Phi >= 2 eps R at |x'| = (c1 + c2) R, which holds
    exactly when mu_q meets the amplitude bound.

    Since Phi is radial, |grad Phi| = |phi'| and |D^2 Phi| = max(|phi''|, |phi'|/rho).
    """
    phi = Barrier(spec)
    R = spec.R
    rho = np.linspace(0.0, (spec.c1 + spec.c2 + spec.c5 + spec.c3) * R, samples)
    dr = rho[1] - rho[0]
    vals = phi.radial(rho)
    d1 = np.gradient(vals, dr, edge_order=2)
    d2 = np.gradient(d1, dr, edge_order=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        tang = np.where(rho > 0, np.abs(d1) / rho, np.abs(d2))
    hess = np.maximum(np.abs(d2), tang if spec.n > 2 else 0.0)
    sup_grad = float(np.max(np.abs(d1)))
    R_sup_hess = float(R * np.max(hess))
    C_report = (sup_grad + R_sup_hess) / spec.eps
    tol = 1e-12 * spec.eps * R
    outer = rho >= (spec.c1 + spec.c2) * R
    inner = rho <= spec.c1 * R
    outer_ok = bool(np.all(vals[outer] > spec.eps * R))
    inner_ok = bool(np.all(vals[inner] <= -4 * spec.eps * R + tol))
    mono_ok = bool(np.all(np.diff(vals) >= -tol))
    foot_ok = bool(phi.radial((spec.c1 + spec.c2) * R) >= 2 * spec.eps * R - tol)
    failures = []
    if not outer_ok:
        failures.append("Phi > eps R on |x'| >= (c1+c2) R")
    if not inner_ok:
        failures.append("Phi <= -4 eps R on |x'| <= c1 R")
    if not mono_ok:
        failures.append("Phi radially nondecreasing")
    if not foot_ok:
        failures.append("Phi >= 2 eps R at |x'| = (c1+c2) R")
    if not C_report <= C_max:
        failures.append("sup|grad Phi| + R|D^2 Phi| <= C eps")
    return BarrierPropertyReport(sup_grad, R_sup_hess, C_report, outer_ok, inner_ok, mono_ok, foot_ok,
                                 float(np.max(np.abs(vals)) / (spec.eps * R)), not failures, failures)


@dataclass
class BarrierCurvatureReport:
    radii: list
    values: list  # (1 - s) * raw integral over B_{c3 R}(x)
    threshold: float
    passed_points: list
    classical: list
    classical_bound: list
    classical_ok: list
    passed: bool
    min_margin: float

    def to_json(self) -> dict:
        return asdict(self)


def annulus_radii(spec: BarrierSpec, count: int = 32) -> np.ndarray:
    """Geometrically spaced |x'| in (c0 R, (c1 + c2 + c5) R], endpoints excluded at c0."""
    lo = spec.c0 * spec.R
    hi = (spec.c1 + spec.c2 + spec.c5) * spec.R
    k = np.arange(1, count + 1)
    return lo * (hi / lo) ** (k / count)


def barrier_curvature_check(spec: BarrierSpec, slope=None, s: float = 0.95, radii=None, samples: int = 32,
                            cells: int = 128, offset: float = 0.0,
                            enforce_regime: bool = True) -> BarrierCurvatureReport:
    """(1 - s) * int_{B_{c3 R}(x)} (chi_F - chi_{complement F}) |x - y|^{-n-s} dy
    >= c4 eps / R^s at boundary points of F = {x_n < L - Phi} over the annulus.

    Each point gets its own grid covering B_{c3 R}(x) with ``cells`` cells
    per side. The classical curvature of the graph of L - Phi is compared with
    eps q (q + 3 - n) mu c0^q |x'|^{-q-2} / 4 at the same radii.
    """
    n = spec.n
    m = n - 1
    slope = np.zeros(m) if slope is None else np.atleast_1d(np.asarray(slope, float))
    if enforce_regime:
        if np.linalg.norm(slope) > 0.05 + 1e-15:
            raise FracminError("regime requires |grad L| <= 0.05")
        if 1 - s > 0.1 + 1e-15:
            raise FracminError("regime requires 1 - s <= 0.1")
        if spec.eps > 0.02 + 1e-15:
            raise FracminError("regime requires eps <= 0.02")
    phi = Barrier(spec)
    radii = annulus_radii(spec, samples) if radii is None else np.asarray(radii, float)
    R = spec.R
    r_ball = spec.c3 * R
    threshold = spec.c4 * spec.eps / R ** s
    values, ok, hc, hb, hok = [], [], [], [], []
    for k, rad in enumerate(radii):
        # alternate sides so a tilted L is probed on both
        if m == 1:
            xp = np.array([rad if k % 2 == 0 else -rad])
        else:
            ang = 2 * np.pi * k / max(1, len(radii))
            xp = rad * np.array([math.cos(ang), math.sin(ang)])

        def ptilde(y):
            y = np.asarray(y, float)
            return offset + y @ slope - phi(y)

        x = np.append(xp, float(ptilde(xp[None])[0]))
        half = r_ball / (1 - 16.0 / cells)
        grid = Grid(n, (cells,) * n, tuple(x - half), 2 * half / cells)
        c = grid.centers()
        level = c[..., -1] - ptilde(c[..., :-1])
        nu = tuple([0.0] * m + [1.0])
        F = VoxelSet.from_level(grid, level, ExteriorRule("halfspace", nu, float(x[-1])))
        rep = frac_curvature(F, x, r_ball, s)
        val = (1 - s) * rep.raw_integral
        values.append(float(val))
        ok.append(bool(val >= threshold))
        H, bound = _classical_barrier_curvature(spec, phi, xp, slope)
        hc.append(H)
        hb.append(bound)
        hok.append(bool(H >= bound))
    margin = float(min(v - threshold for v in values)) if values else math.nan
    return BarrierCurvatureReport([float(r) for r in radii], values, threshold, ok, hc, hb, hok,
                                  bool(all(ok)), margin)


def _classical_barrier_curvature(spec: BarrierSpec, phi: Barrier, xp, slope):
    """Mean curvature of the graph of L - Phi at x' (closed form for the radial
    profile) and the lower bound eps q (q+3-n) mu c0^q |x'|^{-q-2} / 4 (unit scale)."""
    R = spec.R
    rho = float(np.linalg.norm(xp))
    d1, d2 = phi.profile_derivatives(rho / R)
    d1 = float(d1)
    d2 = float(d2) / R
    e = xp / rho
    grad = slope - d1 * e
    m = len(xp)
    hess = -(d2 * np.outer(e, e) + (d1 / rho) * (np.eye(m) - np.outer(e, e)))
    q1 = 1 + grad @ grad
    H = float((np.trace(hess) - grad @ hess @ grad / q1) / math.sqrt(q1))
    bound = spec.eps * spec.q * (spec.q + 3 - spec.n) * spec.mu_q * spec.c0 ** spec.q * (rho / R) ** (-spec.q - 2) / (4 * R)
    return H, float(bound)


# ---------------------------------------------------------------- envelope

@dataclass
class EnvelopeDiagnostic:
    gamma_values: GraphFunction
    touching_set: list
    m0: float
    grad_image_measure: float
    contact_fraction: float

    def to_json(self) -> dict:
        return {"touching_set": [list(map(int, t)) for t in self.touching_set], "m0": self.m0,
                "grad_image_measure": self.grad_image_measure, "contact_fraction": self.contact_fraction}


def _lower_hull_1d(x, y):
    order = np.argsort(x, kind="stable")
    hull = []
    for i in order:
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or above the chord from a to i
            cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a])
            if cross <= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def convex_envelope(v: GraphFunction, radius: float, R: Optional[float] = None, center=None,
                    boundary_points: int = 720) -> EnvelopeDiagnostic:
    """Lower convex envelope Gamma of v^- = min(v, 0) on the ball |x'| < radius,
    zero outside.

    The hull is taken over the cell centers inside the ball together with
    points on the sphere |x'| = radius carrying the value of v^- there. The
    touching set holds the cells where Gamma >= v - tol with
    tol = 1e-9 + h |grad v|, the slope taken as the largest over the
    cell and its neighbors. The gradient image of the touching set is the
    sum over hull vertices in it of the measure of their subdifferentials
    (slope jumps in 1-D, polygons of incident facet gradients in 2-D).
    m0 = -inf of v over the cube Q_{3R} of side 3R (R defaults to radius / (6 sqrt n)).
    """
    g = v.base_grid
    m = g.n
    n = m + 1
    center = np.zeros(m) if center is None else np.asarray(center, float)
    if R is None:
        R = radius / (6 * math.sqrt(n))
    pts = g.centers()
    inside = np.linalg.norm(pts - center, axis=-1) < radius
    if not inside.any():
        raise FracminError("no cells inside the envelope ball")
    vminus = np.minimum(v.values, 0.0)
    ev = v.interpolator(order=1)
    cells = np.argwhere(inside)
    P = pts[inside]
    Y = vminus[inside]
    if m == 1:
        bpts = center[None] + np.array([[-radius], [radius]])
    else:
        ang = 2 * np.pi * np.arange(boundary_points) / boundary_points
        bpts = center[None] + radius * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    if np.any(bpts < g.lo - 1e-12) or np.any(bpts > g.hi + 1e-12):
        raise FracminError("envelope ball exceeds the base grid")
    bY = np.minimum(ev(bpts), 0.0)
    X = np.concatenate([P, bpts])
    Z = np.concatenate([Y, bY])
    ncell = len(P)
    gamma = np.zeros(g.dims)
    measure_at = np.zeros(ncell)
    if m == 1:
        x = X[:, 0]
        hull = _lower_hull_1d(x, Z)
        hx = x[hull]
        hz = Z[hull]
        gam_cells = np.interp(P[:, 0], hx, hz)
        slopes = np.diff(hz) / np.diff(hx)
        for k in range(1, len(hull) - 1):
            idx = hull[k]
            if idx < ncell:
                measure_at[idx] = slopes[k] - slopes[k - 1]
    else:
        hull = spatial.ConvexHull(np.column_stack([X, Z]))
        eq = hull.equations
        lower = eq[:, 2] < -1e-14
        simp = hull.simplices[lower]
        eql = eq[lower]
        # plane a.x + b z + c = 0  ->  z = -(a.x + c)/b
        grads = -eql[:, :2] / eql[:, 2:3]
        offs = -eql[:, 3] / eql[:, 2]
        gam_cells = np.empty(ncell)
        for start in range(0, ncell, 2048):
            chunk = P[start:start + 2048]
            gam_cells[start:start + 2048] = np.max(chunk @ grads.T + offs[None], axis=1)
        incident = [[] for _ in range(len(X))]
        for f, tri in enumerate(simp):
            for vtx in tri:
                incident[vtx].append(f)
        for idx in range(ncell):
            fs = incident[idx]
            if len(fs) < 3:
                continue
            G = np.unique(np.round(grads[fs], 14), axis=0)
            if len(G) < 3:
                continue
            try:
                measure_at[idx] = spatial.ConvexHull(G).volume
            except spatial.QhullError:
                measure_at[idx] = 0.0
    gamma[inside] = np.minimum(gam_cells, Y)
    grads = np.gradient(v.values, g.h) if m > 1 else [np.gradient(v.values, g.h)]
    slope = ndimage.maximum_filter(np.sqrt(sum(q * q for q in grads)), size=3, mode="nearest")
    tol = 1e-9 + g.h * slope[inside]
    touch = gamma[inside] >= v.values[inside] - tol
    touching = [tuple(c) for c in cells[touch]]
    meas = float(math.fsum(measure_at[touch]))
    half = 1.5 * R
    inQ = np.all(np.abs(pts - center) < half, axis=-1)
    if not inQ.any():
        raise FracminError("cube Q_{3R} contains no cells")
    m0 = float(-np.min(v.values[inQ]))
    return EnvelopeDiagnostic(GraphFunction(g, gamma), touching, m0, meas, float(touch.sum()) / ncell)


# ---------------------------------------------------------------- schedule

@dataclass(frozen=True)
class ImprovementSchedule:
    mu: float
    M: float
    k0: int
    d: float

    def to_json(self) -> dict:
        return asdict(self)


def improvement_schedule(mu: float, M: float) -> ImprovementSchedule:
    """k0 = least k with (1 - mu)^k <= 1/4 and d = 1/(2 M^k0)."""
    if not 0 < mu < 1:
        raise FracminError("mu must lie in (0, 1)")
    if not M > 1:
        raise FracminError("M must exceed 1")
    k = 0
    val = 1.0
    while val > 0.25:
        k += 1
        val *= 1 - mu
    return ImprovementSchedule(float(mu), float(M), k, 1.0 / (2.0 * M ** k))


# ---------------------------------------------------------------- measure estimate

DEFAULT_M = 4.0
DEFAULT_MU = 0.05


@dataclass
class MeasureEstimateReport:
    fraction: float
    mu: float
    M: float
    passed: bool
    bar_trap: bool
    curvature_checked: int
    envelope_measure: float
    m0: float

    def to_json(self) -> dict:
        return asdict(self)


def subgraph_curvature(u: GraphFunction, xp, radius: float, s: float, cells: int = 96) -> float:
    """(1 - s) * int_{B_radius(x)} (chi_E - chi_{complement E}) |x - y|^{-n-s} dy
    at x = (x', u(x')) for E = {x_n < u(x')}, on a local grid."""
    g = u.base_grid
    m = g.n
    n = m + 1
    ev = u.interpolator()
    xp = np.atleast_1d(np.asarray(xp, float))
    x = np.append(xp, float(ev(xp[None])[0]))
    half = radius / (1 - 16.0 / cells)
    grid = Grid(n, (cells,) * n, tuple(x - half), 2 * half / cells)
    c = grid.centers()
    level = c[..., -1] - ev(c[..., :-1])
    nu = tuple([0.0] * m + [1.0])
    F = VoxelSet.from_level(grid, level, ExteriorRule("halfspace", nu, float(x[-1])))
    return (1 - s) * frac_curvature(F, x, radius, s).raw_integral


def measure_estimate_check(u: GraphFunction, kappa: float, R: float, eps: float, schedule=None,
                           Cbar: float = 1.0, s: Optional[float] = None, curvature_samples: int = 8,
                           barrier: Optional[BarrierSpec] = None) -> MeasureEstimateReport:
    """|{u - kappa <= M eps R} ∩ Q_R| / R^{n-1} against mu, after gating the
    hypotheses (AL), (USE), (901212-bis) and, when ``s`` is given, the
    curvature smallness at sampled boundary points with |x'| <= 3R.

    ``schedule`` is an (M, mu) pair or an ImprovementSchedule.
    Also reports whether the touching set of the envelope of v = u + Phi lies in Q_R.
    """
    g = u.base_grid
    m = g.n
    n = m + 1
    if schedule is None:
        M, mu = DEFAULT_M, DEFAULT_MU
    elif isinstance(schedule, ImprovementSchedule):
        M, mu = schedule.M, schedule.mu
    else:
        M, mu = schedule
    pts = g.centers()
    rad = np.linalg.norm(pts, axis=-1)
    lip = lipschitz_estimate(u, Ball(tuple([0.0] * m), 3 * R))
    if lip > Cbar * (1 + 1e-9):
        raise HypothesisError(f"hypothesis (AL) fails: |grad u| ~ {lip:.4g} > {Cbar}", "(AL)")
    outside = rad >= R
    if np.any(u.values[outside] < kappa - 1e-12):
        raise HypothesisError("hypothesis (USE) fails: u < kappa somewhere on |x'| >= R", "(USE)")
    inQ3 = np.all(np.abs(pts) < 1.5 * R, axis=-1)
    if not np.min(u.values[inQ3]) <= kappa + eps * R:
        raise HypothesisError("hypothesis (901212-bis) fails: inf over Q_3R exceeds kappa + eps R", "(901212-bis)")
    checked = 0
    if s is not None:
        limit = min(3 * R, float(np.min(g.hi - g.lo)) / 2 - R)
        for k in range(curvature_samples):
            t = -limit + 2 * limit * (k + 0.5) / curvature_samples
            xp = np.zeros(m)
            xp[0] = t
            val = subgraph_curvature(u, xp, R, s)
            checked += 1
            if val > eps / R ** s:
                raise HypothesisError(f"hypothesis (sd77ef12345d) fails at x'={xp.tolist()}: "
                                      f"{val:.4g} > eps/R^s", "(sd77ef12345d)")
    overlap = np.prod(np.clip(np.minimum(pts + g.h / 2, R / 2) - np.maximum(pts - g.h / 2, -R / 2), 0, None), axis=-1)
    frac = float(np.sum(overlap[u.values - kappa <= M * eps * R])) / R ** m
    spec = barrier or BarrierSpec(n=n, R=R, eps=eps)
    phi = Barrier(spec)
    v = GraphFunction(g, u.values - kappa + phi(pts))
    radius = 6 * math.sqrt(n) * R
    covered = bool(np.all(g.lo <= -radius) and np.all(g.hi >= radius))
    if covered:
        env = convex_envelope(v, radius, R)
        touch = np.array([pts[t] for t in env.touching_set]).reshape(-1, m)
        bar = bool(np.all(np.abs(touch) < 0.5 * R + g.h)) if len(touch) else True
        em, m0 = env.grad_image_measure, env.m0
    else:
        bar, em, m0 = False, math.nan, math.nan
    return MeasureEstimateReport(frac, float(mu), float(M), frac >= mu, bar, checked, em, m0)


# ---------------------------------------------------------------- rings

@dataclass(frozen=True)
class Paraboloid:
    """P(x') = value + grad . (x' - xbar') + (x' - xbar')^T hess (x' - xbar') / 2."""

    xbar: tuple
    value: float
    grad: tuple
    hess: tuple

    @classmethod
    def plane(cls, xbar, value=0.0, grad=None):
        xbar = tuple(float(v) for v in np.atleast_1d(xbar))
        m = len(xbar)
        grad = tuple([0.0] * m) if grad is None else tuple(float(v) for v in np.atleast_1d(grad))
        return cls(xbar, float(value), grad, tuple(map(tuple, np.zeros((m, m)))))

    def __call__(self, x):
        d = np.asarray(x, float) - np.asarray(self.xbar)
        H = np.asarray(self.hess)
        return self.value + d @ np.asarray(self.grad) + 0.5 * np.einsum("...i,ij,...j->...", d, H, d)

    def gradient(self, x):
        d = np.asarray(x, float) - np.asarray(self.xbar)
        return np.asarray(self.grad) + d @ np.asarray(self.hess)


@dataclass
class RingDiagnostic:
    m_star: int
    r_m: list
    b_values: list
    ring: tuple
    excess_fraction: float
    M: float
    threshold: float
    passed: bool
    eq_holds: bool
    eq_value: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["ring"] = list(self.ring)
        return d


DEFAULT_C_O = 10.0
DEFAULT_C_REPORT = 5.0


def _annulus_integral(ev, xbar, inner, outer, s, m, azimuths=64, nodes=48):
    """int over {inner < |y - xbar| < outer} of (chi_E - chi_{complement E}) |xbar - y|^{-n-s}
    for E = {y_n < u(y')}, with xbar on the graph.

    On the sphere |y - xbar| = rho the graph is crossed once per base
    direction e, at elevation a with sin a = (u(xbar' + t e) - u(xbar')) / rho and
    t^2 + rho^2 sin^2 a = rho^2. The signed measure of E there is 2 (a_+ + a_-)
    rho for n = 2 and 2 rho^2 int sin a(phi) d phi for n = 3, so the integral
    reduces to int D(rho) rho^{-1-s} d rho, taken by Gauss-Legendre in log rho.
    The crossing t is found by bisection, which needs |grad u| < 1.
    """
    xp = np.asarray(xbar[:-1], float)
    ubar = float(xbar[-1])
    if m == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        ph = 2 * np.pi * (np.arange(azimuths) + 0.5) / azimuths
        dirs = np.stack([np.cos(ph), np.sin(ph)], axis=-1)
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    la, lb = math.log(inner), math.log(outer)
    lam = 0.5 * (lb - la) * (gx + 1) + la
    lw = 0.5 * (lb - la) * gw
    rho = np.exp(lam)
    lo = np.zeros((nodes, len(dirs)))
    hi = np.broadcast_to(rho[:, None], lo.shape).copy()

    def excess(t):
        pts = xp[None, None, :] + t[..., None] * dirs[None, :, :]
        w = ev(pts.reshape(-1, m)).reshape(t.shape) - ubar
        return t * t + w * w - rho[:, None] ** 2, w

    for _ in range(60):
        mid = 0.5 * (lo + hi)
        f, _ = excess(mid)
        below = f < 0
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    _, w = excess(0.5 * (lo + hi))
    sin_a = np.clip(w / rho[:, None], -1.0, 1.0)
    if m == 1:
        D = 2 * np.sum(np.arcsin(sin_a), axis=1)
    else:
        D = 2 * np.sum(sin_a, axis=1) * (2 * np.pi / azimuths)
    # int D(rho) rho^{-1-s} d rho with rho = e^lam
    return math.fsum(lw * D * rho ** (-s))


def ring_detachment(u: GraphFunction, xbar, P: Paraboloid, eps: float, R: float, s: float,
                    Cbar: float = 1.0, M: float = 50.0, C_o: float = DEFAULT_C_O,
                    C_report: float = DEFAULT_C_REPORT, m_max: int = 12,
                    ring_samples: int = 4096) -> RingDiagnostic:
    """Dyadic-ring selection b_m <= C_o eps r_m^{1-s} / R with
    r_m = R / ((2 + Cbar) n)^m, then the fraction of the ring
    S_r = (r_{m+1}, r_m / (Cbar sqrt n)) where u - xbar_n - grad P(xbar') . (x' - xbar')
    exceeds M eps r^2 / R, r the outer ring radius. PASS iff it is at most C_report / M.
    """
    g = u.base_grid
    m = g.n
    n = m + 1
    xbar = np.atleast_1d(np.asarray(xbar, float))
    ev = u.interpolator(order=1)
    pts = g.centers()
    near = np.linalg.norm(pts - xbar, axis=-1) <= R
    if not near.any():
        raise FracminError("no cells within R of xbar'")
    lip = lipschitz_estimate(u, Ball(tuple(xbar), R))
    if lip > Cbar * (1 + 1e-9):
        raise HypothesisError(f"hypothesis (gradient) fails: |grad u| ~ {lip:.4g} > {Cbar}", "(gradient)")
    ubar = float(ev(xbar[None])[0])
    tol = 1e-9 + 1e-9 * abs(ubar)
    if abs(P(xbar) - ubar) > tol or np.any(P(pts[near]) > u.values[near] + 1e-9):
        raise HypothesisError("hypothesis (above gamma) fails: P must touch u from below at xbar'",
                              "(above gamma)")
    H = np.asarray(P.hess)
    hn = float(np.linalg.norm(H, 2)) if H.size else 0.0
    if float(np.linalg.norm(P.grad)) + hn * R + R * hn > eps * (1 + 1e-9):
        raise HypothesisError("hypothesis (C1.1) fails: |grad P| + R|D^2 P| > eps", "(C1.1)")
    lo = g.lo + 0.5 * g.h
    hi = g.hi - 0.5 * g.h
    if np.any(xbar - R < lo - 1e-12) or np.any(xbar + R > hi + 1e-12):
        raise FracminError("ball of radius R around xbar' exceeds the base grid")
    ratio = (2 + Cbar) * n
    radii = [R / ratio ** k for k in range(m_max + 2)]
    xb = np.append(xbar, ubar)
    b = [_annulus_integral(ev, xb, radii[k + 1], radii[k], s, m) for k in range(m_max + 1)]
    m_star = None
    for k in range(m_max + 1):
        if b[k] <= C_o * eps * radii[k] ** (1 - s) / R:
            m_star = k
            break
    if m_star is None:
        raise FracminError("selection failed; increase m_max or C_o")
    inner = radii[m_star + 1]
    outer = radii[m_star] / (Cbar * math.sqrt(n))
    thr = M * eps * outer ** 2 / R
    grad = P.gradient(xbar)
    if m == 1:
        t = inner + (outer - inner) * (np.arange(ring_samples) + 0.5) / ring_samples
        samp = np.concatenate([xbar - t, xbar + t])[:, None]
        wts = np.ones(len(samp))
    else:
        nr = int(math.sqrt(ring_samples))
        t = inner + (outer - inner) * (np.arange(nr) + 0.5) / nr
        ang = 2 * np.pi * (np.arange(4 * nr) + 0.5) / (4 * nr)
        T, A = np.meshgrid(t, ang, indexing="ij")
        samp = np.stack([xbar[0] + T * np.cos(A), xbar[1] + T * np.sin(A)], axis=-1).reshape(-1, 2)
        wts = T.ravel()
    det = ev(samp) - ubar - (samp - xbar) @ grad
    frac = float(np.sum(wts * (det > thr)) / np.sum(wts))
    # rings thinner than a cell only see the kinks of the linear interpolant
    total = math.fsum(bk for k, bk in enumerate(b) if radii[k + 1] >= g.h)
    eq_val = (1 - s) * total
    return RingDiagnostic(m_star, radii[:m_max + 1], b, (inner, outer), frac, float(M), thr,
                          frac <= C_report / M, bool(eq_val <= eps / R ** s), eq_val)
