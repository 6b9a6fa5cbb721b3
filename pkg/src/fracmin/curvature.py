"""Fractional mean curvature, its normalization, the G_s graph reduction and
the classical graph mean curvature.

Sign convention: the integrand is chi_F - chi_{complement F}, so a subgraph
{x_n < g} of a convex g has positive curvature and a convex body has
negative curvature.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np
from scipy import integrate, interpolate, ndimage, optimize, special

from .errors import FracminError
from .geometry import ExteriorRule, GraphFunction, Grid, VoxelSet


def varpi(n: int) -> float:
    """Measure of the boundary of the (n-1)-dimensional unit ball."""
    table = {2: 2.0, 3: 2.0 * math.pi, 4: 4.0 * math.pi}
    if n not in table:
        raise FracminError(f"varpi is defined here for n in 2..4, got {n}")
    return table[n]


def normalization(n: int, s: float) -> float:
    return (n - 1) * (1 - s) / varpi(n)


@dataclass(frozen=True)
class CurvatureReport:
    """``quad_error_est`` is expressed in normalized units."""

    raw_integral: float
    normalized: float
    r: float
    s: float
    quad_error_est: float
    x0: tuple
    domain: str = "ball"

    def to_json(self) -> dict:
        d = asdict(self)
        d["x0"] = list(self.x0)
        return d


@dataclass(frozen=True)
class GraphLocalModel:
    eigenvalues: tuple
    holder_norm: float
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise FracminError("alpha must lie in (0, 1)")
        if self.eigenvalues and self.holder_norm < max(abs(v) for v in self.eigenvalues) / 2:
            raise FracminError("holder_norm is inconsistent with the eigenvalues")

    def default_radius(self, n: int) -> float:
        """r = min{1/n, 1/(2M)}."""
        return min(1.0 / n, 1.0 / (2.0 * self.holder_norm)) if self.holder_norm > 0 else 1.0 / n


class _Level:
    """Cubic-spline interpolant of a set's level function (F = {phi < 0})."""

    def __init__(self, F: VoxelSet):
        self.grid = F.grid
        self.coeffs = ndimage.spline_filter(F.level_function(), order=3, mode="nearest")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        c = self.grid.to_index_coords(pts).reshape(self.grid.n, -1)
        v = ndimage.map_coordinates(self.coeffs, c, order=3, mode="nearest", prefilter=False)
        return v.reshape(pts.shape[:-1])

    def gradient(self, x: np.ndarray, step: float) -> np.ndarray:
        n = self.grid.n
        e = np.eye(n) * step
        pts = np.concatenate([x + e, x - e])
        v = self(pts)
        return (v[:n] - v[n:]) / (2 * step)

    def hessian(self, x: np.ndarray, step: float) -> np.ndarray:
        n = self.grid.n
        H = np.empty((n, n))
        f0 = float(self(x[None])[0])
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    e = np.zeros(n)
                    e[i] = step
                    v = self(np.stack([x + e, x - e]))
                    H[i, i] = (v[0] - 2 * f0 + v[1]) / step ** 2
                else:
                    ei = np.zeros(n)
                    ej = np.zeros(n)
                    ei[i] = step
                    ej[j] = step
                    v = self(np.stack([x + ei + ej, x + ei - ej, x - ei + ej, x - ei - ej]))
                    H[i, j] = H[j, i] = (v[0] - v[1] - v[2] + v[3]) / (4 * step ** 2)
        return H


def _snap(level: _Level, x0: np.ndarray, h: float) -> np.ndarray:
    x = x0.copy()
    for _ in range(50):
        f = float(level(x[None])[0])
        g = level.gradient(x, h / 16)
        gg = float(g @ g)
        if gg == 0:
            raise FracminError("level function is flat at x0")
        dx = f * g / gg
        x = x - dx
        if np.linalg.norm(dx) < 1e-14 * max(1.0, np.linalg.norm(x)):
            break
    if np.linalg.norm(x - x0) > 2 * h:
        raise FracminError("x0 is not within h of the boundary")
    return x


def _tangent_frame(nu: np.ndarray):
    n = len(nu)
    if n == 2:
        return [np.array([-nu[1], nu[0]])]
    k = int(np.argmin(np.abs(nu)))
    a = np.zeros(n)
    a[k] = 1.0
    t1 = a - (a @ nu) * nu
    t1 /= np.linalg.norm(t1)
    return [t1, np.cross(nu, t1)]


class _RayIntegrator:
    """I(theta) = int_0^{R(theta)} (f(x0 + rho theta) + f(x0 - rho theta)) rho^{-1-s} d rho
    with f = chi_F - chi_{complement F}, for theta on the hemisphere grad phi . theta >= 0.

    Below ``rho_t`` the set is replaced by its second-order Taylor model at
    x0; beyond, membership is read from the spline and crossings are located
    by bracketing on a grid of spacing h/4 followed by Brent's method.
    """

    def __init__(self, level: _Level, x0, r, s, domain):
        self.level = level
        self.x0 = x0
        self.r = r
        self.s = s
        self.domain = domain
        h = level.grid.h
        self.h = h
        self.rho_t = h / 8
        g = level.gradient(x0, h / 16)
        self.gnorm = float(np.linalg.norm(g))
        self.nu = g / self.gnorm
        self.H = level.hessian(x0, h / 4)
        self.flat_tol = 1e-9 * self.gnorm / r

    def reach(self, theta):
        if self.domain == "ball":
            return self.r
        vert = abs(theta[-1])
        horiz = math.sqrt(max(0.0, 1.0 - vert * vert))
        out = np.inf
        if vert > 0:
            out = min(out, self.r / vert)
        if horiz > 0:
            out = min(out, self.r / horiz)
        return out

    def _side_integral(self, sign_dir, theta, R):
        """Breakpoints and signs of f(x0 + sign_dir rho theta) on [rho_t, R]."""
        lev = self.level
        x0 = self.x0
        count = max(2, int(math.ceil((R - self.rho_t) / (self.h / 4))) + 1)
        rho = np.linspace(self.rho_t, R, count)
        vals = lev(x0[None] + sign_dir * rho[:, None] * theta[None])
        inside = vals < 0
        cuts = [self.rho_t]
        states = [inside[0]]
        flips = np.nonzero(inside[1:] != inside[:-1])[0]
        for k in flips:
            a, b = rho[k], rho[k + 1]
            fa, fb = vals[k], vals[k + 1]
            if fa == 0.0:
                c = a
            elif fb == 0.0:
                c = b
            else:
                c = optimize.brentq(lambda t: float(lev((x0 + sign_dir * t * theta)[None])[0]),
                                    a, b, xtol=1e-13 * max(1.0, R), rtol=1e-14)
            cuts.append(c)
            states.append(inside[k + 1])
        cuts.append(R)
        return cuts, states

    def __call__(self, theta, elev):
        """Return (coeff, regular) with I(theta) = coeff * elev^{-s} + regular,
        where ``elev`` is the angle between theta and the tangent plane."""
        s = self.s
        R = self.reach(theta)
        a = self.gnorm * math.sin(elev)
        b = float(theta @ self.H @ theta)
        coeff = 0.0
        regular = 0.0
        rho_t = min(self.rho_t, R)
        if abs(b) > self.flat_tol:
            # both antipodal points fall on the side of sign(b) once rho > 2a/|b|
            sinc = math.sin(elev) / elev if elev > 0 else 1.0
            rho_c = 2 * a / abs(b)
            if rho_c < rho_t:
                g = -2.0 if b > 0 else 2.0
                coeff = g / s * (2 * self.gnorm * sinc / abs(b)) ** (-s)
                regular -= g / s * rho_t ** (-s)
        if R <= rho_t:
            return coeff, regular
        cp, sp = self._side_integral(1.0, theta, R)
        cm, sm = self._side_integral(-1.0, theta, R)
        pts = sorted(set(cp) | set(cm))
        ip = 0
        im = 0
        for lo, hi in zip(pts[:-1], pts[1:]):
            while cp[ip + 1] <= lo:
                ip += 1
            while cm[im + 1] <= lo:
                im += 1
            g = (1.0 if sp[ip] else -1.0) + (1.0 if sm[im] else -1.0)
            if g != 0.0 and hi > lo:
                regular += g * (lo ** (-s) - hi ** (-s)) / s
        return coeff, regular


def _hemisphere_integral(ray: _RayIntegrator, n: int, azimuths: int, epsrel: float, epsabs: float = 1e-10):
    s = ray.s
    nu = ray.nu
    frame = _tangent_frame(nu)
    if n == 2:
        dirs = [frame[0], -frame[0]]
        weights = [1.0, 1.0]
    else:
        beta = 2 * np.pi * np.arange(azimuths) / azimuths
        dirs = [math.cos(b) * frame[0] + math.sin(b) * frame[1] for b in beta]
        weights = [2 * np.pi / azimuths] * azimuths

    def along(t):
        def h(elev):
            theta = math.sin(elev) * nu + math.cos(elev) * t
            theta /= np.linalg.norm(theta)
            coeff, regular = ray(theta, elev)
            val = coeff + regular * elev ** s
            return val * math.cos(elev) if n == 3 else val
        return integrate.quad(h, 0.0, math.pi / 2, weight="alg", wvar=(-s, 0.0),
                              epsabs=epsabs, epsrel=epsrel, limit=400)

    # quad's own error estimate is carried into quad_error_est, so its warning is redundant
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        parts = [along(t) for t in dirs]
    vals = np.array([p[0] for p in parts])
    errs = np.array([p[1] for p in parts])
    w = np.array(weights)
    total = math.fsum(w * vals)
    err = float(np.sum(w * errs))
    if n == 3 and azimuths % 2 == 0:
        coarse = math.fsum(2 * w[::2] * vals[::2])
        err += abs(total - coarse)
    return total, err


def frac_curvature(F: VoxelSet, x0, r: float, s: float, *, domain: str = "ball",
                   snap: bool = True, azimuths: int = 48, epsrel: float = 1e-8,
                   epsabs: float = 1e-10) -> CurvatureReport:
    """Integral of (chi_F - chi_{complement F}) |x0 - y|^{-(n+s)} over B_r(x0).

    The principal value is taken by pairing y with 2 x0 - y, so the integral
    is over half the directions of the (chi_F(x0+v) + chi_F(x0-v) - 1)-type
    sums along rays. ``domain="cylinder"`` integrates over K_r(x0) instead.
    """
    if not 0 < s < 1:
        raise FracminError("s must lie in (0, 1)")
    if domain not in ("ball", "cylinder"):
        raise FracminError(f"unknown domain {domain!r}")
    g = F.grid
    n = g.n
    x0 = np.asarray(x0, float)
    level = _Level(F)
    if snap:
        x0 = _snap(level, x0, g.h)
    reach = r if domain == "ball" else r * math.sqrt(2)
    if not g.contains_ball(x0, reach if domain == "ball" else 0.0) or (
            domain == "cylinder" and not (np.all(x0 - r >= g.lo - 1e-12) and np.all(x0 + r <= g.hi + 1e-12))):
        raise FracminError("integration region exits the grid box")
    ray = _RayIntegrator(level, x0, float(r), float(s), domain)
    raw, err = _hemisphere_integral(ray, n, azimuths, epsrel, epsabs)
    k = normalization(n, s)
    return CurvatureReport(raw, raw * k, float(r), float(s), err * k, tuple(float(v) for v in x0), domain)


def classical_mean_curvature(u: GraphFunction, x0) -> float:
    """div(grad u / sqrt(1 + |grad u|^2)) at x0' by centered differences of
    step h on the grid values (cubic spline interpolation off the nodes)."""
    g = u.base_grid
    x0 = np.atleast_1d(np.asarray(x0, float))
    c = g.to_index_coords(x0[None])[:, 0]
    if np.any(c < 2) or np.any(c > np.asarray(g.dims) - 3):
        raise FracminError("point too close to the edge of the base grid")
    # not-a-knot cubic splines reproduce cubic polynomials exactly
    spline = interpolate.RegularGridInterpolator(g.axes(), u.values, method="cubic")
    ev = spline
    m = g.n
    h = g.h
    f0 = float(ev(x0[None])[0])
    grad = np.empty(m)
    hess = np.empty((m, m))
    for i in range(m):
        e = np.zeros(m)
        e[i] = h
        fp, fm = ev(np.stack([x0 + e, x0 - e]))
        grad[i] = (fp - fm) / (2 * h)
        hess[i, i] = (fp - 2 * f0 + fm) / h ** 2
        for j in range(i + 1, m):
            f = np.zeros(m)
            f[j] = h
            v = ev(np.stack([x0 + e + f, x0 + e - f, x0 - e + f, x0 - e - f]))
            hess[i, j] = hess[j, i] = (v[0] - v[1] - v[2] + v[3]) / (4 * h * h)
    q = 1.0 + grad @ grad
    return float((np.trace(hess) - grad @ hess @ grad / q) / math.sqrt(q))


def gs(tau, p: float):
    """G(tau) = int_0^tau (1 + t^2)^{-p/2} dt.

    Scalars go through adaptive quadrature; arrays use the closed form
    (1/2) B(1/2, (p-1)/2) I_x(1/2, (p-1)/2) with x = tau^2/(1+tau^2).
    """
    if not p > 1:
        raise FracminError("gs needs p > 1")
    if np.ndim(tau) == 0:
        t = float(tau)
        if t == 0.0:
            return 0.0
        if math.isinf(t):
            return math.copysign(gs_limit(p), t)
        # substitute t = tan(a) to integrate over a finite interval
        val, _ = integrate.quad(lambda a: math.cos(a) ** (p - 2), 0.0, math.atan(abs(t)),
                                epsabs=1e-13, epsrel=1e-13, limit=200)
        return math.copysign(val, t)
    tau = np.asarray(tau, float)
    b = 0.5 * (p - 1)
    x = tau * tau / (1 + tau * tau)
    x = np.where(np.isinf(tau), 1.0, x)
    return np.sign(tau) * 0.5 * special.beta(0.5, b) * special.betainc(0.5, b, x)


def gs_limit(p: float) -> float:
    """lim_{tau -> inf} G(tau) = (1/2) B(1/2, (p-1)/2)."""
    return 0.5 * special.beta(0.5, 0.5 * (p - 1))


def graph_curvature_integral(u: GraphFunction, r: float, s: float, x0=None, *,
                             azimuths: int = 64) -> float:
    """2 int_{|y'| <= r} G(g(y')/|y'|) |y'|^{-(n+s-1)} dy', g = u - u(x0')
    recentered at x0' (default the origin); u must already be tangent-flat there."""
    b = u.base_grid
    m = b.n
    n = m + 1
    p = n + s
    x0 = np.zeros(m) if x0 is None else np.atleast_1d(np.asarray(x0, float))
    ev = u.interpolator()
    u0 = float(ev(x0[None])[0])
    if abs(u0) > b.h:
        raise FracminError("graph must pass through the center (recenter first)")
    # sample the trap condition |g| <= r/2 on the disk
    rad = np.linspace(0, r, 64)
    if m == 1:
        samp = np.concatenate([x0 - rad, x0 + rad])[:, None] if x0.ndim == 1 else None
        samp = (x0[None, :] + np.concatenate([-rad, rad])[:, None])
    else:
        beta = 2 * np.pi * np.arange(azimuths) / azimuths
        dirs = np.stack([np.cos(beta), np.sin(beta)], axis=-1)
        samp = (x0[None, None, :] + rad[:, None, None] * dirs[None]).reshape(-1, 2)
    lo = b.lo + 0.5 * b.h
    hi = b.hi - 0.5 * b.h
    if np.any(samp < lo - 1e-12) or np.any(samp > hi + 1e-12):
        raise FracminError("disk |y'| <= r exceeds the base grid")
    if np.max(np.abs(ev(samp) - u0)) > r / 2:
        raise FracminError("graph exits cylinder")

    def radial(direction):
        def f(rho):
            # G(g/rho)/rho tends to a finite limit (half the second derivative)
            rho = max(rho, 1e-3 * b.h)
            y = x0 + rho * direction
            gval = float(ev(y[None])[0]) - u0
            return float(gs(np.asarray(gval / rho), p)) / rho
        val, _ = integrate.quad(f, 0.0, r, weight="alg", wvar=(-s, 0.0), epsabs=1e-12,
                                epsrel=1e-10, limit=200)
        return val  # integral of G(g/rho) rho^{-1-s} along the ray

    if m == 1:
        total = radial(np.array([1.0])) + radial(np.array([-1.0]))
    else:
        vals = [radial(d) for d in dirs]
        total = math.fsum(vals) * 2 * np.pi / azimuths
    return 2.0 * total


# ---------------------------------------------------------------- studies

def _box_around(x0, r, cells):
    half = r / (1 - 16.0 / cells)
    lo = np.asarray(x0, float) - half
    return Grid(len(lo), (cells,) * len(lo), tuple(lo), 2 * half / cells)


def shape_fixture(shape: str, n: int, r: float, cells: int):
    """(F, x0, classical H) for a study shape.

    ``circle:rho`` / ``sphere:rho``: complement of the ball, x0 its top point,
    H = (n-1)/rho. ``paraboloid:lam``: subgraph of lam |x'|^2 / 2 at 0,
    H = (n-1) lam. ``halfspace``: H = 0.
    """
    kind, _, arg = shape.partition(":")
    top = np.zeros(n)
    if kind in ("circle", "sphere"):
        rho = float(arg)
        top[-1] = rho
        g = _box_around(top, r, cells)
        c = g.centers()
        level = rho - np.linalg.norm(c, axis=-1)
        F = VoxelSet.from_level(g, level, ExteriorRule("full"))
        return F, top, (n - 1) / rho
    if kind == "paraboloid":
        lam = float(arg)
        g = _box_around(top, r, cells)
        c = g.centers()
        level = c[..., -1] - 0.5 * lam * np.sum(c[..., :-1] ** 2, axis=-1)
        nu = tuple([0.0] * (n - 1) + [1.0])
        return VoxelSet.from_level(g, level, ExteriorRule("halfspace", nu, 0.0)), top, (n - 1) * lam
    if kind == "halfspace":
        g = _box_around(top, r, cells)
        level = g.centers()[..., -1]
        nu = tuple([0.0] * (n - 1) + [1.0])
        return VoxelSet.from_level(g, level, ExteriorRule("halfspace", nu, 0.0)), top, 0.0
    raise FracminError(f"unknown shape {shape!r}")


@dataclass
class ConvergenceStudy:
    rows: list  # (s, h, normalized, classical, abs_error)
    A: float
    B: float

    def table(self):
        return [{"s": s, "h": h, "normalized": v, "classical": c, "abs_error": e}
                for s, h, v, c, e in self.rows]


def convergence_study(shape: str, s_list, r: float = 0.45, n: int = 2, cells=(128,)) -> ConvergenceStudy:
    """Normalized curvature against the classical value for each s and grid;
    least-squares fit of |error| = A (1 - s) + B h."""
    rows = []
    for N in cells:
        F, x0, H = shape_fixture(shape, n, r, N)
        for s in s_list:
            rep = frac_curvature(F, x0, r, s)
            rows.append((float(s), F.grid.h, rep.normalized, H, abs(rep.normalized - H)))
    X = np.array([[1 - s, h] for s, h, *_ in rows])
    y = np.array([e for *_, e in rows])
    if len(set(cells)) == 1:
        # one grid: h is constant, so the intercept carries B h
        X1 = np.column_stack([X[:, 0], np.ones(len(rows))])
        (A, c), *_ = np.linalg.lstsq(X1, y, rcond=None)
        B = c / rows[0][1]
    else:
        (A, B), *_ = np.linalg.lstsq(X, y, rcond=None)
    return ConvergenceStudy(rows, float(A), float(B))
