import math

import numpy as np
import pytest
from scipy import integrate

from fracmin import fixtures
from fracmin.curvature import (
    classical_mean_curvature, convergence_study, frac_curvature, graph_curvature_integral, gs,
    gs_limit, normalization, varpi,
)
from fracmin.errors import FracminError
from fracmin.geometry import ExteriorRule, GraphFunction, Grid, VoxelSet


@pytest.mark.parametrize("n, expected", [(2, 2.0), (3, 2 * math.pi), (4, 4 * math.pi)])
def test_varpi(n, expected):
    assert varpi(n) == expected


@pytest.mark.parametrize("n", [1, 5])
def test_varpi_rejects(n):
    with pytest.raises(FracminError):
        varpi(n)


@pytest.mark.parametrize("n, cells", [(2, 128), (3, 48)])
@pytest.mark.parametrize("s", [0.3, 0.9])
def test_halfspace_cancels(n, cells, s):
    E = fixtures.halfspace(n=n, cells=cells)
    rep = frac_curvature(E, (0.0,) * n, 0.45, s)
    assert abs(rep.normalized) <= 1e-3


def test_disk_limit_and_sign():
    E = fixtures.disk(0.5, cells=128)
    s = 0.99
    a = frac_curvature(E, (0.0, 0.5), 0.45, s)
    b = frac_curvature(E.complement(), (0.0, 0.5), 0.45, s)
    # chi_F - chi_{complement F}: the convex body itself carries the negative sign
    assert a.normalized == pytest.approx(-2.0, abs=10 * (1 - s) + a.quad_error_est)
    assert b.raw_integral == -a.raw_integral


def test_normalized_is_scaled_raw():
    rep = frac_curvature(fixtures.disk(0.5, cells=64), (0.0, 0.5), 0.4, 0.8)
    assert rep.normalized == rep.raw_integral * normalization(2, 0.8)


def test_rotation_by_quarter_turn():
    g = Grid(2, (128, 128), (-1.25, -1.25), 2.5 / 128)
    c = g.centers()

    def lev(x, y):
        return (x - 0.1) ** 2 / 0.36 + (y - 0.05) ** 2 / 0.25 - 1

    F = VoxelSet.from_level(g, lev(c[..., 0], c[..., 1]), ExteriorRule("empty"))
    Fr = VoxelSet.from_level(g, lev(c[..., 1], -c[..., 0]), ExteriorRule("empty"))
    x0 = (0.1, 0.55)
    a = frac_curvature(F, x0, 0.3, 0.7).normalized
    b = frac_curvature(Fr, (-x0[1], x0[0]), 0.3, 0.7).normalized
    assert abs(a - b) <= 1e-10


def test_region_exits_box():
    with pytest.raises(FracminError, match="exits the grid box"):
        frac_curvature(fixtures.disk(0.5, cells=32), (0.0, 0.5), 1.0, 0.5)


def test_classical_curvature_affine():
    base = Grid(2, (40, 40), (-1, -1), 0.05)
    u = GraphFunction.from_callable(base, lambda p: 0.3 * p[..., 0] - 0.2 * p[..., 1] + 1)
    assert abs(classical_mean_curvature(u, (0.1, -0.2))) <= 1e-10


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_classical_curvature_paraboloid(lam):
    base = Grid(2, (40, 40), (-1, -1), 0.05)
    u = GraphFunction.from_callable(base, lambda p: 0.5 * lam * np.sum(p ** 2, axis=-1))
    assert classical_mean_curvature(u, (0.0, 0.0)) == pytest.approx(2 * lam, abs=10 * base.h ** 2)


@pytest.mark.parametrize("sign", [1, -1])
def test_classical_curvature_sphere_apex(sign):
    rho = 1.0
    base = Grid(2, (64, 64), (-0.5, -0.5), 1 / 64)
    u = GraphFunction.from_callable(base, lambda p: -sign * np.sqrt(rho ** 2 - np.sum(p ** 2, axis=-1)))
    # the lower cap (bowl) curves upward: +2/rho; the upper cap gives -2/rho
    assert classical_mean_curvature(u, (0.0, 0.0)) == pytest.approx(sign * 2 / rho, rel=0.02)


def test_classical_curvature_near_edge():
    base = Grid(1, (20,), (0,), 0.05)
    u = GraphFunction(base, np.zeros(20))
    with pytest.raises(FracminError):
        classical_mean_curvature(u, (0.03,))


def test_gs_examples():
    assert gs(0.0, 2.5) == 0.0
    eps = 1e-6
    assert gs(eps, 2.5) / eps == pytest.approx(1.0, abs=1e-9)
    assert gs(1.0, 2) == pytest.approx(math.pi / 4, abs=1e-12)
    assert gs(1.0, 3) == pytest.approx(1 / math.sqrt(2), abs=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.3, 3.9])
def test_gs_odd_increasing_bounded(p):
    tau = np.linspace(-20, 20, 401)
    vals = gs(tau, p)
    np.testing.assert_allclose(vals, -vals[::-1], atol=1e-15)
    assert np.all(np.diff(vals) > 0)
    assert np.all(np.abs(vals) <= np.minimum(np.abs(tau), gs_limit(p)) + 1e-15)


@pytest.mark.parametrize("tau", [0.3, 2.0, 50.0])
def test_gs_scalar_matches_closed_form(tau):
    ref, _ = integrate.quad(lambda t: (1 + t * t) ** -1.45, 0, tau)
    assert gs(tau, 2.9) == pytest.approx(ref, abs=1e-10)
    assert float(gs(np.array(tau), 2.9)) == pytest.approx(ref, abs=1e-10)


def _parabola(lam, half=0.5, cells=256):
    base = Grid(1, (cells,), (-half,), 2 * half / cells)
    return GraphFunction.from_callable(base, lambda p: 0.5 * lam * p[..., 0] ** 2)


def test_graph_integral_zero():
    u = GraphFunction(Grid(1, (64,), (-0.5,), 1 / 64), np.zeros(64))
    assert graph_curvature_integral(u, 0.25, 0.9) == 0.0


def test_graph_integral_odd():
    u = _parabola(1.0)
    v = GraphFunction(u.base_grid, -u.values)
    assert graph_curvature_integral(v, 0.25, 0.9) == pytest.approx(-graph_curvature_integral(u, 0.25, 0.9), rel=1e-12)


def test_graph_integral_closed_form():
    # G(tau) ~ tau for small tau, so for g = rho^2/2 the integral is close to
    # 2 int_0^r rho^{-s} d rho (both sides)
    s, r = 0.9, 0.25
    u = _parabola(1.0)
    approx = 2 * 2 * (r ** (1 - s) / (1 - s)) / 2
    assert graph_curvature_integral(u, r, s) == pytest.approx(approx, rel=0.01)


def test_graph_integral_matches_voxel_cylinder():
    s, r = 0.9, 0.25
    u = _parabola(1.0)
    voxel = frac_curvature(u.subgraph(-0.5, 0.5), (0.0, 0.0), r, s, domain="cylinder").raw_integral
    assert graph_curvature_integral(u, r, s) == pytest.approx(voxel, rel=0.05)


def test_graph_integral_exits_cylinder():
    u = _parabola(20.0)
    with pytest.raises(FracminError, match="graph exits cylinder"):
        graph_curvature_integral(u, 0.25, 0.9)


def test_convergence_halfspace():
    study = convergence_study("halfspace", [0.8, 0.9], r=0.45)
    assert all(e <= 1e-3 for *_, e in study.rows)
    assert abs(study.A) <= 1e-2


@pytest.mark.parametrize("shape", ["circle:0.5", "paraboloid:0.5"])
def test_convergence_linear_rate(shape):
    s_list = [0.8, 0.9, 0.95, 0.99]
    study = convergence_study(shape, s_list, r=0.45)
    errs = [e for *_, e in study.rows]
    assert errs == sorted(errs, reverse=True)
    ratios = [e / (1 - s) for s, *_, e in study.rows]
    assert max(ratios) <= 10
