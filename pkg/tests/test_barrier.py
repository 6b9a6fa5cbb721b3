import math

import numpy as np
import pytest

from fracmin.barrier import (
    Barrier, BarrierSpec, Paraboloid, annulus_radii, barrier_curvature_check, barrier_property_check,
    build_barrier, convex_envelope, footnote_mu, improvement_schedule, measure_estimate_check, ring_detachment,
)
from fracmin.errors import FracminError, HypothesisError
from fracmin.geometry import GraphFunction, Grid


@pytest.fixture(scope="module")
def spec():
    return BarrierSpec()


# ---------------------------------------------------------------- barrier

def test_default_constants(spec):
    root = math.sqrt(2)
    assert (spec.c0, spec.c4, spec.c3) == (0.25, 2.0, 1.0)
    assert spec.c1 == spec.c2 == pytest.approx(1.5 * root)
    assert spec.c5 == pytest.approx(100 * root)
    assert spec.mu_q == footnote_mu(spec.q, spec.c0, spec.c1, spec.c2)
    assert spec.footnote_margin() == pytest.approx(0.0, abs=1e-9)


def test_barrier_levels(spec):
    phi = Barrier(spec)
    eps, R = spec.eps, spec.R
    assert phi.radial((spec.c1 + spec.c2) * R) >= 2 * eps * R - 1e-15
    rho = np.linspace(0, spec.c1 * R, 2001)
    assert np.all(phi.radial(rho) <= -4 * eps * R + 1e-12 * eps * R)


def test_barrier_tail_formula(spec):
    phi = Barrier(spec)
    rho = np.geomspace(spec.c0 * 1.0001, 200, 50)
    A = spec.c0 ** spec.q * spec.mu_q / spec.c1 ** spec.q - 4
    tail = spec.eps * (A - spec.c0 ** spec.q * spec.mu_q * rho ** -spec.q)
    np.testing.assert_allclose(phi.radial(rho), tail, rtol=1e-14)


def test_core_matches_tail_smoothly(spec):
    phi = Barrier(spec)
    c0 = spec.c0
    a, b = c0 * (1 - 1e-7), c0 * (1 + 1e-7)
    # values agree up to the slope times the 2e-7 c0 gap
    assert phi.radial(a) == pytest.approx(phi.radial(b), abs=50 * 2e-7 * c0)
    d1a, d2a = phi.profile_derivatives(a)
    d1b, d2b = phi.profile_derivatives(b)
    assert d1a == pytest.approx(d1b, rel=1e-5)
    assert d2a == pytest.approx(d2b, rel=1e-5)
    d1, d2 = phi.profile_derivatives(0.0)
    assert d1 == 0 and d2 == 0


def test_barrier_radial_and_monotone():
    sp = BarrierSpec(n=3)
    phi = Barrier(sp)
    rng = np.random.default_rng(3)
    x = rng.uniform(-3, 3, (200, 2))
    e1 = np.column_stack([np.linalg.norm(x, axis=1), np.zeros(200)])
    np.testing.assert_allclose(phi(x), phi(e1), rtol=1e-14)
    rho = np.linspace(0, 10, 5001)
    assert np.all(np.diff(phi.radial(rho)) >= -1e-15)


def test_barrier_scales_with_R():
    a = Barrier(BarrierSpec(R=1.0))
    b = Barrier(BarrierSpec(R=3.0))
    rho = np.linspace(0, 5, 101)
    np.testing.assert_allclose(b.radial(3 * rho), 3 * a.radial(rho), rtol=1e-13, atol=1e-15)


def test_build_barrier_rejects_small_mu(spec):
    bad = BarrierSpec(mu_q=0.5 * spec.mu_q)
    with pytest.raises(FracminError, match="footnote"):
        build_barrier(bad)
    u = build_barrier(spec)
    assert u.base_grid.n == 1


def test_property_check_default(spec):
    rep = barrier_property_check(spec)
    assert rep.passed, rep.failures
    assert rep.outer_level_ok and rep.inner_level_ok and rep.monotone_ok and rep.footnote_level_ok
    assert np.isfinite(rep.C_report)


def test_property_check_scales_linearly_in_eps():
    a = barrier_property_check(BarrierSpec(eps=0.01))
    b = barrier_property_check(BarrierSpec(eps=0.02))
    assert abs(b.sup_grad / a.sup_grad - 2) <= 1e-8
    assert abs(b.R_sup_hess / a.R_sup_hess - 2) <= 1e-8


def test_property_check_fails_below_footnote(spec):
    rep = barrier_property_check(BarrierSpec(mu_q=0.9 * spec.mu_q))
    assert not rep.passed
    assert not rep.footnote_level_ok
    assert any("(c1+c2) R" in f for f in rep.failures)


def test_annulus_radii(spec):
    r = annulus_radii(spec, 32)
    assert len(r) == 32 and r[0] > spec.c0 and r[-1] == pytest.approx(spec.c1 + spec.c2 + spec.c5)
    assert np.all(np.diff(r) > 0)


def test_classical_bound_at_unit_radius(spec):
    rep = barrier_curvature_check(spec, s=0.95, radii=[1.0])
    bound = spec.eps * spec.q * (spec.q + 3 - spec.n) * spec.mu_q * spec.c0 ** spec.q / 4
    assert rep.classical_bound[0] == pytest.approx(bound)
    assert rep.classical[0] >= bound


@pytest.mark.parametrize("slope", [None, [0.04]])
def test_curvature_positive_near_core(spec, slope):
    # inside the annulus where the tail bends fastest the check passes
    rep = barrier_curvature_check(spec, slope=slope, s=0.95, radii=[0.5, 1.0, 2.0])
    assert rep.passed
    # the normalized value tracks twice the classical curvature there
    np.testing.assert_allclose(rep.values, 2 * np.array(rep.classical), rtol=0.1)


def test_curvature_regime_enforced(spec):
    with pytest.raises(FracminError, match="regime"):
        barrier_curvature_check(spec, slope=[0.2], radii=[1.0])
    with pytest.raises(FracminError, match="regime"):
        barrier_curvature_check(spec, s=0.5, radii=[1.0])


def test_curvature_far_annulus_is_below_threshold(spec):
    # the tail curvature decays like |x'|^{-4}; the lower bound c4 eps / R^s
    # cannot hold across the whole annulus (see the decisions ledger)
    rep = barrier_curvature_check(spec, s=0.95, radii=[50.0])
    assert 0 < rep.values[0] < rep.threshold


# ---------------------------------------------------------------- envelope

def _grid1(L=3.0, N=601):
    return Grid(1, (N,), (-L,), 2 * L / N)


def test_envelope_exact_1d():
    L = 3.0
    g = _grid1(L)
    x = g.centers()[..., 0]
    env = convex_envelope(GraphFunction(g, np.abs(x) - 1), L, R=0.5)
    assert np.max(np.abs(env.gamma_values.values - (np.abs(x) / L - 1))) <= 1e-9
    assert env.grad_image_measure == pytest.approx(2 / L, abs=1e-9)
    assert (300,) in env.touching_set


def test_envelope_of_convex_function():
    g = _grid1(2.0, 400)
    x = g.centers()[..., 0]
    v = x ** 2 / 8 - 1
    env = convex_envelope(GraphFunction(g, v), 1.9)
    neg = np.abs(x) < 1.9
    np.testing.assert_allclose(env.gamma_values.values[neg], v[neg], atol=1e-12)
    assert {(i,) for i in np.nonzero(neg)[0]} <= set(env.touching_set)


@pytest.mark.parametrize("seed", [0, 1])
def test_envelope_below_and_convex_2d(seed):
    rng = np.random.default_rng(seed)
    g = Grid.covering([-2.0, -2.0], [2.0, 2.0], 40)
    c = g.centers()
    v = np.sum(c ** 2, axis=-1) / 4 - 1 + 0.2 * rng.standard_normal(g.dims)
    radius = 1.8
    env = convex_envelope(GraphFunction(g, v), radius)
    gam = env.gamma_values.values
    inside = np.linalg.norm(c, axis=-1) < radius
    assert np.all(gam[inside] <= np.minimum(v, 0)[inside] + 1e-12)
    assert np.all(gam[~inside] == 0)
    # second differences along both axes on pairs fully inside the ball
    for ax in (0, 1):
        d2 = np.diff(gam, 2, axis=ax)
        sl = [slice(None)] * 2
        sl[ax] = slice(1, -1)
        ok = np.ones_like(d2, bool)
        for k in (0, 1, 2):
            s2 = [slice(None)] * 2
            s2[ax] = slice(k, k + d2.shape[ax])
            ok &= inside[tuple(s2)]
        assert np.all(d2[ok] >= -1e-9)


def test_envelope_cone_slope_inequality():
    n, R, m0 = 3, 1.0, 0.5
    Rb = 6 * math.sqrt(n) * R
    g = Grid.covering([-15.0, -15.0], [15.0, 15.0], 128)
    rr = np.linalg.norm(g.centers(), axis=-1)
    env = convex_envelope(GraphFunction(g, m0 * rr / Rb - m0), Rb, R=R)
    assert env.grad_image_measure == pytest.approx(math.pi * (m0 / Rb) ** 2, rel=0.01)
    assert env.grad_image_measure >= (env.m0 / Rb) ** (n - 1)


def test_envelope_ball_outside_grid():
    g = _grid1(1.0, 100)
    with pytest.raises(FracminError):
        convex_envelope(GraphFunction(g, np.zeros(100)), 2.0)


# ---------------------------------------------------------------- measure estimate

@pytest.fixture(scope="module")
def base1():
    return Grid.covering([-15.0], [15.0], 1024)


def test_measure_flat_graph(base1):
    u = GraphFunction(base1, np.full(base1.dims, -1.0))
    rep = measure_estimate_check(u, -1.0, 1.0, 0.02)
    assert rep.fraction == pytest.approx(1.0, abs=1e-12)
    assert rep.passed and rep.bar_trap


def test_measure_shallow_cone(base1):
    x = base1.centers()[..., 0]
    u = GraphFunction(base1, -1.0 + np.minimum(0.01 * np.abs(x), 0.3))
    rep = measure_estimate_check(u, -1.0, 1.0, 0.02, s=0.9, curvature_samples=2)
    assert rep.passed and rep.curvature_checked == 2


@pytest.mark.parametrize("values, display", [
    (lambda x: -1.0 + 2 * np.abs(x), "(AL)"),
    (lambda x: -1.0 - 0.1 * (np.abs(x) > 5), "(USE)"),
    (lambda x: -0.9 + 0 * x, "(901212-bis)"),
    (lambda x: -1.0 + np.minimum(0.5 * x ** 2, 0.5 * np.abs(x)), "(sd77ef12345d)"),
])
def test_measure_hypothesis_gates(base1, values, display):
    u = GraphFunction(base1, values(base1.centers()[..., 0]))
    with pytest.raises(HypothesisError) as info:
        measure_estimate_check(u, -1.0, 1.0, 0.02, s=0.9, curvature_samples=4)
    assert info.value.display == display


# ---------------------------------------------------------------- rings

@pytest.fixture(scope="module")
def ring_grid():
    # odd cell count puts a cell center at 0
    return Grid.covering([-1.2], [1.2], 2401)


def test_ring_trivial(ring_grid):
    x = ring_grid.centers()[..., 0]
    d = ring_detachment(GraphFunction(ring_grid, 0 * x), [0.0], Paraboloid.plane([0.0]), 0.01, 1.0, 0.9)
    assert d.m_star == 0 and d.excess_fraction == 0
    assert all(b == 0 for b in d.b_values)


def test_ring_radii_arithmetic(ring_grid):
    x = ring_grid.centers()[..., 0]
    Cbar, n = 1.0, 2
    d = ring_detachment(GraphFunction(ring_grid, 0 * x), [0.0], Paraboloid.plane([0.0]), 0.01, 1.0, 0.9, Cbar=Cbar)
    r = d.r_m
    assert all(b < a / (Cbar * math.sqrt(n)) for a, b in zip(r, r[1:]))
    assert d.ring[0] < d.ring[1] <= 1.0


def test_ring_quadratic(ring_grid):
    eps, s = 0.01, 0.9
    x = ring_grid.centers()[..., 0]
    d = ring_detachment(GraphFunction(ring_grid, eps * x ** 2), [0.0], Paraboloid.plane([0.0]), eps, 1.0, s, M=50)
    assert d.excess_fraction <= 0.1 and d.passed
    # small-slope closed form: b_m ~ 4 eps (r_m^{1-s} - r_{m+1}^{1-s}) / (1 - s)
    r = d.r_m
    for k in range(3):
        ref = 4 * eps * (r[k] ** (1 - s) - r[k + 1] ** (1 - s)) / (1 - s)
        assert d.b_values[k] == pytest.approx(ref, rel=5e-3)


def test_ring_affine_invariance(ring_grid):
    eps = 0.01
    x = ring_grid.centers()[..., 0]
    a = ring_detachment(GraphFunction(ring_grid, eps * x ** 2), [0.0], Paraboloid.plane([0.0]), eps, 1.0, 0.9)
    b = ring_detachment(GraphFunction(ring_grid, eps * x ** 2 + 0.005 * x), [0.0],
                        Paraboloid.plane([0.0], 0.0, [0.005]), eps, 1.0, 0.9)
    assert a.excess_fraction == b.excess_fraction
    assert a.m_star == b.m_star


def test_ring_violator_fails(ring_grid):
    x = ring_grid.centers()[..., 0]
    u = GraphFunction(ring_grid, np.clip(x, 0, 0.5))
    d = ring_detachment(u, [0.0], Paraboloid.plane([0.0]), 0.001, 1.0, 0.9, M=50, C_o=1e4)
    assert d.excess_fraction == pytest.approx(0.5, abs=0.01)
    assert not d.passed


def test_ring_paraboloid_must_touch(ring_grid):
    x = ring_grid.centers()[..., 0]
    with pytest.raises(HypothesisError) as info:
        ring_detachment(GraphFunction(ring_grid, 0 * x), [0.0], Paraboloid.plane([0.0], 0.1), 0.01, 1.0, 0.9)
    assert info.value.display == "(above gamma)"


def test_ring_selection_failure(ring_grid):
    x = ring_grid.centers()[..., 0]
    u = GraphFunction(ring_grid, 0.5 * np.abs(x))
    with pytest.raises(FracminError, match="selection failed"):
        ring_detachment(u, [0.0], Paraboloid.plane([0.0]), 0.001, 1.0, 0.9, C_o=1e-3, m_max=3)


# ---------------------------------------------------------------- schedule

@pytest.mark.parametrize("mu, k0", [(0.75, 1), (0.5, 2), (0.1, 14)])
def test_schedule_examples(mu, k0):
    M = 4.0
    sch = improvement_schedule(mu, M)
    assert sch.k0 == k0
    assert sch.d == 1 / (2 * M ** k0)
    assert (1 - mu) ** sch.k0 <= 0.25 < (1 - mu) ** (sch.k0 - 1)


@pytest.mark.parametrize("mu, M", [(0.0, 2.0), (1.0, 2.0), (0.5, 1.0)])
def test_schedule_rejects(mu, M):
    with pytest.raises(FracminError):
        improvement_schedule(mu, M)
