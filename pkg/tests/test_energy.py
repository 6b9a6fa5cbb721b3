import math

import numpy as np
import pytest
from scipy import integrate, special

from fracmin import fixtures
from fracmin.energy import KernelSpec, _exact_unit_pair, flip_delta, interaction, js_energy
from fracmin.errors import FracminError
from fracmin.geometry import Ball, ExteriorRule, Grid, VoxelSet

FAR = 1e4


def _box_set(grid, lo, hi):
    c = grid.centers()
    inside = np.all((c > lo) & (c < hi), axis=-1)
    return VoxelSet(grid, inside, ExteriorRule("empty"))


def test_kernel_spec_validates():
    with pytest.raises(FracminError):
        KernelSpec(2, 1.0)
    with pytest.raises(FracminError):
        KernelSpec(2, 0.5, "subcell-average", k=1)


@pytest.mark.parametrize("o, s", [((1,), 0.5), ((2,), 0.3), ((3,), 0.9)])
def test_exact_pair_matches_dblquad_1d(o, s):
    ref, _ = integrate.dblquad(lambda y, x: abs(x - y) ** (-1 - s), 0, 1, o[0], o[0] + 1)
    assert _exact_unit_pair(o, s) == pytest.approx(ref, rel=1e-10)


def test_exact_pair_is_limit_of_subcell_average():
    from fracmin.energy import _unit_offsets
    sub, mult = _unit_offsets(2, 64)
    avg = np.sum(mult * np.linalg.norm(np.array((2, 1)) + sub, axis=1) ** -2.5)
    assert _exact_unit_pair((2, 1), 0.5) == pytest.approx(avg, rel=1e-4)


def test_interaction_empty():
    g = Grid(2, (8, 8), (0, 0), 0.125)
    A = VoxelSet(g, np.zeros(g.dims, bool))
    B = _box_set(g, (0.5, 0.5), (1, 1))
    assert interaction(A, B, KernelSpec(2, 0.5)) == 0.0


@pytest.mark.parametrize("s", [0.2, 0.5, 0.9])
def test_interaction_far_cells(s):
    g = Grid(2, (64, 4), (0, 0), 0.01)
    a = np.zeros(g.dims, bool)
    b = np.zeros(g.dims, bool)
    a[0, 0] = True
    b[60, 0] = True
    d = 60 * g.h
    val = interaction(VoxelSet(g, a), VoxelSet(g, b), KernelSpec(2, s))
    assert val == pytest.approx(g.h ** 4 / d ** (2 + s), rel=0.01)


def test_interaction_symmetric_and_disjoint():
    g = Grid(2, (60, 20), (0, 0), 0.05)
    A = _box_set(g, (0, 0), (1, 1))
    B = _box_set(g, (2, 0), (3, 1))
    k = KernelSpec(2, 0.5)
    assert interaction(A, B, k) == interaction(B, A, k)
    with pytest.raises(FracminError, match="non-disjoint"):
        interaction(A, A, k)


def test_interaction_unit_squares_gauss_oracle():
    # independent oracle: tensor Gauss-Legendre over the 4-D product (the
    # squares are a unit distance apart, so the integrand is smooth)
    s = 0.5
    x, w = np.polynomial.legendre.leggauss(24)
    t = 0.5 * (x + 1)
    tw = 0.5 * w
    X1, X2, Y1, Y2 = np.meshgrid(t, t, t + 2, t, indexing="ij")
    W = np.einsum("i,j,k,l->ijkl", tw, tw, tw, tw)
    ref = float(np.sum(W * ((X1 - Y1) ** 2 + (X2 - Y2) ** 2) ** (-(2 + s) / 2)))
    g = Grid(2, (60, 20), (0, 0), 0.05)
    val = interaction(_box_set(g, (0, 0), (1, 1)), _box_set(g, (2, 0), (3, 1)), KernelSpec(2, s))
    assert val == pytest.approx(ref, rel=0.005)


def test_js_energy_full_space_is_zero():
    g = Grid(2, (32, 32), (-1, -1), 1 / 16)
    E = VoxelSet(g, np.ones(g.dims, bool), ExteriorRule("full"))
    e = js_energy(E, Ball((0.0, 0.0), 0.8), KernelSpec(2, 0.5), FAR)
    assert (e.inside_inside, e.inside_out, e.out_inside, e.total) == (0.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("make", [
    lambda: fixtures.disk(0.5, cells=48),
    lambda: fixtures.cosine(0.05, cells=48),
    lambda: fixtures.plane(0.3, n=3, cells=14),
])
def test_js_energy_complement_invariance(make):
    E = make()
    n = E.grid.n
    k = KernelSpec(n, 0.6)
    om = Ball((0.0,) * n, 1.0)
    a = js_energy(E, om, k, FAR)
    b = js_energy(E.complement(), om, k, FAR)
    assert a.total == b.total
    assert a.inside_inside == b.inside_inside
    assert (a.inside_out, a.out_inside) == (b.out_inside, b.inside_out)


def test_js_energy_terms_and_metadata():
    e = js_energy(fixtures.disk(0.5, cells=32), Ball((0.0, 0.0), 1.0), KernelSpec(2, 0.5), FAR)
    assert min(e.inside_inside, e.inside_out, e.out_inside) >= 0
    assert e.total == math.fsum([e.inside_inside, e.inside_out, e.out_inside])
    assert e.truncation_radius == FAR
    assert e.tail_bound > 0


def test_js_energy_scaling():
    s = 0.7
    E = fixtures.cosine(0.1, cells=40)
    big = VoxelSet(E.grid.scaled(2.0), E.occupancy, E.exterior)
    k = KernelSpec(2, s)
    e1 = js_energy(E, Ball((0.0, 0.0), 1.0), k, 1e9).total
    e2 = js_energy(big, Ball((0.0, 0.0), 2.0), k, 2e9).total
    assert e2 / e1 == pytest.approx(2 ** (2 - s), rel=0.01)


def test_js_energy_cutoff_too_small():
    E = fixtures.halfspace(cells=16)
    with pytest.raises(FracminError, match="far_cutoff"):
        js_energy(E, Ball((0.0, 0.0), 1.0), KernelSpec(2, 0.5), 1.0)


def _halfspace_oracle(s, R, m=400):
    """J_s({x_2<0}, B_1) with interactions cut off at distance R.

    By the reflection x_2 -> -x_2 the third term equals L(E∩B, ∁E∖B), so
    J = L(E∩B, ∁E) + L(E∩B, ∁E∖B). Both are integrated in polar coordinates
    about each x: the first in closed form in the angle, the second by
    Gauss-Legendre with the ray leaving the disk at rb and entering {y_2>0} at r0.
    """
    sinint = special.beta(0.5, (1 + s) / 2)
    a, _ = integrate.quad(lambda t: 2 * math.sqrt(1 - t * t), 0, 1, weight="alg", wvar=(-s, 0))
    first = sinint * a / s - 0.5 * math.pi * math.pi * R ** (-s) / s
    gx, gw = np.polynomial.legendre.leggauss(m)
    th, tw = 0.5 * math.pi * (gx + 1), 0.5 * math.pi * gw
    ph, pw = th + math.pi, tw
    d = np.stack([np.cos(th), np.sin(th)], -1)
    second = 0.0
    for r, wr in zip(0.5 * (gx + 1), 0.5 * gw):
        x = r * np.stack([np.cos(ph), np.sin(ph)], -1)
        xd = x @ d.T
        rb = -xd + np.sqrt(xd ** 2 + 1 - r * r)
        r0 = -x[:, 1:2] / d[:, 1][None]
        f = (np.maximum(r0, rb) ** (-s) - R ** (-s)).clip(0) / s
        second += wr * r * np.sum(pw[:, None] * tw[None] * f)
    return first + second


def test_js_energy_halfspace_matches_oracle():
    s = 0.5
    ref = _halfspace_oracle(s, FAR)
    val = js_energy(fixtures.halfspace(cells=128), Ball((0.0, 0.0), 1.0), KernelSpec(2, s), FAR).total
    assert val == pytest.approx(ref, rel=0.01)


def test_flip_then_flip_back():
    E = fixtures.disk(0.4, cells=32)
    om = Ball((0.0, 0.0), 1.0)
    k = KernelSpec(2, 0.5)
    cell = (16, 26)
    d1 = flip_delta(E, cell, om, k, FAR)
    occ = E.occupancy.copy()
    occ[cell] = ~occ[cell]
    d2 = flip_delta(E.with_occupancy(occ), cell, om, k, FAR)
    assert abs(d1 + d2) <= 1e-10 * abs(d1)


def test_flip_single_cell_in_empty_set():
    g = Grid(2, (16, 16), (-1, -1), 0.125)
    E = VoxelSet(g, np.zeros(g.dims, bool), ExteriorRule("empty"))
    om = Ball((0.0, 0.0), 0.9)
    k = KernelSpec(2, 0.5)
    cell = (8, 8)
    occ = np.zeros(g.dims, bool)
    occ[cell] = True
    single = VoxelSet(g, occ, ExteriorRule("empty"))
    expected = js_energy(single, om, k, FAR).total
    assert flip_delta(E, cell, om, k, FAR) == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_flip_delta_matches_recompute(seed):
    rng = np.random.default_rng(seed)
    g = Grid(2, (20, 20), (-1, -1), 0.1)
    E = VoxelSet(g, rng.random(g.dims) < 0.5, ExteriorRule("halfspace", (0.0, 1.0), 0.0))
    om = Ball((0.0, 0.0), 0.8)
    k = KernelSpec(2, 0.4)
    inside = np.argwhere(om.contains(g.centers()))
    cell = tuple(inside[rng.integers(len(inside))])
    occ = E.occupancy.copy()
    occ[cell] = ~occ[cell]
    full = js_energy(E.with_occupancy(occ), om, k, FAR).total - js_energy(E, om, k, FAR).total
    assert flip_delta(E, cell, om, k, FAR) == pytest.approx(full, rel=1e-10, abs=1e-10)


def test_flip_outside_omega_is_frozen():
    E = fixtures.halfspace(cells=16)
    with pytest.raises(FracminError, match="exterior data is frozen"):
        flip_delta(E, (0, 0), Ball((0.0, 0.0), 0.5), KernelSpec(2, 0.5), FAR)
