import math

import numpy as np
import pytest

from fracmin import fixtures
from fracmin.errors import FracminError, HypothesisError, ResolutionError
from fracmin.geometry import ExteriorRule, Grid, VoxelSet, lipschitz_estimate
from fracmin.levelsets import (
    LevelSetSpec, boundary_graph, level_set_graph, lipschitz_bound_check, paraboloid_touch_check,
    separation_check,
)


def _graph_set(f, slope=0.0, cells=256, half=1.25):
    """{x_2 < f(x_1)} on a square grid, continued by {x_2 < slope x_1} outside."""
    g = Grid(2, (cells, cells), (-half, -half), 2 * half / cells)
    c = g.centers()
    nu = (-slope, 1.0)
    return VoxelSet.from_level(g, c[..., 1] - f(c[..., 0]), ExteriorRule("halfspace", nu, 0.0))


@pytest.fixture(scope="module")
def step04():
    return fixtures.step(gamma=0.01, delta=0.25)


def test_spec_validation():
    with pytest.raises(FracminError):
        LevelSetSpec(0.3, "-", 0.01, 1.0)
    with pytest.raises(FracminError):
        LevelSetSpec(0.1, "x", 0.01, 1.0)


def test_halfspace_level_set():
    E = fixtures.halfspace(cells=128)
    u = level_set_graph(E, LevelSetSpec(0.1, "-", 0.0, 0.5))
    assert np.max(np.abs(u.values + 0.1)) <= E.grid.h
    assert lipschitz_estimate(u) <= E.grid.h


def test_level_sets_ordered_and_symmetric():
    E = _graph_set(lambda x: 0.01 * np.sin(3 * x))
    dn = level_set_graph(E, LevelSetSpec(0.2, "-", 0.01, 1.0))
    up = level_set_graph(E, LevelSetSpec(0.2, "+", 0.01, 1.0))
    assert np.all(dn.values <= up.values)
    # reflecting x_2 -> -x_2 and complementing swaps the two sides
    R = VoxelSet(E.grid, ~E.occupancy[:, ::-1], ExteriorRule("halfspace", (0.0, 1.0), 0.0))
    up_r = level_set_graph(R, LevelSetSpec(0.2, "+", 0.01, 1.0))
    np.testing.assert_allclose(dn.values, -up_r.values, atol=1e-9)


def test_vertical_shift_moves_level_set():
    h = 2.5 / 256
    E = _graph_set(lambda x: 0.004 * np.cos(2 * x))
    F = _graph_set(lambda x: 0.004 * np.cos(2 * x) + h)
    spec = LevelSetSpec(0.25, "-", 0.015, 1.1)
    a = level_set_graph(E, spec).values
    b = level_set_graph(F, spec).values
    assert np.max(np.abs(b - a - h)) <= h


def test_step_lipschitz_brackets_arc(step04):
    u = level_set_graph(step04, LevelSetSpec(0.25, "-", 0.01, 1.1))
    L = lipschitz_estimate(u)
    assert 0.1 <= L <= 0.5
    assert L == pytest.approx(fixtures.step_lipschitz(0.01, 0.25), rel=0.1)


@pytest.mark.parametrize("gamma, delta", [(0.01, 0.25), (0.01, 1.0)])
def test_step_lipschitz_check(gamma, delta, step04):
    E = step04 if delta == 0.25 else fixtures.step(gamma=gamma, delta=delta)
    rep = lipschitz_bound_check(E, LevelSetSpec(delta, "-", gamma, 4.4 * delta))
    assert rep.passed
    assert rep.measured >= 0.5 * math.sqrt(gamma / delta)


def test_halfspace_lipschitz_check():
    rep = lipschitz_bound_check(fixtures.halfspace(cells=128), LevelSetSpec(0.1, "-", 0.0, 0.5))
    assert rep.passed and rep.measured <= 1e-9


def test_random_trapped_perturbation():
    rng = np.random.default_rng(7)
    gamma, delta = 0.005, 0.25
    k = rng.integers(1, 8, 5)
    a = rng.uniform(-1, 1, 5)
    a *= gamma / np.sum(np.abs(a))
    ph = rng.uniform(0, 2 * np.pi, 5)
    E = _graph_set(lambda x: sum(ai * np.cos(ki * x + p) for ai, ki, p in zip(a, k, ph)))
    assert lipschitz_bound_check(E, LevelSetSpec(delta, "-", gamma, 1.1)).passed


def test_trap_violation():
    with pytest.raises(HypothesisError, match=r"hypothesis \(Gt\) fails") as info:
        level_set_graph(fixtures.disk(0.5, cells=64), LevelSetSpec(0.1, "-", 0.001, 0.5))
    assert info.value.display == "(Gt)"


def test_gamma_over_delta_threshold():
    with pytest.raises(HypothesisError):
        level_set_graph(fixtures.halfspace(cells=64), LevelSetSpec(0.1, "-", 0.01, 0.5))


def test_resolution_insufficient():
    with pytest.raises(ResolutionError, match="resolution insufficient"):
        level_set_graph(fixtures.halfspace(cells=32), LevelSetSpec(0.1, "-", 0.0, 0.5))


def test_touch_halfspace():
    rep = paraboloid_touch_check(fixtures.halfspace(cells=128), LevelSetSpec(0.1, "-", 0.0, 0.5))
    assert rep.all_passed and len(rep.points) > 0


def test_touch_step_near_arc(step04):
    pts = [[x] for x in np.linspace(-0.5, 0.5, 11)]
    rep = paraboloid_touch_check(step04, LevelSetSpec(0.25, "-", 0.01, 1.1), pts)
    assert rep.all_passed


def test_separation_equal_halfspaces():
    E = fixtures.halfspace(cells=128)
    gamma, delta = 0.02, 0.25
    rep = separation_check(E, E, gamma, delta)
    assert rep.max_gap == pytest.approx(2 * delta, abs=E.grid.h)
    assert rep.passed and rep.bound == pytest.approx(2 * 2 * (gamma + delta))


def test_separation_shifted_halfspace():
    gamma, delta = 0.04, 0.25
    E = _graph_set(lambda x: np.full_like(x, gamma / 2), cells=128)
    E_star = fixtures.halfspace(cells=128)
    assert separation_check(E, E_star, gamma, delta).passed


def test_separation_cosine_near_tilted_plane():
    gamma, delta = 0.03, 0.25
    E = _graph_set(lambda x: 0.2 * x + 0.02 * np.cos(6 * x), slope=0.2, cells=128)
    E_star = fixtures.plane(0.2, cells=128)
    rep = separation_check(E, E_star, gamma, delta)
    assert rep.M_o == pytest.approx(0.2, abs=0.02)
    assert rep.passed


def test_separation_neighborhood_violation():
    E = _graph_set(lambda x: np.full_like(x, 0.3), cells=64)
    with pytest.raises(HypothesisError):
        separation_check(E, fixtures.halfspace(cells=64), 0.05, 0.25)


def test_boundary_graph_tracks_level_function():
    E = fixtures.plane(0.2, cells=64)
    u = boundary_graph(E)
    x = u.points()[..., 0]
    assert np.max(np.abs(u.values - 0.2 * x)) <= 1e-9
