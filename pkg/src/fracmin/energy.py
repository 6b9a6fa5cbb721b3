"""Interaction energy L(A, B) and the three-term functional J_s(E, Omega)."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import _kernels
from .errors import FracminError
from .geometry import Ball, Box, Grid, VoxelSet


REGULARIZATIONS = ("exact-pair", "subcell-average", "exclude-self-cell")
EXACT_RANGE = 3


@dataclass(frozen=True)
class KernelSpec:
    """Kernel |x-y|^{-(n+s)} with a rule for near-diagonal cell pairs.

    regularization is ``"exact-pair"`` (the exact cell-pair integral for
    offsets up to ``EXACT_RANGE`` cells per axis, the k -> infinity limit of
    subcell averaging), ``"subcell-average"`` (average over k^n subcells of
    each cell when the centers are closer than 2h) or ``"exclude-self-cell"``
    (plain center sampling).
    """

    n: int
    s: float
    regularization: str = "exact-pair"
    k: int = 4

    def __post_init__(self):
        if not 0 < self.s < 1:
            raise FracminError("fractional order s must lie in (0, 1)")
        if self.regularization not in REGULARIZATIONS:
            raise FracminError(f"unknown regularization {self.regularization!r}")
        if self.regularization == "subcell-average" and self.k < 2:
            raise FracminError("subcell-average needs k >= 2")


@dataclass(frozen=True)
class EnergyBreakdown:
    inside_inside: float
    inside_out: float
    out_inside: float
    total: float
    truncation_radius: float
    tail_bound: float

    def to_json(self) -> dict:
        return asdict(self)


def _unit_offsets(n, k):
    m = np.arange(-(k - 1), k)
    grids = np.meshgrid(*([m] * n), indexing="ij")
    offs = np.stack([g.ravel() for g in grids], axis=-1)
    mult = np.prod(k - np.abs(offs), axis=1).astype(float)
    return offs / k, mult / k ** (2 * n)


def _gauss_box(lo, hi, order: int = 16):
    """Tensor Gauss-Legendre nodes and weights on the box [lo, hi]."""
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(lo, hi):
        nodes.append(0.5 * (b - a) * (x + 1) + a)
        weights.append(0.5 * (b - a) * w)
    mesh = np.stack([m.ravel() for m in np.meshgrid(*nodes, indexing="ij")], axis=-1)
    wt = np.prod(np.stack([m.ravel() for m in np.meshgrid(*weights, indexing="ij")], axis=-1), axis=-1)
    return mesh, wt


def _corner_piece(a, b, s: float) -> float:
    """Integral over [0,1]^n of prod(a_i + b_i v_i) |v|^{-n-s}, given that
    the product vanishes at v = 0.

    Scaling v = t u toward the far faces {u_j = 1} turns the homogeneous part
    of degree d into (1/(d-s)) times a smooth integral over those faces.
    """
    n = len(a)
    total = 0.0
    for j in range(n):
        if n == 1:
            u = np.ones((1, 1))
            wt = np.ones(1)
        else:
            face, wt = _gauss_box([0.0] * (n - 1), [1.0] * (n - 1))
            u = np.insert(face, j, 1.0, axis=1)
        ker = np.linalg.norm(u, axis=1) ** (-(n + s))
        for subset in range(1, 2 ** n):
            S = [i for i in range(n) if subset >> i & 1]
            coef = np.prod([a[i] for i in range(n) if i not in S])
            if coef == 0:
                continue
            mono = coef * np.prod([b[i] * u[:, i] for i in S], axis=0)
            total += float(np.sum(wt * mono * ker)) / (len(S) - s)
    return total


@functools.lru_cache(maxsize=None)
def _exact_unit_pair(o: tuple, s: float) -> float:
    """Exact integral of |x-y|^{-n-s} over x in the unit cell at 0 and y in the
    unit cell at offset o, written as the integral of the tent
    prod(1-|z_i|) against |o+z|^{-n-s} over z in [-1,1]^n."""
    n = len(o)
    total = 0.0
    for sig in np.ndindex(*([2] * n)):
        sig = [1 if c else -1 for c in sig]
        corner = all(oi == 0 or oi + si == 0 for oi, si in zip(o, sig))
        if corner:
            # reflect the piece onto [0,1]^n with the singular point at v = 0
            a = [1.0 if oi == 0 else 0.0 for oi in o]
            b = [-1.0 if oi == 0 else 1.0 for oi in o]
            total += _corner_piece(a, b, s)
        else:
            lo = [min(oi, oi + si) for oi, si in zip(o, sig)]
            hi = [max(oi, oi + si) for oi, si in zip(o, sig)]
            w, wt = _gauss_box(lo, hi)
            z = w - np.asarray(o, float)
            tent = np.prod(1 - np.abs(z), axis=1)
            total += float(np.sum(wt * tent * np.linalg.norm(w, axis=1) ** (-(n + s))))
    return total


@functools.lru_cache(maxsize=16)
def _unit_table(dims: tuple, s: float, regularization: str, k: int) -> np.ndarray:
    n = len(dims)
    axes = [np.arange(-(d - 1), d) for d in dims]
    mesh = np.meshgrid(*axes, indexing="ij")
    off = np.stack(mesh, axis=-1).astype(float)
    r = np.linalg.norm(off, axis=-1)
    with np.errstate(divide="ignore"):
        table = r ** (-(n + s))
    center = tuple(d - 1 for d in dims)
    table[center] = 0.0
    if regularization == "exact-pair":
        reach = [min(EXACT_RANGE, d - 1) for d in dims]
        for o in np.ndindex(*[2 * m + 1 for m in reach]):
            o = tuple(a - m for a, m in zip(o, reach))
            if any(o):
                table[tuple(c + a for c, a in zip(center, o))] = _exact_unit_pair(o, s)
    elif regularization == "subcell-average":
        sub, mult = _unit_offsets(n, k)
        near = np.argwhere((r > 0) & (r < 2.0))
        for idx in near:
            o = off[tuple(idx)]
            rr = np.linalg.norm(o + sub, axis=-1)
            table[tuple(idx)] = float(np.sum(mult * rr ** (-(n + s))))
    table.setflags(write=False)
    return table


def kernel_table(grid: Grid, kernel: KernelSpec) -> np.ndarray:
    """Pair weights w(x, y) h^{2n} indexed by the cell offset, flattened."""
    if kernel.n != grid.n:
        raise FracminError("kernel dimension does not match the grid")
    unit = _unit_table(grid.dims, float(kernel.s), kernel.regularization, int(kernel.k))
    return np.ascontiguousarray((grid.h ** (grid.n - kernel.s) * unit).ravel())


def _dims_arrays(grid: Grid):
    dims = np.asarray(grid.dims, np.int64)
    return dims, 2 * dims - 1


def _cells(mask: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argwhere(mask).astype(np.int64))


def _pair_sum(a_idx: np.ndarray, b_idx: np.ndarray, grid: Grid, table: np.ndarray) -> float:
    if len(a_idx) == 0 or len(b_idx) == 0:
        return 0.0
    # canonical operand order keeps L(A, B) == L(B, A) bit for bit
    if (len(a_idx), a_idx.tobytes()) > (len(b_idx), b_idx.tobytes()):
        a_idx, b_idx = b_idx, a_idx
    dims, tdims = _dims_arrays(grid)
    return math.fsum(_kernels.pair_sums(a_idx, b_idx, table, dims, tdims))


def interaction(A: VoxelSet, B: VoxelSet, kernel: KernelSpec) -> float:
    """Discrete L(A, B) over the grid cells of two disjoint sets."""
    if A.grid != B.grid:
        raise FracminError("sets must share a grid")
    if np.any(A.occupancy & B.occupancy):
        raise FracminError("non-disjoint sets")
    table = kernel_table(A.grid, kernel)
    return _pair_sum(_cells(A.occupancy), _cells(B.occupancy), A.grid, table)


def direction_quadrature(n: int, count: int | None = None):
    """Deterministic directions on S^{n-1} with equal weights."""
    if n == 2:
        count = count or 720
        t = 2 * np.pi * (np.arange(count) + 0.5) / count
        dirs = np.stack([np.cos(t), np.sin(t)], axis=-1)
        return dirs, np.full(count, 2 * np.pi / count)
    if n == 3:
        count = count or 2048
        i = np.arange(count) + 0.5
        z = 1 - 2 * i / count
        phi = np.pi * (1 + 5 ** 0.5) * i
        r = np.sqrt(1 - z * z)
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=-1)
        return dirs, np.full(count, 4 * np.pi / count)
    if n == 1:
        return np.array([[-1.0], [1.0]]), np.ones(2)
    raise FracminError("unsupported dimension")


def exterior_integral(E: VoxelSet, cells: np.ndarray, kernel: KernelSpec, cutoff: float,
                      inside: bool) -> np.ndarray:
    """For each cell x, h^n * integral of |x-y|^{-n-s} over the points y outside the
    box with |x-y| <= cutoff that lie in E (inside=True) or in its complement."""
    g = E.grid
    if len(cells) == 0:
        return np.zeros(0)
    xs = np.ascontiguousarray(g.lo + (cells + 0.5) * g.h)
    dirs, w = direction_quadrature(g.n)
    rule = E.exterior
    lo, hi = np.asarray(g.lo), np.asarray(g.hi)
    if rule.kind == "periodic-extend":
        occ = np.ascontiguousarray(E.occupancy.ravel())
        vals = _kernels.exterior_rays_periodic(xs, dirs, w, lo, hi, float(cutoff), kernel.s, occ,
                                               np.asarray(g.dims, np.int64), g.h, bool(inside))
    else:
        nu = np.zeros(g.n)
        offset = 0.0
        if rule.kind in ("empty", "full"):
            mode = 1 if (rule.kind == "full") == inside else 0
        else:
            mode = 2
            # both halfspace kinds reduce to {y . nu < offset} or its complement
            nu = np.asarray(rule.nu)
            offset = rule.offset
            inside = inside if rule.kind == "halfspace" else not inside
        vals = _kernels.exterior_rays(xs, dirs, w, lo, hi, float(cutoff), kernel.s, mode, nu, offset,
                                      bool(inside))
    return g.h ** g.n * vals


def _omega_inside_box(grid: Grid, omega) -> bool:
    if isinstance(omega, Ball):
        return grid.contains_ball(omega.center, omega.radius)
    if isinstance(omega, Box):
        return bool(np.all(np.asarray(omega.lo) >= grid.lo - 1e-12) and np.all(np.asarray(omega.hi) <= grid.hi + 1e-12))
    return True


def _check_setup(E: VoxelSet, omega, kernel: KernelSpec, far_cutoff: float):
    if kernel.n != E.grid.n:
        raise FracminError("kernel dimension does not match the set")
    if far_cutoff < E.grid.diameter * (1 - 1e-12):
        raise FracminError(f"far_cutoff {far_cutoff} is smaller than the grid diameter {E.grid.diameter:.6g}")
    if not _omega_inside_box(E.grid, omega):
        raise FracminError("Omega must lie inside the grid box")


def tail_bound(E: VoxelSet, omega_mask: np.ndarray, kernel: KernelSpec, far_cutoff: float) -> float:
    """|Omega| |S^{n-1}| cutoff^{-s} / s, an upper bound on the dropped tail."""
    n = E.grid.n
    sphere = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
    vol = float(omega_mask.sum()) * E.grid.h ** n
    return vol * sphere * far_cutoff ** (-kernel.s) / kernel.s


def js_energy(E: VoxelSet, omega, kernel: KernelSpec, far_cutoff: float) -> EnergyBreakdown:
    """J_s(E, Omega) = L(E∩Ω, ∁E∩Ω) + L(E∩Ω, ∁E∩∁Ω) + L(E∩∁Ω, ∁E∩Ω).

    Grid cells carry the set inside the box; beyond the box the exterior
    rule is integrated along rays up to ``far_cutoff``.
    """
    _check_setup(E, omega, kernel, far_cutoff)
    g = E.grid
    table = kernel_table(g, kernel)
    om = omega.contains(g.centers())
    occ = E.occupancy
    e_in = _cells(occ & om)
    c_in = _cells(~occ & om)
    e_out = _cells(occ & ~om)
    c_out = _cells(~occ & ~om)
    t1 = _pair_sum(e_in, c_in, g, table)
    ext_c = exterior_integral(E, e_in, kernel, far_cutoff, inside=False)
    ext_e = exterior_integral(E, c_in, kernel, far_cutoff, inside=True)
    t2 = math.fsum([_pair_sum(e_in, c_out, g, table), math.fsum(ext_c)])
    t3 = math.fsum([_pair_sum(e_out, c_in, g, table), math.fsum(ext_e)])
    return EnergyBreakdown(t1, t2, t3, math.fsum([t1, t2, t3]), float(far_cutoff),
                           tail_bound(E, om, kernel, far_cutoff))


class FlipModel:
    """Incremental energy bookkeeping for flips of cells inside Omega.

    With sigma = +1 on E and -1 on the complement, flipping cell c changes
    J_s by sigma_c * P_c where P_c = sum_{y != c} w(c, y) sigma_y plus the
    exterior-rule contribution.
    """

    def __init__(self, E: VoxelSet, omega, kernel: KernelSpec, far_cutoff: float):
        _check_setup(E, omega, kernel, far_cutoff)
        self.grid = g = E.grid
        self.kernel = kernel
        self.far_cutoff = float(far_cutoff)
        self.omega = omega
        self.table = kernel_table(g, kernel)
        self.dims, self.tdims = _dims_arrays(g)
        self.occ = E.occupancy.copy()
        self.exterior = E.exterior
        self.omega_mask = omega.contains(g.centers())
        self.cells = _cells(self.omega_mask)
        self.index = {tuple(c): i for i, c in enumerate(self.cells.tolist())}
        allcells = _cells(np.ones(g.dims, bool))
        sigma = np.where(self.occ.ravel(), 1.0, -1.0)
        ext_e = exterior_integral(E, self.cells, kernel, far_cutoff, inside=True)
        ext_c = exterior_integral(E, self.cells, kernel, far_cutoff, inside=False)
        self.P = _kernels.potential(self.cells, allcells, sigma, self.table, self.dims, self.tdims) + (ext_e - ext_c)

    def sigma(self, i: int) -> float:
        return 1.0 if self.occ[tuple(self.cells[i])] else -1.0

    def delta(self, i: int) -> float:
        return self.sigma(i) * self.P[i]

    def weight(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.table[_kernels._table_index(a, b, self.dims, self.tdims)]

    def group_delta(self, members) -> float:
        """Energy change from flipping all listed Omega cells at once."""
        total = 0.0
        sig = [self.sigma(i) for i in members]
        for a, i in enumerate(members):
            corr = 0.0
            for b, j in enumerate(members):
                if a != b:
                    corr += self.weight(self.cells[i], self.cells[j]) * sig[b]
            total += sig[a] * (self.P[i] - corr)
        return total

    def flip(self, i: int) -> None:
        c = self.cells[i]
        ds = -2.0 * self.sigma(i)
        self.occ[tuple(c)] = not self.occ[tuple(c)]
        _kernels.update_potential(self.P, self.cells, c, ds, self.table, self.dims, self.tdims)

    def voxel_set(self) -> VoxelSet:
        return VoxelSet(self.grid, self.occ.copy(), self.exterior)


def flip_delta(E: VoxelSet, cell, omega, kernel: KernelSpec, far_cutoff: float | None = None) -> float:
    """J_s(E Δ {cell}, Omega) - J_s(E, Omega) for a cell inside Omega."""
    g = E.grid
    cell = tuple(int(c) for c in cell)
    if far_cutoff is None:
        far_cutoff = g.diameter
    _check_setup(E, omega, kernel, far_cutoff)
    center = g.lo + (np.asarray(cell) + 0.5) * g.h
    if not omega.contains(center[None])[0]:
        raise FracminError("exterior data is frozen")
    table = kernel_table(g, kernel)
    dims, tdims = _dims_arrays(g)
    c = np.asarray([cell], np.int64)
    allcells = _cells(np.ones(g.dims, bool))
    sigma = np.where(E.occupancy.ravel(), 1.0, -1.0)
    p = _kernels.potential(c, allcells, sigma, table, dims, tdims)[0]
    p += exterior_integral(E, c, kernel, far_cutoff, True)[0] - exterior_integral(E, c, kernel, far_cutoff, False)[0]
    return (1.0 if E.occupancy[cell] else -1.0) * p
