"""Deterministic fixture sets: halfspace, tilted plane, disk or ball, the
two-height step, a cosine graph and a cone."""
from __future__ import annotations

import math

import numpy as np

from .errors import FracminError
from .geometry import ExteriorRule, Grid, VoxelSet

DEFAULT_HALF = 1.25


def _cube(n: int, half: float, cells: int) -> Grid:
    return Grid(n, (cells,) * n, (-half,) * n, 2 * half / cells)


def _up(n: int) -> tuple:
    return tuple([0.0] * (n - 1) + [1.0])


def halfspace(n: int = 2, cells: int = 128, half: float = DEFAULT_HALF) -> VoxelSet:
    """{x_n < 0}."""
    g = _cube(n, half, cells)
    return VoxelSet.from_level(g, g.centers()[..., -1].copy(), ExteriorRule("halfspace", _up(n), 0.0))


def plane(slope: float = 0.2, n: int = 2, cells: int = 128, half: float = DEFAULT_HALF) -> VoxelSet:
    """{x_n < slope * x_1}; the level function is the exact signed distance."""
    g = _cube(n, half, cells)
    c = g.centers()
    norm = math.sqrt(1 + slope * slope)
    level = (c[..., -1] - slope * c[..., 0]) / norm
    nu = np.zeros(n)
    nu[0] = -slope
    nu[-1] = 1.0
    return VoxelSet.from_level(g, level, ExteriorRule("halfspace", tuple(nu), 0.0))


def disk(rho: float = 0.5, n: int = 2, cells: int = 128, half: float = DEFAULT_HALF) -> VoxelSet:
    """Ball of radius rho about the origin (disk for n = 2)."""
    if not 0 < rho < half:
        raise FracminError("need 0 < rho < box half-width")
    g = _cube(n, half, cells)
    level = np.linalg.norm(g.centers(), axis=-1) - rho
    return VoxelSet.from_level(g, level, ExteriorRule("empty"))


def cosine(eps: float = 0.05, n: int = 2, cells: int = 128, half: float = DEFAULT_HALF) -> VoxelSet:
    """{x_n < eps cos(2 pi x_1)}, continued outside the box by {x_n < 0}."""
    g = _cube(n, half, cells)
    c = g.centers()
    level = c[..., -1] - eps * np.cos(2 * np.pi * c[..., 0])
    return VoxelSet.from_level(g, level, ExteriorRule("halfspace", _up(n), 0.0))


def cone(theta_deg: float = 10.0, n: int = 2, cells: int = 128, half: float = DEFAULT_HALF) -> VoxelSet:
    """{x_2 < |x_1| tan(theta)}, continued outside by {x_2 < half tan(theta)}."""
    if n != 2:
        raise FracminError("cone fixture is planar")
    g = _cube(n, half, cells)
    c = g.centers()
    t = math.tan(math.radians(theta_deg))
    level = (c[..., -1] - np.abs(c[..., 0]) * t) / math.sqrt(1 + t * t)
    return VoxelSet.from_level(g, level, ExteriorRule("halfspace", _up(n), half * t))


def step_spacing(gamma: float, delta: float) -> float:
    """Largest h <= delta/100 that divides gamma, so the faces at +-gamma are cell faces."""
    return gamma / math.ceil(gamma / (delta / 100.0) - 1e-9)


def step(gamma: float = 0.01, delta: float = 0.25, n: int = 2, r: float | None = None) -> VoxelSet:
    """The two-height step {x_n < gamma, x_1 > 0} ∪ {x_n < -gamma}.

    The box is the cube of half-width r + delta with r = 4.4 delta by default;
    the exterior continues by {x_n < 0}. Its delta-interior level set is a
    line, an arc of radius delta about (0, -gamma) and a line.
    """
    if not 0 < gamma < delta:
        raise FracminError("need 0 < gamma < delta")
    r = 4.4 * delta if r is None else r
    h = step_spacing(gamma, delta)
    k = int(math.ceil((r + delta) / h))
    g = Grid(n, (2 * k,) * n, (-k * h,) * n, h)
    c = g.centers()
    inside = (c[..., -1] < -gamma) | ((c[..., -1] < gamma) & (c[..., 0] > 0))
    return VoxelSet(g, inside, ExteriorRule("halfspace", _up(n), 0.0))


def step_lipschitz(gamma: float, delta: float) -> float:
    """Exact Lipschitz constant of the step's delta-interior level set: the
    arc slope where it meets the upper line, 2 sqrt(gamma (delta - gamma)) / (delta - 2 gamma)."""
    return 2 * math.sqrt(gamma * (delta - gamma)) / (delta - 2 * gamma)


FIXTURES = {
    "halfspace": halfspace,
    "plane": plane,
    "disk": disk,
    "ball": lambda rho=0.5, n=3, cells=64, half=DEFAULT_HALF: disk(rho, n, cells, half),
    "step": step,
    "cosine": cosine,
    "cone": cone,
}


def make(name: str, **params) -> VoxelSet:
    if name not in FIXTURES:
        raise FracminError(f"unknown fixture {name!r}; available: {', '.join(sorted(FIXTURES))}")
    return FIXTURES[name](**params)


_POSITIONAL = {
    "halfspace": [],
    "plane": ["slope"],
    "disk": ["rho"],
    "ball": ["rho"],
    "step": ["gamma", "delta"],
    "cosine": ["eps"],
    "cone": ["theta_deg"],
}


def from_text(text: str, **params) -> VoxelSet:
    """Fixture from ``name[:p1[,p2]]``, e.g. ``plane:0.2`` or ``step:0.01,0.25``."""
    name, _, arg = text.partition(":")
    if name not in _POSITIONAL:
        raise FracminError(f"unknown fixture {name!r}; available: {', '.join(sorted(FIXTURES))}")
    if arg:
        vals = arg.split(",")
        keys = _POSITIONAL[name]
        if len(vals) > len(keys):
            raise FracminError(f"too many parameters for {name!r}")
        try:
            params.update({k: float(v) for k, v in zip(keys, vals)})
        except ValueError as exc:
            raise FracminError(f"cannot parse fixture {text!r}") from exc
    return make(name, **params)
