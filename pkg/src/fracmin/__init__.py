"""Nonlocal perimeter, fractional mean curvature and the geometric checks
built on them."""
import os as _os

# the TBB layer shipped here is too old; the workqueue layer needs no library
_os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

# numba fixes its thread pool size at import, so honor the cap first
if "FRACMIN_THREADS" in _os.environ and "NUMBA_NUM_THREADS" not in _os.environ:
    _os.environ["NUMBA_NUM_THREADS"] = str(max(1, int(_os.environ["FRACMIN_THREADS"])))

from ._parallel import configure_threads  # noqa: E402

configure_threads()

from .errors import DegenerateSetError, FracminError, HypothesisError, ResolutionError  # noqa: E402
from .geometry import (  # noqa: E402
    Ball, Box, Cylinder, ExteriorRule, GraphFunction, Grid, SignedDistanceGrid, SlabFit, VoxelSet,
    lipschitz_estimate, parse_region, project_tangent, signed_distance, slab_fit,
)

__version__ = "0.1.0"
