"""Command-line entry point ``fracmin``.

Exit codes: 0 success or PASS, 2 check FAIL or failed hypothesis, 1 error,
64 malformed invocation.
"""
from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import math
import sys
from fractions import Fraction

import numpy as np

from . import __version__, fixtures, nlsg
from .energy import REGULARIZATIONS
from .errors import FracminError, HypothesisError
from .geometry import GraphFunction, VoxelSet, parse_region, region_to_text

SCHEMA_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------- helpers

def _floats(text: str) -> list:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _region(text: str):
    try:
        return parse_region(text)
    except FracminError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if hasattr(obj, "center") and hasattr(obj, "radius"):
        return region_to_text(obj)
    return obj


def _params(args) -> dict:
    skip = {"func", "json", "out_json", "csv", "config", "command"}
    return {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in skip}


def _write_csv(path, rows: list) -> None:
    if not rows:
        rows = [{}]
    keys = list(rows[0].keys())
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _csv_cell(r.get(k, "")) for k in keys})
    with open(path, "w", newline="") as f:
        f.write(buf.getvalue())


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return " ".join(str(_csv_cell(x)) for x in v)
    return v


def _load_set(args) -> VoxelSet:
    if getattr(args, "set", None):
        obj = nlsg.load(args.set)
        if not isinstance(obj, VoxelSet):
            raise FracminError(f"{args.set} does not hold a voxel set")
        return obj
    text = getattr(args, "fixture", None) or getattr(args, "data", None)
    if not text:
        raise FracminError("give --set FILE or --fixture NAME")
    extra = {}
    if not text.startswith("step") and getattr(args, "grid", None):
        extra["cells"] = args.grid
    if getattr(args, "n", None) and not text.startswith(("step", "cone", "ball")):
        extra["n"] = args.n
    return fixtures.from_text(text, **extra)


def _load_graph(path) -> GraphFunction:
    obj = nlsg.load(path)
    if not isinstance(obj, GraphFunction):
        raise FracminError(f"{path} does not hold a graph")
    return obj


class Outcome:
    """What a subcommand returns: a result mapping, table rows for CSV, a
    PASS/FAIL status (None when not a check) and human-readable lines."""

    def __init__(self, result: dict, rows=None, passed=None, lines=None):
        self.result = result
        self.rows = rows if rows is not None else [_flat(result)]
        self.passed = passed
        self.lines = lines or []


def _flat(d: dict, prefix="") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flat(v, key + "."))
        else:
            out[key] = v
    return out


# ---------------------------------------------------------------- commands

def cmd_energy(args) -> Outcome:
    from .energy import KernelSpec, js_energy
    E = _load_set(args)
    kernel = KernelSpec(E.grid.n, args.s, args.regularization, args.k)
    cutoff = args.far_cutoff if args.far_cutoff else E.grid.diameter
    rep = js_energy(E, args.omega, kernel, cutoff)
    d = rep.to_json()
    return Outcome(d, lines=[f"J_s = {rep.total:.12g}  (terms {rep.inside_inside:.6g}, {rep.inside_out:.6g}, "
                             f"{rep.out_inside:.6g}; tail <= {rep.tail_bound:.3g})"])


def cmd_curvature(args) -> Outcome:
    from .curvature import frac_curvature
    E = _load_set(args)
    x0 = np.asarray(args.x0 if args.x0 is not None else [0.0] * E.grid.n, float)
    rep = frac_curvature(E, x0, args.r, args.s, domain=args.domain)
    return Outcome(rep.to_json(), lines=[f"raw = {rep.raw_integral:.10g}  normalized = {rep.normalized:.10g}  "
                                         f"(err ~ {rep.quad_error_est:.2g})"])


def cmd_sweep_s(args) -> Outcome:
    from .curvature import convergence_study
    st = convergence_study(args.shape, args.s, r=args.r, n=args.n, cells=tuple(args.cells))
    rows = st.table()
    lines = [f"s={r['s']:<6g} h={r['h']:.5g} normalized={r['normalized']:.8g} classical={r['classical']:.6g} "
             f"|err|={r['abs_error']:.3g}" for r in rows]
    lines.append(f"fit |err| ~ A(1-s) + B h: A = {st.A:.4g}, B = {st.B:.4g}")
    return Outcome({"rows": rows, "A": st.A, "B": st.B}, rows=rows, lines=lines)


def _levelset_spec(args, E):
    from .levelsets import LevelSetSpec
    g = E.grid
    gamma = args.gamma
    if gamma is None:
        # the smallest trap half-width: largest |height| of boundary faces near the axis
        fc, _ = E.boundary_faces()
        gamma = float(np.max(np.abs(fc[np.linalg.norm(fc[:, :-1], axis=-1) < 1.0][:, -1])))
    r = args.r if args.r is not None else float(np.min(g.hi)) - args.delta
    return LevelSetSpec(args.delta, args.side, gamma, r)


def cmd_levelset(args) -> Outcome:
    from .levelsets import level_set_graph
    E = _load_set(args)
    spec = _levelset_spec(args, E)
    u = level_set_graph(E, spec, args.c)
    if args.out:
        nlsg.save(args.out, u)
    vals = u.values
    d = {"delta": spec.delta, "side": spec.side, "gamma": spec.gamma, "r": spec.r, "columns": int(vals.size),
         "min": float(vals.min()), "max": float(vals.max()), "out": args.out}
    rows = [{"x": list(p), "u": float(v)} for p, v in zip(u.points().reshape(-1, u.base_grid.n), vals.ravel())]
    return Outcome(d, rows=rows, lines=[f"{vals.size} columns, heights in [{vals.min():.6g}, {vals.max():.6g}]"])


def cmd_levelset_check(args) -> Outcome:
    from .levelsets import lipschitz_bound_check, paraboloid_touch_check, separation_check
    E = _load_set(args)
    spec = _levelset_spec(args, E)
    lip = lipschitz_bound_check(E, spec, args.c)
    touch = paraboloid_touch_check(E, spec, sample_points=args.touch_points, c=args.c)
    result = {"lipschitz": lip.to_json(), "touch": touch.to_json()}
    passed = lip.passed and touch.all_passed
    lines = [f"Lipschitz {lip.measured:.6g} <= {lip.bound:.4g} + {lip.slack:.3g}: {'PASS' if lip.passed else 'FAIL'}",
             f"touching balls: {sum(touch.passed)}/{len(touch.passed)} PASS"]
    if args.e_star:
        Es = nlsg.load(args.e_star)
        sep = separation_check(E, Es, spec.gamma, spec.delta)
        result["separation"] = sep.to_json()
        passed = passed and sep.passed
        lines.append(f"separation {sep.max_gap:.6g} <= {sep.bound:.6g}: {'PASS' if sep.passed else 'FAIL'}")
    return Outcome(result, rows=[_flat({"lipschitz": lip.to_json()})], passed=passed, lines=lines)


def _barrier_spec(args):
    from .barrier import BarrierSpec
    kw = {k: getattr(args, k) for k in ("c0", "c1", "c2", "c3", "c4", "c5", "mu_q") if getattr(args, k) is not None}
    return BarrierSpec(n=args.n, R=args.R, eps=args.eps, q=args.q, **kw)


def cmd_barrier_check(args) -> Outcome:
    from .barrier import barrier_curvature_check, barrier_property_check
    spec = _barrier_spec(args)
    prop = barrier_property_check(spec)
    result = {"spec": spec.to_json(), "footnote_margin": spec.footnote_margin(), "properties": prop.to_json()}
    lines = [f"properties: {'PASS' if prop.passed else 'FAIL'} (C_report = {prop.C_report:.6g})"]
    passed = prop.passed
    rows = []
    if not args.properties_only:
        slope = args.slope if args.slope is not None else None
        cur = barrier_curvature_check(spec, slope=slope, s=args.s, samples=args.samples, cells=args.cells)
        result["curvature"] = cur.to_json()
        passed = passed and cur.passed
        ok = sum(cur.passed_points)
        lines.append(f"curvature: {ok}/{len(cur.radii)} samples >= {cur.threshold:.4g}: "
                     f"{'PASS' if cur.passed else 'FAIL'} (min margin {cur.min_margin:.4g})")
        rows = [{"radius": r, "value": v, "threshold": cur.threshold, "passed": p, "classical": hc,
                 "classical_bound": hb} for r, v, p, hc, hb in
                zip(cur.radii, cur.values, cur.passed_points, cur.classical, cur.classical_bound)]
    return Outcome(result, rows=rows or [_flat(prop.to_json())], passed=passed, lines=lines)


def cmd_abp(args) -> Outcome:
    from .barrier import measure_estimate_check
    u = _load_graph(args.graph)
    rep = measure_estimate_check(u, args.kappa, args.R, args.eps, schedule=(args.M, args.mu), Cbar=args.Cbar,
                                 s=args.s)
    return Outcome(rep.to_json(), passed=rep.passed,
                   lines=[f"|{{u - kappa <= M eps R}} ∩ Q_R| / R^(n-1) = {rep.fraction:.6g} vs mu = {rep.mu:g}: "
                          f"{'PASS' if rep.passed else 'FAIL'}; touching set in Q_R: {rep.bar_trap}"])


def cmd_ring(args) -> Outcome:
    from .barrier import Paraboloid, ring_detachment
    u = _load_graph(args.graph)
    xbar = np.asarray(args.xbar, float)
    ubar = float(u.interpolator(order=1)(xbar[None])[0])
    m = len(xbar)
    grad = args.p_grad if args.p_grad is not None else [0.0] * m
    P = Paraboloid(tuple(xbar), ubar, tuple(grad), tuple(map(tuple, np.eye(m) * args.p_curv)))
    rep = ring_detachment(u, xbar, P, args.eps, args.R, args.s, Cbar=args.Cbar, M=args.M, C_o=args.C_o,
                          C_report=args.C_report, m_max=args.m_max)
    rows = [{"m": k, "r_m": r, "b_m": b} for k, (r, b) in enumerate(zip(rep.r_m, rep.b_values))]
    return Outcome(rep.to_json(), rows=rows, passed=rep.passed,
                   lines=[f"m* = {rep.m_star}, ring ({rep.ring[0]:.5g}, {rep.ring[1]:.5g}), "
                          f"excess fraction {rep.excess_fraction:.5g}: {'PASS' if rep.passed else 'FAIL'}"])


def cmd_minimize(args) -> Outcome:
    from .minimizer import MinimizeConfig, minimize
    E0 = _load_set(args)
    cfg = MinimizeConfig(s=args.s, omega=args.omega, far_cutoff=args.far_cutoff, max_sweeps=args.max_sweeps,
                         tol_energy=args.tol_energy, mode=args.mode, sweep_order=args.seed)
    res = minimize(E0, cfg)
    if args.out:
        nlsg.save(args.out, res.set)
    rows = [{"sweep": k, "energy": e} for k, e in enumerate(res.trace)]
    if args.trace:
        _write_csv(args.trace, rows)
    d = {"config": cfg.to_json(), "sweeps": res.sweeps, "flips": res.flips, "converged": res.converged,
         "energy_initial": res.trace[0], "energy_final": res.trace[-1], "trace": res.trace}
    return Outcome(d, rows=rows, lines=[f"{res.sweeps} sweeps, {res.flips} flips, J_s {res.trace[0]:.10g} -> "
                                        f"{res.trace[-1]:.10g}" + ("" if res.converged else " (not converged)")])


def cmd_cone(args) -> Outcome:
    from dataclasses import asdict
    from .minimizer import MinimizeConfig, cone_experiment
    cfg = MinimizeConfig(omega=args.omega, max_sweeps=args.max_sweeps, tol_energy=args.tol_energy)
    rows = [asdict(r) for r in cone_experiment(args.theta, args.s, cfg, cells=args.grid)]
    lines = [f"s={r['s']:<5g} vertex height {r['vertex_height']:.5g}, deviation from cone {r['cone_deviation']:.5g}, "
             f"from line {r['line_deviation']:.5g} (h = {r['h']:.4g})" for r in rows]
    return Outcome({"rows": rows}, rows=rows, lines=lines)


def cmd_flatness(args) -> Outcome:
    from .minimizer import FlatnessLadder, flatness_ladder_check
    E = _load_set(args)
    rep = flatness_ladder_check(E, FlatnessLadder(args.K, args.alpha), mu=args.mu, M=args.M)
    lines = [f"level {lv['i']}: width {lv['half_width']:.5g} <= {lv['required']:.5g}: "
             f"{'PASS' if lv['passed'] else 'FAIL'}" for lv in rep.levels]
    lines.append(f"alternative at d = {rep.d:.4g}: {rep.branch}")
    return Outcome(rep.to_json(), rows=rep.levels, passed=rep.passed, lines=lines)


def cmd_schedule(args) -> Outcome:
    from .barrier import improvement_schedule
    sch = improvement_schedule(args.mu, args.M)
    d = sch.to_json()
    text = f"{sch.d:.6g}"
    if float(args.M).is_integer():
        frac = Fraction(1, 2 * int(args.M) ** sch.k0)
        d["d_fraction"] = str(frac)
        text = f"{frac}"
    return Outcome(d, lines=[f"k0={sch.k0}, d={text}"])


def cmd_gen_fixture(args) -> Outcome:
    name = args.name
    if name not in fixtures.FIXTURES:
        raise FracminError(f"unknown fixture {name!r}; available: {', '.join(sorted(fixtures.FIXTURES))}")
    keys = {"halfspace": ["n", "cells", "half"], "plane": ["slope", "n", "cells", "half"],
            "disk": ["rho", "n", "cells", "half"], "ball": ["rho", "cells", "half"],
            "step": ["gamma", "delta", "n", "r"], "cosine": ["eps", "n", "cells", "half"],
            "cone": ["theta", "cells", "half"]}[name]
    params = {}
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            params["theta_deg" if k == "theta" else k] = v
    E = fixtures.make(name, **params)
    obj = E
    if args.graph:
        from .levelsets import boundary_graph
        obj = boundary_graph(E)
    out = args.out or f"{name}.nlsg"
    nlsg.save(out, obj)
    d = {"name": name, "params": params, "out": out, "dims": list(E.grid.dims), "h": E.grid.h,
         "kind": "graph" if args.graph else "set"}
    return Outcome(d, lines=[f"wrote {out} ({'x'.join(map(str, E.grid.dims))}, h = {E.grid.h:.6g})"])


# ---------------------------------------------------------------- parser

def _common(p):
    p.add_argument("--json", action="store_true", help="print the JSON report on stdout")
    p.add_argument("--out-json", help="write the JSON report here")
    p.add_argument("--csv", help="write the numeric table here")
    p.add_argument("--config", help="key = value file supplying defaults for this subcommand")


def _set_source(p, grid=128):
    p.add_argument("--set", help="NLSG1 voxel set")
    p.add_argument("--fixture", help="fixture name[:params] used when --set is absent")
    p.add_argument("--grid", type=int, default=grid, help="cells per side for fixtures")
    p.add_argument("--n", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fracmin", description="Nonlocal perimeter and fractional curvature tools.")
    ap.add_argument("--version", action="version", version=f"fracmin {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("energy", help="J_s(E, Omega)")
    _set_source(p)
    p.add_argument("--omega", type=_region, default=parse_region("ball:0,0:1"))
    p.add_argument("--s", type=float, default=0.5)
    p.add_argument("--far-cutoff", type=float, default=None)
    p.add_argument("--regularization", default="exact-pair", choices=list(REGULARIZATIONS))
    p.add_argument("--k", type=int, default=4)
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("curvature", help="fractional mean curvature at a boundary point")
    _set_source(p)
    p.add_argument("--x0", type=_floats, default=None)
    p.add_argument("--r", type=float, default=0.45)
    p.add_argument("--s", type=float, default=0.9)
    p.add_argument("--domain", default="ball", choices=["ball", "cylinder"])
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("sweep-s", help="normalized curvature against the classical value over s")
    p.add_argument("--shape", default="circle:0.5")
    p.add_argument("--s", type=_floats, default=_floats("0.8,0.9,0.95,0.99"))
    p.add_argument("--r", type=float, default=0.45)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--cells", type=_ints, default=[128])
    p.set_defaults(func=cmd_sweep_s)

    for name, fn in (("levelset", cmd_levelset), ("levelset-check", cmd_levelset_check)):
        p = sub.add_parser(name, help="delta level set of the signed distance as a graph"
                           if name == "levelset" else "Lipschitz, touching and separation checks")
        _set_source(p)
        p.add_argument("--delta", type=float, required=True)
        p.add_argument("--side", default="minus", choices=["minus", "plus", "-", "+"])
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--r", type=float, default=None)
        p.add_argument("--c", type=float, default=1.0 / 16)
        if name == "levelset":
            p.add_argument("--out")
        else:
            p.add_argument("--e-star", help="NLSG1 set for the separation check")
            p.add_argument("--touch-points", type=lambda t: [_floats(x) for x in t.split(";")], default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("barrier-check", help="barrier properties and curvature bound")
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--s", type=float, default=0.95)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--q", type=float, default=2.0)
    p.add_argument("--mu-q", type=float, default=None)
    for c in ("c0", "c1", "c2", "c3", "c4", "c5"):
        p.add_argument(f"--{c}", type=float, default=None)
    p.add_argument("--slope", type=_floats, default=None, help="gradient of the affine L")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--cells", type=int, default=128)
    p.add_argument("--properties-only", action="store_true")
    p.set_defaults(func=cmd_barrier_check)

    p = sub.add_parser("abp", help="measure estimate with hypothesis gates")
    p.add_argument("--graph", required=True)
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--M", type=float, default=4.0)
    p.add_argument("--mu", type=float, default=0.05)
    p.add_argument("--Cbar", type=float, default=1.0)
    p.add_argument("--s", type=float, default=None)
    p.set_defaults(func=cmd_abp)

    p = sub.add_parser("ring", help="dyadic-ring detachment diagnostic")
    p.add_argument("--graph", required=True)
    p.add_argument("--xbar", type=_floats, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--R", type=float, default=1.0)
    p.add_argument("--s", type=float, default=0.9)
    p.add_argument("--M", type=float, default=50.0)
    p.add_argument("--Cbar", type=float, default=1.0)
    p.add_argument("--C-o", type=float, default=10.0)
    p.add_argument("--C-report", type=float, default=5.0)
    p.add_argument("--m-max", type=int, default=12)
    p.add_argument("--p-grad", type=_floats, default=None)
    p.add_argument("--p-curv", type=float, default=0.0)
    p.set_defaults(func=cmd_ring)

    p = sub.add_parser("minimize", help="descent minimizer with frozen exterior data")
    p.add_argument("--set")
    p.add_argument("--data", help="fixture name[:params], e.g. plane:0.2")
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--omega", type=_region, default=parse_region("ball:0,0:1"))
    p.add_argument("--s", type=float, default=0.9)
    p.add_argument("--far-cutoff", type=float, default=None)
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--tol-energy", type=float, default=1e-10)
    p.add_argument("--mode", default="graph", choices=["graph", "voxel"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--trace")
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("cone", help="minimize from cone data for several s")
    p.add_argument("--theta", type=float, default=10.0)
    p.add_argument("--s", type=_floats, default=_floats("0.5,0.9"))
    p.add_argument("--grid", type=int, default=128)
    p.add_argument("--omega", type=_region, default=parse_region("ball:0,0:1"))
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--tol-energy", type=float, default=1e-10)
    p.set_defaults(func=cmd_cone)

    p = sub.add_parser("flatness", help="slab ladder and the alternative at scale d")
    _set_source(p, grid=64)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--M", type=float, default=4.0)
    p.set_defaults(func=cmd_flatness)

    p = sub.add_parser("schedule", help="k0 and d from mu and M")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--M", type=float, required=True)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("gen-fixture", help="write a fixture as NLSG1")
    p.add_argument("name")
    p.add_argument("--out")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--cells", type=int, default=None)
    p.add_argument("--half", type=float, default=None)
    p.add_argument("--slope", type=float, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--graph", action="store_true", help="write the boundary heights instead of the set")
    p.set_defaults(func=cmd_gen_fixture)

    for p in sub.choices.values():
        _common(p)
    return ap


def read_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path) as f:
        for num, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{num}: expected key = value")
            k, v = (t.strip() for t in line.split("=", 1))
            out[k.replace("-", "_")] = v
    return out


def _apply_config(parser, sub, argv):
    """Re-parse with config-file values as subcommand defaults; flags win."""
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    command = next((a for a in argv if not a.startswith("-")), None)
    if path is None or command not in sub.choices:
        return parser.parse_args(argv)
    cfg = read_config(path)
    sp = sub.choices[command]
    known = {a.dest: a for a in sp._actions}
    for k in cfg:
        if k not in known or k in ("help", "config", "func"):
            raise UsageError(f"unknown config key {k!r} for {command}")
    defaults = {}
    for k, v in cfg.items():
        act = known[k]
        if isinstance(act, (argparse._StoreTrueAction,)):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
        elif act.type is not None:
            try:
                defaults[k] = act.type(v)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"config key {k!r}: {exc}")
        else:
            defaults[k] = v
        act.required = False
    sp.set_defaults(**defaults)
    return parser.parse_args(argv)


def _emit(args, out: Outcome) -> None:
    status = None if out.passed is None else ("PASS" if out.passed else "FAIL")
    report = {"schema_version": SCHEMA_VERSION, "fracmin_version": __version__, "command": args.command,
              "params": _params(args), "status": status, "result": _jsonable(out.result),
              "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")}
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out_json:
        with open(args.out_json, "w") as f:
            f.write(text + "\n")
    if args.csv:
        _write_csv(args.csv, [_jsonable(r) for r in out.rows])
    if args.json:
        print(text)
    else:
        for line in out.lines:
            print(line)
        if status:
            print(status)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    try:
        args = _apply_config(parser, sub, argv)
    except UsageError as exc:
        print(f"fracmin: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"fracmin: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        out = args.func(args)
    except HypothesisError as exc:
        print(f"fracmin: {exc}", file=sys.stderr)
        if args.json:
            print(json.dumps({"schema_version": SCHEMA_VERSION, "command": args.command, "status": "FAIL",
                              "hypothesis": exc.display, "message": str(exc), "params": _params(args)},
                             indent=2, sort_keys=True))
        return EXIT_FAIL
    except (FracminError, OSError) as exc:
        print(f"fracmin: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _emit(args, out)
    if out.passed is False:
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
