"""Acceptance runner: evaluates the ten acceptance criteria, writes one CSV
per criterion (deterministic content, no timings) and a summary JSON.

    python -m fracmin.acceptance --outdir DIR [--only 1,2,9]
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import subprocess
import sys
import time
import warnings

import numpy as np

from . import fixtures
from .barrier import (BarrierSpec, Paraboloid, barrier_curvature_check, barrier_property_check, convex_envelope,
                      improvement_schedule, ring_detachment)
from .curvature import convergence_study, frac_curvature, shape_fixture
from .energy import KernelSpec, js_energy
from .geometry import Ball, ExteriorRule, GraphFunction, Grid, VoxelSet
from .levelsets import LevelSetSpec, lipschitz_bound_check, separation_check
from .minimizer import MinimizeConfig, column_heights, el_residual, minimize, oscillation

LIMITS = {1: 30, 2: 120, 3: 60, 4: 60, 5: 120, 6: 30, 7: 30, 8: 600, 9: 1, 10: None}


def criterion_1():
    rows = []
    for n in (2, 3):
        F, x0, _ = shape_fixture("halfspace", n, 0.45, 128)
        for s in (0.3, 0.6, 0.9, 0.99):
            rep = frac_curvature(F, x0, 0.45, s)
            rows.append({"n": n, "s": s, "normalized": rep.normalized, "ok": abs(rep.normalized) <= 1e-3})
    return all(r["ok"] for r in rows), rows


def criterion_2():
    s_list = (0.8, 0.9, 0.95, 0.99)
    rows = []
    fits = {}
    for cells in (128, 256):
        st = convergence_study("circle:0.5", s_list, r=0.45, n=2, cells=(cells,))
        fits[cells] = st.A
        for r in st.table():
            rows.append({"cells": cells, **r, "A": st.A})
    decreasing = True
    for cells in (128, 256):
        errs = [r["abs_error"] for r in rows if r["cells"] == cells]
        decreasing = decreasing and all(b < a for a, b in zip(errs, errs[1:]))
    stable = abs(fits[128] - fits[256]) <= 0.3 * abs(fits[256])
    rows.append({"cells": "A_ratio", "s": "", "h": "", "normalized": "", "classical": "",
                 "abs_error": "", "A": fits[128] / fits[256]})
    return decreasing and stable, rows


def _random_fixture(seed: int, cells: int = 32) -> VoxelSet:
    rng = np.random.default_rng(seed)
    g = Grid(2, (cells, cells), (-1.25, -1.25), 2.5 / cells)
    c = g.centers()
    level = c[..., 1].copy()
    for _ in range(4):
        k = rng.uniform(1, 4, 2)
        level += 0.15 * rng.uniform(-1, 1) * np.cos(k[0] * c[..., 0] + rng.uniform(0, 6.3)) \
            * np.cos(k[1] * c[..., 1] + rng.uniform(0, 6.3))
    occ = level < 0
    return VoxelSet(g, occ, ExteriorRule("halfspace", (0.0, 1.0), 0.0))


def criterion_3():
    rows = []
    ok = True
    omega = Ball((0.0, 0.0), 1.0)
    for seed in (1, 2, 3):
        E = _random_fixture(seed)
        kern = KernelSpec(2, 0.5)
        cut = E.grid.diameter
        a = js_energy(E, omega, kern, cut).total
        b = js_energy(E.complement(), omega, kern, cut).total
        lam = 2.0
        Eb = VoxelSet(E.grid.scaled(lam), E.occupancy, E.exterior)
        c = js_energy(Eb, Ball((0.0, 0.0), lam), kern, lam * cut).total
        comp = abs(a - b) / abs(a)
        scale = abs(c / a / lam ** (2 - 0.5) - 1)
        good = comp <= 1e-10 and scale <= 0.01
        ok = ok and good
        rows.append({"seed": seed, "energy": a, "complement_rel": comp, "scaling_rel": scale, "ok": good})
    return ok, rows


def criterion_4():
    rows = []
    ok = True
    for gamma, delta in ((0.01, 1.0), (0.01, 0.25)):
        E = fixtures.step(gamma, delta)
        spec = LevelSetSpec(delta, "-", gamma, 4.4 * delta)
        rep = lipschitz_bound_check(E, spec)
        ratio = math.sqrt(gamma / delta)
        good = 0.5 * ratio <= rep.measured <= 100 * ratio + rep.slack
        ok = ok and good
        rows.append({"check": "lipschitz", "gamma_over_delta": gamma / delta, "measured": rep.measured,
                     "lower": 0.5 * ratio, "upper": 100 * ratio + rep.slack,
                     "exact": fixtures.step_lipschitz(gamma, delta), "ok": good})
    E = fixtures.step(0.01, 0.25)
    g = E.grid
    flat = VoxelSet.from_level(g, g.centers()[..., -1].copy(), ExteriorRule("halfspace", (0.0, 1.0), 0.0))
    for name, A, B, gamma in (("step/plane", E, flat, 0.01), ("plane/plane", flat, flat, 0.0)):
        sep = separation_check(A, B, gamma, 0.25)
        ok = ok and sep.passed
        rows.append({"check": f"separation {name}", "gamma_over_delta": gamma / 0.25, "measured": sep.max_gap,
                     "lower": "", "upper": sep.bound, "exact": "", "ok": sep.passed})
    return ok, rows


def criterion_5():
    spec = BarrierSpec(n=2, R=1.0, eps=0.01)
    prop = barrier_property_check(spec)
    cur = barrier_curvature_check(spec, s=0.95, samples=32)
    rows = [{"radius": r, "value": v, "threshold": cur.threshold, "ok": p, "classical_H": hc,
             "classical_bound": hb} for r, v, p, hc, hb in
            zip(cur.radii, cur.values, cur.passed_points, cur.classical, cur.classical_bound)]
    rows.append({"radius": "properties", "value": prop.C_report, "threshold": "", "ok": prop.passed,
                 "classical_H": "", "classical_bound": ""})
    return prop.passed and cur.passed and len(cur.radii) >= 32, rows


CONE_C = 1.0


def criterion_6():
    L = 3.0
    N = 601
    g = Grid(1, (N,), (-L,), 2 * L / N)
    x = g.centers()[..., 0]
    env = convex_envelope(GraphFunction(g, np.abs(x) - 1), L, R=0.5)
    gam_err = float(np.max(np.abs(env.gamma_values.values - (np.abs(x) / L - 1))))
    meas_err = abs(env.grad_image_measure - 2 / L)
    zero = (N // 2,) in env.touching_set
    ok1 = gam_err <= 1e-9 and meas_err <= 1e-9 and zero
    n, R, m0 = 3, 1.0, 0.5
    Rb = 6 * math.sqrt(n) * R
    g2 = Grid.covering([-15.0, -15.0], [15.0, 15.0], 128)
    rr = np.linalg.norm(g2.centers(), axis=-1)
    env2 = convex_envelope(GraphFunction(g2, m0 * rr / Rb - m0), Rb, R=R)
    bound = (env2.m0 / Rb) ** (n - 1) / CONE_C
    ok2 = env2.grad_image_measure >= bound
    rows = [{"fixture": "1d |x|-1", "measure": env.grad_image_measure, "reference": 2 / L, "gamma_err": gam_err,
             "ok": ok1},
            {"fixture": "2d cone", "measure": env2.grad_image_measure, "reference": bound, "gamma_err": "",
             "ok": ok2}]
    return ok1 and ok2, rows


def criterion_7():
    g = Grid.covering([-1.2], [1.2], 2401)
    x = g.centers()[..., 0]
    P = Paraboloid.plane([0.0])
    eps = 0.01
    triv = ring_detachment(GraphFunction(g, 0 * x), [0.0], P, eps, 1.0, 0.9, M=50)
    quad = ring_detachment(GraphFunction(g, eps * x ** 2), [0.0], P, eps, 1.0, 0.9, M=50)
    viol = ring_detachment(GraphFunction(g, np.where(x > 0, np.clip(x, 0, 0.5), 0.0)), [0.0], P, 0.001, 1.0, 0.9,
                           M=50, C_o=1e4)
    ok_t = triv.m_star == 0 and triv.excess_fraction == 0
    ok_q = quad.excess_fraction <= 0.1
    ok_v = not viol.passed
    rows = [{"fixture": name, "m_star": d.m_star, "excess_fraction": d.excess_fraction, "status":
             "PASS" if d.passed else "FAIL", "ok": ok}
            for name, d, ok in (("trivial", triv, ok_t), ("quadratic", quad, ok_q), ("violator", viol, ok_v))]
    return ok_t and ok_q and ok_v, rows


def criterion_8():
    rows = []
    ok = True
    cfg = MinimizeConfig(s=0.9)
    for name, E0, slope in (("plane", fixtures.halfspace(cells=128), 0.0),
                            ("tilted", fixtures.plane(0.2, cells=128), 0.2)):
        res = minimize(E0, cfg)
        g = E0.grid
        x = g.base().centers()[..., 0]
        inside = np.abs(x) < 1.0
        dev = float(np.max(np.abs(column_heights(res.set) - slope * x)[inside]))
        mono = all(b <= a for a, b in zip(res.trace, res.trace[1:]))
        el = el_residual(res.set, cfg, 8)
        good = dev <= g.h and mono and el.max_residual <= el.tolerance
        ok = ok and good
        rows.append({"fixture": name, "deviation_cells": dev / g.h, "monotone": mono, "el_residual": el.max_residual,
                     "el_bound": el.tolerance, "osc_half": "", "osc_one": "", "ok": good})
    E0 = fixtures.cosine(0.05, cells=128)
    res = minimize(E0, cfg)
    o1 = oscillation(res.set, 1.0)
    oh = oscillation(res.set, 0.5)
    mono = all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    good = oh <= o1 and mono
    ok = ok and good
    rows.append({"fixture": "cosine", "deviation_cells": "", "monotone": mono, "el_residual": "", "el_bound": "",
                 "osc_half": oh, "osc_one": o1, "ok": good})
    return ok, rows


def criterion_9():
    rows = []
    ok = True
    for mu, k0 in ((0.75, 1), (0.5, 2), (0.1, 14)):
        M = 4.0
        sch = improvement_schedule(mu, M)
        good = sch.k0 == k0 and sch.d == 1.0 / (2 * M ** k0)
        ok = ok and good
        rows.append({"mu": mu, "M": M, "k0": sch.k0, "d": sch.d, "ok": good})
    return ok, rows


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 10)}


def write_csv(path, rows) -> None:
    from .cli import _write_csv
    _write_csv(path, rows)


def run(outdir: str, only=None) -> dict:
    os.makedirs(outdir, exist_ok=True)
    summary = {}
    for k, fn in CRITERIA.items():
        if only and k not in only:
            continue
        t = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            passed, rows = fn()
        elapsed = time.perf_counter() - t
        write_csv(os.path.join(outdir, f"criterion_{k}.csv"), rows)
        summary[k] = {"passed": bool(passed), "seconds": elapsed, "limit": LIMITS[k]}
    with open(os.path.join(outdir, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    return summary


def csv_hashes(outdir: str) -> dict:
    out = {}
    for name in sorted(os.listdir(outdir)):
        if name.endswith(".csv"):
            with open(os.path.join(outdir, name), "rb") as f:
                out[name] = hashlib.sha256(f.read()).hexdigest()
    return out


def run_subprocess(outdir: str, threads: int, only=None) -> dict:
    """Run the criteria in a fresh interpreter with FRACMIN_THREADS set."""
    env = dict(os.environ)
    env["FRACMIN_THREADS"] = str(threads)
    env.pop("NUMBA_NUM_THREADS", None)
    cmd = [sys.executable, "-m", "fracmin.acceptance", "--outdir", outdir]
    if only:
        cmd += ["--only", ",".join(map(str, only))]
    subprocess.run(cmd, env=env, check=True)
    with open(os.path.join(outdir, "summary.json")) as f:
        return {int(k): v for k, v in json.load(f).items()}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="python -m fracmin.acceptance")
    ap.add_argument("--outdir", required=True)
    ap.add_argument("--only", default="")
    args = ap.parse_args(argv)
    only = [int(v) for v in args.only.split(",") if v.strip()]
    summary = run(args.outdir, only)
    for k, v in summary.items():
        print(f"criterion {k}: {'PASS' if v['passed'] else 'FAIL'} ({v['seconds']:.1f} s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
