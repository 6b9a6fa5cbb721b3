"""Compiled inner loops. Each parallel loop writes one slot per outer index;
reductions over those slots happen outside, in index order."""
import math

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def face_distance(pts, fc, fax, half):
    m = pts.shape[0]
    nf = fc.shape[0]
    n = pts.shape[1]
    out = np.empty(m)
    for i in prange(m):
        best = np.inf
        for f in range(nf):
            d2 = 0.0
            for k in range(n):
                t = abs(pts[i, k] - fc[f, k])
                if k != fax[f]:
                    t = t - half
                    if t < 0.0:
                        t = 0.0
                d2 += t * t
            if d2 < best:
                best = d2
        out[i] = math.sqrt(best)
    return out


@njit(cache=True, parallel=True)
def face_argmin(pts, fc, fax, half):
    m = pts.shape[0]
    nf = fc.shape[0]
    n = pts.shape[1]
    out = np.empty(m, np.int64)
    for i in prange(m):
        best = np.inf
        arg = 0
        for f in range(nf):
            d2 = 0.0
            for k in range(n):
                t = abs(pts[i, k] - fc[f, k])
                if k != fax[f]:
                    t = t - half
                    if t < 0.0:
                        t = 0.0
                d2 += t * t
            if d2 < best:
                best = d2
                arg = f
        out[i] = arg
    return out


@njit(cache=True)
def _table_index(a, b, dims, tdims):
    # flat index into the offset table of (a - b), a and b multi-indices
    idx = 0
    for k in range(a.shape[0]):
        idx = idx * tdims[k] + (a[k] - b[k] + dims[k] - 1)
    return idx


@njit(cache=True, parallel=True)
def pair_sums(A, B, table, dims, tdims):
    """partial[i] = sum_j table[A_i - B_j] with Neumaier compensation."""
    m = A.shape[0]
    out = np.empty(m)
    for i in prange(m):
        s = 0.0
        c = 0.0
        for j in range(B.shape[0]):
            v = table[_table_index(A[i], B[j], dims, tdims)]
            t = s + v
            if abs(s) >= abs(v):
                c += (s - t) + v
            else:
                c += (v - t) + s
            s = t
        out[i] = s + c
    return out


@njit(cache=True, parallel=True)
def potential(cells, allcells, sigma, table, dims, tdims):
    """P_i = sum_{j != i} table[c_i - c_j] sigma_j over all grid cells."""
    m = cells.shape[0]
    out = np.empty(m)
    for i in prange(m):
        s = 0.0
        c = 0.0
        for j in range(allcells.shape[0]):
            same = True
            for k in range(cells.shape[1]):
                if cells[i, k] != allcells[j, k]:
                    same = False
                    break
            if same:
                continue
            v = table[_table_index(cells[i], allcells[j], dims, tdims)] * sigma[j]
            t = s + v
            if abs(s) >= abs(v):
                c += (s - t) + v
            else:
                c += (v - t) + s
            s = t
        out[i] = s + c
    return out


@njit(cache=True)
def update_potential(P, cells, flipped, dsigma, table, dims, tdims):
    """P_i += table[c_i - c_f] * dsigma for every tracked cell i != flipped."""
    for i in range(cells.shape[0]):
        same = True
        for k in range(cells.shape[1]):
            if cells[i, k] != flipped[k]:
                same = False
                break
        if same:
            continue
        P[i] += table[_table_index(cells[i], flipped, dims, tdims)] * dsigma


@njit(cache=True, parallel=True)
def exterior_rays(xs, dirs, weights, lo, hi, cutoff, s, mode, nu, offset, want_inside):
    """Integral of |x-y|^{-n-s} over the part of {outside box, |x-y| <= cutoff}
    where the halfspace {y . nu < offset} holds (want_inside) or fails.

    mode: 0 contributes nothing, 1 the whole segment, 2 the halfspace part
    """
    m = xs.shape[0]
    n = xs.shape[1]
    out = np.empty(m)
    for i in prange(m):
        acc = 0.0
        comp = 0.0
        for d in range(dirs.shape[0]):
            rexit = np.inf
            for k in range(n):
                t = dirs[d, k]
                if t > 0.0:
                    r = (hi[k] - xs[i, k]) / t
                elif t < 0.0:
                    r = (lo[k] - xs[i, k]) / t
                else:
                    r = np.inf
                if r < rexit:
                    rexit = r
            a = rexit
            b = cutoff
            if a >= b:
                continue
            if mode == 0:
                continue
            if mode == 2:
                xn = 0.0
                tn = 0.0
                for k in range(n):
                    xn += xs[i, k] * nu[k]
                    tn += dirs[d, k] * nu[k]
                # halfspace along the ray: rho * tn < offset - xn
                rhs = offset - xn
                if tn > 0.0:
                    lim = rhs / tn
                    if want_inside:
                        b = min(b, lim)
                    else:
                        a = max(a, lim)
                elif tn < 0.0:
                    lim = rhs / tn
                    if want_inside:
                        a = max(a, lim)
                    else:
                        b = min(b, lim)
                else:
                    ins = rhs > 0.0
                    if ins != want_inside:
                        continue
                if a >= b:
                    continue
            v = weights[d] * (a ** (-s) - b ** (-s)) / s
            t = acc + v
            if abs(acc) >= abs(v):
                comp += (acc - t) + v
            else:
                comp += (v - t) + acc
            acc = t
        out[i] = acc + comp
    return out


@njit(cache=True, parallel=True)
def exterior_rays_periodic(xs, dirs, weights, lo, hi, cutoff, s, occ, dims, h, want_inside):
    """Same integral as ``exterior_rays`` for a periodically extended
    occupancy; membership is sampled at the midpoints of steps of h/2."""
    m = xs.shape[0]
    n = xs.shape[1]
    out = np.empty(m)
    for i in prange(m):
        acc = 0.0
        comp = 0.0
        for d in range(dirs.shape[0]):
            rexit = np.inf
            for k in range(n):
                t = dirs[d, k]
                if t > 0.0:
                    r = (hi[k] - xs[i, k]) / t
                elif t < 0.0:
                    r = (lo[k] - xs[i, k]) / t
                else:
                    r = np.inf
                if r < rexit:
                    rexit = r
            a = rexit
            while a < cutoff:
                b = min(a + 0.5 * h, cutoff)
                mid = 0.5 * (a + b)
                flat = 0
                for k in range(n):
                    q = int(math.floor((xs[i, k] + mid * dirs[d, k] - lo[k]) / h)) % dims[k]
                    flat = flat * dims[k] + q
                if occ[flat] == want_inside:
                    v = weights[d] * (a ** (-s) - b ** (-s)) / s
                    t = acc + v
                    if abs(acc) >= abs(v):
                        comp += (acc - t) + v
                    else:
                        comp += (v - t) + acc
                    acc = t
                a = b
        out[i] = acc + comp
    return out
