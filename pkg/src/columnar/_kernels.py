"""Compiled inner loops for the conditional z-model.

Regions are passed as an integer code plus a length-4 parameter array:
0 none, 1 ball ``(r)``, 2 cylinder ``(r, t)``, 3 cylinder minus double cone
``(r, t)``, 4 shell ``(r1, t1, r2, t2)``. Neighbours are stored in CSR form
(``ptr``, ``idx``) with the planar distance ``rho`` of each entry.
"""
import math

import numpy as np
from numba import njit

NONE, BALL, CYLINDER, CYL_MINUS_CONE, SHELL = 0, 1, 2, 3, 4
MERGE_TOL = 1e-12


@njit(cache=True)
def inside(kind, p, rho, adz):
    if kind == BALL:
        return rho * rho + adz * adz <= p[0] * p[0]
    if kind == CYLINDER:
        return rho <= p[0] and adz <= p[1]
    if kind == CYL_MINUS_CONE:
        return rho <= p[0] and adz <= p[1] and rho * p[1] > p[0] * adz
    if kind == SHELL:
        return rho <= p[2] and adz > p[1] and adz <= p[3]
    return False


@njit(cache=True)
def dz_bounds(kind, p, rho):
    """``(lo, hi, ok)``: region holds for ``lo <= |dz| <= hi`` (up to endpoints)."""
    if kind == BALL:
        if rho <= p[0]:
            return 0.0, math.sqrt(p[0] * p[0] - rho * rho), True
    elif kind == CYLINDER:
        if rho <= p[0]:
            return 0.0, p[1], True
    elif kind == CYL_MINUS_CONE:
        if rho > 0.0 and rho <= p[0]:
            return 0.0, p[1] * rho / p[0], True
    elif kind == SHELL:
        if rho <= p[2]:
            return p[1], p[3], True
    return 0.0, 0.0, False


@njit(cache=True)
def site_counts(i, zi, z, ptr, idx, rho, h, k1, p1, k2, p2):
    """Counts ``(s1, s2, violations)`` for site i placed at ``zi``."""
    s1 = 0
    s2 = 0
    bad = 0
    h2 = h * h
    for e in range(ptr[i], ptr[i + 1]):
        j = idx[e]
        adz = abs(zi - z[j])
        r = rho[e]
        if h > 0.0 and r * r + adz * adz <= h2:
            bad += 1
        if inside(k1, p1, r, adz):
            s1 += 1
        if inside(k2, p2, r, adz):
            s2 += 1
    return s1, s2, bad


@njit(cache=True)
def all_site_counts(z, ptr, idx, rho, h, k1, p1, k2, p2):
    n = z.size
    s1 = np.zeros(n, np.int64)
    s2 = np.zeros(n, np.int64)
    bad = np.zeros(n, np.int64)
    for i in range(n):
        a, b, c = site_counts(i, z[i], z, ptr, idx, rho, h, k1, p1, k2, p2)
        s1[i] = a
        s2[i] = b
        bad[i] = c
    return s1, s2, bad


@njit(cache=True)
def _push(pos, dh, dk, dl, m, lo, hi, zlo, zhi, a, b, c):
    if hi <= zlo or lo >= zhi:
        return m
    pos[m] = max(lo, zlo)
    dh[m] = a
    dk[m] = b
    dl[m] = c
    pos[m + 1] = min(hi, zhi)
    dh[m + 1] = -a
    dk[m + 1] = -b
    dl[m + 1] = -c
    return m + 2


@njit(cache=True)
def site_pieces(i, z, ptr, idx, rho, h, k1, p1, k2, p2, zlo, zhi,
                out_k, out_l, out_len, start):
    """Piecewise-constant decomposition of site i's conditional over ``[zlo, zhi]``.

    Writes ``(k, l, length)`` for every admissible piece starting at
    ``start`` and returns the number written. Pieces where the hard core is
    violated are dropped.
    """
    deg = ptr[i + 1] - ptr[i]
    cap = 10 * deg + 2
    pos = np.empty(cap)
    dh = np.empty(cap, np.int64)
    dk = np.empty(cap, np.int64)
    dl = np.empty(cap, np.int64)
    m = 0
    for e in range(ptr[i], ptr[i + 1]):
        zj = z[idx[e]]
        r = rho[e]
        if h > 0.0 and r < h:
            half = math.sqrt(h * h - r * r)
            m = _push(pos, dh, dk, dl, m, zj - half, zj + half, zlo, zhi, 1, 0, 0)
        lo, hi, ok = dz_bounds(k1, p1, r)
        if ok:
            if lo == 0.0:
                m = _push(pos, dh, dk, dl, m, zj - hi, zj + hi, zlo, zhi, 0, 1, 0)
            else:
                m = _push(pos, dh, dk, dl, m, zj - hi, zj - lo, zlo, zhi, 0, 1, 0)
                m = _push(pos, dh, dk, dl, m, zj + lo, zj + hi, zlo, zhi, 0, 1, 0)
        lo, hi, ok = dz_bounds(k2, p2, r)
        if ok:
            if lo == 0.0:
                m = _push(pos, dh, dk, dl, m, zj - hi, zj + hi, zlo, zhi, 0, 0, 1)
            else:
                m = _push(pos, dh, dk, dl, m, zj - hi, zj - lo, zlo, zhi, 0, 0, 1)
                m = _push(pos, dh, dk, dl, m, zj + lo, zj + hi, zlo, zhi, 0, 0, 1)
    order = np.argsort(pos[:m], kind="mergesort")
    cur = zlo
    nh = 0
    nk = 0
    nl = 0
    w = start
    for q in range(m):
        e = order[q]
        x = pos[e]
        if x - cur > MERGE_TOL:
            if nh == 0:
                if w > start and out_k[w - 1] == nk and out_l[w - 1] == nl:
                    out_len[w - 1] += x - cur
                else:
                    out_k[w] = nk
                    out_l[w] = nl
                    out_len[w] = x - cur
                    w += 1
            cur = x
        elif x > cur:
            cur = x
        nh += dh[e]
        nk += dk[e]
        nl += dl[e]
    if zhi - cur > MERGE_TOL:
        if w > start and out_k[w - 1] == nk and out_l[w - 1] == nl:
            out_len[w - 1] += zhi - cur
        else:
            out_k[w] = nk
            out_l[w] = nl
            out_len[w] = zhi - cur
            w += 1
    return w - start


@njit(cache=True)
def all_site_pieces(z, ptr, idx, rho, h, k1, p1, k2, p2, zlo, zhi):
    n = z.size
    total = 0
    for i in range(n):
        total += 10 * (ptr[i + 1] - ptr[i]) + 2
    out_k = np.empty(total, np.int64)
    out_l = np.empty(total, np.int64)
    out_len = np.empty(total)
    site_ptr = np.zeros(n + 1, np.int64)
    w = 0
    for i in range(n):
        w += site_pieces(i, z, ptr, idx, rho, h, k1, p1, k2, p2, zlo, zhi,
                         out_k, out_l, out_len, w)
        site_ptr[i + 1] = w
    return site_ptr, out_k[:w].copy(), out_l[:w].copy(), out_len[:w].copy()


@njit(cache=True)
def mh_sweeps(z, ptr, idx, rho, h, k1, p1, k2, p2, lg1, lg2, zlo, zhi,
              u_prop, u_acc, trace_every, trace):
    """Systematic-scan Metropolis-Hastings with uniform proposals on ``[zlo, zhi]``.

    ``u_prop`` and ``u_acc`` hold one uniform per (sweep, site). Updates
    ``z`` in place; returns the number of accepted moves.
    """
    n = z.size
    n_sweeps = u_prop.shape[0]
    accepted = 0
    t = 0
    for s in range(n_sweeps):
        for i in range(n):
            znew = zlo + u_prop[s, i] * (zhi - zlo)
            a1, a2, bad = site_counts(i, znew, z, ptr, idx, rho, h, k1, p1, k2, p2)
            if bad > 0:
                continue
            b1, b2, _ = site_counts(i, z[i], z, ptr, idx, rho, h, k1, p1, k2, p2)
            logr = 0.0
            if a1 != b1:
                logr += (a1 - b1) * lg1
            if a2 != b2:
                logr += (a2 - b2) * lg2
            if logr >= 0.0 or math.log(u_acc[s, i]) < logr:
                z[i] = znew
                accepted += 1
        if trace_every > 0 and (s + 1) % trace_every == 0:
            trace[t, :] = z
            t += 1
    return accepted
