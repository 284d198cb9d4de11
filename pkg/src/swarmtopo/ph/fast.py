"""Rips persistence via cohomology with clearing, compiled with numba.

Simplices are identified by their index in the combinatorial number system
(vertices ``a_0 < ... < a_k`` map to ``sum_i C(a_i, i + 1)``). Only the
column simplices of each dimension are enumerated; their cofaces are
generated on the fly. Columns are processed in reverse filtration order and
the pivot of a column is its earliest coface, so the result equals the
homology reduction of :mod:`swarmtopo.ph.rips` (dual pairs, same bars).
Columns that need no additions are not stored and are regenerated on demand.
"""
from __future__ import annotations

import numpy as np
from numba import njit, types
from numba.typed import Dict, List

from .diagram import PersistenceDiagram
from .rips import check_size, pairwise_distances, resolve_threshold, MAX_POINTS_DIM2


def _binomial_table(n: int, k: int) -> np.ndarray:
    table = np.zeros((n + 1, k + 1), dtype=np.int64)
    for i in range(n + 1):
        table[i, 0] = 1
        for j in range(1, min(i, k) + 1):
            table[i, j] = table[i - 1, j - 1] + (table[i - 1, j] if j <= i - 1 else 0)
    return table


@njit(cache=True)
def _dim0(dist, thr):
    """Union-find over sorted edges; returns deaths, merging-edge ids and #components."""
    n = dist.shape[0]
    m = 0
    for i in range(n):
        for j in range(i + 1, n):
            if dist[i, j] <= thr:
                m += 1
    ei = np.empty(m, np.int64)
    ej = np.empty(m, np.int64)
    ev = np.empty(m, np.float64)
    eidx = np.empty(m, np.int64)
    c = 0
    for j in range(n):
        for i in range(j):
            if dist[i, j] <= thr:
                ei[c] = i
                ej[c] = j
                ev[c] = dist[i, j]
                eidx[c] = j * (j - 1) // 2 + i
                c += 1
    # edges come out in index order, so a stable sort by value gives (value, index)
    order = np.argsort(ev, kind="mergesort")
    parent = np.arange(n)
    deaths = np.empty(n, np.float64)
    killers = np.empty(n, np.int64)
    nd = 0
    for t in range(m):
        e = order[t]
        a = ei[e]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = ej[e]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a != b:
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
            deaths[nd] = ev[e]
            killers[nd] = eidx[e]
            nd += 1
    return deaths[:nd], killers[:nd], n - nd


@njit(cache=True)
def _simplex_index(verts, binom):
    idx = 0
    for i in range(verts.shape[0]):
        idx += binom[verts[i], i + 1]
    return idx


@njit(cache=True)
def _enumerate(dist, thr, k, binom):
    """All k-simplices (k = 1 or 2) with value <= thr: vertices, values, indices."""
    n = dist.shape[0]
    cap = 16
    verts = np.empty((cap, k + 1), np.int64)
    vals = np.empty(cap, np.float64)
    count = 0
    for a in range(n):
        for b in range(a + 1, n):
            dab = dist[a, b]
            if dab > thr:
                continue
            if k == 1:
                if count == cap:
                    cap *= 2
                    nv = np.empty((cap, k + 1), np.int64)
                    nv[:count] = verts[:count]
                    verts = nv
                    nw = np.empty(cap, np.float64)
                    nw[:count] = vals[:count]
                    vals = nw
                verts[count, 0] = a
                verts[count, 1] = b
                vals[count] = dab
                count += 1
                continue
            for c in range(b + 1, n):
                dac = dist[a, c]
                dbc = dist[b, c]
                if dac > thr or dbc > thr:
                    continue
                if count == cap:
                    cap *= 2
                    nv = np.empty((cap, k + 1), np.int64)
                    nv[:count] = verts[:count]
                    verts = nv
                    nw = np.empty(cap, np.float64)
                    nw[:count] = vals[:count]
                    vals = nw
                verts[count, 0] = a
                verts[count, 1] = b
                verts[count, 2] = c
                vals[count] = max(dab, max(dac, dbc))
                count += 1
    verts = verts[:count].copy()
    vals = vals[:count].copy()
    idx = np.empty(count, np.int64)
    for s in range(count):
        idx[s] = _simplex_index(verts[s], binom)
    return verts, vals, idx


@njit(cache=True)
def _before(va, ia, vb, ib):
    return va < vb or (va == vb and ia < ib)


@njit(cache=True)
def _min_coface(dist, thr, verts, val, binom):
    """Earliest coface as (value, index); index -1 when there is none."""
    n = dist.shape[0]
    k1 = verts.shape[0]
    best_v = np.inf
    best_i = -1
    tmp = np.empty(k1 + 1, np.int64)
    for v in range(n):
        inside = False
        d = val
        for u in range(k1):
            if verts[u] == v:
                inside = True
                break
            if dist[verts[u], v] > d:
                d = dist[verts[u], v]
        if inside or d > thr or d > best_v:
            continue
        p = 0
        for u in range(k1):
            if verts[u] < v:
                tmp[p] = verts[u]
                p += 1
        tmp[p] = v
        p += 1
        for u in range(k1):
            if verts[u] > v:
                tmp[p] = verts[u]
                p += 1
        i = _simplex_index(tmp, binom)
        if _before(d, i, best_v, best_i):
            best_v = d
            best_i = i
    return best_v, best_i


@njit(cache=True)
def _coboundary(dist, thr, verts, val, binom):
    """Cofaces of one simplex sorted by (value, index)."""
    n = dist.shape[0]
    k1 = verts.shape[0]
    cv = np.empty(n, np.float64)
    ci = np.empty(n, np.int64)
    tmp = np.empty(k1 + 1, np.int64)
    m = 0
    for v in range(n):
        inside = False
        d = val
        for u in range(k1):
            if verts[u] == v:
                inside = True
                break
            if dist[verts[u], v] > d:
                d = dist[verts[u], v]
        if inside or d > thr:
            continue
        # insert v into the sorted vertex list
        p = 0
        for u in range(k1):
            if verts[u] < v:
                tmp[p] = verts[u]
                p += 1
        tmp[p] = v
        p += 1
        for u in range(k1):
            if verts[u] > v:
                tmp[p] = verts[u]
                p += 1
        cv[m] = d
        ci[m] = _simplex_index(tmp, binom)
        m += 1
    cv = cv[:m]
    ci = ci[:m]
    o1 = np.argsort(ci, kind="mergesort")
    cv = cv[o1]
    ci = ci[o1]
    o2 = np.argsort(cv, kind="mergesort")
    return cv[o2].copy(), ci[o2].copy()


@njit(cache=True)
def _add(av, ai, bv, bi):
    """Symmetric difference of two (value, index)-sorted columns."""
    na = av.shape[0]
    nb = bv.shape[0]
    ov = np.empty(na + nb, np.float64)
    oi = np.empty(na + nb, np.int64)
    p = 0
    q = 0
    m = 0
    while p < na and q < nb:
        if ai[p] == bi[q]:
            p += 1
            q += 1
        elif _before(av[p], ai[p], bv[q], bi[q]):
            ov[m] = av[p]
            oi[m] = ai[p]
            m += 1
            p += 1
        else:
            ov[m] = bv[q]
            oi[m] = bi[q]
            m += 1
            q += 1
    while p < na:
        ov[m] = av[p]
        oi[m] = ai[p]
        m += 1
        p += 1
    while q < nb:
        ov[m] = bv[q]
        oi[m] = bi[q]
        m += 1
        q += 1
    return ov[:m], oi[:m]


@njit(cache=True)
def _reduce(dist, thr, verts, vals, idx, cleared_idx, binom):
    """Cohomology reduction of one dimension.

    Returns finite bars, essential births and the pivot (coface) indices,
    which are the columns to clear in the next dimension.
    """
    n_cols = vals.shape[0]
    cleared = Dict.empty(key_type=types.int64, value_type=types.int64)
    for c in cleared_idx:
        cleared[c] = 1
    # reverse filtration order: by value desc, then index desc
    o1 = np.argsort(-idx, kind="mergesort")
    o2 = np.argsort(-vals[o1], kind="mergesort")
    order = o1[o2]

    pivot_col = Dict.empty(key_type=types.int64, value_type=types.int64)
    stored_v = List()
    stored_i = List()
    stored_flag = np.zeros(n_cols, np.bool_)
    slot = np.full(n_cols, -1, np.int64)
    births = np.empty(n_cols, np.float64)
    deaths = np.empty(n_cols, np.float64)
    pivots = np.empty(n_cols, np.int64)
    ess = np.empty(n_cols, np.float64)
    nb = 0
    ne = 0
    for t in range(n_cols):
        c = order[t]
        if idx[c] in cleared:
            continue
        pv, pi = _min_coface(dist, thr, verts[c], vals[c], binom)
        if pi < 0:
            ess[ne] = vals[c]
            ne += 1
            continue
        if pi not in pivot_col:
            # the unreduced column is already a new pivot
            pivot_col[pi] = c
            births[nb] = vals[c]
            deaths[nb] = pv
            pivots[nb] = pi
            nb += 1
            continue
        cv, ci = _coboundary(dist, thr, verts[c], vals[c], binom)
        modified = False
        while cv.shape[0] > 0:
            p = ci[0]
            if p not in pivot_col:
                break
            other = pivot_col[p]
            if stored_flag[other]:
                ov = stored_v[slot[other]]
                oi = stored_i[slot[other]]
            else:
                ov, oi = _coboundary(dist, thr, verts[other], vals[other], binom)
            cv, ci = _add(cv, ci, ov, oi)
            modified = True
        if cv.shape[0] == 0:
            ess[ne] = vals[c]
            ne += 1
            continue
        pivot_col[ci[0]] = c
        if modified:
            stored_flag[c] = True
            slot[c] = len(stored_v)
            stored_v.append(cv)
            stored_i.append(ci)
        births[nb] = vals[c]
        deaths[nb] = cv[0]
        pivots[nb] = ci[0]
        nb += 1
    return births[:nb], deaths[:nb], pivots[:nb], ess[:ne]


def rips_persistence_from_distances(dist: np.ndarray, max_dim: int = 1, threshold: float | None = None,
                                    *, cap: int = MAX_POINTS_DIM2) -> list[PersistenceDiagram]:
    dist = np.ascontiguousarray(dist, dtype=np.float64)
    n = dist.shape[0]
    check_size(n, max_dim, cap)
    if n == 0:
        return [PersistenceDiagram.empty(k) for k in range(max_dim + 1)]
    thr = resolve_threshold(dist, threshold) if n > 1 else 1.0
    binom = _binomial_table(n, max_dim + 2)

    deaths, killers, n_comp = _dim0(dist, thr)
    d0 = np.concatenate([np.column_stack([np.zeros_like(deaths), deaths]),
                         np.tile([0.0, np.inf], (n_comp, 1))])
    diagrams = [PersistenceDiagram(0, d0[d0[:, 1] > d0[:, 0]])]

    cleared = killers
    for k in range(1, max_dim + 1):
        verts, vals, idx = _enumerate(dist, thr, k, binom)
        b, d, piv, ess = _reduce(dist, thr, verts, vals, idx, cleared, binom)
        pairs = np.concatenate([np.column_stack([b, d]), np.column_stack([ess, np.full(ess.shape, np.inf)])])
        diagrams.append(PersistenceDiagram(k, pairs[pairs[:, 1] > pairs[:, 0]]))
        cleared = piv
    return diagrams


def rips_persistence(cloud, max_dim: int = 1, threshold: float | None = None,
                     *, cap: int = MAX_POINTS_DIM2) -> list[PersistenceDiagram]:
    """Vietoris-Rips persistence diagrams of a point cloud, dims ``0..max_dim``."""
    return rips_persistence_from_distances(pairwise_distances(cloud), max_dim, threshold, cap=cap)
