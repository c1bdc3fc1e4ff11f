"""Numba kernels: squared-L2 distances, layer beam search and graph construction.

All distances in the package go through ``sqdist`` so that indices, cursors and
the brute-force oracle produce bit-identical float32 values.
"""
from __future__ import annotations

import heapq

import numpy as np
from numba import njit


@njit(cache=True)
def sqdist(a, b):
    s = np.float32(0.0)
    for i in range(a.shape[0]):
        t = a[i] - b[i]
        s += t * t
    return s


@njit(cache=True)
def dist_rows(X, rows, q):
    out = np.empty(rows.shape[0], dtype=np.float32)
    for j in range(rows.shape[0]):
        out[j] = sqdist(X[rows[j]], q)
    return out


@njit(cache=True)
def dist_all(X, q):
    out = np.empty(X.shape[0], dtype=np.float32)
    for j in range(X.shape[0]):
        out[j] = sqdist(X[j], q)
    return out


@njit(cache=True)
def _neighbors(u, level, links0, deg0, upper_row, linksU, degU):
    if level == 0:
        return links0[u, : deg0[u]]
    row = upper_row[u]
    return linksU[row, level - 1, : degU[row, level - 1]]


@njit(cache=True)
def greedy_descend(X, q, ep, ep_d, level, links0, deg0, upper_row, linksU, degU):
    """Move to strictly closer neighbours (ties by id) until none is closer."""
    changed = True
    while changed:
        changed = False
        nb = _neighbors(ep, level, links0, deg0, upper_row, linksU, degU)
        for j in range(nb.shape[0]):
            e = np.int64(nb[j])
            d = sqdist(X[e], q)
            if d < ep_d or (d == ep_d and e < ep):
                ep_d = d
                ep = e
                changed = True
    return ep, ep_d


@njit(cache=True)
def search_layer(X, q, ep, ep_d, ef, level, links0, deg0, upper_row, linksU, degU, visited, tag):
    """Standard HNSW beam search on one layer.

    Returns (ids, dists) sorted ascending by (dist, id), expansions, distance evaluations.
    """
    cand = [(np.float32(ep_d), np.int64(ep))]
    top = [(np.float32(-ep_d), np.int64(-ep))]
    visited[ep] = tag
    n_exp = 0
    n_dist = 0
    while len(cand) > 0:
        d, c = heapq.heappop(cand)
        if len(top) >= ef and d > -top[0][0]:
            break
        n_exp += 1
        nb = _neighbors(c, level, links0, deg0, upper_row, linksU, degU)
        for j in range(nb.shape[0]):
            e = np.int64(nb[j])
            if visited[e] == tag:
                continue
            visited[e] = tag
            de = sqdist(X[e], q)
            n_dist += 1
            if len(top) < ef or de < -top[0][0]:
                heapq.heappush(cand, (de, e))
                heapq.heappush(top, (-de, -e))
                if len(top) > ef:
                    heapq.heappop(top)
    m = len(top)
    ids = np.empty(m, dtype=np.int64)
    ds = np.empty(m, dtype=np.float32)
    for i in range(m - 1, -1, -1):
        nd, ne = heapq.heappop(top)
        ids[i] = -ne
        ds[i] = -nd
    return ids, ds, n_exp, n_dist


@njit(cache=True)
def _select_heuristic(X, cand_ids, cand_ds, M):
    """Diversity heuristic with keep-pruned connections; candidates sorted ascending."""
    out = np.empty(M, dtype=np.int64)
    cnt = 0
    pruned = np.empty(cand_ids.shape[0], dtype=np.int64)
    pc = 0
    for i in range(cand_ids.shape[0]):
        if cnt >= M:
            break
        e = cand_ids[i]
        good = True
        for j in range(cnt):
            if sqdist(X[e], X[out[j]]) < cand_ds[i]:
                good = False
                break
        if good:
            out[cnt] = e
            cnt += 1
        else:
            pruned[pc] = e
            pc += 1
    for i in range(pc):
        if cnt >= M:
            break
        out[cnt] = pruned[i]
        cnt += 1
    return out[:cnt]


@njit(cache=True)
def _sort_pairs(ids, ds):
    # order by (dist, id); stable argsort on ids first then dists
    o1 = np.argsort(ids, kind="mergesort")
    o2 = np.argsort(ds[o1], kind="mergesort")
    o = o1[o2]
    return ids[o], ds[o]


@njit(cache=True)
def _add_link(X, e, i, level, M, M0, links0, deg0, upper_row, linksU, degU):
    if level == 0:
        cap = M0
        deg = deg0[e]
    else:
        cap = M
        deg = degU[upper_row[e], level - 1]
    if deg < cap:
        if level == 0:
            links0[e, deg] = i
            deg0[e] = deg + 1
        else:
            linksU[upper_row[e], level - 1, deg] = i
            degU[upper_row[e], level - 1] = deg + 1
        return
    nb = _neighbors(e, level, links0, deg0, upper_row, linksU, degU)
    ids = np.empty(deg + 1, dtype=np.int64)
    ds = np.empty(deg + 1, dtype=np.float32)
    for j in range(deg):
        ids[j] = nb[j]
        ds[j] = sqdist(X[nb[j]], X[e])
    ids[deg] = i
    ds[deg] = sqdist(X[i], X[e])
    ids, ds = _sort_pairs(ids, ds)
    sel = _select_heuristic(X, ids, ds, cap)
    if level == 0:
        for j in range(sel.shape[0]):
            links0[e, j] = sel[j]
        deg0[e] = sel.shape[0]
    else:
        r = upper_row[e]
        for j in range(sel.shape[0]):
            linksU[r, level - 1, j] = sel[j]
        degU[r, level - 1] = sel.shape[0]


@njit(cache=True)
def build_graph(X, levels, M, M0, efc, links0, deg0, upper_row, linksU, degU):
    """Insert nodes 0..n-1 in order. Returns (entry point, max level)."""
    n = X.shape[0]
    visited = np.zeros(n, dtype=np.int32)
    tag = 0
    entry = np.int64(0)
    max_level = levels[0]
    for i in range(1, n):
        q = X[i]
        li = levels[i]
        ep = entry
        ep_d = sqdist(X[ep], q)
        for lc in range(max_level, li, -1):
            ep, ep_d = greedy_descend(X, q, ep, ep_d, lc, links0, deg0, upper_row, linksU, degU)
        for lc in range(min(li, max_level), -1, -1):
            tag += 1
            ids, ds, _, _ = search_layer(
                X, q, ep, ep_d, efc, lc, links0, deg0, upper_row, linksU, degU, visited, tag
            )
            sel = _select_heuristic(X, ids, ds, M)
            if lc == 0:
                for j in range(sel.shape[0]):
                    links0[i, j] = sel[j]
                deg0[i] = sel.shape[0]
            else:
                r = upper_row[i]
                for j in range(sel.shape[0]):
                    linksU[r, lc - 1, j] = sel[j]
                degU[r, lc - 1] = sel.shape[0]
            for j in range(sel.shape[0]):
                _add_link(X, sel[j], i, lc, M, M0, links0, deg0, upper_row, linksU, degU)
            ep = ids[0]
            ep_d = ds[0]
        if li > max_level:
            max_level = li
            entry = np.int64(i)
    return entry, max_level


@njit(cache=True)
def knn_search(X, q, k, ef, entry, max_level, links0, deg0, upper_row, linksU, degU):
    n = X.shape[0]
    visited = np.zeros(n, dtype=np.int32)
    ep = np.int64(entry)
    ep_d = sqdist(X[ep], q)
    n_dist = 1
    for lc in range(max_level, 0, -1):
        ep, ep_d = greedy_descend(X, q, ep, ep_d, lc, links0, deg0, upper_row, linksU, degU)
    ids, ds, n_exp, nd = search_layer(
        X, q, ep, ep_d, max(ef, k), 0, links0, deg0, upper_row, linksU, degU, visited, 1
    )
    m = min(k, ids.shape[0])
    return ids[:m], ds[:m], n_exp, n_dist + nd


@njit(cache=True)
def descend_to_base(X, q, entry, max_level, links0, deg0, upper_row, linksU, degU):
    ep = np.int64(entry)
    ep_d = sqdist(X[ep], q)
    for lc in range(max_level, 0, -1):
        ep, ep_d = greedy_descend(X, q, ep, ep_d, lc, links0, deg0, upper_row, linksU, degU)
    return ep, ep_d


# ---------------------------------------------------------------------------
# array heaps keyed by (d, u), used by the resumable cursor
# ---------------------------------------------------------------------------
@njit(cache=True, inline="always")
def _lt(d1, u1, d2, u2):
    return d1 < d2 or (d1 == d2 and u1 < u2)


@njit(cache=True)
def hpush(hd, hu, size, d, u):
    i = size
    while i > 0:
        p = (i - 1) >> 1
        if not _lt(d, u, hd[p], hu[p]):
            break
        hd[i] = hd[p]
        hu[i] = hu[p]
        i = p
    hd[i] = d
    hu[i] = u
    return size + 1


@njit(cache=True)
def _sift_down(hd, hu, size, d, u):
    i = 0
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        if c + 1 < size and _lt(hd[c + 1], hu[c + 1], hd[c], hu[c]):
            c += 1
        if not _lt(hd[c], hu[c], d, u):
            break
        hd[i] = hd[c]
        hu[i] = hu[c]
        i = c
    hd[i] = d
    hu[i] = u


@njit(cache=True)
def hpop(hd, hu, size):
    """Remove the root; the caller reads it first. Returns the new size."""
    size -= 1
    if size > 0:
        _sift_down(hd, hu, size, hd[size], hu[size])
    return size


@njit(cache=True)
def hreplace(hd, hu, size, d, u):
    _sift_down(hd, hu, size, d, u)


# sizes: [cand, beam, spill, rs, ef, k]; counters: [expansions, dist_evals, pruned]
@njit(cache=True)
def cursor_admit(d, u, bound, mask, cd, cu, bd, bu, sd, su, rd, ru, sizes, counters):
    # beam and rs are max-heaps stored with negated keys
    sizes[1] = hpush(bd, bu, sizes[1], -d, -u)
    if sizes[1] > sizes[4]:
        nd, nu = bd[0], bu[0]
        sizes[1] = hpop(bd, bu, sizes[1])
        sizes[2] = hpush(sd, su, sizes[2], -nd, -nu)
    if d < bound:
        if mask[u]:
            if sizes[3] < sizes[5]:
                sizes[3] = hpush(rd, ru, sizes[3], -d, -u)
            elif _lt(rd[0], ru[0], -d, -u):
                hreplace(rd, ru, sizes[3], -d, -u)
        sizes[0] = hpush(cd, cu, sizes[0], d, u)
    else:
        counters[2] = 1


@njit(cache=True)
def cursor_widen(ef, bd, bu, sd, su, sizes):
    sizes[4] = ef
    while sizes[2] > 0 and sizes[1] < ef:
        d, u = sd[0], su[0]
        sizes[2] = hpop(sd, su, sizes[2])
        sizes[1] = hpush(bd, bu, sizes[1], -d, -u)


@njit(cache=True)
def cursor_walk(X, q, links0, deg0, visited, bound, mask, cd, cu, bd, bu, sd, su, rd, ru, sizes, counters):
    ef = sizes[4]
    while sizes[0] > 0:
        d, u = cd[0], cu[0]
        if d >= bound:
            counters[2] = 1
            break
        if sizes[1] >= ef and d > -bd[0]:
            break
        sizes[0] = hpop(cd, cu, sizes[0])
        counters[0] += 1
        for j in range(deg0[u]):
            e = links0[u, j]
            if visited[e]:
                continue
            visited[e] = True
            de = np.float64(sqdist(X[e], q))
            counters[1] += 1
            cursor_admit(de, e, bound, mask, cd, cu, bd, bu, sd, su, rd, ru, sizes, counters)


@njit(cache=True)
def cursor_scan(X, q, visited, bound, mask, cd, cu, bd, bu, sd, su, rd, ru, sizes, counters):
    for e in range(X.shape[0]):
        if visited[e]:
            continue
        visited[e] = True
        de = np.float64(sqdist(X[e], q))
        counters[1] += 1
        cursor_admit(de, e, bound, mask, cd, cu, bd, bu, sd, su, rd, ru, sizes, counters)
    sizes[0] = 0
