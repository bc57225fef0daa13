"""Compiled kernels for cluster-wise exact matching."""

from __future__ import annotations

import numpy as np
from numba import njit

MAX_EXACT = 20


@njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@njit(cache=True)
def _dp(dist, bd, nodes):
    """Exact min-weight matching of ``nodes`` where each may go to the boundary.

    Returns (cost, partner) with partner[i] = -1 for boundary, else local index.
    """
    k = nodes.shape[0]
    size = 1 << k
    f = np.empty(size, dtype=np.float64)
    choice = np.empty(size, dtype=np.int8)
    f[0] = 0.0
    choice[0] = -1
    for mask in range(1, size):
        i = 0
        while not (mask >> i) & 1:
            i += 1
        rest = mask ^ (1 << i)
        best = f[rest] + bd[nodes[i]]
        ch = -1
        for j in range(i + 1, k):
            if (rest >> j) & 1:
                c = f[rest ^ (1 << j)] + dist[nodes[i], nodes[j]]
                if c < best:
                    best = c
                    ch = j
        f[mask] = best
        choice[mask] = ch
    partner = np.full(k, -1, dtype=np.int64)
    mask = size - 1
    while mask:
        i = 0
        while not (mask >> i) & 1:
            i += 1
        j = choice[mask]
        if j < 0:
            mask ^= 1 << i
        else:
            partner[i] = j
            partner[j] = i
            mask ^= (1 << i) | (1 << j)
    return f[size - 1], partner


@njit(cache=True)
def _greedy(dist, bd, nodes):
    k = nodes.shape[0]
    partner = np.full(k, -1, dtype=np.int64)
    done = np.zeros(k, dtype=np.bool_)
    cost = 0.0
    left = k
    while left > 0:
        best = np.inf
        bi = -1
        bj = -1
        for i in range(k):
            if done[i]:
                continue
            if bd[nodes[i]] < best:
                best = bd[nodes[i]]
                bi = i
                bj = -1
            for j in range(i + 1, k):
                if not done[j] and dist[nodes[i], nodes[j]] < best:
                    best = dist[nodes[i], nodes[j]]
                    bi = i
                    bj = j
        cost += best
        done[bi] = True
        left -= 1
        if bj >= 0:
            done[bj] = True
            partner[bi] = bj
            partner[bj] = bi
            left -= 1
    return cost, partner


@njit(cache=True)
def match_defects(defects, dist, bd, max_exact):
    """Match one shot's defects.

    Returns (total_weight, partner, n_fallback_clusters) where partner holds
    the matched defect position or -1 for the boundary.
    """
    m = defects.shape[0]
    partner = np.full(m, -1, dtype=np.int64)
    if m == 0:
        return 0.0, partner, 0
    parent = np.arange(m)
    for i in range(m):
        for j in range(i + 1, m):
            if dist[defects[i], defects[j]] < bd[defects[i]] + bd[defects[j]]:
                a = _find(parent, i)
                b = _find(parent, j)
                if a != b:
                    parent[max(a, b)] = min(a, b)
    roots = np.empty(m, dtype=np.int64)
    for i in range(m):
        roots[i] = _find(parent, i)
    order = np.argsort(roots, kind="mergesort")
    total = 0.0
    fallbacks = 0
    s = 0
    while s < m:
        e = s
        while e < m and roots[order[e]] == roots[order[s]]:
            e += 1
        members = order[s:e]
        nodes = defects[members]
        if e - s <= max_exact:
            c, loc = _dp(dist, bd, nodes)
        else:
            c, loc = _greedy(dist, bd, nodes)
            fallbacks += 1
        total += c
        for t in range(e - s):
            if loc[t] >= 0:
                partner[members[t]] = members[loc[t]]
        s = e
    return total, partner, fallbacks


@njit(cache=True)
def decode_many(syndromes, dist, bd, par, bpar, max_exact):
    """Decode a (batch, n_det) uint8 array.

    Returns (flips, weights, fallbacks) where fallbacks counts shots with at
    least one greedily matched cluster.
    """
    b = syndromes.shape[0]
    flips = np.zeros(b, dtype=np.bool_)
    weights = np.zeros(b, dtype=np.float64)
    fallbacks = 0
    for s in range(b):
        defects = np.flatnonzero(syndromes[s])
        w, partner, fb = match_defects(defects, dist, bd, max_exact)
        if fb > 0:
            fallbacks += 1
        flip = False
        for i in range(defects.shape[0]):
            j = partner[i]
            if j < 0:
                flip ^= bpar[defects[i]] != 0
            elif j > i:
                flip ^= par[defects[i], defects[j]] != 0
        flips[s] = flip
        weights[s] = w
    return flips, weights, fallbacks
