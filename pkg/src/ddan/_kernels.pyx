# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. ``ddan._fallback`` mirrors every function here."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


def wasserstein_1d_sorted(const double[::1] x, const double[::1] y):
    """W1 between two empirical measures given as ascending arrays."""
    cdef Py_ssize_t n = x.shape[0], m = y.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double inv_n = 1.0 / n, inv_m = 1.0 / m
    cdef double prev, cur, total = 0.0
    if n == 0 or m == 0:
        raise ValueError("empty input")
    prev = x[0] if x[0] <= y[0] else y[0]
    while i < n or j < m:
        if j >= m or (i < n and x[i] <= y[j]):
            cur = x[i]
            total += fabs(i * inv_n - j * inv_m) * (cur - prev)
            i += 1
        else:
            cur = y[j]
            total += fabs(i * inv_n - j * inv_m) * (cur - prev)
            j += 1
        prev = cur
    return total


def batch_hard_indices(const double[:, ::1] dist, const cnp.int64_t[::1] labels):
    """Hardest positive (farthest) and hardest negative (nearest) per anchor.

    Ties resolve to the lowest index. Returns -1 where no candidate exists.
    """
    cdef Py_ssize_t n = dist.shape[0], a, j
    cdef double best_p, best_n, d
    cdef cnp.int64_t ip, ineg
    pos = np.full(n, -1, dtype=np.int64)
    neg = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] pv = pos
    cdef cnp.int64_t[::1] nv = neg
    for a in range(n):
        ip = -1
        ineg = -1
        best_p = 0.0
        best_n = 0.0
        for j in range(n):
            if j == a:
                continue
            d = dist[a, j]
            if labels[j] == labels[a]:
                if ip < 0 or d > best_p:
                    best_p = d
                    ip = j
            else:
                if ineg < 0 or d < best_n:
                    best_n = d
                    ineg = j
        pv[a] = ip
        nv[a] = ineg
    return pos, neg


cdef void _insertion_sort(cnp.int64_t* buf, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef cnp.int64_t key
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key


def rank_metrics(const double[:, ::1] sim,
                 const cnp.int64_t[::1] probe_ids,
                 const cnp.int64_t[::1] gallery_ids):
    """Rank of the first correct match and average precision per probe.

    A gallery item ``h`` outranks ``g`` when ``sim[h] > sim[g]``, or when
    scores tie and ``h < g``. Returns ``(first_rank, ap)``; ``first_rank`` is
    0-based and equals -1 for a probe with no correct gallery item.
    """
    cdef Py_ssize_t n_p = sim.shape[0], n_g = sim.shape[1]
    cdef Py_ssize_t p, g, h, r, n_rel
    cdef double s, acc
    cdef cnp.int64_t rank
    first = np.full(n_p, -1, dtype=np.int64)
    ap = np.zeros(n_p, dtype=np.float64)
    ranks = np.empty(max(n_g, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] fv = first
    cdef double[::1] av = ap
    cdef cnp.int64_t[::1] rv = ranks
    for p in range(n_p):
        n_rel = 0
        for g in range(n_g):
            if gallery_ids[g] != probe_ids[p]:
                continue
            s = sim[p, g]
            rank = 0
            for h in range(n_g):
                if sim[p, h] > s or (sim[p, h] == s and h < g):
                    rank += 1
            rv[n_rel] = rank
            n_rel += 1
        if n_rel == 0:
            continue
        _insertion_sort(&rv[0], n_rel)
        acc = 0.0
        for r in range(n_rel):
            acc += (r + 1.0) / (rv[r] + 1.0)
        fv[p] = rv[0]
        av[p] = acc / n_rel
    return first, ap
