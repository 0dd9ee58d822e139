"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``.

Behaviour, including tie-breaking, matches the compiled module exactly.
"""

import numpy as np


def wasserstein_1d_sorted(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise ValueError("empty input")
    # stable merge; x wins ties, same as the compiled walk
    merged = np.concatenate([x, y])
    from_x = np.concatenate([np.ones(n, bool), np.zeros(m, bool)])
    order = np.lexsort((~from_x, merged))
    merged = merged[order]
    from_x = from_x[order]
    i = np.concatenate([[0], np.cumsum(from_x)[:-1]])
    j = np.arange(n + m) - i
    prev = np.concatenate([[merged[0]], merged[:-1]])
    inv_n, inv_m = 1.0 / n, 1.0 / m
    terms = np.abs(i * inv_n - j * inv_m) * (merged - prev)
    # cumsum accumulates left to right, same rounding as the compiled loop
    return float(np.cumsum(terms)[-1])


def batch_hard_indices(dist, labels):
    dist = np.asarray(dist, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(labels)
    same = labels[:, None] == labels[None, :]
    eye = np.eye(n, dtype=bool)
    pos_mask = same & ~eye
    neg_mask = ~same
    pos = np.where(pos_mask, dist, -np.inf).argmax(axis=1)
    neg = np.where(neg_mask, dist, np.inf).argmin(axis=1)
    pos[~pos_mask.any(axis=1)] = -1
    neg[~neg_mask.any(axis=1)] = -1
    return pos.astype(np.int64), neg.astype(np.int64)


def rank_metrics(sim, probe_ids, gallery_ids):
    sim = np.asarray(sim, dtype=np.float64)
    probe_ids = np.asarray(probe_ids)
    gallery_ids = np.asarray(gallery_ids)
    n_p, n_g = sim.shape
    first = np.full(n_p, -1, dtype=np.int64)
    ap = np.zeros(n_p, dtype=np.float64)
    idx = np.arange(n_g)
    for p in range(n_p):
        rel = np.flatnonzero(gallery_ids == probe_ids[p])
        if len(rel) == 0:
            continue
        row = sim[p]
        ranks = np.array(
            [np.count_nonzero((row > row[g]) | ((row == row[g]) & (idx < g))) for g in rel]
        )
        ranks.sort()
        first[p] = ranks[0]
        acc = 0.0
        for r, rank in enumerate(ranks):
            acc += (r + 1.0) / (rank + 1.0)
        ap[p] = acc / len(ranks)
    return first, ap
