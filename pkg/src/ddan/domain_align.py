"""Wasserstein distances between domain feature sets and central-domain choice."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from ddan import kernels


def exact_wasserstein_1d(xs, ys) -> float:
    """W1 between the empirical distributions of two samples on the line."""
    x = np.sort(np.asarray(xs, dtype=np.float64).ravel())
    y = np.sort(np.asarray(ys, dtype=np.float64).ravel())
    if x.size == 0 or y.size == 0:
        raise ValueError("exact_wasserstein_1d needs nonempty inputs")
    return kernels.wasserstein_1d_sorted(x, y)


def mean_abs_projection(dim: int) -> float:
    """E|u_1| for u uniform on the unit sphere in ``dim`` dimensions."""
    return math.exp(math.lgamma(dim / 2) - math.lgamma((dim + 1) / 2)) / math.sqrt(math.pi)


def random_directions(num: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(num, dim))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def sliced_wasserstein(a, b, num_projections: int = 128, seed: int = 0,
                       normalize: bool = True) -> float:
    """Sliced W1 over fixed-seed random directions.

    With ``normalize`` the average is divided by E|u_1|, the mean length of a
    unit vector's projection, so a pure translation ``v`` scores ``|v|`` in
    expectation in every dimension instead of shrinking as the dimension grows.
    In one dimension the factor is 1 and the result is the exact W1.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sliced_wasserstein needs nonempty inputs")
    if num_projections < 1:
        raise ValueError("num_projections must be >= 1")
    d = a.shape[1]
    if d == 1:
        # every unit direction is +-1 and W1 is reflection invariant
        return exact_wasserstein_1d(a[:, 0], b[:, 0])
    u = random_directions(num_projections, d, seed)
    pa = np.sort(a @ u.T, axis=0)
    pb = np.sort(b @ u.T, axis=0)
    total = 0.0
    for j in range(num_projections):
        total += kernels.wasserstein_1d_sorted(np.ascontiguousarray(pa[:, j]),
                                               np.ascontiguousarray(pb[:, j]))
    sw = total / num_projections
    return sw / mean_abs_projection(d) if normalize else sw


@dataclass
class DomainDistanceMatrix:
    domains: list[int]
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = len(self.domains)
        if self.values.shape != (n, n):
            raise ValueError("matrix shape does not match the domain list")
        if not np.allclose(self.values, self.values.T, rtol=0, atol=1e-9):
            raise ValueError("distance matrix must be symmetric")
        if np.any(np.abs(np.diag(self.values)) > 1e-9) or np.any(self.values < 0):
            raise ValueError("distance matrix needs a zero diagonal and nonnegative entries")

    def row_sums(self) -> np.ndarray:
        return self.values.sum(axis=1) - np.diag(self.values)

    def to_tsv(self, names: dict[int, str] | None = None) -> str:
        label = (lambda d: names.get(d, str(d))) if names else str
        head = "domain\t" + "\t".join(label(d) for d in self.domains) + "\tsum\n"
        body = "".join(
            label(d) + "\t" + "\t".join(f"{v:.6f}" for v in row) + f"\t{s:.6f}\n"
            for d, row, s in zip(self.domains, self.values, self.row_sums()))
        return head + body

    @classmethod
    def from_tsv(cls, text: str) -> "DomainDistanceMatrix":
        lines = [ln.split("\t") for ln in text.strip().splitlines()]
        cols = lines[0][1:-1]
        domains = list(range(len(cols))) if not all(c.isdigit() for c in cols) else [int(c) for c in cols]
        vals = np.array([[float(v) for v in ln[1:1 + len(cols)]] for ln in lines[1:]])
        return cls(domains, vals)

    def write_tsv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_tsv())


def cap_rows(features: np.ndarray, cap: int | None, seed: int) -> np.ndarray:
    if cap is None or len(features) <= cap:
        return features
    rng = np.random.default_rng(seed)
    return features[np.sort(rng.choice(len(features), size=cap, replace=False))]


def pairwise_domain_distances(features_by_domain: dict[int, np.ndarray],
                              num_projections: int = 128, seed: int = 0,
                              max_rows: int | None = 2000) -> DomainDistanceMatrix:
    domains = sorted(features_by_domain)
    if len(domains) < 2:
        raise ValueError("need features from at least two domains")
    feats = {}
    for d in domains:
        f = np.asarray(features_by_domain[d], dtype=np.float64)
        if f.ndim != 2 or len(f) == 0:
            raise ValueError(f"domain {d} has no feature rows")
        feats[d] = cap_rows(f, max_rows, seed + d)
    n = len(domains)
    values = np.zeros((n, n))
    for i, j in combinations(range(n), 2):
        v = sliced_wasserstein(feats[domains[i]], feats[domains[j]], num_projections, seed)
        values[i, j] = values[j, i] = v
    return DomainDistanceMatrix(domains, values, {"num_projections": num_projections,
                                                  "seed": seed, "max_rows": max_rows})


def central_domain_select(matrix: DomainDistanceMatrix) -> int:
    """Domain with the smallest summed distance to all others; ties -> lowest id."""
    if len(matrix.domains) < 2:
        raise ValueError("central selection needs at least two domains")
    sums = matrix.row_sums()
    best = min(range(len(sums)), key=lambda i: (sums[i], matrix.domains[i]))
    return matrix.domains[best]
