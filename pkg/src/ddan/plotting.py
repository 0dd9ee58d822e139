"""Deterministic 2-D PCA projection of feature dumps, with a scatter plot."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def pca_project(features: np.ndarray, dims: int = 2) -> np.ndarray:
    """Project centred rows onto the top principal directions of the covariance.

    Each direction's sign is fixed so that its largest-magnitude entry is
    positive, which makes the output independent of the eigensolver.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("features must be a nonempty 2-D array")
    x = x - x.mean(axis=0)
    cov = x.T @ x / max(len(x) - 1, 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(-vals, kind="stable")[:dims]
    vecs = vecs[:, order]
    pivot = np.abs(vecs).argmax(axis=0)
    vecs = vecs * np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    proj = x @ vecs
    if proj.shape[1] < dims:  # fewer input dims than requested
        proj = np.pad(proj, ((0, 0), (0, dims - proj.shape[1])))
    return proj


def write_projection_csv(path: str | Path, proj: np.ndarray, identity_ids, domain_ids) -> None:
    lines = ["x,y,identity_id,domain_id\n"]
    for (a, b), i, d in zip(proj, identity_ids, domain_ids):
        lines.append(f"{float(a)!r},{float(b)!r},{int(i)},{int(d)}\n")
    Path(path).write_text("".join(lines))


def scatter_by_domain(path: str | Path, proj: np.ndarray, domain_ids) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    domain_ids = np.asarray(domain_ids)
    fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
    for d in np.unique(domain_ids):
        sel = domain_ids == d
        ax.scatter(proj[sel, 0], proj[sel, 1], s=6, label=f"domain {d}")
    ax.set_xlabel("PC 1")
    ax.set_ylabel("PC 2")
    ax.legend(markerscale=2, fontsize=8)
    fig.tight_layout()
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
