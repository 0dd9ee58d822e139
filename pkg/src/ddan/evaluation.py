"""Single-shot retrieval evaluation: CMC and mAP over random probe/gallery splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ddan import kernels
from ddan.data import DatasetManifest
from ddan.featio import FeatureDump
from ddan.model import embed


class EvaluationError(ValueError):
    pass


@dataclass
class RetrievalResult:
    ranked: np.ndarray  # probes x gallery, gallery indices best first
    cmc: np.ndarray
    map: float
    first_rank: np.ndarray  # 0-based rank of the first correct match per probe
    ap: np.ndarray
    split: dict = field(default_factory=dict)

    def rank(self, k: int) -> float:
        """CMC at rank ``k`` (1-based)."""
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return an @ bn.T


def score_similarity(sim: np.ndarray, probe_ids, gallery_ids) -> RetrievalResult:
    sim = np.ascontiguousarray(sim, dtype=np.float64)
    probe_ids = np.ascontiguousarray(probe_ids, dtype=np.int64)
    gallery_ids = np.ascontiguousarray(gallery_ids, dtype=np.int64)
    n_p, n_g = sim.shape
    if n_p == 0 or n_g == 0:
        raise EvaluationError("probe and gallery must be nonempty")
    first, ap = kernels.rank_metrics(sim, probe_ids, gallery_ids)
    missing = np.flatnonzero(first < 0)
    if len(missing):
        raise EvaluationError(f"probe identity {probe_ids[missing[0]]} is absent from the gallery")
    cmc = np.array([(first < k).mean() for k in range(1, n_g + 1)])
    # stable sort on -sim: equal scores keep ascending gallery order
    ranked = np.argsort(-sim, axis=1, kind="stable")
    return RetrievalResult(ranked, cmc, float(ap.mean()), first, ap,
                           {"num_probe": n_p, "num_gallery": n_g})


def rank_and_score(probe_features, probe_ids, gallery_features, gallery_ids) -> RetrievalResult:
    """Cosine ranking of the gallery for every probe."""
    return score_similarity(cosine_similarity(probe_features, gallery_features),
                            probe_ids, gallery_ids)


def single_shot_split(identity_ids, seed: int, tags=None):
    """One gallery and one probe image per identity, drawn from its images.

    Rows tagged ``distractor`` join the gallery only. Returns index arrays
    ``(probe, gallery)``.
    """
    identity_ids = np.asarray(identity_ids)
    tags = np.asarray(tags if tags is not None else [""] * len(identity_ids))
    rng = np.random.default_rng(seed)
    probe, gallery = [], []
    distract = tags == "distractor"
    for ident in np.unique(identity_ids[~distract]):
        rows = np.flatnonzero((identity_ids == ident) & ~distract)
        if len(rows) < 2:
            raise EvaluationError(f"identity {ident} has a single image")
        g, p = rng.choice(rows, size=2, replace=False)
        gallery.append(g)
        probe.append(p)
    gallery.extend(np.flatnonzero(distract).tolist())
    return np.array(probe, dtype=np.int64), np.array(gallery, dtype=np.int64)


@dataclass
class ProtocolResult:
    cmc: np.ndarray
    map: float
    splits: list[RetrievalResult]

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def evaluate_features(features: np.ndarray, identity_ids, num_splits: int = 10,
                      seed: int = 0, tags=None) -> ProtocolResult:
    features = np.asarray(features)
    identity_ids = np.asarray(identity_ids)
    if num_splits < 1:
        raise EvaluationError("num_splits must be >= 1")
    results = []
    for s in range(num_splits):
        p, g = single_shot_split(identity_ids, seed + s, tags)
        r = rank_and_score(features[p], identity_ids[p], features[g], identity_ids[g])
        r.split.update(seed=seed + s)
        results.append(r)
    # fixed-order accumulation keeps the average reproducible
    width = min(len(r.cmc) for r in results)
    cmc = np.zeros(width)
    total_map = 0.0
    for r in results:
        cmc += r.cmc[:width]
        total_map += r.map
    return ProtocolResult(cmc / num_splits, total_map / num_splits, results)


def evaluate_protocol(net, manifest: DatasetManifest, num_splits: int = 10,
                      seed: int = 0) -> ProtocolResult:
    feats = embed(net, manifest.images()).double().numpy()
    return evaluate_features(feats, manifest.identity_ids, num_splits, seed,
                             [r.tag for r in manifest.rows])


def embed_dataset(net, manifest: DatasetManifest) -> FeatureDump:
    c, h, w = manifest.image_shape
    if c != net.config.in_channels:
        raise EvaluationError(
            f"checkpoint expects {net.config.in_channels} channels, data has {c}")
    feats = embed(net, manifest.images()).float().numpy()
    return FeatureDump(manifest.identity_ids, manifest.domain_ids, feats)


def report_tsv(result: ProtocolResult, ranks=(1, 5, 10, 20)) -> str:
    head = "split\t" + "\t".join(f"r{k}" for k in ranks) + "\tmAP\n"
    lines = [head]
    for i, r in enumerate(result.splits):
        lines.append(f"{i}\t" + "\t".join(f"{r.rank(k):.6f}" for k in ranks) + f"\t{r.map:.6f}\n")
    lines.append("mean\t" + "\t".join(f"{result.rank(k):.6f}" for k in ranks)
                 + f"\t{result.map:.6f}\n")
    return "".join(lines)
