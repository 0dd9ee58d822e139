"""Training losses as differentiable functions of batch outputs."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ddan import kernels
from ddan.config import LossWeights
from ddan.id_pool import PoolSnapshot

log = logging.getLogger(__name__)

LOG_EPS = 1e-12


class LossInputError(ValueError):
    pass


def ide_loss(identity_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean identity cross-entropy."""
    if identity_logits.shape[0] == 0:
        raise LossInputError("empty batch")
    labels = torch.as_tensor(labels, dtype=torch.long)
    c = identity_logits.shape[1]
    if labels.min() < 0 or labels.max() >= c:
        raise LossInputError(f"labels must lie in [0, {c})")
    return F.cross_entropy(identity_logits, labels)


def pairwise_distances(x: torch.Tensor) -> torch.Tensor:
    sq = (x.unsqueeze(1) - x.unsqueeze(0)).pow(2).sum(-1)
    # floor keeps the sqrt differentiable at zero distance
    return sq.clamp_min(1e-12).sqrt()


def triplet_batch_hard(embeddings: torch.Tensor, labels, margin: float = 0.3) -> torch.Tensor:
    """Batch-hard triplet loss with hinge, averaged over anchors."""
    labels = np.asarray(torch.as_tensor(labels).cpu(), dtype=np.int64)
    _, counts = np.unique(labels, return_counts=True)
    if len(counts) < 2 or counts.min() < 2:
        raise LossInputError("every label needs >= 2 samples and >= 2 labels are required")
    dist = pairwise_distances(embeddings)
    pos, neg = kernels.batch_hard_indices(
        np.ascontiguousarray(dist.detach().cpu().numpy(), dtype=np.float64),
        np.ascontiguousarray(labels))
    anchors = torch.arange(len(labels))
    pos = torch.from_numpy(pos)
    neg = torch.from_numpy(neg)
    return F.relu(dist[anchors, pos] - dist[anchors, neg] + margin).mean()


def da_disc_loss(domain_logits: torch.Tensor, domain_labels) -> torch.Tensor:
    """Discriminator cross-entropy on the central/peripheral label."""
    labels = torch.as_tensor(domain_labels, dtype=torch.long)
    if ((labels != 0) & (labels != 1)).any():
        raise LossInputError("domain labels must be 0 or 1")
    return F.cross_entropy(domain_logits, labels)


def da_transfer_loss(domain_logits: torch.Tensor, mask=None) -> torch.Tensor:
    """Negative mean log-probability of the central class.

    ``mask`` restricts the average to selected rows (e.g. peripheral samples).
    """
    p_central = F.softmax(domain_logits, dim=1)[:, 1]
    terms = -torch.log(p_central + LOG_EPS)
    if mask is not None:
        mask = torch.as_tensor(mask, dtype=torch.bool)
        if not mask.any():
            return domain_logits.sum() * 0.0
        terms = terms[mask]
    return terms.mean()


def symmetric_kl(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """KL(p||q) + KL(q||p) along the last axis, with guarded logs."""
    lp = torch.log(p + LOG_EPS)
    lq = torch.log(q + LOG_EPS)
    return (p * (lp - lq)).sum(-1) + (q * (lq - lp)).sum(-1)


@dataclass
class SEStats:
    empty_queries: int = 0


def se_loss(embeddings: torch.Tensor, identity_ids, domain_ids, is_central,
            pool: PoolSnapshot, k: int, tau: float, stats: SEStats | None = None) -> torch.Tensor:
    """Similarity enhancement against each sample's top-k pooled identities.

    Pool entries are constants; gradients flow into ``embeddings`` only.
    """
    if k < 1:
        raise LossInputError("k must be >= 1")
    if tau <= 0:
        raise LossInputError("tau must be positive")
    rows = pool.topk_rows(embeddings.detach().cpu().numpy(), np.asarray(identity_ids),
                          np.asarray(domain_ids), np.asarray(is_central), k)
    ref = torch.tensor(pool.rhat, dtype=embeddings.dtype)
    p = F.softmax(embeddings / tau, dim=1)
    terms = []
    for n, r in enumerate(rows):
        if len(r) == 0:
            if stats is not None:
                stats.empty_queries += 1
            terms.append(embeddings[n].sum() * 0.0)
            continue
        q = F.softmax(ref[torch.from_numpy(r)] / tau, dim=1)
        terms.append(symmetric_kl(p[n].expand_as(q), q).mean())
    if stats is not None and stats.empty_queries:
        log.warning("se_loss: %d samples had no eligible pool entries", stats.empty_queries)
    return torch.stack(terms).mean()


@dataclass
class LossTerms:
    ide: torch.Tensor
    triplet: torch.Tensor
    da_t: torch.Tensor
    da_d: torch.Tensor
    se: torch.Tensor


def total_objective(terms: LossTerms, weights: LossWeights, se_enabled: bool):
    """Group the terms into the three objectives (L1, L2, L3)."""
    l1 = terms.ide + weights.lambda1 * terms.triplet
    l2 = weights.lambda2 * terms.da_t
    if se_enabled:
        l2 = l2 + weights.lambda3 * terms.se
    l3 = terms.da_d
    for name, v in (("L1", l1), ("L2", l2), ("L3", l3)):
        if not torch.isfinite(torch.as_tensor(v)).all():
            raise FloatingPointError(f"{name} is not finite")
    return l1, l2, l3
