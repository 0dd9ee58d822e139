"""Cross-epoch memory of per-identity mean embeddings.

Within an epoch each identity keeps a running mean of the embeddings seen so
far. At the epoch boundary that mean is blended into the long-term
representation, ``r_hat <- alpha * r_hat + (1 - alpha) * r_bar``, and the
running mean restarts from zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_FLOOR = 1e-12


class PoolError(ValueError):
    pass


@dataclass(frozen=True)
class PoolSnapshot:
    """Read-only view of the finalized representations, taken at batch start."""

    ids: np.ndarray
    domains: np.ndarray
    rhat: np.ndarray
    epoch: int

    def topk_rows(self, queries, query_ids, query_domains, query_central, k: int):
        """Row indices of the top-k eligible entries for each query.

        Eligible entries have a nonzero representation, a different identity,
        and lie in the query's own domain for central queries, in any other
        domain otherwise. Ties go to the lower identity id.
        """
        if self.epoch < 1:
            raise PoolError("pool has never been finalized")
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        qn = np.maximum(np.linalg.norm(q, axis=1, keepdims=True), NORM_FLOOR)
        pn = np.linalg.norm(self.rhat, axis=1)
        cos = (q / qn) @ (self.rhat / np.maximum(pn, NORM_FLOOR)[:, None]).T
        query_ids = np.atleast_1d(query_ids)
        query_domains = np.atleast_1d(query_domains)
        query_central = np.atleast_1d(query_central).astype(bool)
        same_dom = self.domains[None, :] == query_domains[:, None]
        eligible = (pn > 0)[None, :] & (self.ids[None, :] != query_ids[:, None])
        eligible &= np.where(query_central[:, None], same_dom, ~same_dom)
        out = []
        for row in range(len(q)):
            cand = np.flatnonzero(eligible[row])
            order = np.lexsort((self.ids[cand], -cos[row, cand]))
            out.append(cand[order[:k]])
        return out


class IDPool:
    def __init__(self, identity_domains: dict[int, int], dim: int, alpha: float = 0.05):
        if not 0.0 <= alpha <= 1.0:
            raise PoolError("alpha must lie in [0, 1]")
        self.ids = np.array(sorted(identity_domains), dtype=np.int64)
        self.domains = np.array([identity_domains[i] for i in self.ids], dtype=np.int64)
        self._row = {int(i): r for r, i in enumerate(self.ids)}
        self.dim = dim
        self.alpha = alpha
        n = len(self.ids)
        self.rbar = np.zeros((n, dim))
        self.count = np.zeros(n, dtype=np.int64)
        self.rhat = np.zeros((n, dim))
        self.epoch = 0

    def __len__(self):
        return len(self.ids)

    def row(self, identity_id: int) -> int:
        try:
            return self._row[int(identity_id)]
        except KeyError:
            raise PoolError(f"unknown identity {identity_id}") from None

    def update_running_mean(self, identity_id: int, embedding) -> None:
        v = _as_values(embedding)
        if v.shape != (self.dim,):
            raise PoolError(f"expected a {self.dim}-vector, got shape {v.shape}")
        r = self.row(identity_id)
        t = self.count[r]
        self.rbar[r] = (t * self.rbar[r] + v) / (t + 1)
        self.count[r] = t + 1

    def update_batch(self, identity_ids, embeddings) -> None:
        values = _as_values(embeddings)
        for ident, v in zip(np.asarray(identity_ids), values):
            self.update_running_mean(int(ident), v)

    def finalize_epoch(self) -> None:
        seen = self.count > 0
        self.rhat[seen] = self.alpha * self.rhat[seen] + (1.0 - self.alpha) * self.rbar[seen]
        self.rbar[:] = 0.0
        self.count[:] = 0
        self.epoch += 1

    def snapshot(self) -> PoolSnapshot:
        rhat = self.rhat.copy()
        rhat.flags.writeable = False
        return PoolSnapshot(self.ids.copy(), self.domains.copy(), rhat, self.epoch)

    def query_topk(self, query_embedding, query_identity: int, query_domain: int,
                   query_is_central: bool, k: int) -> list[tuple[int, np.ndarray]]:
        rows = self.snapshot().topk_rows(_as_values(query_embedding)[None], [query_identity],
                                         [query_domain], [bool(query_is_central)], k)[0]
        return [(int(self.ids[r]), self.rhat[r].copy()) for r in rows]

    def state_dict(self) -> dict:
        return {"ids": self.ids.copy(), "domains": self.domains.copy(),
                "rbar": self.rbar.copy(), "count": self.count.copy(),
                "rhat": self.rhat.copy(), "alpha": self.alpha, "epoch": self.epoch,
                "dim": self.dim}

    @classmethod
    def from_state_dict(cls, state: dict) -> "IDPool":
        pool = cls(dict(zip(state["ids"].tolist(), state["domains"].tolist())),
                   int(state["dim"]), float(state["alpha"]))
        pool.rbar = np.array(state["rbar"], dtype=np.float64)
        pool.count = np.array(state["count"], dtype=np.int64)
        pool.rhat = np.array(state["rhat"], dtype=np.float64)
        pool.epoch = int(state["epoch"])
        return pool


def _as_values(x) -> np.ndarray:
    """Plain float64 values; tensors are detached so no graph is retained."""
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)
