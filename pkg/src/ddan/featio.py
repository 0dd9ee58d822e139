"""Binary feature dumps.

Layout (little-endian): the 12 magic bytes ``DDAN-FEAT-v1``, u32 row count,
u32 dim, then per row u32 identity_id, u32 domain_id and ``dim`` f32 values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"DDAN-FEAT-v1"


class FeatureFileError(ValueError):
    pass


@dataclass
class FeatureDump:
    identity_ids: np.ndarray
    domain_ids: np.ndarray
    features: np.ndarray  # rows x dim, float32

    def __len__(self):
        return len(self.features)

    def by_domain(self) -> dict[int, np.ndarray]:
        return {int(d): self.features[self.domain_ids == d] for d in np.unique(self.domain_ids)}


def _row_dtype(dim: int) -> np.dtype:
    return np.dtype([("identity", "<u4"), ("domain", "<u4"), ("x", "<f4", (dim,))])


def to_bytes(dump: FeatureDump) -> bytes:
    feats = np.asarray(dump.features, dtype=np.float32)
    if feats.ndim != 2:
        raise FeatureFileError("features must be 2-D")
    n, dim = feats.shape
    rows = np.empty(n, dtype=_row_dtype(dim))
    rows["identity"] = dump.identity_ids
    rows["domain"] = dump.domain_ids
    rows["x"] = feats
    return MAGIC + struct.pack("<II", n, dim) + rows.tobytes()


def from_bytes(data: bytes) -> FeatureDump:
    head = len(MAGIC) + 8
    if len(data) < head or not data.startswith(MAGIC):
        raise FeatureFileError("not a DDAN-FEAT-v1 file")
    n, dim = struct.unpack_from("<II", data, len(MAGIC))
    dt = _row_dtype(dim)
    if len(data) != head + n * dt.itemsize:
        raise FeatureFileError(f"expected {n} rows of dim {dim}, size mismatch")
    rows = np.frombuffer(data, dtype=dt, count=n, offset=head)
    return FeatureDump(rows["identity"].astype(np.int64), rows["domain"].astype(np.int64),
                       rows["x"].astype(np.float32).reshape(n, dim))


def write_features(path: str | Path, dump: FeatureDump) -> None:
    Path(path).write_bytes(to_bytes(dump))


def read_features(path: str | Path) -> FeatureDump:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FeatureFileError(str(exc)) from exc
    return from_bytes(data)
