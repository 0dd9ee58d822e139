"""Procedural multi-domain identity datasets and PK mini-batch sampling.

Each identity is a small "pedestrian" made of coloured body parts whose
geometry and palette are drawn once from the identity seed. A domain recolours
and degrades those renderings (hue rotation, gain, contrast, background
clutter, jitter, sensor noise), so the same identity looks different in every
domain while keeping its layout.
"""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

MANIFEST_NAME = "manifest.tsv"
MANIFEST_VERSION = 1


class DataError(ValueError):
    pass


@dataclass
class IdentityPrototype:
    identity_id: int
    base_pattern: np.ndarray  # C x H x W in [0, 1]
    mask: np.ndarray  # H x W, True on the figure


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int
    hue_shift: float
    brightness_gain: float
    contrast_gain: float
    geometric_jitter: float
    noise_sigma: float
    rng_seed: int

    def __post_init__(self):
        if not -0.5 <= self.hue_shift <= 0.5:
            raise ValueError("hue_shift must lie in [-0.5, 0.5]")
        if self.brightness_gain <= 0 or self.contrast_gain <= 0:
            raise ValueError("gains must be positive")
        if self.geometric_jitter < 0 or self.noise_sigma < 0:
            raise ValueError("jitter and noise must be non-negative")


@dataclass
class Sample:
    image: np.ndarray
    identity_id: int
    domain_id: int
    is_central: int


@dataclass
class ManifestRow:
    path: str
    identity_id: int
    domain_id: int
    tag: str = ""


@dataclass
class DatasetManifest:
    root: Path
    rows: list[ManifestRow]
    central_domain: int = 0
    image_shape: tuple[int, int, int] = (3, 32, 32)
    _images: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.rows)

    @property
    def identity_ids(self) -> np.ndarray:
        return np.array([r.identity_id for r in self.rows], dtype=np.int64)

    @property
    def domain_ids(self) -> np.ndarray:
        return np.array([r.domain_id for r in self.rows], dtype=np.int64)

    @property
    def domains(self) -> list[int]:
        return sorted({r.domain_id for r in self.rows})

    @property
    def domain_counts(self) -> dict[int, int]:
        counts: dict[int, int] = defaultdict(int)
        for r in self.rows:
            counts[r.domain_id] += 1
        return dict(sorted(counts.items()))

    @property
    def num_identities(self) -> int:
        return len({r.identity_id for r in self.rows})

    def subset(self, indices) -> "DatasetManifest":
        indices = list(indices)
        sub = DatasetManifest(self.root, [self.rows[i] for i in indices],
                              self.central_domain, self.image_shape)
        if self._images is not None:
            sub._images = self._images[indices]
        return sub

    def select_domains(self, domains, exclude: bool = False) -> "DatasetManifest":
        domains = set(domains)
        keep = [i for i, r in enumerate(self.rows) if (r.domain_id in domains) != exclude]
        return self.subset(keep)

    def images(self) -> np.ndarray:
        """All images as a float32 N x C x H x W array, decoded once."""
        if self._images is None:
            arr = np.empty((len(self.rows),) + tuple(self.image_shape), dtype=np.float32)
            for i, r in enumerate(self.rows):
                arr[i] = read_image(self.root / r.path, self.image_shape)
            self._images = arr
        return self._images

    def is_central(self) -> np.ndarray:
        return (self.domain_ids == self.central_domain).astype(np.int64)

    def sample(self, index: int) -> Sample:
        r = self.rows[index]
        return Sample(self.images()[index], r.identity_id, r.domain_id,
                      int(r.domain_id == self.central_domain))

    def write(self) -> Path:
        c, h, w = self.image_shape
        lines = [f"# ddan-manifest version={MANIFEST_VERSION} central={self.central_domain} "
                 f"shape={c}x{h}x{w}\n"]
        for r in self.rows:
            cols = [r.path, str(r.identity_id), str(r.domain_id)]
            if r.tag:
                cols.append(r.tag)
            lines.append("\t".join(cols) + "\n")
        path = Path(self.root) / MANIFEST_NAME
        path.write_text("".join(lines))
        return path


def parse_shape(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise DataError(f"shape must look like CxHxW, got {text!r}")
    c, h, w = (int(p) for p in parts)
    if min(c, h, w) < 1 or c not in (1, 3):
        raise DataError(f"invalid image shape {text!r}")
    return c, h, w


def load_manifest(root: str | Path) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.is_file():
        raise DataError(f"no {MANIFEST_NAME} in {root}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("# ddan-manifest"):
        raise DataError(f"{path}: missing manifest header")
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split() if "=" in tok)
    if int(meta.get("version", -1)) != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {meta.get('version')}")
    shape = parse_shape(meta.get("shape", "3x32x32"))
    rows = []
    for n, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) not in (3, 4):
            raise DataError(f"{path}:{n}: expected 3 or 4 tab-separated columns")
        rows.append(ManifestRow(cols[0], int(cols[1]), int(cols[2]),
                                cols[3] if len(cols) == 4 else ""))
    manifest = DatasetManifest(root, rows, int(meta.get("central", 0)), shape)
    check_disjoint_identities(manifest)
    return manifest


def check_disjoint_identities(manifest: DatasetManifest) -> None:
    owner: dict[int, int] = {}
    for r in manifest.rows:
        d = owner.setdefault(r.identity_id, r.domain_id)
        if d != r.domain_id:
            raise DataError(f"identity {r.identity_id} appears in domains {d} and {r.domain_id}")


def read_image(path: Path, shape) -> np.ndarray:
    c, h, w = shape
    try:
        with Image.open(path) as im:
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape != (h, w, c):
        raise DataError(f"{path}: shape {arr.shape} does not match {(h, w, c)}")
    return arr.transpose(2, 0, 1).astype(np.float32) / 255.0


# --------------------------------------------------------------------------
# rendering


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in key]))


def make_prototype(identity_id: int, shape, seed: int) -> IdentityPrototype:
    """Draw body-part geometry and palette for one identity."""
    c, h, w = shape
    rng = _rng(seed, 0x1D, identity_id)
    yy, xx = np.mgrid[0:h, 0:w]
    yy = (yy + 0.5) / h
    xx = (xx + 0.5) / w
    pattern = np.zeros((3, h, w), dtype=np.float64)
    mask = np.zeros((h, w), dtype=bool)

    cx = 0.5 + rng.uniform(-0.06, 0.06)
    head_r = rng.uniform(0.07, 0.11)
    neck = 0.08 + 2 * head_r
    torso_w = rng.uniform(0.16, 0.30)
    split = neck + rng.uniform(0.28, 0.40)
    legs_w = rng.uniform(0.12, 0.26)
    palette = rng.uniform(0.05, 0.95, size=(4, 3))

    def paint(region, color):
        pattern[:, region] = color[:, None]
        mask[region] = True

    # legs: one block or two columns
    legs = (yy >= split) & (yy < 0.95) & (np.abs(xx - cx) < legs_w)
    if rng.random() < 0.5:
        legs &= np.abs(xx - cx) > 0.03
    paint(legs, palette[1])
    torso = (yy >= neck) & (yy < split) & (np.abs(xx - cx) < torso_w)
    paint(torso, palette[0])
    # stripe or logo on the torso
    kind = rng.integers(3)
    if kind == 0:
        y0 = rng.uniform(neck, split - 0.08)
        paint(torso & (yy >= y0) & (yy < y0 + 0.07), palette[2])
    elif kind == 1:
        paint(torso & (np.abs(xx - cx) < torso_w * 0.35), palette[2])
    head = (yy - (0.06 + head_r)) ** 2 + (xx - cx) ** 2 < head_r ** 2
    paint(head, np.array([0.85, 0.65, 0.5]) * rng.uniform(0.6, 1.1))
    # optional bag on either side
    if rng.random() < 0.6:
        side = rng.choice([-1.0, 1.0])
        bx = cx + side * (torso_w + rng.uniform(0.04, 0.1))
        by = rng.uniform(neck + 0.1, split + 0.1)
        bag = (np.abs(xx - bx) < rng.uniform(0.05, 0.1)) & (np.abs(yy - by) < rng.uniform(0.06, 0.12))
        paint(bag, palette[3])

    if c == 1:
        pattern = pattern.mean(axis=0, keepdims=True)
    return IdentityPrototype(identity_id, np.clip(pattern, 0.0, 1.0), mask)


def make_domain_specs(num_domains: int, seed: int) -> list[DomainSpec]:
    rng = _rng(seed, 0xD0)
    # evenly spread hue offsets with a random phase, so domains differ clearly
    phase = rng.uniform(-0.5, 0.5)
    specs = []
    for d in range(num_domains):
        hue = (phase + d / max(num_domains, 1) + 0.5) % 1.0 - 0.5
        specs.append(DomainSpec(
            domain_id=d,
            hue_shift=float(np.clip(hue, -0.5, 0.5)),
            brightness_gain=float(rng.uniform(0.65, 1.35)),
            contrast_gain=float(rng.uniform(0.6, 1.4)),
            geometric_jitter=float(rng.uniform(0.04, 0.12)),
            noise_sigma=float(rng.uniform(0.01, 0.06)),
            rng_seed=int(rng.integers(2**31)),
        ))
    return specs


_YIQ = np.array([[0.299, 0.587, 0.114],
                 [0.596, -0.274, -0.322],
                 [0.211, -0.523, 0.312]])
_YIQ_INV = np.linalg.inv(_YIQ)


def _hue_matrix(shift: float) -> np.ndarray:
    a = 2 * np.pi * shift
    rot = np.array([[1, 0, 0],
                    [0, np.cos(a), -np.sin(a)],
                    [0, np.sin(a), np.cos(a)]])
    return _YIQ_INV @ rot @ _YIQ


def domain_background(spec: DomainSpec, shape) -> np.ndarray:
    """Smooth clutter texture characteristic of a domain."""
    c, h, w = shape
    rng = _rng(spec.rng_seed, 0xB6)
    coarse = rng.uniform(0.2, 0.8, size=(c, 4, 4))
    base = rng.uniform(0.3, 0.7, size=(c, 1, 1))
    up = np.kron(coarse, np.ones((1, -(-h // 4), -(-w // 4))))[:, :h, :w]
    return np.clip(0.5 * base + 0.5 * up, 0.0, 1.0)


def apply_domain(image: np.ndarray, spec: DomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Photometric part of the domain transform; output is clamped to [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    if img.shape[0] == 3:
        img = np.einsum("ij,jhw->ihw", _hue_matrix(spec.hue_shift), img)
    img = (img - 0.5) * spec.contrast_gain + 0.5
    img = img * spec.brightness_gain
    if spec.noise_sigma > 0:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def camera_specs(spec: DomainSpec, num_cameras: int) -> list[DomainSpec]:
    """Per-camera variations of a domain's photometric style."""
    rng = _rng(spec.rng_seed, 0xCA)
    cams = []
    for c in range(num_cameras):
        hue = spec.hue_shift + rng.uniform(-0.12, 0.12)
        cams.append(DomainSpec(
            domain_id=spec.domain_id,
            hue_shift=float((hue + 0.5) % 1.0 - 0.5),
            brightness_gain=float(spec.brightness_gain * rng.uniform(0.75, 1.3)),
            contrast_gain=float(spec.contrast_gain * rng.uniform(0.75, 1.3)),
            geometric_jitter=spec.geometric_jitter,
            noise_sigma=spec.noise_sigma,
            rng_seed=spec.rng_seed + 7919 * (c + 1),
        ))
    return cams


def render(proto: IdentityPrototype, spec: DomainSpec, image_seed: int,
           background: np.ndarray | None = None) -> np.ndarray:
    """One image of ``proto`` as seen in domain ``spec``; deterministic per seed."""
    c, h, w = proto.base_pattern.shape
    rng = _rng(spec.rng_seed, proto.identity_id, image_seed)
    if background is None:
        background = domain_background(spec, (c, h, w))
    pattern = proto.base_pattern * rng.uniform(0.85, 1.15, size=(c, 1, 1))
    max_shift = int(round(spec.geometric_jitter * w))
    dy, dx = rng.integers(-max_shift, max_shift + 1, size=2) if max_shift else (0, 0)
    pattern = np.roll(pattern, (dy, dx), axis=(1, 2))
    mask = np.roll(proto.mask, (dy, dx), axis=(0, 1))
    bg = np.roll(background, tuple(rng.integers(0, (h, w))), axis=(1, 2))
    img = np.where(mask[None], pattern, bg)
    if rng.random() < 0.5:
        img = img[:, :, ::-1]
    return apply_domain(img, spec, rng)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)


def generate_dataset(num_domains: int, ids_per_domain: int, images_per_id: int,
                     image_shape=(3, 32, 32), seed: int = 0,
                     out_dir: str | Path = "data", num_cameras: int = 2) -> DatasetManifest:
    """Render every domain and write images plus ``manifest.tsv`` under ``out_dir``.

    Images of an identity alternate between ``num_cameras`` camera styles of
    their domain. Identity ids are ``domain * ids_per_domain + i``.
    """
    if min(num_domains, ids_per_domain, images_per_id, num_cameras) < 1:
        raise DataError("all counts must be >= 1")
    image_shape = tuple(int(s) for s in image_shape)
    if len(image_shape) != 3 or image_shape[0] not in (1, 3) or min(image_shape) < 1:
        raise DataError(f"invalid image shape {image_shape}")
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {root}: {exc}") from exc
    if not os.access(root, os.W_OK):
        raise DataError(f"{root} is not writable")

    specs = make_domain_specs(num_domains, seed)
    rows = []
    for spec in specs:
        bg = domain_background(spec, image_shape)
        cams = camera_specs(spec, num_cameras)
        for i in range(ids_per_domain):
            ident = spec.domain_id * ids_per_domain + i
            proto = make_prototype(ident, image_shape, seed)
            rel_dir = Path(f"domain_{spec.domain_id}") / f"id_{ident}"
            (root / rel_dir).mkdir(parents=True, exist_ok=True)
            for j in range(images_per_id):
                img = render(proto, cams[j % num_cameras], j, bg)
                rel = rel_dir / f"img_{j}.png"
                arr = to_uint8(img).transpose(1, 2, 0)
                Image.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr).save(root / rel)
                rows.append(ManifestRow(rel.as_posix(), ident, spec.domain_id))
    manifest = DatasetManifest(root, rows, 0, image_shape)
    manifest.write()
    return manifest


# --------------------------------------------------------------------------
# PK sampling


def index_by_identity(manifest: DatasetManifest) -> dict[int, np.ndarray]:
    groups: dict[int, list[int]] = defaultdict(list)
    for i, r in enumerate(manifest.rows):
        if r.tag != "distractor":
            groups[r.identity_id].append(i)
    return {k: np.array(v, dtype=np.int64) for k, v in sorted(groups.items())}


def pk_sample_indices(groups: dict[int, np.ndarray], P: int, K: int,
                      rng: np.random.Generator) -> np.ndarray:
    """Row indices of a P x K batch, identity-major.

    Identities are drawn uniformly over all identities; an identity with fewer
    than K images is sampled with replacement.
    """
    if P < 1 or K < 1:
        raise DataError("P and K must be >= 1")
    ids = list(groups)
    if len(ids) < P:
        raise DataError(f"need {P} identities, manifest has {len(ids)}")
    chosen = rng.choice(len(ids), size=P, replace=False)
    out = []
    for c in chosen:
        members = groups[ids[c]]
        out.append(rng.choice(members, size=K, replace=len(members) < K))
    return np.concatenate(out)


def pk_sample_batch(manifest: DatasetManifest, P: int, K: int,
                    rng: np.random.Generator) -> list[Sample]:
    if P * K > len(manifest):
        raise DataError(f"P*K={P * K} exceeds {len(manifest)} images")
    idx = pk_sample_indices(index_by_identity(manifest), P, K, rng)
    return [manifest.sample(int(i)) for i in idx]
