"""Synthetic fundus-like dataset: generation, I/O, preprocessing, splits.

Each generated image is a dark frame holding one bright, reddish circular
disc.  Severity grades 0-4 control the lesions drawn inside the disc:
grade 0 has none, grade 1 one small dark dot, and grade g >= 2 gets g
bright yellowish blobs plus 2g dark dots.  The binary label is referable
disease, grade >= 2.  Rendering is deterministic per (seed, id): every
sample draws from its own rng substream, so regenerating any subset gives
identical pixels.

On-disk layout is `<root>/images/*.ppm` (binary P6, 8-bit) plus
`<root>/manifest.csv` with header `filename,grade,binary_label,split`.
Any dataset in this layout can be loaded, not just generated ones.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .augment import bilinear_resize
from .rng import RngState

MANIFEST_HEADER = "filename,grade,binary_label,split"
MANIFEST_NAME = "manifest.csv"
IMAGES_DIR = "images"

# preprocessing: pixels brighter than this (in luma) belong to the disc
DISC_THRESHOLD = 0.15

# rendering palette; tuned so lesion evidence is present but subtle
_BG_RANGE = (0.03, 0.09)          # background level, drawn per image
_DISC_R_RANGE = (0.42, 0.68)      # red channel base of the disc
_DISC_RADIUS_FRAC = (0.26, 0.42)  # of image size
_DISC_JITTER_FRAC = 0.06          # center jitter, of image size
_BLOB_DELTA = (0.15, 0.27)        # bright lesion intensity lift
_BLOB_RADIUS = (1.0, 1.8)         # px at 32; scaled by size/32
_DOT_DEPTH = (0.32, 0.52)         # dark lesion multiplicative dip
_DOT_RADIUS = (0.8, 1.3)
_NOISE_SIGMA = 0.025


class ManifestError(ValueError):
    """Malformed manifest line (bad field count, range, or value)."""


class ManifestConsistencyError(ManifestError):
    """binary_label does not match the grade mapping."""


class BlankImageError(ValueError):
    """No disc found above the intensity threshold."""


class FractionRangeError(ValueError):
    """label_fraction outside (0, 1]."""


def binary_from_grade(grade: int) -> int:
    """Referable iff grade 2-4; grades 0 and 1 are non-referable."""
    return int(grade >= 2)


@dataclass(frozen=True)
class ManifestEntry:
    filename: str
    grade: int
    binary_label: int
    split: str

    @property
    def id(self) -> str:
        return self.filename.rsplit(".", 1)[0]


@dataclass
class ImageSample:
    id: str
    pixels: np.ndarray  # (3, H, W) float32 in [0, 1]
    grade: int
    binary_label: int
    split: str


@dataclass(frozen=True)
class DatasetSplit:
    labeled_ids: frozenset
    unlabeled_ids: frozenset
    test_ids: frozenset
    label_fraction: float


@dataclass(frozen=True)
class GeneratorConfig:
    n_train: int = 2000
    n_test: int = 400
    image_size: int = 32
    grade_distribution: Tuple[float, ...] = (0.45, 0.20, 0.20, 0.10, 0.05)
    seed: int = 0

    def validate(self) -> None:
        if self.n_train <= 0 or self.n_test <= 0:
            raise ValueError(f"counts must be positive, got {self.n_train}/{self.n_test}")
        if self.image_size < 16:
            raise ValueError(f"image_size must be at least 16, got {self.image_size}")
        if len(self.grade_distribution) != 5:
            raise ValueError("grade_distribution needs 5 entries")
        if any(p < 0 for p in self.grade_distribution):
            raise ValueError("grade_distribution entries must be nonnegative")
        if abs(sum(self.grade_distribution) - 1.0) > 1e-9:
            raise ValueError(
                f"grade_distribution sums to {sum(self.grade_distribution)!r}, expected 1"
            )


# ---------------------------------------------------------------------------
# PPM I/O


def write_ppm(path: str, image: np.ndarray) -> None:
    """Write a (3, H, W) float image in [0, 1] as binary P6, 8 bits/channel."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {image.shape}")
    _, h, w = image.shape
    quant = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    raster = np.transpose(quant, (1, 2, 0)).tobytes()  # H x W x RGB
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(raster)


def read_ppm(path: str) -> np.ndarray:
    """Read binary P6 back to (3, H, W) float32 in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P6"):
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    # header is three whitespace-separated tokens after the magic
    tokens: List[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    raster = np.frombuffer(blob, dtype=np.uint8, count=3 * h * w, offset=pos)
    if raster.size != 3 * h * w:
        raise ValueError(f"{path}: raster shorter than {w}x{h} pixels")
    pixels = raster.reshape(h, w, 3).transpose(2, 0, 1)
    return (pixels.astype(np.float32) / 255.0).copy()


# ---------------------------------------------------------------------------
# Manifest I/O


def write_manifest(path: str, entries: Sequence[ManifestEntry]) -> None:
    lines = [MANIFEST_HEADER]
    for e in entries:
        lines.append(f"{e.filename},{e.grade},{e.binary_label},{e.split}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> List[ManifestEntry]:
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw or raw[0].strip() != MANIFEST_HEADER:
        raise ManifestError(f"bad manifest header, expected {MANIFEST_HEADER!r}, line 1")
    entries = []
    for lineno, line in enumerate(raw[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ManifestError(f"expected 4 fields, got {len(parts)}, line {lineno}")
        filename, grade_s, label_s, split = (p.strip() for p in parts)
        try:
            grade = int(grade_s)
            label = int(label_s)
        except ValueError:
            raise ManifestError(f"non-integer grade or label, line {lineno}") from None
        if not 0 <= grade <= 4:
            raise ManifestError(f"grade out of range, line {lineno}")
        if label not in (0, 1):
            raise ManifestError(f"binary_label must be 0 or 1, line {lineno}")
        if split not in ("train", "test"):
            raise ManifestError(f"split must be train or test, line {lineno}")
        if label != binary_from_grade(grade):
            raise ManifestConsistencyError(
                f"binary_label {label} inconsistent with grade {grade}, line {lineno}"
            )
        entries.append(ManifestEntry(filename, grade, label, split))
    return entries


# ---------------------------------------------------------------------------
# Rendering


def _disc_mask(size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    """Soft-edged (1px feather) circle occupancy in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    return np.clip(radius - dist + 0.5, 0.0, 1.0)


def render_sample(sample_id: str, grade: int, size: int, rng: RngState) -> np.ndarray:
    """Deterministically draw one fundus-like image for (id, grade)."""
    gen = rng.substream("render", sample_id).generator()
    img = np.full((3, size, size), gen.uniform(*_BG_RANGE), dtype=np.float64)

    # fundus disc
    cy = size / 2.0 + gen.uniform(-1.0, 1.0) * _DISC_JITTER_FRAC * size
    cx = size / 2.0 + gen.uniform(-1.0, 1.0) * _DISC_JITTER_FRAC * size
    radius = gen.uniform(*_DISC_RADIUS_FRAC) * size
    disc = _disc_mask(size, cy, cx, radius)
    r_base = gen.uniform(*_DISC_R_RANGE)
    color = np.array([r_base,
                      r_base * gen.uniform(0.52, 0.62),
                      r_base * gen.uniform(0.22, 0.32)])
    img += disc[None] * (color[:, None, None] - img)

    px_scale = size / 32.0

    def lesion_center():
        ang = gen.uniform(0.0, 2.0 * np.pi)
        rad = radius * np.sqrt(gen.uniform(0.0, 1.0)) * 0.72
        return cy + rad * np.sin(ang), cx + rad * np.cos(ang)

    n_blobs = grade if grade >= 2 else 0
    n_dots = 1 if grade == 1 else (2 * grade if grade >= 2 else 0)

    for _ in range(n_blobs):  # bright, yellowish
        ly, lx = lesion_center()
        lrad = gen.uniform(*_BLOB_RADIUS) * px_scale
        delta = gen.uniform(*_BLOB_DELTA)
        mask = _disc_mask(size, ly, lx, lrad)
        img[0] += mask * delta
        img[1] += mask * delta * 0.9
        img[2] += mask * delta * 0.25

    for _ in range(n_dots):  # dark, reddish-black
        ly, lx = lesion_center()
        lrad = gen.uniform(*_DOT_RADIUS) * px_scale
        depth = gen.uniform(*_DOT_DEPTH)
        mask = _disc_mask(size, ly, lx, lrad)
        dip = 1.0 - mask * depth
        img[0] *= 1.0 - mask * depth * 0.75  # keep a red cast
        img[1] *= dip
        img[2] *= dip

    img += gen.normal(0.0, _NOISE_SIGMA, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def generate_synthetic(cfg: GeneratorConfig, root: str) -> List[ManifestEntry]:
    """Render the dataset under `root` and return its manifest entries."""
    cfg.validate()
    images_dir = os.path.join(root, IMAGES_DIR)
    os.makedirs(images_dir, exist_ok=True)
    rng = RngState(cfg.seed)
    probs = np.asarray(cfg.grade_distribution, dtype=np.float64)
    probs = probs / probs.sum()

    entries = []
    specs = [("train", i) for i in range(cfg.n_train)] + [("test", i) for i in range(cfg.n_test)]
    for split, i in specs:
        sample_id = f"{split}_{i:05d}"
        ggen = rng.substream("grade", sample_id).generator()
        grade = int(ggen.choice(5, p=probs))
        pixels = render_sample(sample_id, grade, cfg.image_size, rng)
        filename = sample_id + ".ppm"
        write_ppm(os.path.join(images_dir, filename), pixels)
        entries.append(ManifestEntry(filename, grade, binary_from_grade(grade), split))
    write_manifest(os.path.join(root, MANIFEST_NAME), entries)
    return entries


# ---------------------------------------------------------------------------
# Preprocessing


def preprocess(image: np.ndarray, target_size: int) -> np.ndarray:
    """Center on the disc and resize to target_size x target_size.

    The disc is located as the bounding box of pixels whose luma exceeds
    a fixed threshold; the crop is the square enclosing that box, clamped
    to the frame, then bilinearly resized.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[0] != 3 or image.size == 0:
        raise ValueError(f"expected a nonempty (3, H, W) image, got {image.shape}")
    if target_size <= 0:
        raise ValueError(f"target_size must be positive, got {target_size}")
    _, h, w = image.shape
    luma = 0.299 * image[0] + 0.587 * image[1] + 0.114 * image[2]
    mask = luma > DISC_THRESHOLD
    if not mask.any():
        raise BlankImageError("no disc found above the intensity threshold")
    rows = np.where(mask.any(axis=1))[0]
    cols = np.where(mask.any(axis=0))[0]
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1

    side = min(max(y1 - y0, x1 - x0), min(h, w))
    cy = (y0 + y1) / 2.0
    cx = (x0 + x1) / 2.0
    top = int(round(cy - side / 2.0))
    left = int(round(cx - side / 2.0))
    top = min(max(top, 0), h - side)
    left = min(max(left, 0), w - side)
    crop = image[:, top : top + side, left : left + side]
    return bilinear_resize(crop, target_size, target_size)


# ---------------------------------------------------------------------------
# Splits


def make_split(entries: Sequence[ManifestEntry], label_fraction: float, seed: int) -> DatasetSplit:
    """Uniform random labeled subset of train; deterministic per seed."""
    if not 0.0 < label_fraction <= 1.0:
        raise FractionRangeError(f"label_fraction must be in (0, 1], got {label_fraction}")
    train_ids = sorted(e.id for e in entries if e.split == "train")
    test_ids = frozenset(e.id for e in entries if e.split == "test")
    n_labeled = int(np.floor(label_fraction * len(train_ids) + 0.5))
    n_labeled = max(1, n_labeled)
    gen = RngState(seed).substream("split").generator()
    perm = gen.permutation(len(train_ids))
    labeled = frozenset(train_ids[i] for i in perm[:n_labeled])
    unlabeled = frozenset(train_ids[i] for i in perm[n_labeled:])
    return DatasetSplit(labeled, unlabeled, test_ids, label_fraction)


def labeled_hash(labeled_ids) -> bytes:
    """32-byte digest identifying the exact labeled id set."""
    joined = "\n".join(sorted(labeled_ids)).encode("utf-8")
    return hashlib.sha256(joined).digest()


# ---------------------------------------------------------------------------
# Loading


def load_dataset(root: str) -> Dict[str, ImageSample]:
    """Read manifest plus every image; keyed by sample id."""
    entries = read_manifest(os.path.join(root, MANIFEST_NAME))
    samples: Dict[str, ImageSample] = {}
    for e in entries:
        pixels = read_ppm(os.path.join(root, IMAGES_DIR, e.filename))
        samples[e.id] = ImageSample(e.id, pixels, e.grade, e.binary_label, e.split)
    return samples
