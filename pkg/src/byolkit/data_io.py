"""Dataset loading: STL-10 binary files, subset carving, synthetic fallback.

STL-10 binary layout: each image is 3 channel planes of 96x96 unsigned
bytes, each plane stored column-major, so byte index ch*9216 + c*96 + r
holds pixel (row r, col c, channel ch). Label files hold one byte per
image, 1-indexed; we store 0-indexed labels.
"""

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn import rng_for

STL_HW = 96
STL_BYTES = 3 * STL_HW * STL_HW

# Canonical STL-10 class list (already alphabetical). The default 5-class
# carve takes the first five; configurable via SubsetSpec.class_filter.
STL10_CLASSES = (
    "airplane", "bird", "car", "cat", "deer",
    "dog", "horse", "monkey", "ship", "truck",
)

STL10_FILES = {
    "train": ("train_X.bin", "train_y.bin"),
    "test": ("test_X.bin", "test_y.bin"),
    "unlabeled": ("unlabeled_X.bin", None),
}


class MalformedRecordError(ValueError):
    pass


@dataclass
class Dataset:
    """Immutable after construction; images are (N,3,H,W) float32 in [0,1]."""

    images: np.ndarray
    labels: Optional[np.ndarray]
    class_names: tuple
    split: str
    normalization: Optional[dict] = None

    def __post_init__(self):
        if self.labels is not None:
            if len(self.labels) != len(self.images):
                raise MalformedRecordError(
                    f"{len(self.images)} images but {len(self.labels)} labels"
                )
            if self.labels.size and self.labels.max() >= len(self.class_names):
                raise MalformedRecordError("label index out of range")

    def __len__(self):
        return len(self.images)

    @property
    def n_classes(self):
        return len(self.class_names)


@dataclass(frozen=True)
class SubsetSpec:
    class_filter: Optional[frozenset] = None
    fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"fraction must be in (0,1], got {self.fraction}")


def decode_stl10_image(raw):
    if len(raw) != STL_BYTES:
        raise MalformedRecordError(f"expected {STL_BYTES} bytes, got {len(raw)}")
    planes = np.frombuffer(raw, dtype=np.uint8).reshape(3, STL_HW, STL_HW)
    # plane axis order is (channel, col, row); swap to (channel, row, col)
    return (planes.transpose(0, 2, 1).astype(np.float32)) / 255.0


def encode_stl10_image(img):
    arr = np.round(np.asarray(img) * 255.0).astype(np.uint8)
    return arr.transpose(0, 2, 1).tobytes()


def _decode_all(raw):
    n, rem = divmod(len(raw), STL_BYTES)
    if rem:
        raise MalformedRecordError(
            f"image file size {len(raw)} is not a multiple of {STL_BYTES}"
        )
    planes = np.frombuffer(raw, dtype=np.uint8).reshape(n, 3, STL_HW, STL_HW)
    return planes.transpose(0, 1, 3, 2).astype(np.float32) / 255.0


def load_stl10(root, split, subset=None, files=None):
    """Load one STL-10 split from binary files under `root`."""
    if split not in STL10_FILES:
        raise ValueError(f"unknown split {split!r}")
    img_name, lbl_name = files if files is not None else STL10_FILES[split]
    img_path = os.path.join(root, img_name)
    with open(img_path, "rb") as f:
        images = _decode_all(f.read())
    labels = None
    if lbl_name is not None:
        with open(os.path.join(root, lbl_name), "rb") as f:
            raw = np.frombuffer(f.read(), dtype=np.uint8)
        if len(raw) != len(images):
            raise MalformedRecordError(
                f"{len(images)} images but {len(raw)} labels in {lbl_name}"
            )
        if raw.min() < 1:
            raise MalformedRecordError("STL-10 labels are 1-indexed; found 0")
        labels = raw.astype(np.int64) - 1
    ds = Dataset(images, labels, STL10_CLASSES, split)
    if subset is not None:
        ds = apply_subset(ds, subset)
    return ds


def apply_subset(dataset, spec):
    """Deterministic subset: per-class seeded shuffle then truncation."""
    rng = rng_for(spec.seed, 41)
    n = len(dataset)
    if dataset.labels is None:
        order = rng.permutation(n)
        keep = order[: int(round(spec.fraction * n))]
        return Dataset(dataset.images[keep], None, dataset.class_names, dataset.split)
    chosen = []
    classes = sorted(set(dataset.labels.tolist()))
    if spec.class_filter is not None:
        classes = [c for c in classes if c in spec.class_filter]
    for c in classes:
        idx = np.flatnonzero(dataset.labels == c)
        idx = idx[rng.permutation(len(idx))]
        chosen.append(idx[: int(round(spec.fraction * len(idx)))])
    keep = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    keep = keep[rng.permutation(len(keep))]
    return Dataset(
        dataset.images[keep], dataset.labels[keep], dataset.class_names, dataset.split
    )


def dataset_stats(dataset):
    """Per-channel (mean, std) over every pixel. Population std."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    flat = dataset.images.reshape(len(dataset), 3, -1).astype(np.float64)
    mean = flat.mean(axis=(0, 2))
    std = flat.std(axis=(0, 2))
    return mean, std


# ------------------------------------------------------------- synthetic data

SYNTH_CLASS_NAMES = ("disk", "frame", "cross", "stripes", "ring", "saltire", "bars", "dots")


def _draw_shape(canvas, family, cy, cx, r, color, thick):
    hw = canvas.shape[1]
    yy, xx = np.mgrid[0:hw, 0:hw]
    dy = yy - cy
    dx = xx - cx
    dist2 = dy * dy + dx * dx
    if family == 0:  # filled disk
        mask = dist2 <= r * r
    elif family == 1:  # hollow square frame
        cheb = np.maximum(np.abs(dy), np.abs(dx))
        mask = (cheb <= r) & (cheb >= r - thick)
    elif family == 2:  # plus sign
        mask = ((np.abs(dx) <= thick) | (np.abs(dy) <= thick)) & (
            np.maximum(np.abs(dy), np.abs(dx)) <= r
        )
    elif family == 3:  # horizontal stripes inside a square window
        mask = (np.maximum(np.abs(dy), np.abs(dx)) <= r) & (
            ((dy + r) // max(thick, 1)) % 2 == 0
        )
    elif family == 4:  # annulus
        mask = (dist2 <= r * r) & (dist2 >= (r - thick) ** 2)
    elif family == 5:  # diagonal cross
        mask = ((np.abs(dy - dx) <= thick) | (np.abs(dy + dx) <= thick)) & (
            np.maximum(np.abs(dy), np.abs(dx)) <= r
        )
    elif family == 6:  # vertical bars
        mask = (np.maximum(np.abs(dy), np.abs(dx)) <= r) & (
            ((dx + r) // max(thick, 1)) % 2 == 0
        )
    else:  # grid of dots
        step = max(2 * thick, 2)
        mask = (dist2 <= r * r) & (dy % step <= thick // 2 + 1) & (dx % step <= thick // 2 + 1)
    canvas[:, mask] = color[:, None]


def make_synthetic_dataset(n, n_classes, hw=96, seed=0, split="train"):
    """Procedurally drawn shapes; class = shape family, color/pose are nuisance."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n % n_classes != 0:
        raise ValueError(f"n={n} not divisible by n_classes={n_classes}")
    rng = rng_for(seed, 7)
    per = n // n_classes
    images = np.zeros((n, 3, hw, hw), dtype=np.float32)
    labels = np.repeat(np.arange(n_classes), per).astype(np.int64)
    for i in range(n):
        fam = int(labels[i]) % len(SYNTH_CLASS_NAMES)
        bg = rng.uniform(0.0, 0.35, size=3).astype(np.float32)
        fg = rng.uniform(0.45, 1.0, size=3).astype(np.float32)
        canvas = np.tile(bg[:, None, None], (1, hw, hw)).astype(np.float32)
        r = int(rng.uniform(0.22, 0.38) * hw)
        cy = int(rng.uniform(r + 1, hw - r - 1))
        cx = int(rng.uniform(r + 1, hw - r - 1))
        thick = max(2, int(0.18 * r))
        _draw_shape(canvas, fam, cy, cx, r, fg, thick)
        canvas += rng.normal(0.0, 0.02, size=canvas.shape).astype(np.float32)
        images[i] = np.clip(canvas, 0.0, 1.0)
    order = rng.permutation(n)
    names = tuple(SYNTH_CLASS_NAMES[i % len(SYNTH_CLASS_NAMES)] + (f"_{i}" if i >= len(SYNTH_CLASS_NAMES) else "") for i in range(n_classes))
    return Dataset(images[order], labels[order], names, split)
