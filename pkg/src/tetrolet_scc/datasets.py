"""Dataset ingestion: MNIST IDX files, labelled image directories, 32x32
normalisation and seeded stratified fold construction."""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

TARGET_SIDE = 32


class FormatError(ValueError):
    """Malformed IDX payload; ``offset`` points at the offending byte."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _read_be32(data: bytes, offset: int) -> int:
    if len(data) < offset + 4:
        raise FormatError("truncated header", offset=len(data))
    return struct.unpack_from(">I", data, offset)[0]


def parse_idx_images(data: bytes) -> np.ndarray:
    """Parse an IDX image file into a (count, rows, cols) uint8 array."""
    magic = _read_be32(data, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}",
            offset=0,
        )
    count = _read_be32(data, 4)
    rows = _read_be32(data, 8)
    cols = _read_be32(data, 12)
    need = 16 + count * rows * cols
    if len(data) != need:
        raise FormatError(
            f"payload of {len(data) - 16} bytes does not match "
            f"{count}x{rows}x{cols} pixels",
            offset=min(len(data), need),
        )
    return np.frombuffer(data, dtype=np.uint8, offset=16).reshape(count, rows, cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX label file into a (count,) array of digits 0-9."""
    magic = _read_be32(data, 0)
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(
            f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}",
            offset=0,
        )
    count = _read_be32(data, 4)
    need = 8 + count
    if len(data) != need:
        raise FormatError(
            f"payload of {len(data) - 8} bytes does not match {count} labels",
            offset=min(len(data), need),
        )
    labels = np.frombuffer(data, dtype=np.uint8, offset=8)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(
            f"label value {labels[bad[0]]} outside 0..9", offset=8 + int(bad[0])
        )
    return labels.astype(np.int64)


def write_idx_images(images: np.ndarray) -> bytes:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    return struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols) + images.tobytes()


def write_idx_labels(labels: np.ndarray) -> bytes:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]) + labels.tobytes()


def _bilinear_resize(img: np.ndarray, side: int) -> np.ndarray:
    h, w = img.shape
    r = (np.arange(side) + 0.5) * (h / side) - 0.5
    c = (np.arange(side) + 0.5) * (w / side) - 0.5
    rr, cc = np.meshgrid(r, c, indexing="ij")
    return ndimage.map_coordinates(img, [rr, cc], order=1, mode="nearest")


def normalize(raw: np.ndarray, side: int = TARGET_SIDE) -> np.ndarray:
    """Normalise a raw grayscale grid to ``side`` x ``side`` values in [0, 1].

    28x28 inputs (MNIST) are centre-padded with zeros, which preserves the
    original pixels and reaches the power-of-two side; inputs already at the
    target size pass through; anything else is bilinearly resampled.
    Integer grids are scaled by their dtype's maximum, floats are assumed
    to already lie in [0, 1].
    """
    arr = np.asarray(raw)
    if arr.size == 0 or arr.ndim != 2:
        raise ValueError(f"expected a nonempty 2-D grid, got shape {arr.shape}")
    if arr.dtype == bool:
        img = arr.astype(float)
    elif np.issubdtype(arr.dtype, np.integer):
        img = arr.astype(float) / float(np.iinfo(arr.dtype).max)
    else:
        img = arr.astype(float)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")

    if img.shape == (side, side):
        return img
    if img.shape == (28, 28) and side == 32:
        out = np.zeros((side, side))
        out[2:30, 2:30] = img
        return out
    return _bilinear_resize(img, side)


@dataclass
class LabeledDataset:
    """Normalised images with integer class ids and display names."""

    images: np.ndarray  # (M, side, side) float64 in [0, 1]
    labels: np.ndarray  # (M,) int64
    class_names: dict[int, str]

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        missing = set(np.unique(self.labels)) - set(self.class_names)
        if missing:
            raise ValueError(f"labels without a class name: {sorted(missing)}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def class_ids(self) -> list[int]:
        return sorted(np.unique(self.labels).tolist())

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        indices = np.asarray(indices)
        return LabeledDataset(
            self.images[indices], self.labels[indices], dict(self.class_names)
        )

    def limit_per_class(self, limit: int, seed: int = 0) -> "LabeledDataset":
        """Seeded per-class subsample, at most ``limit`` images per class."""
        rng = np.random.default_rng(seed)
        keep: list[np.ndarray] = []
        for cid in self.class_ids():
            idx = np.flatnonzero(self.labels == cid)
            if idx.size > limit:
                idx = np.sort(rng.choice(idx, size=limit, replace=False))
            keep.append(idx)
        return self.subset(np.concatenate(keep))


def _read_maybe_gzip(path: Path) -> bytes:
    data = path.read_bytes()
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def load_directory(path: str | Path, side: int = TARGET_SIDE) -> LabeledDataset:
    """Load a ``<root>/<class_name>/<file>.png|.pgm`` corpus.

    Classes are the subdirectories in sorted order (ids 0..P-1); files are
    loaded in sorted order.  Unreadable files are skipped with a warning;
    a class with no readable image is an error.
    """
    root = Path(path)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ValueError(f"no class subdirectories under {root}")
    images, labels = [], []
    class_names: dict[int, str] = {}
    for cid, cdir in enumerate(class_dirs):
        class_names[cid] = cdir.name
        files = sorted(p for p in cdir.iterdir() if p.suffix in (".png", ".pgm"))
        loaded = 0
        for f in files:
            try:
                with Image.open(f) as im:
                    arr = np.asarray(im.convert("I") if im.mode == "I;16" else im.convert("L"))
            except Exception as exc:
                logger.warning("skipping unreadable image %s: %s", f, exc)
                continue
            if arr.dtype == np.int32:  # Pillow "I" mode for 16-bit sources
                arr = arr.astype(np.uint16)
            images.append(normalize(arr, side))
            labels.append(cid)
            loaded += 1
        if loaded == 0:
            raise ValueError(f"class '{cdir.name}' has no readable images")
    return LabeledDataset(np.stack(images), np.asarray(labels), class_names)


def _find_idx_pair(root: Path, prefixes: tuple[str, ...]) -> tuple[Path, Path]:
    files = list(root.iterdir())
    images = [
        f for f in files if "idx3" in f.name and f.name.startswith(prefixes)
    ]
    labels = [
        f for f in files if "idx1" in f.name and f.name.startswith(prefixes)
    ]
    if len(images) != 1 or len(labels) != 1:
        raise ValueError(
            f"expected one {prefixes} idx3/idx1 pair under {root}, "
            f"found {len(images)} image and {len(labels)} label files"
        )
    return images[0], labels[0]


def load_mnist_directory(
    path: str | Path, split: str = "train", side: int = TARGET_SIDE
) -> LabeledDataset:
    """Load MNIST-style IDX files from a directory.

    ``split`` selects the ``train`` pair, the ``test`` (t10k) pair, or
    ``all`` for their concatenation.  Gzipped files are accepted.
    """
    root = Path(path)
    if split not in ("train", "test", "all"):
        raise ValueError(f"split must be train|test|all, got {split!r}")
    wanted = {"train": ("train",), "test": ("t10k", "test")}
    parts = ["train", "test"] if split == "all" else [split]
    all_images, all_labels = [], []
    for part in parts:
        img_path, lbl_path = _find_idx_pair(root, wanted[part])
        raw_images = parse_idx_images(_read_maybe_gzip(img_path))
        raw_labels = parse_idx_labels(_read_maybe_gzip(lbl_path))
        if raw_images.shape[0] != raw_labels.shape[0]:
            raise ValueError(
                f"{img_path.name} has {raw_images.shape[0]} images but "
                f"{lbl_path.name} has {raw_labels.shape[0]} labels"
            )
        all_images.append(raw_images)
        all_labels.append(raw_labels)
    raw = np.concatenate(all_images)
    labels = np.concatenate(all_labels)
    images = np.stack([normalize(raw[i], side) for i in range(raw.shape[0])])
    return LabeledDataset(images, labels, {d: str(d) for d in range(10)})


def looks_like_mnist_directory(path: str | Path) -> bool:
    root = Path(path)
    if not root.is_dir():
        return False
    return any("idx3" in f.name or "idx1" in f.name for f in root.iterdir())


def load_data(
    path: str | Path, split: str = "train", side: int = TARGET_SIDE
) -> LabeledDataset:
    """Dispatch to MNIST-IDX or class-directory loading based on contents."""
    if looks_like_mnist_directory(path):
        return load_mnist_directory(path, split=split, side=side)
    return load_directory(path, side=side)


@dataclass
class FoldPlan:
    """Stratified partition of sample indices into folds."""

    fold_count: int
    assignments: np.ndarray  # (M,) fold id per sample
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def stratified_folds(labels: np.ndarray, fold_count: int = 5, seed: int = 0) -> FoldPlan:
    """Seeded stratified folds; per-class fold sizes differ by at most 1."""
    labels = np.asarray(labels)
    if fold_count < 2:
        raise ValueError(f"fold_count must be >= 2, got {fold_count}")
    assignments = np.full(labels.shape[0], -1, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cid in sorted(np.unique(labels).tolist()):
        idx = np.flatnonzero(labels == cid)
        if idx.size < fold_count:
            raise ValueError(
                f"class {cid} has {idx.size} samples, fewer than "
                f"{fold_count} folds"
            )
        perm = rng.permutation(idx)
        assignments[perm] = np.arange(perm.size) % fold_count
    return FoldPlan(fold_count=fold_count, assignments=assignments, seed=seed)
