"""Digit corpus provider for tests.

Uses real MNIST when a local copy exists (TETROLET_MNIST_DIR env var, or
./data/mnist, or ./data); otherwise falls back to the deterministic
synthetic glyph corpus.  Every consumer reports which source was used so
runs on machines with the real data are directly comparable.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from tetrolet_scc.datasets import (
    LabeledDataset,
    load_mnist_directory,
    looks_like_mnist_directory,
)
from tetrolet_scc.synthetic import make_digit_dataset

_ROOT = Path(__file__).resolve().parent.parent


def mnist_dir() -> Path | None:
    candidates = []
    env = os.environ.get("TETROLET_MNIST_DIR")
    if env:
        candidates.append(Path(env))
    candidates += [_ROOT / "data" / "mnist", _ROOT / "data"]
    for cand in candidates:
        if cand.is_dir() and looks_like_mnist_directory(cand):
            return cand
    return None


def _sample_per_class(
    dataset: LabeledDataset, per_class: int, rng: np.random.Generator
) -> LabeledDataset:
    keep = []
    for cid in dataset.class_ids():
        idx = np.flatnonzero(dataset.labels == cid)
        keep.append(np.sort(rng.choice(idx, size=per_class, replace=False)))
    return dataset.subset(np.concatenate(keep))


def digit_corpus(
    per_class_train: int, per_class_test: int, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset, str]:
    """Disjoint train/test digit sets and a note naming the source."""
    root = mnist_dir()
    if root is not None:
        rng = np.random.default_rng(seed)
        train = _sample_per_class(
            load_mnist_directory(root, split="train"), per_class_train, rng
        )
        test = _sample_per_class(
            load_mnist_directory(root, split="test"), per_class_test, rng
        )
        return train, test, f"mnist ({root})"
    train = make_digit_dataset(per_class_train, seed=2 * seed + 1)
    test = make_digit_dataset(per_class_test, seed=2 * seed + 2)
    return train, test, "synthetic glyphs (no local MNIST found)"


def digit_images(count: int, seed: int = 0) -> tuple[np.ndarray, str]:
    """``count`` normalised 32x32 digit images plus the source note."""
    per_class = count // 10 + 1
    train, _, note = digit_corpus(per_class, 1, seed=seed)
    return train.images[:count], note
