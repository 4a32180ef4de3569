"""Deterministic synthetic handwritten-digit corpus.

Renders stroke-based digit glyphs at high resolution, perturbs each sample
with a seeded random affine map (rotation, scale, shear, translation) and
downsamples to 28x28 grayscale, mimicking the layout of MNIST images.
Used as a stand-in corpus for tests and demos when no real digit dataset
is available on disk.
"""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .datasets import LabeledDataset, normalize

_CANVAS = 112  # render resolution before downsampling to 28x28
_WIDTH = 10  # stroke width on the render canvas


def _box(x0, y0, x1, y1):
    return (x0 * _CANVAS, y0 * _CANVAS, x1 * _CANVAS, y1 * _CANVAS)


def _pt(x, y):
    return (x * _CANVAS, y * _CANVAS)


def _draw_digit(draw: ImageDraw.ImageDraw, digit: int) -> None:
    line = lambda *pts: draw.line([_pt(x, y) for x, y in pts], fill=255, width=_WIDTH)
    arc = lambda box, s, e: draw.arc(_box(*box), start=s, end=e, fill=255, width=_WIDTH)
    ellipse = lambda box: draw.ellipse(_box(*box), outline=255, width=_WIDTH)

    if digit == 0:
        ellipse((0.22, 0.10, 0.78, 0.90))
    elif digit == 1:
        line((0.35, 0.28), (0.54, 0.10), (0.54, 0.90))
    elif digit == 2:
        arc((0.22, 0.10, 0.78, 0.52), 150, 400)
        line((0.74, 0.42), (0.24, 0.88), (0.78, 0.88))
    elif digit == 3:
        arc((0.24, 0.10, 0.76, 0.50), 160, 90)
        arc((0.24, 0.50, 0.78, 0.90), 270, 160)
    elif digit == 4:
        line((0.62, 0.10), (0.22, 0.62), (0.82, 0.62))
        line((0.62, 0.10), (0.62, 0.90))
    elif digit == 5:
        line((0.74, 0.12), (0.28, 0.12), (0.28, 0.46))
        arc((0.24, 0.40, 0.78, 0.90), 220, 150)
    elif digit == 6:
        arc((0.24, 0.08, 0.82, 0.70), 120, 250)
        ellipse((0.26, 0.48, 0.76, 0.90))
    elif digit == 7:
        line((0.22, 0.12), (0.80, 0.12), (0.42, 0.90))
    elif digit == 8:
        ellipse((0.28, 0.08, 0.72, 0.50))
        ellipse((0.24, 0.48, 0.76, 0.92))
    elif digit == 9:
        ellipse((0.26, 0.10, 0.76, 0.52))
        line((0.74, 0.36), (0.66, 0.90))
    else:
        raise ValueError(f"digit must be 0..9, got {digit}")


def render_digit(digit: int, rng: np.random.Generator, side: int = 28) -> np.ndarray:
    """One jittered uint8 glyph image of the requested digit."""
    img = Image.new("L", (_CANVAS, _CANVAS), 0)
    _draw_digit(ImageDraw.Draw(img), digit)

    theta = rng.uniform(-0.18, 0.18)
    scale = rng.uniform(0.85, 1.12)
    shear = rng.uniform(-0.12, 0.12)
    tx = rng.uniform(-0.06, 0.06) * _CANVAS
    ty = rng.uniform(-0.06, 0.06) * _CANVAS

    # Invertible affine about the canvas centre: PIL maps output pixel
    # (x, y) through the coefficient matrix to sample the input.
    cos, sin = np.cos(theta), np.sin(theta)
    fwd = np.array([[cos, -sin + shear], [sin, cos]]) * scale
    inv = np.linalg.inv(fwd)
    c = _CANVAS / 2.0
    offs = np.array([c, c]) - inv @ np.array([c + tx, c + ty])
    coeffs = (inv[0, 0], inv[0, 1], offs[0], inv[1, 0], inv[1, 1], offs[1])
    img = img.transform((_CANVAS, _CANVAS), Image.AFFINE, coeffs, Image.BILINEAR)

    img = img.resize((side, side), Image.BILINEAR)
    return np.asarray(img, dtype=np.uint8)


def make_digit_corpus(
    per_class: int, seed: int = 0, side: int = 28
) -> tuple[np.ndarray, np.ndarray]:
    """Raw corpus of ``10 * per_class`` jittered digit glyphs.

    Returns (images, labels) with images uint8 of shape (M, side, side),
    grouped by digit, deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    images = np.empty((10 * per_class, side, side), dtype=np.uint8)
    labels = np.empty(10 * per_class, dtype=np.int64)
    pos = 0
    for digit in range(10):
        for _ in range(per_class):
            images[pos] = render_digit(digit, rng, side)
            labels[pos] = digit
            pos += 1
    return images, labels


def make_digit_dataset(per_class: int, seed: int = 0) -> LabeledDataset:
    """Normalised 32x32 LabeledDataset of synthetic digits."""
    raw, labels = make_digit_corpus(per_class, seed=seed)
    images = np.stack([normalize(raw[i]) for i in range(raw.shape[0])])
    return LabeledDataset(images, labels, {d: str(d) for d in range(10)})
