"""Multilevel adaptive Tetrolet analysis and exact synthesis.

Each level partitions the current low-pass plane into 4x4 blocks and, per
block, picks the tetromino covering whose three detail responses have the
smallest l1 cost (strict mode) or, within a tolerance ``lam`` of that
minimum, the covering used most often so far in this image (relaxed mode,
which lowers the entropy of the covering-index stream).  The four low-pass
values of a block are rearranged into a 2x2 block of the next plane, so the
pyramid stores exactly N^2 coefficients plus one covering index per block.

Per-block analysis is expressed through a precomputed (117, 16, 16) stack
of orthonormal matrices, one per covering, mapping the block's 16 pixels to
its 16 coefficients; synthesis is the per-block transpose, which makes
reconstruction exact to floating-point round-off.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tetromino import (
    BLOCK_SIDE,
    CATALOG_SIZE,
    HAAR_MATRIX,
    enumerate_coverings,
    linear_index,
)


class CorruptPyramidError(ValueError):
    """A pyramid's covering map or payload is structurally invalid."""


@dataclass(frozen=True)
class CoveringMode:
    """Covering selection rule: ``strict`` argmin or ``relaxed`` within ``lam``."""

    kind: str = "relaxed"
    lam: float = 25.0

    def __post_init__(self):
        if self.kind not in ("strict", "relaxed"):
            raise ValueError(f"unknown covering mode {self.kind!r}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError(f"tolerance lam must be finite and >= 0, got {self.lam}")


STRICT = CoveringMode("strict", 0.0)
RELAXED_DEFAULT = CoveringMode("relaxed", 25.0)


@dataclass(frozen=True)
class ShrinkageConfig:
    """Optional post-transform shrinkage of high-pass coefficients."""

    mode: str = "none"
    threshold: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "hard-positive-part"):
            raise ValueError(f"unknown shrinkage mode {self.mode!r}")
        if not (math.isfinite(self.threshold) and self.threshold >= 0):
            raise ValueError(f"threshold must be finite and >= 0, got {self.threshold}")


@dataclass(frozen=True)
class TransformConfig:
    """Settings for the image -> feature-vector stage of the pipeline."""

    levels: int | None = None  # None -> log2(N) - 1
    mode: CoveringMode = RELAXED_DEFAULT
    shrinkage: ShrinkageConfig = ShrinkageConfig()


@dataclass
class PyramidLevel:
    highpass: np.ndarray  # (3, s, s) detail planes
    covering_map: np.ndarray  # (s//2, s//2) chosen catalog indices in 1..117


@dataclass
class TetroletPyramid:
    levels: list[PyramidLevel]  # finest (level 1) first
    final_lowpass: np.ndarray
    mode: CoveringMode

    @property
    def levels_count(self) -> int:
        return len(self.levels)

    @property
    def image_side(self) -> int:
        return self.levels[0].highpass.shape[-1] * 2

    def coefficient_count(self) -> int:
        return self.final_lowpass.size + sum(lv.highpass.size for lv in self.levels)

    def covering_indices(self) -> np.ndarray:
        """All stored covering indices, level by level in raster order."""
        return np.concatenate([lv.covering_map.ravel() for lv in self.levels])


@lru_cache(maxsize=1)
def analysis_tensor() -> np.ndarray:
    """(117, 16, 16) per-covering block analysis matrices.

    Entry ``[c-1, l*4 + alpha, p]`` is the Haar weight applied to block
    pixel ``p`` (linear index j*4+i) when computing coefficient ``alpha``
    of row ``l`` under covering ``c``; row l=0 gives the low-pass values.
    Each 16x16 slice is orthogonal.
    """
    catalog = enumerate_coverings()
    tensor = np.zeros((CATALOG_SIZE, 16, 16))
    for ci, cov in enumerate(catalog):
        for alpha, tet in enumerate(cov.tetrominoes):
            for gamma, cell in enumerate(tet.cells):
                p = linear_index(cell, BLOCK_SIDE)
                for l in range(4):
                    tensor[ci, l * 4 + alpha, p] = HAAR_MATRIX[l, gamma]
    tensor.setflags(write=False)
    return tensor


def _block_vector(block: np.ndarray) -> np.ndarray:
    # Pixel (i, j) goes to position j*4 + i, matching the linear index.
    return block.T.ravel()


def covering_costs(block: np.ndarray) -> np.ndarray:
    """l1 detail cost of every covering for one 4x4 block, indexed by c-1."""
    block = np.asarray(block, dtype=float)
    if block.shape != (4, 4):
        raise ValueError(f"expected a 4x4 block, got shape {block.shape}")
    if not np.all(np.isfinite(block)):
        raise ValueError("block contains non-finite values")
    coeffs = analysis_tensor() @ _block_vector(block)
    return np.abs(coeffs[:, 4:]).sum(axis=1)


def analyze_block(
    block: np.ndarray,
    mode: CoveringMode = STRICT,
    freq: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Transform one 4x4 block under its selected covering.

    Returns ``(lowpass, highpass, c)`` where ``lowpass`` has 4 values,
    ``highpass`` is (3, 4) and ``c`` is the chosen 1-based covering index.
    In relaxed mode ``freq`` must hold the per-covering choice counts of
    previously processed blocks (shape (117,)); the caller maintains it.
    """
    block = np.asarray(block, dtype=float)
    if block.shape != (4, 4):
        raise ValueError(f"expected a 4x4 block, got shape {block.shape}")
    if not np.all(np.isfinite(block)):
        raise ValueError("block contains non-finite values")

    coeffs = analysis_tensor() @ _block_vector(block)
    costs = np.abs(coeffs[:, 4:]).sum(axis=1)
    if mode.kind == "strict":
        ci = int(costs.argmin())
    else:
        if freq is None:
            freq = np.zeros(CATALOG_SIZE)
        candidates = np.flatnonzero(costs <= costs.min() + mode.lam)
        ci = int(candidates[np.argmax(freq[candidates])])
    chosen = coeffs[ci]
    return chosen[:4].copy(), chosen[4:].reshape(3, 4).copy(), ci + 1


def _to_quads(plane: np.ndarray) -> np.ndarray:
    """(s, s) plane -> (s//4, s//4, 16) block vectors with j*4+i pixel layout."""
    nb = plane.shape[0] // 4
    return plane.reshape(nb, 4, nb, 4).transpose(0, 2, 3, 1).reshape(nb, nb, 16)


def _from_quads(blocks: np.ndarray) -> np.ndarray:
    nb = blocks.shape[0]
    return blocks.reshape(nb, nb, 4, 4).transpose(0, 3, 1, 2).reshape(4 * nb, 4 * nb)


def _spread_2x2(values: np.ndarray) -> np.ndarray:
    """(nb, nb, 4) per-block values -> (2nb, 2nb) plane, alpha -> (a%2, a//2)."""
    nb = values.shape[0]
    out = np.empty((2 * nb, 2 * nb))
    out[0::2, 0::2] = values[..., 0]
    out[1::2, 0::2] = values[..., 1]
    out[0::2, 1::2] = values[..., 2]
    out[1::2, 1::2] = values[..., 3]
    return out


def _gather_2x2(plane: np.ndarray) -> np.ndarray:
    return np.stack(
        [plane[0::2, 0::2], plane[1::2, 0::2], plane[0::2, 1::2], plane[1::2, 1::2]],
        axis=-1,
    )


def _validate_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"expected a square image, got shape {image.shape}")
    n = image.shape[0]
    if n < 4 or n & (n - 1):
        raise ValueError(f"image side must be a power of two >= 4, got {n}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    return image


def max_levels(n: int) -> int:
    return int(math.log2(n)) - 1


def forward(
    image: np.ndarray,
    levels: int | None = None,
    mode: CoveringMode = STRICT,
) -> TetroletPyramid:
    """Multilevel Tetrolet decomposition of a square power-of-two image."""
    image = _validate_image(image)
    n = image.shape[0]
    if levels is None:
        levels = max_levels(n)
    if not (1 <= levels <= max_levels(n)):
        raise ValueError(
            f"levels must be in 1..{max_levels(n)} for a {n}x{n} image, got {levels}"
        )

    tensor = analysis_tensor()
    freq = np.zeros(CATALOG_SIZE, dtype=np.int64)
    current = image
    out_levels: list[PyramidLevel] = []
    for _ in range(levels):
        nb = current.shape[0] // 4
        blocks = _to_quads(current)
        coeffs = np.einsum("ckp,xyp->xyck", tensor, blocks, optimize=True)
        costs = np.abs(coeffs[..., 4:]).sum(axis=-1)

        if mode.kind == "strict":
            cmap = costs.argmin(axis=-1)
        else:
            cmap = np.empty((nb, nb), dtype=np.int64)
            mins = costs.min(axis=-1)
            # Raster order is part of the relaxed-mode contract: the
            # frequency table accumulates over already-processed blocks.
            for bi in range(nb):
                for bj in range(nb):
                    cand = np.flatnonzero(costs[bi, bj] <= mins[bi, bj] + mode.lam)
                    pick = cand[np.argmax(freq[cand])]
                    freq[pick] += 1
                    cmap[bi, bj] = pick

        chosen = np.take_along_axis(coeffs, cmap[..., None, None], axis=2)[:, :, 0, :]
        lowpass = _spread_2x2(chosen[..., :4])
        highpass = np.stack(
            [_spread_2x2(chosen[..., 4 + 4 * l : 8 + 4 * l]) for l in range(3)]
        )
        out_levels.append(
            PyramidLevel(highpass=highpass, covering_map=(cmap + 1).astype(np.int64))
        )
        current = lowpass
    return TetroletPyramid(levels=out_levels, final_lowpass=current, mode=mode)


def inverse(pyramid: TetroletPyramid) -> np.ndarray:
    """Exact synthesis; inverts :func:`forward` up to floating-point error."""
    tensor = analysis_tensor()
    current = pyramid.final_lowpass
    for level in reversed(pyramid.levels):
        cmap = np.asarray(level.covering_map)
        if cmap.size == 0 or cmap.min() < 1 or cmap.max() > CATALOG_SIZE:
            raise CorruptPyramidError(
                f"covering indices must lie in 1..{CATALOG_SIZE}"
            )
        lowpass = _gather_2x2(current)
        details = [_gather_2x2(level.highpass[l]) for l in range(3)]
        coeffs = np.concatenate([lowpass] + details, axis=-1)
        blocks = np.einsum("xykp,xyk->xyp", tensor[cmap - 1], coeffs, optimize=True)
        current = _from_quads(blocks)
    return current


def shrink(pyramid: TetroletPyramid, config: ShrinkageConfig) -> TetroletPyramid:
    """Apply the configured shrinkage to high-pass coefficients.

    ``hard-positive-part`` maps each detail coefficient w to
    sign(w) * (|w| - threshold)_+; low-pass values are untouched.
    """
    if config.mode == "none":
        new_levels = [
            PyramidLevel(lv.highpass.copy(), lv.covering_map.copy())
            for lv in pyramid.levels
        ]
        return TetroletPyramid(new_levels, pyramid.final_lowpass.copy(), pyramid.mode)
    t = config.threshold
    new_levels = []
    for lv in pyramid.levels:
        w = lv.highpass
        shrunk = np.sign(w) * np.maximum(np.abs(w) - t, 0.0)
        new_levels.append(PyramidLevel(shrunk, lv.covering_map.copy()))
    return TetroletPyramid(new_levels, pyramid.final_lowpass.copy(), pyramid.mode)


def flatten(pyramid: TetroletPyramid) -> np.ndarray:
    """Fixed-order vectorisation: final low-pass first, then detail planes
    from coarsest to finest level, each plane in raster order.  Length N^2."""
    parts = [pyramid.final_lowpass.ravel()]
    for level in reversed(pyramid.levels):
        for l in range(3):
            parts.append(level.highpass[l].ravel())
    return np.concatenate(parts)


def transform_image(image: np.ndarray, config: TransformConfig) -> TetroletPyramid:
    pyramid = forward(image, config.levels, config.mode)
    if config.shrinkage.mode != "none":
        pyramid = shrink(pyramid, config.shrinkage)
    return pyramid


def feature_vector(image: np.ndarray, config: TransformConfig) -> np.ndarray:
    return flatten(transform_image(image, config))


def bits_per_pixel(values) -> float:
    """Empirical Shannon entropy (bits/symbol) of a multiset of symbols."""
    arr = np.asarray(values).ravel()
    if arr.size == 0:
        raise ValueError("cannot compute entropy of an empty symbol set")
    _, counts = np.unique(arr, return_counts=True)
    p = counts / arr.size
    return max(0.0, float(-(p * np.log2(p)).sum()))


def side_info_cost(n: int, levels: int) -> float:
    """Number of covering indices stored for an n x n image at this depth."""
    if n < 4 or n & (n - 1):
        raise ValueError(f"image side must be a power of two >= 4, got {n}")
    if not (1 <= levels <= max_levels(n)):
        raise ValueError(
            f"levels must be in 1..{max_levels(n)} for a {n}x{n} image, got {levels}"
        )
    return (n * n / 12.0) * (1.0 - 4.0 ** (-levels))


_MODE_CODES = {"strict": 0.0, "relaxed": 1.0}


def serialize_pyramid(pyramid: TetroletPyramid) -> bytes:
    """Flat little-endian layout: header doubles (N, J, mode, lam), then the
    covering maps level by level as u8, then coefficients in flatten order."""
    n = pyramid.image_side
    j = pyramid.levels_count
    out = bytearray()
    out += struct.pack(
        "<4d", float(n), float(j), _MODE_CODES[pyramid.mode.kind], pyramid.mode.lam
    )
    for level in pyramid.levels:
        out += level.covering_map.astype(np.uint8).tobytes()
    coeffs = flatten(pyramid)
    out += struct.pack(f"<{coeffs.size}d", *coeffs)
    return bytes(out)


def deserialize_pyramid(data: bytes) -> TetroletPyramid:
    if len(data) < 32:
        raise CorruptPyramidError(f"truncated header: {len(data)} bytes")
    n_f, j_f, mode_code, lam = struct.unpack_from("<4d", data, 0)
    n, j = int(n_f), int(j_f)
    if n < 4 or n & (n - 1) or not (1 <= j <= max_levels(n)):
        raise CorruptPyramidError(f"invalid header: N={n_f}, J={j_f}")
    kind = {0.0: "strict", 1.0: "relaxed"}.get(mode_code)
    if kind is None:
        raise CorruptPyramidError(f"unknown mode code {mode_code}")
    mode = CoveringMode(kind, lam)

    offset = 32
    maps = []
    for m in range(1, j + 1):
        nb = n // (2 ** (m + 1))
        count = nb * nb
        if len(data) < offset + count:
            raise CorruptPyramidError(f"truncated covering map at byte {offset}")
        raw = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
        if raw.min() < 1 or raw.max() > CATALOG_SIZE:
            raise CorruptPyramidError(
                f"covering indices must lie in 1..{CATALOG_SIZE}"
            )
        maps.append(raw.reshape(nb, nb).astype(np.int64))
        offset += count

    expected = n * n
    if len(data) != offset + 8 * expected:
        raise CorruptPyramidError(
            f"coefficient payload mismatch at byte {offset}: "
            f"expected {8 * expected} bytes, file has {len(data) - offset}"
        )
    coeffs = np.frombuffer(data, dtype="<f8", count=expected, offset=offset)

    side = n >> j
    final_lowpass = coeffs[: side * side].reshape(side, side).copy()
    pos = side * side
    levels: list[PyramidLevel | None] = [None] * j
    for m in range(j, 0, -1):
        s = n >> m
        planes = []
        for _ in range(3):
            planes.append(coeffs[pos : pos + s * s].reshape(s, s).copy())
            pos += s * s
        levels[m - 1] = PyramidLevel(np.stack(planes), maps[m - 1])
    return TetroletPyramid(levels=list(levels), final_lowpass=final_lowpass, mode=mode)
