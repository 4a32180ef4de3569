"""Tetromino combinatorics on the 4x4 block and the Haar analysis basis.

A tetromino is a set of four grid cells that is connected under the
four-neighborhood relation.  There are exactly 117 ways to partition a
4x4 block into four disjoint tetrominoes; :func:`enumerate_coverings`
produces them in a fixed canonical order so that covering indices are
stable across runs and machines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

BLOCK_SIDE = 4
BLOCK_CELLS = BLOCK_SIDE * BLOCK_SIDE
CATALOG_SIZE = 117

# Orthonormal 4x4 Haar analysis matrix.  Row 0 is the constant low-pass
# row; rows 1-3 carry the detail responses.  Unit-norm rows make the
# block transform orthogonal, so synthesis is the plain transpose and
# coefficient energy equals pixel energy.
HAAR_MATRIX = 0.5 * np.array(
    [
        [1.0, 1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0],
        [1.0, 1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0, 1.0],
    ]
)
HAAR_MATRIX.setflags(write=False)


def four_neighborhood(idx: tuple[int, int], n: int) -> set[tuple[int, int]]:
    """In-grid four-neighbours of cell ``idx`` in an ``n`` x ``n`` grid.

    Off-grid neighbours are dropped rather than reported, so corner and
    edge cells return two or three cells.
    """
    i, j = idx
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"cell {idx!r} lies outside the {n}x{n} grid")
    candidates = ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1))
    return {(a, b) for a, b in candidates if 0 <= a < n and 0 <= b < n}


def linear_index(idx: tuple[int, int], n: int) -> int:
    """Column-major linearisation ``(i, j) -> j*n + i``; bijective on the grid."""
    i, j = idx
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"cell {idx!r} lies outside the {n}x{n} grid")
    return j * n + i


def haar_coefficient(l: int, gamma: int) -> float:
    """Entry ``[l, gamma]`` of the orthonormal 4x4 Haar analysis matrix."""
    if not (0 <= l <= 3 and 0 <= gamma <= 3):
        raise ValueError(f"Haar indices must be in 0..3, got ({l}, {gamma})")
    return float(HAAR_MATRIX[l, gamma])


def _is_connected(cells: tuple[tuple[int, int], ...]) -> bool:
    remaining = set(cells)
    stack = [cells[0]]
    remaining.discard(cells[0])
    while stack:
        cur = stack.pop()
        for nb in four_neighborhood(cur, BLOCK_SIDE):
            if nb in remaining:
                remaining.discard(nb)
                stack.append(nb)
    return not remaining


@dataclass(frozen=True)
class Tetromino:
    """Four 4-connected cells of the 4x4 block.

    ``cells`` is kept sorted by ascending linear index; the position of a
    cell in the tuple is its pixel order, i.e. the Haar column used for it.
    """

    cells: tuple[tuple[int, int], ...]

    def __post_init__(self):
        cells = tuple(tuple(c) for c in self.cells)
        if len(cells) != 4 or len(set(cells)) != 4:
            raise ValueError("a tetromino consists of exactly 4 distinct cells")
        ordered = tuple(sorted(cells, key=lambda c: linear_index(c, BLOCK_SIDE)))
        if not _is_connected(ordered):
            raise ValueError(f"cells {ordered!r} are not 4-connected")
        object.__setattr__(self, "cells", ordered)

    def pixel_order(self, cell: tuple[int, int]) -> int:
        """Position of ``cell`` in the fixed cell ordering (a bijection onto 0..3)."""
        return self.cells.index(tuple(cell))

    @property
    def min_linear_index(self) -> int:
        return linear_index(self.cells[0], BLOCK_SIDE)


@dataclass(frozen=True)
class Covering:
    """A partition of the 4x4 block into four disjoint tetrominoes.

    Tetrominoes are kept sorted by their minimum linear index.
    """

    tetrominoes: tuple[Tetromino, ...]

    def __post_init__(self):
        if len(self.tetrominoes) != 4:
            raise ValueError("a covering consists of exactly 4 tetrominoes")
        all_cells = [c for t in self.tetrominoes for c in t.cells]
        if len(set(all_cells)) != BLOCK_CELLS:
            raise ValueError("tetrominoes must partition the 4x4 block")
        ordered = tuple(sorted(self.tetrominoes, key=lambda t: t.min_linear_index))
        object.__setattr__(self, "tetrominoes", ordered)

    def sort_key(self) -> tuple[tuple[int, ...], ...]:
        return tuple(
            tuple(linear_index(c, BLOCK_SIDE) for c in t.cells)
            for t in self.tetrominoes
        )

    def cell_partition(self) -> frozenset[frozenset[tuple[int, int]]]:
        return frozenset(frozenset(t.cells) for t in self.tetrominoes)


@dataclass(frozen=True)
class CoveringCatalog:
    """All 117 coverings in canonical order; index ``c`` is 1-based."""

    coverings: tuple[Covering, ...]

    def __post_init__(self):
        if len(self.coverings) != CATALOG_SIZE:
            raise ValueError(
                f"catalog must hold {CATALOG_SIZE} coverings, got {len(self.coverings)}"
            )

    def __len__(self) -> int:
        return len(self.coverings)

    def __iter__(self):
        return iter(self.coverings)

    def covering(self, c: int) -> Covering:
        """Covering for 1-based index ``c``."""
        if not (1 <= c <= len(self.coverings)):
            raise ValueError(f"covering index {c} outside 1..{len(self.coverings)}")
        return self.coverings[c - 1]


def _connected_four_cell_subsets() -> list[frozenset[tuple[int, int]]]:
    cells = [(i, j) for i in range(BLOCK_SIDE) for j in range(BLOCK_SIDE)]
    subsets = []
    for combo in itertools.combinations(cells, 4):
        if _is_connected(combo):
            subsets.append(frozenset(combo))
    return subsets


@lru_cache(maxsize=1)
def enumerate_coverings() -> CoveringCatalog:
    """Enumerate all partitions of the 4x4 block into four tetrominoes.

    Candidate tetrominoes are the 4-connected 4-cell subsets of the block;
    an exact-cover search always extends the lowest uncovered cell, so each
    partition is found exactly once.  The result is sorted lexicographically
    by the nested tuple of per-tetromino sorted linear indices.
    """
    candidates = _connected_four_cell_subsets()
    by_anchor: dict[int, list[frozenset]] = {}
    for sub in candidates:
        anchor = min(linear_index(c, BLOCK_SIDE) for c in sub)
        by_anchor.setdefault(anchor, []).append(sub)

    all_cells = frozenset((i, j) for i in range(BLOCK_SIDE) for j in range(BLOCK_SIDE))
    partitions: list[tuple[frozenset, ...]] = []

    def extend(free: frozenset, chosen: tuple[frozenset, ...]):
        if not free:
            partitions.append(chosen)
            return
        anchor = min(linear_index(c, BLOCK_SIDE) for c in free)
        for sub in by_anchor.get(anchor, ()):
            if sub <= free:
                extend(free - sub, chosen + (sub,))

    extend(all_cells, ())

    coverings = [
        Covering(tuple(Tetromino(tuple(sub)) for sub in parts)) for parts in partitions
    ]
    coverings.sort(key=Covering.sort_key)
    return CoveringCatalog(tuple(coverings))
