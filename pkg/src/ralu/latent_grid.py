"""Latent grids, mixed-resolution token sets and the nearest-neighbour covariance.

Values are stored channel-major: a grid of ``channels x height x width`` is a
float64 array of that shape. A :class:`TokenSet` is the flattened sequence
view a transformer backbone would see, with explicit positions per token.
LOW tokens are addressed in low-resolution coordinates, HIGH tokens in
high-resolution coordinates (parent = ``(row // 2, col // 2)``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ContractError, ShapeError

# Child offsets of one low-res patch, in the order children are emitted.
CHILD_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))
_DR = np.array([o[0] for o in CHILD_OFFSETS])
_DC = np.array([o[1] for o in CHILD_OFFSETS])


class Level(enum.IntEnum):
    LOW = 0
    HIGH = 1


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LatentGrid:
    values: np.ndarray
    level: Level = Level.LOW

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[None]
        if v.ndim != 3:
            raise ShapeError(f"latent values must be (channels, height, width), got {v.shape}")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "level", Level(self.level))

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, LatentGrid):
            return NotImplemented
        return self.level == other.level and np.array_equal(self.values, other.values)

    __hash__ = None


def upsample_nn(grid: LatentGrid) -> LatentGrid:
    if grid.level != Level.LOW:
        raise ContractError("upsample_nn expects a LOW grid")
    v = grid.values.repeat(2, axis=1).repeat(2, axis=2)
    return LatentGrid(v, Level.HIGH)


def downsample_avg(grid: LatentGrid) -> LatentGrid:
    c, h, w = grid.shape
    if h % 2 or w % 2:
        raise ShapeError(f"cannot block-average odd grid {h}x{w}")
    v = grid.values.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))
    return LatentGrid(v, Level.LOW)


@dataclass(frozen=True, eq=False)
class TokenSet:
    """Mixed-resolution token sequence over a low-res base grid.

    ``values`` has shape ``(T, channels)``; ``rows``, ``cols`` and ``levels``
    have length ``T``. Construction validates the coverage invariant: every
    high-res cell is written by exactly one token.
    """

    base_height: int
    base_width: int
    rows: np.ndarray
    cols: np.ndarray
    levels: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        levels = np.asarray(self.levels, dtype=np.uint8)
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or not (len(rows) == len(cols) == len(levels) == len(values)):
            raise ShapeError("token arrays must share length T and values must be (T, channels)")
        for name, arr in (("rows", rows), ("cols", cols), ("levels", levels)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "values", _frozen(values))
        self._check_coverage()

    def _check_coverage(self):
        hh, hw = 2 * self.base_height, 2 * self.base_width
        low = self.levels == Level.LOW
        hr = np.concatenate([(2 * self.rows[low, None] + _DR).ravel(), self.rows[~low]])
        hc = np.concatenate([(2 * self.cols[low, None] + _DC).ravel(), self.cols[~low]])
        if hr.size and (hr.min() < 0 or hc.min() < 0 or hr.max() >= hh or hc.max() >= hw):
            raise ContractError("token position outside the grid")
        writers = np.bincount(hr * hw + hc, minlength=hh * hw)
        if writers.size != hh * hw or not np.all(writers == 1):
            raise ContractError("coverage violated: each high-res cell needs exactly one writer")

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    @property
    def n_low_patches(self) -> int:
        return self.base_height * self.base_width

    def __len__(self) -> int:
        return len(self.values)

    @property
    def low_mask(self) -> np.ndarray:
        return self.levels == Level.LOW

    def entries(self) -> Iterator[tuple[int, int, Level, np.ndarray]]:
        for r, c, lv, v in zip(self.rows, self.cols, self.levels, self.values):
            yield int(r), int(c), Level(int(lv)), v

    def with_values(self, values) -> "TokenSet":
        return TokenSet(self.base_height, self.base_width, self.rows, self.cols, self.levels, values)

    @classmethod
    def from_grid(cls, grid: LatentGrid) -> "TokenSet":
        c, h, w = grid.shape
        r, q = np.divmod(np.arange(h * w), w)
        vals = grid.values.reshape(c, h * w).T
        if grid.level == Level.LOW:
            return cls(h, w, r, q, np.zeros(h * w, np.uint8), vals)
        if h % 2 or w % 2:
            raise ShapeError("HIGH grid must have even dimensions")
        return cls(h // 2, w // 2, r, q, np.ones(h * w, np.uint8), vals)

    def to_grid(self) -> LatentGrid:
        """Assemble onto the full HIGH grid (LOW tokens replicated 2x2)."""
        out = np.empty((self.channels, 2 * self.base_height, 2 * self.base_width))
        low = self.low_mask
        if low.any():
            hr = 2 * self.rows[low, None] + _DR
            hc = 2 * self.cols[low, None] + _DC
            out[:, hr, hc] = self.values[low].T[:, :, None]
        high = ~low
        out[:, self.rows[high], self.cols[high]] = self.values[high].T
        return LatentGrid(out, Level.HIGH)

    def to_low_grid(self) -> LatentGrid:
        if not self.low_mask.all():
            raise ContractError("to_low_grid requires an all-LOW token set")
        out = np.empty((self.channels, self.base_height, self.base_width))
        out[:, self.rows, self.cols] = self.values.T
        return LatentGrid(out, Level.LOW)

    def patch_index(self) -> np.ndarray:
        """Row-major low-res patch index of each token (its own or its parent's)."""
        low = self.low_mask
        pr = np.where(low, self.rows, self.rows // 2)
        pc = np.where(low, self.cols, self.cols // 2)
        return pr * self.base_width + pc


def upsample_selected(tokens: TokenSet, selection) -> TokenSet:
    """Promote the selected LOW patches to four HIGH children each.

    Untouched tokens keep their relative order; new children are appended
    grouped by parent in ascending patch index, children in ``CHILD_OFFSETS``
    order. Returns the new set; the promoted children occupy the last
    ``4 * len(selection)`` positions.
    """
    sel = np.unique(np.asarray(list(selection), dtype=np.int64))
    if sel.size == 0:
        return tokens
    if sel[0] < 0 or sel[-1] >= tokens.n_low_patches:
        raise ContractError("selected patch index out of range")
    low = tokens.low_mask
    lookup = np.full(tokens.n_low_patches, -1)
    lookup[tokens.patch_index()[low]] = np.flatnonzero(low)
    take = lookup[sel]
    if np.any(take < 0):
        raise ContractError(f"patches {sel[take < 0][:5].tolist()} are not LOW and cannot be upsampled")
    keep = np.ones(len(tokens), bool)
    keep[take] = False

    pr, pc = tokens.rows[take], tokens.cols[take]
    new_rows = (2 * pr[:, None] + _DR).ravel()
    new_cols = (2 * pc[:, None] + _DC).ravel()
    new_vals = np.repeat(tokens.values[take], 4, axis=0)
    return TokenSet(
        tokens.base_height,
        tokens.base_width,
        np.concatenate([tokens.rows[keep], new_rows]),
        np.concatenate([tokens.cols[keep], new_cols]),
        np.concatenate([tokens.levels[keep], np.ones(len(new_rows), np.uint8)]),
        np.concatenate([tokens.values[keep], new_vals]),
    )


@dataclass(frozen=True, eq=False)
class BlockCovariance:
    """The nearest-neighbour upsampling covariance as an operator.

    ``groups[i]`` is the sibling-group id of element ``i`` along the last
    axis; every group has exactly four members. Leading axes (channels) are
    treated independently.
    """

    groups: np.ndarray
    block_size: int = 4

    def __post_init__(self):
        g = np.asarray(self.groups, dtype=np.int64)
        counts = np.bincount(g)
        if np.any(counts[counts > 0] != self.block_size):
            raise ShapeError("every sibling group must have exactly 4 members")
        g.flags.writeable = False
        object.__setattr__(self, "groups", g)
        _, inverse = np.unique(g, return_inverse=True)
        order = np.argsort(inverse, kind="stable")
        object.__setattr__(self, "_inverse", inverse)
        object.__setattr__(self, "_order", order)

    @property
    def size(self) -> int:
        return len(self.groups)

    @classmethod
    def for_grid(cls, height: int, width: int) -> "BlockCovariance":
        """Layout of a flattened (row-major) HIGH grid of the given size."""
        if height % 2 or width % 2:
            raise ShapeError("HIGH grid must have even dimensions")
        r, c = np.divmod(np.arange(height * width), width)
        return cls((r // 2) * (width // 2) + c // 2)

    @classmethod
    def contiguous(cls, n: int) -> "BlockCovariance":
        """Consecutive quadruples form the sibling groups."""
        if n % 4:
            raise ShapeError(f"length {n} is not divisible by 4")
        return cls(np.arange(n) // 4)

    def dense(self) -> np.ndarray:
        return (self.groups[:, None] == self.groups[None, :]).astype(np.float64)


def apply_sigma(x, cov: BlockCovariance) -> np.ndarray:
    """Return ``Sigma @ x`` along the last axis: block sums broadcast back."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != cov.size:
        raise ShapeError(f"last axis {x.shape[-1]} does not match layout size {cov.size}")
    flat = x.reshape(-1, cov.size)[:, cov._order]
    sums = np.add.reduceat(flat, np.arange(0, cov.size, cov.block_size), axis=1)
    return sums[:, cov._inverse].reshape(x.shape)
