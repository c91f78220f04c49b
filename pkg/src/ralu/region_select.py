"""Edge-driven choice of which low-res patches to promote early."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DomainError, ShapeError
from .latent_grid import LatentGrid

DEFAULT_FOOTPRINT = 8
DEFAULT_BLUR_SIGMA = 1.4
DEFAULT_LOW = 0.1
DEFAULT_HIGH = 0.2


def tweedie_terminal(x_t, t: float, v):
    """Data-endpoint estimate ``x_t + (1 - t) v``; identity at ``t == 1``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if t == 1.0:
        return x_t.copy()
    if not 0.0 <= t < 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    return x_t + (1.0 - t) * np.asarray(v, dtype=np.float64)


class NormDecoder:
    """Channel l2-norm per cell, min-max scaled to [0, 1], replicated to FxF pixels."""

    name = "norm"

    def __init__(self, footprint: int = DEFAULT_FOOTPRINT):
        self.footprint = footprint

    def decode(self, grid: LatentGrid) -> np.ndarray:
        g = np.sqrt((grid.values**2).sum(axis=0))
        return _replicate(_minmax(g), self.footprint)


class AffineDecoder:
    """Gray level ``clip(w . x + bias, 0, 1)`` per cell, replicated to FxF pixels."""

    name = "affine"

    def __init__(self, weights, bias: float = 0.0, footprint: int = DEFAULT_FOOTPRINT):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = float(bias)
        self.footprint = footprint

    @classmethod
    def from_file(cls, path, footprint: int = DEFAULT_FOOTPRINT) -> "AffineDecoder":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(d["weights"], d.get("bias", 0.0), footprint)

    def decode(self, grid: LatentGrid) -> np.ndarray:
        if self.weights.shape != (grid.channels,):
            raise ShapeError(f"decoder expects {self.weights.size} channels, got {grid.channels}")
        g = np.tensordot(self.weights, grid.values, axes=1) + self.bias
        return _replicate(np.clip(g, 0.0, 1.0), self.footprint)


def _minmax(a):
    lo, hi = a.min(), a.max()
    if hi - lo <= 0:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def _replicate(a, f):
    return a.repeat(f, axis=0).repeat(f, axis=1)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_rows(img, k):
    r = len(k) // 2
    p = np.pad(img, ((0, 0), (r, r)), mode="reflect" if img.shape[1] > r else "edge")
    out = np.zeros_like(img)
    for i, w in enumerate(k):
        out += w * p[:, i:i + img.shape[1]]
    return out


def gaussian_blur(img, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return np.asarray(img, dtype=np.float64).copy()
    k = gaussian_kernel(sigma)
    return _convolve_rows(_convolve_rows(img, k).T, k).T


def sobel(img):
    """Sobel gradients (gx along columns, gy along rows) with edge-replicated borders."""
    p = np.pad(img, 1, mode="edge")
    tl, tc, tr = p[:-2, :-2], p[:-2, 1:-1], p[:-2, 2:]
    ml, mr = p[1:-1, :-2], p[1:-1, 2:]
    bl, bc, br = p[2:, :-2], p[2:, 1:-1], p[2:, 2:]
    gx = (tr + 2 * mr + br) - (tl + 2 * ml + bl)
    gy = (bl + 2 * bc + br) - (tl + 2 * tc + tr)
    return gx, gy


def non_maximum_suppression(mag, gx, gy):
    """Keep pixels that are local maxima along the quantised gradient direction."""
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(mag.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    p = np.pad(mag, 1, mode="constant")
    h, w = mag.shape

    def shifted(dr, dc):
        return p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]

    # (forward, backward) neighbours per sector; rows grow downward.
    offsets = {0: ((0, 1), (0, -1)), 1: ((1, 1), (-1, -1)), 2: ((1, 0), (-1, 0)), 3: ((1, -1), (-1, 1))}
    keep = np.zeros(mag.shape, dtype=bool)
    for sec, (fwd, bwd) in offsets.items():
        m = sector == sec
        keep |= m & (mag >= shifted(*fwd)) & (mag > shifted(*bwd))
    return np.where(keep & (mag > 0), mag, 0.0)


def hysteresis(mag, low: float, high: float) -> np.ndarray:
    weak = mag >= low
    strong = mag >= high
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(mag.shape, dtype=np.uint8)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return has_strong[labels].astype(np.uint8)


def canny(image, low_thresh: float = DEFAULT_LOW, high_thresh: float = DEFAULT_HIGH,
          blur_sigma: float = DEFAULT_BLUR_SIGMA) -> np.ndarray:
    """Binary edge map: Gaussian blur, Sobel, non-maximum suppression, hysteresis.

    Thresholds apply to the raw Sobel magnitude of a [0, 1] image.
    """
    if not 0.0 < low_thresh < high_thresh:
        raise DomainError(f"need 0 < low < high, got low={low_thresh}, high={high_thresh}")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ShapeError("canny expects a 2-D grayscale image")
    blurred = gaussian_blur(img, blur_sigma)
    gx, gy = sobel(blurred)
    mag = np.hypot(gx, gy)
    thin = non_maximum_suppression(mag, gx, gy)
    return hysteresis(thin, low_thresh, high_thresh)


@dataclass(frozen=True)
class EdgeScoreMap:
    base_height: int
    base_width: int
    scores: np.ndarray  # (base_height, base_width)
    selected: tuple[int, ...] = ()
    ratio: float = 0.0

    @property
    def n_patches(self) -> int:
        return self.base_height * self.base_width

    def rows(self):
        """(patch_row, patch_col, score) for each selected patch, in selection order."""
        flat = self.scores.ravel()
        return [(i // self.base_width, i % self.base_width, float(flat[i])) for i in self.selected]


def patch_scores(edge_map, base_shape, footprint: int = DEFAULT_FOOTPRINT) -> EdgeScoreMap:
    bh, bw = base_shape
    e = np.asarray(edge_map)
    if e.shape != (bh * footprint, bw * footprint):
        raise ShapeError(f"edge map {e.shape} does not match base {base_shape} x footprint {footprint}")
    s = e.reshape(bh, footprint, bw, footprint).sum(axis=(1, 3)).astype(np.float64)
    return EdgeScoreMap(bh, bw, s)


def topk_count(ratio: float, n: int) -> int:
    if not 0.0 <= ratio <= 1.0:
        raise DomainError(f"ratio must lie in [0, 1], got {ratio}")
    # Rounding guards against 0.3 * 1024 landing a hair above 307.2's ceiling.
    return min(n, int(math.ceil(round(ratio * n, 9))))


def select_topk(scores: EdgeScoreMap, ratio: float) -> EdgeScoreMap:
    """Highest-scoring ``ceil(ratio * P)`` patches; ties by ascending row-major index."""
    k = topk_count(ratio, scores.n_patches)
    flat = scores.scores.ravel()
    order = np.lexsort((np.arange(flat.size), -flat))
    return EdgeScoreMap(scores.base_height, scores.base_width, scores.scores,
                        tuple(int(i) for i in order[:k]), ratio)
