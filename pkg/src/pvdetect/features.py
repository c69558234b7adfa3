"""Per-pixel window statistics computed from integral images.

Each pixel is described by the mean and population variance of every RGB
channel inside small square windows placed on concentric rings around it.
With the default 3x3 window and rings at radii 2 and 4 this yields
9*6 + 9*6 - 6 = 102 features per pixel (the two rings share their center
window, which is emitted once).

Window coordinates are clamped (edge-replicated) into the tile so every
pixel, including borders, has a full feature vector.  All sums are exact
64-bit integers; only the final mean/variance division is floating point,
so the whole-image path and the single-pixel path agree bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .imagery import ImageTile


@dataclass(frozen=True)
class FeatureSpec:
    """Geometry of the feature extractor: window side and ring radii."""

    window_side: int = 3
    ring_radii: tuple[int, ...] = (2, 4)

    def __post_init__(self):
        object.__setattr__(self, "ring_radii", tuple(int(r) for r in self.ring_radii))
        if self.window_side < 3 or self.window_side % 2 == 0:
            raise ConfigError(f"window_side must be odd and >= 3, got {self.window_side}")
        if not self.ring_radii:
            raise ConfigError("at least one ring radius is required")
        if any(r < 1 for r in self.ring_radii):
            raise ConfigError(f"ring radii must be >= 1, got {self.ring_radii}")
        if any(b <= a for a, b in zip(self.ring_radii, self.ring_radii[1:])):
            raise ConfigError(f"ring radii must be strictly increasing: {self.ring_radii}")

    @property
    def feature_count(self) -> int:
        """6 features per window; the shared (0,0) window counts once."""
        n_rings = len(self.ring_radii)
        return 9 * 6 * n_rings - 6 * (n_rings - 1)

    def window_offsets(self) -> list[tuple[int, int]]:
        """All window-center offsets, deduplicated, in canonical order."""
        offsets = list(ring_offsets(self.ring_radii[0]))
        for r in self.ring_radii[1:]:
            offsets.extend(ring_offsets(r)[1:])  # drop the duplicate (0, 0)
        return offsets

    def fingerprint(self) -> str:
        return f"w{self.window_side}:r" + ",".join(str(r) for r in self.ring_radii)


def ring_offsets(r: int) -> list[tuple[int, int]]:
    """The 9 window-center offsets of the ring with radius r.

    Emitted x-major over the sequence (0, -r, r), so the center window
    (0, 0) always comes first.
    """
    if r < 1:
        raise ConfigError(f"ring radius must be >= 1, got {r}")
    return [(x, y) for x in (0, -r, r) for y in (0, -r, r)]


@dataclass(frozen=True)
class IntegralImage:
    """Exclusive prefix-sum tables of the samples and squared samples.

    Entry [y, x, c] holds the sum over rows [0, y) and columns [0, x) of
    channel c; row and column 0 are therefore all zeros.
    """

    sums: np.ndarray  # (height+1, width+1, 3) int64
    sq_sums: np.ndarray  # (height+1, width+1, 3) int64

    @property
    def width(self) -> int:
        return self.sums.shape[1] - 1

    @property
    def height(self) -> int:
        return self.sums.shape[0] - 1


def build_integral(tile: ImageTile) -> IntegralImage:
    """Exact integer prefix-sum tables for a tile."""
    px = tile.pixels.astype(np.int64)
    sums = np.zeros((tile.height + 1, tile.width + 1, 3), dtype=np.int64)
    sq_sums = np.zeros_like(sums)
    np.cumsum(np.cumsum(px, axis=0), axis=1, out=sums[1:, 1:])
    np.cumsum(np.cumsum(px * px, axis=0), axis=1, out=sq_sums[1:, 1:])
    return IntegralImage(sums, sq_sums)


def rect_sum(table: np.ndarray, x0: int, x1: int, y0: int, y1: int) -> np.ndarray:
    """Per-channel sum over inclusive pixel rectangle [x0..x1] x [y0..y1]."""
    if x0 > x1 or y0 > y1:
        return np.zeros(table.shape[2], dtype=np.int64)
    return (
        table[y1 + 1, x1 + 1]
        - table[y0, x1 + 1]
        - table[y1 + 1, x0]
        + table[y0, x0]
    )


def _clamp_counts(lo: int, hi: int, size: int, limit: int) -> tuple[int, int, int, int]:
    """Split window cells lo..hi into (below-0 count, in-range a..b, above count)."""
    n_low = min(max(-lo, 0), size)
    n_high = min(max(hi - (limit - 1), 0), size)
    return n_low, max(lo, 0), min(hi, limit - 1), n_high


def _window_sums(
    table: np.ndarray, cx: int, cy: int, side: int, width: int, height: int
) -> np.ndarray:
    """Sum over a side x side window at (cx, cy) with edge-clamped cells.

    Cells outside the tile are replicated from the nearest border pixel,
    which turns into integer weights on the border rows/columns.
    """
    h = side // 2
    nlx, ax, bx, nhx = _clamp_counts(cx - h, cx + h, side, width)
    nly, ay, by, nhy = _clamp_counts(cy - h, cy + h, side, height)
    total = rect_sum(table, ax, bx, ay, by)
    if nlx:
        total = total + nlx * rect_sum(table, 0, 0, ay, by)
    if nhx:
        total = total + nhx * rect_sum(table, width - 1, width - 1, ay, by)
    if nly:
        total = total + nly * rect_sum(table, ax, bx, 0, 0)
    if nhy:
        total = total + nhy * rect_sum(table, ax, bx, height - 1, height - 1)
    if nlx and nly:
        total = total + nlx * nly * rect_sum(table, 0, 0, 0, 0)
    if nlx and nhy:
        total = total + nlx * nhy * rect_sum(table, 0, 0, height - 1, height - 1)
    if nhx and nly:
        total = total + nhx * nly * rect_sum(table, width - 1, width - 1, 0, 0)
    if nhx and nhy:
        total = total + nhx * nhy * rect_sum(
            table, width - 1, width - 1, height - 1, height - 1
        )
    return total


def window_stats(
    integral: IntegralImage, center_x: int, center_y: int, window_side: int = 3
) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (mean, variance) of the window centered at (center_x, center_y).

    The center may lie anywhere, including outside the tile; cells are
    clamped into the tile.  Variance is the population variance over
    window_side**2 cells, clamped to zero when rounding drives it negative.
    """
    if window_side < 1 or window_side % 2 == 0:
        raise ConfigError(f"window_side must be odd and >= 1, got {window_side}")
    w, h = integral.width, integral.height
    n = window_side * window_side
    s = _window_sums(integral.sums, center_x, center_y, window_side, w, h)
    ss = _window_sums(integral.sq_sums, center_x, center_y, window_side, w, h)
    mean = s / n
    variance = np.maximum(ss / n - mean * mean, 0.0)
    return mean, variance


def extract_pixel_features(
    integral: IntegralImage, spec: FeatureSpec, x: int, y: int
) -> np.ndarray:
    """Feature vector at pixel (x, y): per window (mR, mG, mB, vR, vG, vB)."""
    if not (0 <= x < integral.width and 0 <= y < integral.height):
        raise ValueError(f"pixel ({x}, {y}) outside tile")
    offsets = spec.window_offsets()
    out = np.empty(6 * len(offsets))
    for k, (dx, dy) in enumerate(offsets):
        mean, variance = window_stats(integral, x + dx, y + dy, spec.window_side)
        out[6 * k : 6 * k + 3] = mean
        out[6 * k + 3 : 6 * k + 6] = variance
    return out


def extract_feature_rows(
    tile: ImageTile, spec: FeatureSpec, row_start: int, row_stop: int
) -> np.ndarray:
    """Feature image rows [row_start, row_stop) as a (rows, width, M) array.

    Bit-identical to calling extract_pixel_features at every pixel: the
    tile is edge-padded so every clamped window becomes a plain rectangle
    of the padded integral image, and the integer sums match the weighted
    border arithmetic of the single-pixel path exactly.
    """
    if not 0 <= row_start < row_stop <= tile.height:
        raise ValueError(f"bad row range [{row_start}, {row_stop})")
    half = spec.window_side // 2
    pad = max(spec.ring_radii) + half
    height, width = row_stop - row_start, tile.width

    top = min(pad, row_start)
    bottom = min(pad, tile.height - row_stop)
    core = tile.pixels[row_start - top : row_stop + bottom]
    padded = np.pad(
        core,
        ((pad - top, pad - bottom), (pad, pad), (0, 0)),
        mode="edge",
    ).astype(np.int64)
    sums = np.zeros(
        (padded.shape[0] + 1, padded.shape[1] + 1, 3), dtype=np.int64
    )
    sq_sums = np.zeros_like(sums)
    np.cumsum(np.cumsum(padded, axis=0), axis=1, out=sums[1:, 1:])
    np.cumsum(np.cumsum(padded * padded, axis=0), axis=1, out=sq_sums[1:, 1:])

    n = spec.window_side * spec.window_side
    offsets = spec.window_offsets()
    out = np.empty((height, width, 6 * len(offsets)))
    for k, (dx, dy) in enumerate(offsets):
        u0, u1 = dx - half + pad, dx + half + pad
        v0, v1 = dy - half + pad, dy + half + pad
        s = (
            sums[v1 + 1 : v1 + 1 + height, u1 + 1 : u1 + 1 + width]
            - sums[v0 : v0 + height, u1 + 1 : u1 + 1 + width]
            - sums[v1 + 1 : v1 + 1 + height, u0 : u0 + width]
            + sums[v0 : v0 + height, u0 : u0 + width]
        )
        ss = (
            sq_sums[v1 + 1 : v1 + 1 + height, u1 + 1 : u1 + 1 + width]
            - sq_sums[v0 : v0 + height, u1 + 1 : u1 + 1 + width]
            - sq_sums[v1 + 1 : v1 + 1 + height, u0 : u0 + width]
            + sq_sums[v0 : v0 + height, u0 : u0 + width]
        )
        mean = s / n
        out[:, :, 6 * k : 6 * k + 3] = mean
        out[:, :, 6 * k + 3 : 6 * k + 6] = np.maximum(ss / n - mean * mean, 0.0)
    return out


def extract_feature_image(tile: ImageTile, spec: FeatureSpec) -> np.ndarray:
    """The full (height, width, M) feature image of a tile."""
    return extract_feature_rows(tile, spec, 0, tile.height)
