"""Grayscale X-ray preprocessing: background normalisation, CLAHE, rescale, augmentation.

Images are 2-D ``uint8`` numpy arrays indexed ``[row, column]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Sequence, Tuple

import numpy as np

from .geometry import BBox, hflip

DARK = "dark"
LIGHT = "light"
TARGET_SIZE = 800


class PreprocessError(ValueError):
    pass


@dataclass(frozen=True)
class ClaheParams:
    grid: Tuple[int, int] = (11, 11)  # (tiles_x, tiles_y)
    clip_limit: float = 7.0

    def __post_init__(self):
        if len(self.grid) != 2 or min(self.grid) < 1:
            raise PreprocessError(f"tile grid must be two positive integers, got {self.grid}")
        if not self.clip_limit > 0:
            raise PreprocessError(f"clip_limit must be positive, got {self.clip_limit}")


@dataclass(frozen=True)
class AugmentParams:
    flip_probability: float = 0.5
    brightness_delta: Tuple[float, float] = (-25.5, 25.5)
    contrast_factor: Tuple[float, float] = (0.8, 1.2)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise PreprocessError(f"flip_probability must lie in [0, 1], got {self.flip_probability}")
        lo, hi = self.contrast_factor
        if not 0.0 < lo <= hi:
            raise PreprocessError(f"contrast_factor range must be positive and ordered, got {self.contrast_factor}")
        if not self.brightness_delta[0] <= self.brightness_delta[1]:
            raise PreprocessError(f"brightness_delta range must be ordered, got {self.brightness_delta}")

    def with_seed(self, seed: int) -> "AugmentParams":
        return AugmentParams(self.flip_probability, self.brightness_delta, self.contrast_factor, seed)


@dataclass(frozen=True)
class AppliedOps:
    flipped: bool
    contrast_factor: float
    brightness_delta: float


def as_gray(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise PreprocessError(f"expected a non-empty 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise PreprocessError("pixel values must lie in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


# ----------------------------------------------------------------------------
# background


def two_means(hist: Sequence[int], max_iter: int = 100) -> Tuple[Fraction, Fraction, Fraction, Fraction]:
    """Lloyd 2-means on a 256-bin intensity histogram.

    Centroids start at 0 and 255. Arithmetic is exact, and a bin lying exactly
    on the midpoint splits its mass evenly between the clusters, so the result
    for an inverted histogram is the mirror image of the original.
    Returns ``(dark_centroid, light_centroid, dark_mass, light_mass)``.
    """
    c0, c1 = Fraction(0), Fraction(255)
    m0 = m1 = Fraction(0)
    for _ in range(max_iter):
        s0 = s1 = Fraction(0)
        m0 = m1 = Fraction(0)
        twice_mid = c0 + c1
        for v, n in enumerate(hist):
            if not n:
                continue
            side = 2 * v - twice_mid
            if side < 0:
                m0 += n
                s0 += n * v
            elif side > 0:
                m1 += n
                s1 += n * v
            else:
                half = Fraction(n, 2)
                m0 += half
                m1 += half
                s0 += half * v
                s1 += half * v
        n0 = s0 / m0 if m0 else c0
        n1 = s1 / m1 if m1 else c1
        if n0 == c0 and n1 == c1:
            break
        c0, c1 = n0, n1
    return c0, c1, m0, m1


def dominant_background(img) -> str:
    """``"light"`` if the larger 2-means cluster has centroid above 127.5, else ``"dark"``."""
    arr = as_gray(img)
    hist = np.bincount(arr.ravel(), minlength=256).tolist()
    c0, c1, m0, m1 = two_means(hist)
    centroid = c1 if m1 > m0 else c0  # equal mass counts as dark
    return LIGHT if centroid > Fraction(255, 2) else DARK


def invert_if_light(img) -> np.ndarray:
    arr = as_gray(img)
    if dominant_background(arr) == LIGHT:
        return (255 - arr).astype(np.uint8)
    return arr.copy()


# ----------------------------------------------------------------------------
# CLAHE


def tile_bounds(length: int, tiles: int) -> List[int]:
    """Tile edges at round(i * length / tiles), halves rounded up."""
    return [(2 * i * length + tiles) // (2 * tiles) for i in range(tiles + 1)]


def clip_histogram(hist: np.ndarray, limit: int) -> np.ndarray:
    """Clip each bin at ``limit`` and hand the excess back in a single pass.

    Every bin gets ``excess // 256``; the remaining units go one per bin at an
    even stride starting from bin 0.
    """
    hist = hist.astype(np.int64).copy()
    excess = int(np.maximum(hist - limit, 0).sum())
    np.minimum(hist, limit, out=hist)
    bins = hist.size
    hist += excess // bins
    residual = excess % bins
    if residual:
        step = max(bins // residual, 1)
        hist[np.arange(0, bins, step)[:residual]] += 1
    return hist


def _tile_luts(arr: np.ndarray, xb: List[int], yb: List[int], clip_limit: float) -> np.ndarray:
    ty, tx = len(yb) - 1, len(xb) - 1
    lo, span = int(arr.min()), int(arr.max()) - int(arr.min())
    luts = np.empty((ty, tx, 256), dtype=np.int64)
    for j in range(ty):
        for i in range(tx):
            tile = arr[yb[j]:yb[j + 1], xb[i]:xb[i + 1]]
            n = tile.size
            hist = np.bincount(tile.ravel(), minlength=256)
            limit = max(int(clip_limit * n / 256), 1)
            cdf = np.cumsum(clip_histogram(hist, limit))
            # lo + round(cdf * span / n), halves up, in integers
            luts[j, i] = lo + (2 * span * cdf + n) // (2 * n)
    return luts


def _axis_weights(length: int, bounds: List[int]):
    """Per-pixel (low tile, high tile, numerator, denominator) on one axis.

    Tile centres are kept doubled so all interpolation weights are integers.
    """
    centres2 = np.array([bounds[t] + bounds[t + 1] - 1 for t in range(len(bounds) - 1)])
    pos2 = 2 * np.arange(length)
    hi = np.searchsorted(centres2, pos2, side="right")  # first centre strictly right
    lo = hi - 1
    inner = (lo >= 0) & (hi < len(centres2))
    lo_c = np.clip(lo, 0, len(centres2) - 1)
    hi_c = np.clip(hi, 0, len(centres2) - 1)
    den = np.where(inner, centres2[hi_c] - centres2[lo_c], 1)
    num = np.where(inner, pos2 - centres2[lo_c], 0)
    # outside the centre lattice both ends collapse onto the edge tile
    lo_c = np.where(lo < 0, 0, lo_c)
    hi_c = np.where(inner, hi_c, lo_c)
    return lo_c, hi_c, num.astype(np.int64), den.astype(np.int64)


def clahe(img, params: ClaheParams = ClaheParams()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalisation.

    ``clip_limit`` is relative: a bin may hold at most
    ``clip_limit * tile_pixels / 256`` counts. Each tile's clipped CDF is
    mapped onto the image's own grey range [min, max], so the output never
    leaves that range and constant images come back unchanged. Tile mappings
    are blended bilinearly between tile centres, clamping to the edge tiles.
    """
    arr = as_gray(img)
    h, w = arr.shape
    tx, ty = params.grid
    if w < tx or h < ty:
        raise PreprocessError(
            f"image {w}x{h} is smaller than the {tx}x{ty} tile grid; use a smaller grid")
    xb, yb = tile_bounds(w, tx), tile_bounds(h, ty)
    luts = _tile_luts(arr, xb, yb, params.clip_limit)

    x0, x1, xn, xd = _axis_weights(w, xb)
    y0, y1, yn, yd = _axis_weights(h, yb)
    v = arr.astype(np.int64)
    Y0, X0 = y0[:, None], x0[None, :]
    Y1, X1 = y1[:, None], x1[None, :]
    a = luts[Y0, X0, v]
    b = luts[Y0, X1, v]
    c = luts[Y1, X0, v]
    d = luts[Y1, X1, v]
    XN, XD = xn[None, :], xd[None, :]
    YN, YD = yn[:, None], yd[:, None]
    num = (YD - YN) * ((XD - XN) * a + XN * b) + YN * ((XD - XN) * c + XN * d)
    den = XD * YD
    out = (2 * num + den) // (2 * den)
    return np.clip(out, 0, 255).astype(np.uint8)


# ----------------------------------------------------------------------------
# geometry-changing steps


def resize_bilinear(img, width: int, height: int) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment and edge clamping."""
    arr = as_gray(img)
    h, w = arr.shape
    if (w, h) == (width, height):
        return arr.copy()

    def axis(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    xl, xh, fx = axis(width, w)
    yl, yh, fy = axis(height, h)
    f = arr.astype(np.float64)
    top = f[yl][:, xl] * (1 - fx) + f[yl][:, xh] * fx
    bottom = f[yh][:, xl] * (1 - fx) + f[yh][:, xh] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def rescale(img, boxes: Sequence[BBox], size: int = TARGET_SIZE) -> Tuple[np.ndarray, List[BBox]]:
    """Plain (aspect-distorting) resize to ``size`` x ``size``; normalized boxes pass through."""
    return resize_bilinear(img, size, size), list(boxes)


def hflip_image(img) -> np.ndarray:
    return as_gray(img)[:, ::-1].copy()


def brightness_contrast(img, contrast_factor: float, brightness_delta: float) -> np.ndarray:
    f = as_gray(img).astype(np.float64)
    out = contrast_factor * (f - 128.0) + 128.0 + brightness_delta
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def augment(img, boxes: Sequence[BBox], params: AugmentParams) -> Tuple[np.ndarray, List[BBox], AppliedOps]:
    """Seeded random horizontal flip followed by random brightness/contrast.

    Draw order is fixed (flip, contrast, brightness) so the same seed always
    yields the same output.
    """
    arr = as_gray(img)
    rng = np.random.default_rng(params.seed)
    flipped = bool(rng.random() < params.flip_probability)
    factor = float(rng.uniform(*params.contrast_factor))
    delta = float(rng.uniform(*params.brightness_delta))
    out_boxes = list(boxes)
    if flipped:
        arr = hflip_image(arr)
        out_boxes = [hflip(b) for b in out_boxes]
    arr = brightness_contrast(arr, factor, delta)
    return arr, out_boxes, AppliedOps(flipped, factor, delta)


def derive_seed(base_seed: int, index: int) -> int:
    """Per-image seed, independent of processing order."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def preprocess_image(img, boxes: Sequence[BBox], clahe_params: ClaheParams = ClaheParams(),
                     augment_params: AugmentParams = None, size: int = TARGET_SIZE):
    """Inversion, CLAHE, rescale and (optionally) augmentation, in that order."""
    arr = invert_if_light(img)
    arr = clahe(arr, clahe_params)
    arr, out_boxes = rescale(arr, boxes, size)
    ops = None
    if augment_params is not None:
        arr, out_boxes, ops = augment(arr, out_boxes, augment_params)
    return arr, out_boxes, ops
