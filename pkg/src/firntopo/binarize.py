"""Otsu binarization of smoothed images and the exact Euclidean distance
transform used for the distance-transform filtration."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .image import GrayImage, gaussian_blur3

DT_CAP = 100


class DegenerateHistogramError(ValueError):
    """All pixels share one intensity, so there is no two-class split."""


class NoBackgroundError(ValueError):
    """Distance transform requested on a mask without any ICE pixel."""


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """Pore/ice labelling; ``pore`` is True on PORE pixels, False on ICE."""

    pore: np.ndarray

    @property
    def width(self) -> int:
        return self.pore.shape[1]

    @property
    def height(self) -> int:
        return self.pore.shape[0]

    @property
    def ice(self) -> np.ndarray:
        return ~self.pore


@dataclass(frozen=True, eq=False)
class DTImage:
    squared: np.ndarray  # int64 squared distances, exact
    values: np.ndarray  # float64 distances
    capped_values: np.ndarray  # int64, min(round_half_up(values), 100)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def otsu_threshold(img: GrayImage) -> int:
    """Threshold t maximizing between-class variance of {<= t} vs {> t}.

    Works on the 256-bin histogram. Comparisons are exact: with class sizes
    n0, n1, class sums s0, S - s0 and N pixels, the between-class variance is
    (N*s0 - n0*S)**2 / (N**2 * n0 * n1), so we compare the integer fractions
    (N*s0 - n0*S)**2 / (n0*n1) by cross-multiplication. Ties go to the
    smallest t.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256).tolist()
    total = sum(hist)
    total_sum = sum(i * c for i, c in enumerate(hist))
    best_t = -1
    best_num, best_den = 0, 1
    n0 = s0 = 0
    for t in range(255):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        num = (total * s0 - n0 * total_sum) ** 2
        den = n0 * n1
        if best_t < 0 or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_t < 0:
        raise DegenerateHistogramError("constant image has no two-class split")
    return best_t


def binarize(img: GrayImage) -> BinaryImage:
    """Blur with the 3x3 kernel, then Otsu; pixels <= threshold become PORE."""
    smooth = gaussian_blur3(img)
    t = otsu_threshold(smooth)
    pore = smooth.pixels <= t
    pore.setflags(write=False)
    return BinaryImage(pore)


@njit(cache=True)
def _row_pass(ice, inf):
    h, w = ice.shape
    out = np.empty((h, w), dtype=np.int64)
    for y in range(h):
        last = -1
        for x in range(w):
            if ice[y, x]:
                last = x
            out[y, x] = (x - last) ** 2 if last >= 0 else inf
        nxt = -1
        for x in range(w - 1, -1, -1):
            if ice[y, x]:
                nxt = x
            if nxt >= 0:
                d = (nxt - x) ** 2
                if d < out[y, x]:
                    out[y, x] = d
    return out


@njit(cache=True)
def _column_pass(g, inf):
    # lower envelope of parabolas y -> g[q] + (y - q)^2, one column at a time
    h, w = g.shape
    out = np.empty((h, w), dtype=np.int64)
    v = np.empty(h, dtype=np.int64)
    z = np.empty(h + 1, dtype=np.float64)
    for x in range(w):
        k = -1
        for q in range(h):
            fq = g[q, x]
            if fq >= inf:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            p = v[k]
            s = ((fq + q * q) - (g[p, x] + p * p)) / (2.0 * (q - p))
            while s <= z[k]:
                k -= 1
                p = v[k]
                s = ((fq + q * q) - (g[p, x] + p * p)) / (2.0 * (q - p))
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        j = 0
        for y in range(h):
            while z[j + 1] < y:
                j += 1
            p = v[j]
            out[y, x] = (y - p) ** 2 + g[p, x]
    return out


def squared_edt(ice: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance to the nearest True pixel.

    Row scan for 1D distances, then a per-column lower envelope of parabolas.
    """
    ice = np.ascontiguousarray(ice, dtype=np.bool_)
    if not ice.any():
        raise NoBackgroundError("mask has no ICE pixel")
    inf = ice.shape[0] ** 2 + ice.shape[1] ** 2 + 1
    return _column_pass(_row_pass(ice, inf), inf)


def distance_transform(binary: BinaryImage) -> DTImage:
    sq = squared_edt(binary.ice)
    values = np.sqrt(sq.astype(np.float64))
    # sqrt of an integer is never k + 1/2, so half-up vs half-even cannot differ
    capped = np.minimum(np.floor(values + 0.5).astype(np.int64), DT_CAP)
    for arr in (sq, values, capped):
        arr.setflags(write=False)
    return DTImage(sq, values, capped)


def save_dt_pgm(dt: DTImage, path, scale: float = 256.0) -> None:
    """Debug dump: 16-bit big-endian PGM of distance * scale (clipped to 65535)."""
    raster = np.clip(np.round(dt.values * scale), 0, 65535).astype(">u2")
    header = f"P5\n{dt.width} {dt.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes())
