"""Grayscale image container, file I/O, 3x3 blur, quadrant splitting and a
synthetic firn-slice generator."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import ndimage

DEPTHS: tuple[int, ...] = (7, 15, 23, 31, 38, 46, 53, 61, 70, 78)


class ImageError(Exception):
    """Base class for image loading failures."""


class ImageReadError(ImageError):
    """The file could not be read at all."""


class ImageFormatError(ImageError):
    """The file is not a well-formed PGM/PNG."""


class UnsupportedFormatError(ImageError):
    """Well-formed file in a pixel format we do not accept (color, 16-bit, ...)."""


class MaxvalError(ImageFormatError):
    """PGM maxval other than 255."""


class DegenerateSplitError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable 8-bit grayscale image, stored as a (height, width) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"expected a non-empty 2D array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.issubdtype(px.dtype, np.integer) or np.issubdtype(px.dtype, np.floating):
                if px.size and (px.min() < 0 or px.max() > 255):
                    raise ValueError("intensities must lie in [0, 255]")
                if np.issubdtype(px.dtype, np.floating) and not np.all(px == np.round(px)):
                    raise ValueError("intensities must be integers")
            else:
                raise TypeError(f"unsupported dtype {px.dtype}")
        px = np.array(px, dtype=np.uint8, copy=True)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_list(cls, width: int, height: int, intensities) -> GrayImage:
        values = np.asarray(list(intensities), dtype=np.int64)
        if values.size != width * height:
            raise ValueError(f"{values.size} intensities for a {width}x{height} image")
        return cls(values.reshape(height, width))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def intensities(self) -> list[int]:
        return self.pixels.ravel().tolist()

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def __repr__(self):
        return f"GrayImage({self.width}x{self.height})"


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _pgm_header(data: bytes) -> tuple[int, int, int, int]:
    """Parse a P5 header; returns (width, height, maxval, offset of pixel data)."""
    tokens: list[int] = []
    pos = 2
    n = len(data)
    while len(tokens) < 3:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated or malformed PGM header")
        tokens.append(int(data[start:pos]))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise ImageFormatError("truncated or malformed PGM header")
    width, height, maxval = tokens
    return width, height, maxval, pos + 1


def _read_pgm(data: bytes) -> GrayImage:
    width, height, maxval, offset = _pgm_header(data)
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid PGM dimensions {width}x{height}")
    if maxval != 255:
        raise MaxvalError(f"PGM maxval {maxval} is not supported (need 255)")
    raster = data[offset : offset + width * height]
    if len(raster) != width * height:
        raise ImageFormatError("PGM pixel data is truncated")
    return GrayImage(np.frombuffer(raster, dtype=np.uint8).reshape(height, width))


def _read_png(path: Path) -> GrayImage:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode != "L":
                raise UnsupportedFormatError(
                    f"PNG mode {mode!r} unsupported; need 8-bit single-channel"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, SyntaxError, OSError) as exc:
        if isinstance(exc, ImageError):
            raise
        raise ImageFormatError(f"malformed PNG: {exc}") from exc
    return GrayImage(arr)


def load_image(path) -> GrayImage:
    """Load a binary PGM (P5, maxval 255) or an 8-bit grayscale PNG.

    Pixel values are returned verbatim. Raises ImageReadError when the file
    cannot be read, MaxvalError for PGMs with maxval != 255,
    UnsupportedFormatError for other pixel formats and ImageFormatError for
    anything malformed.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc
    if data[:2] == b"P5":
        return _read_pgm(data)
    if data[:8] == _PNG_MAGIC:
        return _read_png(path)
    if data[:2] in (b"P1", b"P2", b"P3", b"P4", b"P6"):
        raise UnsupportedFormatError(f"netpbm variant {data[:2].decode()} unsupported")
    raise UnsupportedFormatError(f"{path}: not a PGM or PNG file")


def save_pgm(img: GrayImage, path) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


# ---------------------------------------------------------------------------
# Manipulations
# ---------------------------------------------------------------------------

_BLUR_KERNEL = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.int64)


def gaussian_blur3(img: GrayImage) -> GrayImage:
    """3x3 binomial blur, (1,2,1)x(1,2,1)/16 with edge replication.

    Integer accumulation, then round half up.
    """
    padded = np.pad(img.pixels.astype(np.int64), 1, mode="edge")
    h, w = img.height, img.width
    acc = np.zeros((h, w), dtype=np.int64)
    for dy in range(3):
        for dx in range(3):
            acc += _BLUR_KERNEL[dy, dx] * padded[dy : dy + h, dx : dx + w]
    return GrayImage(np.clip((acc + 8) // 16, 0, 255))


class Quadrants(NamedTuple):
    tl: GrayImage
    tr: GrayImage
    bl: GrayImage
    br: GrayImage


QUADRANT_NAMES = ("TL", "TR", "BL", "BR")


def split_quadrants(img: GrayImage) -> Quadrants:
    """Split at column w//2 and row h//2; the top-left block is the floor-sized one."""
    if img.width < 2 or img.height < 2:
        raise DegenerateSplitError(
            f"cannot split a {img.width}x{img.height} image into quadrants"
        )
    cx, cy = img.width // 2, img.height // 2
    px = img.pixels
    return Quadrants(
        GrayImage(px[:cy, :cx]),
        GrayImage(px[:cy, cx:]),
        GrayImage(px[cy:, :cx]),
        GrayImage(px[cy:, cx:]),
    )


def join_quadrants(q: Quadrants) -> GrayImage:
    top = np.hstack([q.tl.pixels, q.tr.pixels])
    bottom = np.hstack([q.bl.pixels, q.br.pixels])
    return GrayImage(np.vstack([top, bottom]))


# ---------------------------------------------------------------------------
# Synthetic firn
# ---------------------------------------------------------------------------

PORE_LEVEL = 10
ICE_LEVEL = 140


@dataclass(frozen=True)
class SynthParams:
    depth_label: int
    pore_fraction: float
    correlation_length: float
    speckle_amplitude: int
    seed: int
    pore_level: int = PORE_LEVEL
    ice_level: int = ICE_LEVEL

    def __post_init__(self):
        if self.depth_label not in DEPTHS:
            raise ValueError(f"depth {self.depth_label} not in {DEPTHS}")
        if not 0.0 < self.pore_fraction < 1.0:
            raise ValueError("pore_fraction must lie in (0, 1)")
        if not self.correlation_length > 0:
            raise ValueError("correlation_length must be positive")
        if self.speckle_amplitude < 0:
            raise ValueError("speckle_amplitude must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.pore_level < self.ice_level <= 255:
            raise ValueError("need 0 <= pore_level < ice_level <= 255")


@dataclass(frozen=True)
class DepthMap:
    """Depth -> generator parameters.

    Pore fraction and correlation length are interpolated linearly in depth
    between their 7 m and 78 m endpoints. Speckle amplitude and the two gray
    levels model per-scan calibration: one entry per depth in DEPTHS order
    (a single int applies to every depth). The defaults are deliberately not
    monotone in depth.
    """

    pore_fraction: tuple[float, float] = (0.45, 0.06)
    correlation_length: tuple[float, float] = (6.0, 2.5)
    speckle_amplitude: int | tuple[int, ...] = (40, 55, 25, 60, 30, 50, 35, 58, 28, 45)
    pore_level: int | tuple[int, ...] = (12, 6, 18, 9, 14, 5, 16, 8, 11, 20)
    ice_level: int | tuple[int, ...] = (150, 128, 160, 135, 145, 125, 155, 132, 148, 138)

    @staticmethod
    def _per_depth(value, i: int) -> int:
        return int(value) if isinstance(value, int) else int(value[i])

    def params(self, depth: int, seed: int) -> SynthParams:
        if depth not in DEPTHS:
            raise ValueError(f"depth {depth} not in {DEPTHS}")
        i = DEPTHS.index(depth)
        lo, hi = DEPTHS[0], DEPTHS[-1]
        s = (depth - lo) / (hi - lo)
        lerp = lambda ab: ab[0] + s * (ab[1] - ab[0])  # noqa: E731
        return SynthParams(
            depth_label=depth,
            pore_fraction=lerp(self.pore_fraction),
            correlation_length=lerp(self.correlation_length),
            speckle_amplitude=self._per_depth(self.speckle_amplitude, i),
            seed=seed,
            pore_level=self._per_depth(self.pore_level, i),
            ice_level=self._per_depth(self.ice_level, i),
        )


DEFAULT_DEPTH_MAP = DepthMap()


def default_params(depth: int, seed: int) -> SynthParams:
    return DEFAULT_DEPTH_MAP.params(depth, seed)


def synth_firn(params: SynthParams, size: int | tuple[int, int] = 128) -> GrayImage:
    """Generate a synthetic firn slice.

    A white-noise field is smoothed at ``correlation_length`` and thresholded
    at its ``pore_fraction`` quantile. Pores are drawn at ``pore_level``
    (default 10), ice at ``ice_level`` (default 140), both with uniform
    integer speckle of +-speckle_amplitude, clipped to [0, 255].
    """
    width, height = (size, size) if isinstance(size, int) else size
    rng = np.random.default_rng(params.seed)
    field = rng.standard_normal((height, width))
    field = ndimage.gaussian_filter(field, params.correlation_length, mode="wrap")
    # rank-based threshold so the realized pore count is exact
    n_pore = int(math.floor(params.pore_fraction * field.size + 0.5))
    order = np.argsort(field, axis=None, kind="stable")
    pore = np.zeros(field.size, dtype=bool)
    pore[order[:n_pore]] = True
    pore = pore.reshape(field.shape)

    a = params.speckle_amplitude
    speckle = rng.integers(-a, a, endpoint=True, size=field.shape)
    out = np.where(pore, params.pore_level, params.ice_level) + speckle
    return GrayImage(np.clip(out, 0, 255))


def image_seed(base_seed: int, depth: int, index: int) -> int:
    """Seed of the ``index``-th synthetic image at ``depth``."""
    state = np.random.SeedSequence([base_seed, depth, index]).generate_state(1, np.uint64)
    return int(state[0])


def synth_corpus(
    images_per_depth: int,
    size: int = 128,
    base_seed: int = 0,
    depth_map: DepthMap = DEFAULT_DEPTH_MAP,
):
    """Yield (depth, index, image) for every depth in DEPTHS."""
    if images_per_depth < 1:
        raise ValueError("images_per_depth must be >= 1")
    for depth in DEPTHS:
        for i in range(images_per_depth):
            yield depth, i, synth_firn(depth_map.params(depth, image_seed(base_seed, depth, i)), size)
