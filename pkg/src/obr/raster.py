"""Raster types, image I/O and the binarization chain.

Pixel arrays are numpy arrays indexed ``[row, col]``. Gray rasters hold
``uint8`` intensities (0 black, 255 white); binary rasters hold ``bool``
with ``True`` meaning foreground.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported image files."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParameterError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayRaster:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ParameterError(f"gray raster needs a non-empty 2-D array, got shape {px.shape}")
        object.__setattr__(self, "pixels", px.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, GrayRaster) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class BinaryRaster:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2:
            raise ParameterError(f"binary raster needs a 2-D array, got shape {b.shape}")
        object.__setattr__(self, "bits", b.astype(bool, copy=False))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return isinstance(other, BinaryRaster) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class RgbRaster:
    pixels: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ParameterError(f"rgb raster needs an (h, w, 3) array, got shape {px.shape}")
        object.__setattr__(self, "pixels", px.astype(np.uint8, copy=False))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, RgbRaster) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class PreprocessParams:
    median_window: int = 3
    se_radius: int = 1


# ---------------------------------------------------------------------------
# I/O

_PNM_MAGIC = {b"P5": 1, b"P6": 3}


def _parse_pnm(data: bytes) -> GrayRaster | RgbRaster:
    magic = data[:2]
    if magic not in _PNM_MAGIC:
        raise ImageFormatError(f"unsupported magic {magic!r}, expected P5 or P6", 0)
    channels = _PNM_MAGIC[magic]
    pos = 2
    fields = []
    while len(fields) < 3:
        # whitespace and comments between header tokens
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("expected a decimal header field", start)
        fields.append((int(data[start:pos]), start))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("header must end with a single whitespace byte", pos)
    pos += 1
    (width, w_off), (height, h_off), (maxval, m_off) = fields
    if width < 1:
        raise ImageFormatError(f"width must be >= 1, got {width}", w_off)
    if height < 1:
        raise ImageFormatError(f"height must be >= 1, got {height}", h_off)
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit maxval 255 is supported, got {maxval}", m_off)
    need = width * height * channels
    body = data[pos : pos + need]
    if len(body) < need:
        raise ImageFormatError(
            f"truncated pixel data: need {need} bytes, found {len(body)}", pos + len(body)
        )
    arr = np.frombuffer(body, dtype=np.uint8)
    if channels == 1:
        return GrayRaster(arr.reshape(height, width).copy())
    return RgbRaster(arr.reshape(height, width, 3).copy())


def load_image(path: str | os.PathLike) -> GrayRaster | RgbRaster:
    """Read a binary PGM/PPM (maxval 255) or an 8-bit PNG.

    Raises:
        OSError: the file cannot be read.
        ImageFormatError: the header is malformed or the format unsupported.
    """
    data = Path(path).read_bytes()
    if data[:2] in _PNM_MAGIC:
        return _parse_pnm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return _load_png(path)
    raise ImageFormatError(f"unrecognised image signature {data[:8]!r}", 0)


def _load_png(path) -> GrayRaster | RgbRaster:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "L":
            return GrayRaster(np.array(im))
        if im.mode == "RGB":
            return RgbRaster(np.array(im))
        raise ImageFormatError(f"only 8-bit gray or RGB PNG is supported, got mode {im.mode}", 0)


def encode_pgm(img: GrayRaster | BinaryRaster) -> bytes:
    if isinstance(img, BinaryRaster):
        px = np.where(img.bits, 255, 0).astype(np.uint8)
    else:
        px = img.pixels
    h, w = px.shape
    return b"P5\n%d %d\n255\n" % (w, h) + px.tobytes()


def save_pgm(img: GrayRaster | BinaryRaster, path: str | os.PathLike) -> None:
    Path(path).write_bytes(encode_pgm(img))


# ---------------------------------------------------------------------------
# preprocessing chain


def to_grayscale(img: RgbRaster) -> GrayRaster:
    rgb = img.pixels.astype(np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return GrayRaster(np.clip(np.rint(luma), 0, 255).astype(np.uint8))


def median_filter(img: GrayRaster, window: int) -> GrayRaster:
    """Median over a ``window x window`` neighbourhood with edge replication."""
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"median window must be a positive odd integer, got {window}")
    if window > min(img.width, img.height):
        raise ParameterError(f"median window {window} exceeds image size {img.width}x{img.height}")
    if window == 1:
        return GrayRaster(img.pixels.copy())
    return GrayRaster(ndimage.median_filter(img.pixels, size=window, mode="nearest"))


def otsu_threshold(hist: np.ndarray) -> int | None:
    """Return the Otsu threshold T for a 256-bin histogram.

    Classes are ``[0, T)`` and ``[T, 256)``; T maximises the between-class
    variance, smallest T on ties. ``None`` when fewer than two intensity
    levels are populated.
    """
    hist = np.asarray(hist, dtype=np.float64)
    if np.count_nonzero(hist) < 2:
        return None
    levels = np.arange(hist.size, dtype=np.float64)
    w0 = np.cumsum(hist)[:-1]  # weight of [0, T) for T = 1..255
    m0 = np.cumsum(hist * levels)[:-1]
    total, mtotal = hist.sum(), (hist * levels).sum()
    w1 = total - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (m0 / w0 - (mtotal - m0) / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -1.0)
    return int(np.argmax(between)) + 1


@dataclass(frozen=True, eq=False)
class BinarizeResult:
    raster: BinaryRaster
    threshold: int | None
    degenerate: bool


def binarize_with_info(img: GrayRaster) -> BinarizeResult:
    hist = np.bincount(img.pixels.ravel(), minlength=256)
    t = otsu_threshold(hist)
    if t is None:
        log.warning("degenerate histogram (constant image); binarized to all background")
        return BinarizeResult(BinaryRaster(np.zeros(img.pixels.shape, bool)), None, True)
    return BinarizeResult(BinaryRaster(img.pixels < t), t, False)


def binarize(img: GrayRaster) -> BinaryRaster:
    """Global Otsu binarization; dark pixels (below the threshold) become foreground."""
    return binarize_with_info(img).raster


def complement(img: BinaryRaster) -> BinaryRaster:
    return BinaryRaster(~img.bits)


def disk(radius: int) -> np.ndarray:
    """Disk structuring element: offsets with ``dx^2 + dy^2 <= r^2 + r``.

    The ``+ r`` term makes radius 1 the full 3x3 square.
    """
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return xx * xx + yy * yy <= r * r + r


def dilate(img: BinaryRaster, se_radius: int) -> BinaryRaster:
    if se_radius < 1:
        raise ParameterError(f"structuring element radius must be >= 1, got {se_radius}")
    out = ndimage.binary_dilation(img.bits, structure=disk(se_radius), border_value=0)
    return BinaryRaster(out)


STAGE_NAMES = ("01_gray", "02_median", "03_binary", "04_complement", "05_dilate")


def preprocess_stages(
    img: RgbRaster | GrayRaster, params: PreprocessParams = PreprocessParams()
) -> list[GrayRaster | BinaryRaster]:
    """Run the five-step chain and return every intermediate stage in order."""
    gray = to_grayscale(img) if isinstance(img, RgbRaster) else img
    med = median_filter(gray, params.median_window)
    # binarize() marks the dark dots; the stage-3 image keeps page polarity
    # (paper white, dots black), so complement() yields white dots on black.
    binary = BinaryRaster(~binarize(med).bits)
    comp = complement(binary)
    dil = dilate(comp, params.se_radius)
    return [gray, med, binary, comp, dil]


def preprocess(img: RgbRaster | GrayRaster, params: PreprocessParams = PreprocessParams()) -> BinaryRaster:
    """grayscale -> median -> Otsu binarize -> complement -> dilate.

    The result has the dots as foreground (white on black).
    """
    return preprocess_stages(img, params)[-1]


def dump_stages(stages, directory: str | os.PathLike) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, stage in zip(STAGE_NAMES, stages):
        p = out / f"{name}.pgm"
        save_pgm(stage, p)
        paths.append(p)
    return paths
