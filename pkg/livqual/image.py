"""
Grayscale image, block grid and foreground mask primitives.

Images are 8-bit, single channel, at least 32x32. Binary PGM (P5) is the
canonical on-disk format and ASCII PGM (P2) is accepted on read; 8-bit
grayscale PNG is read and written through Pillow. The resolution is carried
as metadata only, nothing is resampled.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

from .errors import BlockSizeError, InvalidImage

logger = logging.getLogger(__name__)

MIN_SIDE = 32
MIN_BLOCK = 8
DEFAULT_DPI = 500.0

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major 8-bit intensities; ``pixels`` is a read-only (height, width) uint8 array."""

    pixels: np.ndarray
    dpi: float = DEFAULT_DPI
    source: Optional[str] = None

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim != 2:
            raise InvalidImage(f"expected a 2-D raster, got shape {pixels.shape}", source=self.source)
        if pixels.dtype != np.uint8:
            if np.issubdtype(pixels.dtype, np.floating) and not np.all(np.isfinite(pixels)):
                raise InvalidImage("non-finite intensities", source=self.source)
            if pixels.size and (pixels.min() < 0 or pixels.max() > 255):
                raise InvalidImage("intensities outside [0, 255]", source=self.source)
            if not np.array_equal(pixels, np.round(pixels)):
                raise InvalidImage("intensities must be integers", source=self.source)
            pixels = pixels.astype(np.uint8)
        height, width = pixels.shape
        if width < MIN_SIDE or height < MIN_SIDE:
            raise InvalidImage(
                f"image is {width}x{height}, minimum is {MIN_SIDE}x{MIN_SIDE}", source=self.source
            )
        if not self.dpi > 0:
            raise InvalidImage(f"dpi must be positive, got {self.dpi}", source=self.source)
        pixels = np.array(pixels, dtype=np.uint8, copy=True)
        pixels.flags.writeable = False
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @cached_property
    def as_float(self) -> np.ndarray:
        values = self.pixels.astype(np.float64)
        values.flags.writeable = False
        return values

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class BlockGrid:
    """Non-overlapping square blocks anchored at the top-left; partial edge blocks are dropped."""

    block_size: int
    cols: int
    rows: int

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def covered_shape(self) -> Tuple[int, int]:
        return (self.rows * self.block_size, self.cols * self.block_size)

    @property
    def n_blocks(self) -> int:
        return self.rows * self.cols

    def block_slices(self, row: int, col: int) -> Tuple[slice, slice]:
        b = self.block_size
        return slice(row * b, (row + 1) * b), slice(col * b, (col + 1) * b)

    def block(self, array: np.ndarray, row: int, col: int) -> np.ndarray:
        rs, cs = self.block_slices(row, col)
        return array[rs, cs]

    def center(self, row: int, col: int) -> Tuple[float, float]:
        """Block centre as (x, y) in pixel coordinates."""
        b = self.block_size
        return (col * b + (b - 1) / 2.0, row * b + (b - 1) / 2.0)

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        b = self.block_size
        xs = np.arange(self.cols) * b + (b - 1) / 2.0
        ys = np.arange(self.rows) * b + (b - 1) / 2.0
        return np.meshgrid(xs, ys)

    def blocks_view(self, array: np.ndarray) -> np.ndarray:
        """(rows, block, cols, block) view of the covered region."""
        h, w = self.covered_shape
        b = self.block_size
        return array[:h, :w].reshape(self.rows, b, self.cols, b)

    def block_sums(self, array: np.ndarray) -> np.ndarray:
        return self.blocks_view(array).sum(axis=(1, 3))

    def expand(self, block_flags: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
        """Broadcast per-block values back to a pixel raster of ``shape`` (uncovered pixels False)."""
        out = np.zeros(shape, dtype=bool)
        h, w = self.covered_shape
        b = self.block_size
        out[:h, :w] = np.repeat(np.repeat(block_flags, b, axis=0), b, axis=1)
        return out


def block_partition(image: GrayImage, block_size: int) -> BlockGrid:
    if block_size < MIN_BLOCK:
        raise BlockSizeError(f"block_size {block_size} is below {MIN_BLOCK}", source=image.source)
    if block_size > min(image.width, image.height):
        raise BlockSizeError(
            f"block_size {block_size} exceeds the image side {min(image.width, image.height)}",
            source=image.source,
        )
    return BlockGrid(block_size=block_size, cols=image.width // block_size, rows=image.height // block_size)


@dataclass(frozen=True, eq=False)
class Mask:
    """Per-pixel foreground flags; block flags follow the 50% rule on the grid."""

    pixels: np.ndarray
    grid: BlockGrid

    def __post_init__(self) -> None:
        flags = np.array(self.pixels, dtype=bool, copy=True)
        if flags.ndim != 2:
            raise ValueError("mask must be 2-D")
        h, w = self.grid.covered_shape
        if flags.shape[0] < h or flags.shape[1] < w:
            raise ValueError("mask is smaller than the block grid it refers to")
        flags.flags.writeable = False
        object.__setattr__(self, "pixels", flags)

    @classmethod
    def from_blocks(cls, block_flags: np.ndarray, grid: BlockGrid, shape: Tuple[int, int]) -> "Mask":
        return cls(grid.expand(np.asarray(block_flags, dtype=bool), shape), grid)

    @classmethod
    def full(cls, image: GrayImage, grid: BlockGrid) -> "Mask":
        """Every covered pixel foreground."""
        return cls.from_blocks(np.ones(grid.shape, dtype=bool), grid, image.pixels.shape)

    @cached_property
    def blocks(self) -> np.ndarray:
        counts = self.grid.block_sums(self.pixels.astype(np.int64))
        flags = 2 * counts >= self.grid.block_size ** 2
        flags.flags.writeable = False
        return flags

    @property
    def is_empty(self) -> bool:
        return not bool(self.pixels.any())

    @property
    def n_foreground_blocks(self) -> int:
        return int(self.blocks.sum())

    @cached_property
    def centroid(self) -> Optional[Tuple[float, float]]:
        """Mean (x, y) of the foreground pixels, ``None`` when the mask is empty."""
        ys, xs = np.nonzero(self.pixels)
        if xs.size == 0:
            return None
        return (float(xs.mean()), float(ys.mean()))

    @cached_property
    def bounding_box(self) -> Optional[Tuple[int, int, int, int]]:
        """(x0, y0, x1, y1), end-exclusive, of the foreground pixels."""
        ys, xs = np.nonzero(self.pixels)
        if xs.size == 0:
            return None
        return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

_DPI_COMMENT = re.compile(rb"dpi\s*[=:]?\s*([0-9]+(?:\.[0-9]*)?)", re.IGNORECASE)


def _header_tokens(data: bytes, count: int, source: str) -> tuple[list[bytes], int, float]:
    """First ``count`` whitespace-separated tokens after the magic, skipping ``#`` comments."""
    pos = 2
    tokens = []
    dpi = DEFAULT_DPI
    while len(tokens) < count:
        if pos >= len(data):
            raise InvalidImage("truncated PGM header", source=source)
        ch = data[pos:pos + 1]
        if ch == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            match = _DPI_COMMENT.search(data[pos:end])
            if match:
                dpi = float(match.group(1))
            pos = end + 1
        elif ch.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
                pos += 1
            tokens.append(data[start:pos])
    return tokens, pos, dpi


def _read_pgm(data: bytes, source: str) -> GrayImage:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise InvalidImage("not a PGM (P2/P5) file", source=source)
    tokens, pos, dpi = _header_tokens(data, 3, source)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise InvalidImage(f"malformed PGM header {tokens!r}", source=source) from exc
    if width <= 0 or height <= 0:
        raise InvalidImage(f"PGM dimensions must be positive, got {width}x{height}", source=source)
    if maxval > 255 or maxval <= 0:
        raise InvalidImage(f"unsupported PGM maxval {maxval} (8-bit only)", source=source)

    if magic == b"P2":
        body = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(body) != width * height:
            raise InvalidImage(f"PGM raster has {len(body)} values, expected {width * height}", source=source)
        try:
            values = np.array([int(v) for v in body], dtype=np.int64)
        except ValueError as exc:
            raise InvalidImage("non-integer value in ASCII PGM raster", source=source) from exc
        if values.min() < 0 or values.max() > maxval:
            raise InvalidImage(f"PGM values outside [0, {maxval}]", source=source)
        return GrayImage(values.reshape(height, width).astype(np.uint8), dpi=dpi, source=source)

    # exactly one whitespace byte separates maxval from the raster
    pos += 1
    raster = data[pos:pos + width * height]
    if len(raster) != width * height:
        raise InvalidImage(
            f"PGM raster has {len(raster)} bytes, expected {width * height}", source=source
        )
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return GrayImage(pixels, dpi=dpi, source=source)


def _read_png(path: Path) -> GrayImage:
    source = str(path)
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                raise InvalidImage(f"unsupported bit depth (mode {mode})", source=source)
            if mode != "L":
                raise InvalidImage(f"expected 8-bit single-channel PNG, got mode {mode}", source=source)
            pixels = np.array(img, dtype=np.uint8)
            dpi_info = img.info.get("dpi")
    except InvalidImage:
        raise
    except (OSError, ValueError) as exc:
        raise InvalidImage(f"unreadable PNG: {exc}", source=source) from exc
    dpi = float(dpi_info[0]) if dpi_info and dpi_info[0] else DEFAULT_DPI
    return GrayImage(pixels, dpi=dpi, source=source)


def load_image(path: PathLike) -> GrayImage:
    """Read a P2/P5 PGM or 8-bit grayscale PNG exactly as stored."""
    path = Path(path)
    try:
        head = path.read_bytes()
    except OSError as exc:
        raise InvalidImage(f"cannot read image: {exc}", source=str(path)) from exc
    try:
        if head[:2] in (b"P2", b"P5"):
            image = _read_pgm(head, str(path))
        elif head.startswith(b"\x89PNG"):
            image = _read_png(path)
        else:
            raise InvalidImage("unsupported format (expected PGM or PNG)", source=str(path))
    except InvalidImage:
        raise
    except Exception as exc:
        raise InvalidImage(f"cannot decode image: {exc}", source=str(path)) from exc
    logger.debug("loaded %s (%dx%d, %g dpi)", path, image.width, image.height, image.dpi)
    return image


def save_image(image: GrayImage, path: PathLike) -> Path:
    """Write PGM or PNG depending on the suffix; PGM carries the dpi in a header comment."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        Image.fromarray(np.ascontiguousarray(image.pixels)).save(path, dpi=(image.dpi, image.dpi))
    elif suffix in (".pgm", ".pnm", ""):
        header = f"P5\n# dpi={image.dpi:g}\n{image.width} {image.height}\n255\n".encode("ascii")
        path.write_bytes(header + np.ascontiguousarray(image.pixels).tobytes())
    else:
        raise InvalidImage(f"unsupported output format {suffix!r}", source=str(path))
    return path
