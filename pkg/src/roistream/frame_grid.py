"""Frames, K x K tiling, reassembly with filler, and cell/box geometry.

Cells are addressed row-major: linear index ``row * k + col``. Every mask,
probability map and packet stream in the package uses that order.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from ._validation import check_gray_frame, check_k
from .exceptions import InvalidGeometryError, ProtocolError
from .mask import Mask


@dataclass(frozen=True, eq=False)
class Frame:
    """One grayscale frame. ``pixels`` is a read-only (height, width) uint8 array."""

    index: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("frame index must be non-negative")
        arr = np.array(check_gray_frame(self.pixels), dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    @classmethod
    def from_bytes(cls, index: int, width: int, height: int, data: bytes) -> "Frame":
        if len(data) != width * height:
            raise InvalidGeometryError(f"{len(data)} bytes cannot fill a {width}x{height} frame")
        return cls(index, np.frombuffer(data, dtype=np.uint8).reshape(height, width))

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.index == other.index and np.array_equal(self.pixels, other.pixels)

    __hash__ = None

    def __repr__(self):
        return f"Frame(index={self.index}, {self.width}x{self.height})"


@dataclass(frozen=True)
class GridSpec:
    """K x K partition of a ``width`` x ``height`` frame."""

    k: int
    width: int
    height: int

    def __post_init__(self):
        check_k(self.k)
        if self.width < self.k or self.height < self.k:
            raise InvalidGeometryError(f"{self.width}x{self.height} frame is smaller than k={self.k}")
        if self.width % self.k or self.height % self.k:
            raise InvalidGeometryError(
                f"{self.width}x{self.height} frame is not divisible by k={self.k}; pad it first"
            )

    @classmethod
    def for_frame(cls, frame: Frame, k: int) -> "GridSpec":
        return cls(k, frame.width, frame.height)

    @property
    def patch_w(self) -> int:
        return self.width // self.k

    @property
    def patch_h(self) -> int:
        return self.height // self.k

    @property
    def n_cells(self) -> int:
        return self.k * self.k

    @property
    def cell_area(self) -> int:
        return self.patch_w * self.patch_h

    def cells(self) -> list["CellId"]:
        return [CellId(r, c) for r in range(self.k) for c in range(self.k)]

    def cell_rect(self, cell: "CellId") -> tuple[int, int, int, int]:
        """Pixel rectangle ``(x, y, w, h)`` covered by ``cell``."""
        return (cell.col * self.patch_w, cell.row * self.patch_h, self.patch_w, self.patch_h)


@dataclass(frozen=True, order=True)
class CellId:
    row: int
    col: int

    def linear(self, k: int) -> int:
        if not (0 <= self.row < k and 0 <= self.col < k):
            raise InvalidGeometryError(f"cell {self} outside a {k}x{k} grid")
        return self.row * k + self.col

    @classmethod
    def from_linear(cls, index: int, k: int) -> "CellId":
        if not 0 <= index < k * k:
            raise InvalidGeometryError(f"linear index {index} outside a {k}x{k} grid")
        return cls(*divmod(int(index), k))


@dataclass(frozen=True, eq=False)
class Patch:
    frame_index: int
    cell: CellId
    pixels: np.ndarray

    def __post_init__(self):
        arr = np.array(check_gray_frame(self.pixels), dtype=np.uint8, copy=True)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    def __eq__(self, other):
        if not isinstance(other, Patch):
            return NotImplemented
        return (
            self.frame_index == other.frame_index
            and self.cell == other.cell
            and np.array_equal(self.pixels, other.pixels)
        )

    __hash__ = None


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned integer pixel box."""

    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bounding box needs positive size, got {self.w}x{self.h}")

    @classmethod
    def clipped(cls, x, y, w, h, width: int, height: int) -> "BoundingBox":
        """Build a box and clip it to a ``width`` x ``height`` frame."""
        x0, y0 = max(0, int(round(x))), max(0, int(round(y)))
        x1 = min(width, int(round(x + w)))
        y1 = min(height, int(round(y + h)))
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"box ({x}, {y}, {w}, {h}) lies outside the {width}x{height} frame")
        return cls(x0, y0, x1 - x0, y1 - y0)

    @property
    def area(self) -> int:
        return self.w * self.h

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


def pad_to_grid(frame: Frame, k: int, fill: int = 0) -> Frame:
    """Grow ``frame`` right/bottom to the smallest size divisible by ``k``."""
    k = check_k(k)
    new_w = -(-frame.width // k) * k
    new_h = -(-frame.height // k) * k
    if (new_w, new_h) == (frame.width, frame.height):
        return frame
    out = np.full((new_h, new_w), fill, dtype=np.uint8)
    out[: frame.height, : frame.width] = frame.pixels
    return Frame(frame.index, out)


def _blocks(pixels: np.ndarray, grid: GridSpec) -> np.ndarray:
    k, ph, pw = grid.k, grid.patch_h, grid.patch_w
    return pixels.reshape(k, ph, k, pw).swapaxes(1, 2)


def tile(frame: Frame, grid: GridSpec) -> list[Patch]:
    """Split ``frame`` into k*k patches in row-major cell order."""
    if (frame.width, frame.height) != (grid.width, grid.height):
        raise InvalidGeometryError(
            f"frame is {frame.width}x{frame.height} but grid expects {grid.width}x{grid.height}"
        )
    blocks = _blocks(frame.pixels, grid)
    return [
        Patch(frame.index, CellId(r, c), blocks[r, c])
        for r in range(grid.k)
        for c in range(grid.k)
    ]


def assemble(
    patches: Iterable[Patch],
    grid: GridSpec,
    mask: Mask | None = None,
    filler: int = 0,
    frame_index: int | None = None,
) -> Frame:
    """Place ``patches`` on a filler canvas.

    With ``mask`` given, every patch must belong to a set cell. Without it the
    patches themselves define which cells are present.
    """
    if mask is not None and mask.k != grid.k:
        raise InvalidGeometryError(f"mask is {mask.k}x{mask.k}, grid is {grid.k}x{grid.k}")
    canvas = np.full((grid.height, grid.width), filler, dtype=np.uint8)
    blocks = _blocks(canvas, grid)
    seen: set[int] = set()
    index = frame_index
    for p in patches:
        lin = p.cell.linear(grid.k)
        if lin in seen:
            raise ProtocolError(f"duplicate patch for cell {p.cell}")
        if mask is not None and not mask.bits[lin]:
            raise ProtocolError(f"patch for cell {p.cell} is not in the mask")
        if p.pixels.shape != (grid.patch_h, grid.patch_w):
            raise InvalidGeometryError(
                f"patch is {p.pixels.shape[1]}x{p.pixels.shape[0]}, grid expects "
                f"{grid.patch_w}x{grid.patch_h}"
            )
        seen.add(lin)
        blocks[p.cell.row, p.cell.col] = p.pixels
        if index is None:
            index = p.frame_index
    if index is None:
        index = mask.frame_index if mask is not None else 0
    return Frame(index, canvas)


def cell_overlap(cell: CellId, grid: GridSpec, box: BoundingBox) -> float:
    """Fraction of the cell's area covered by ``box``."""
    cx, cy, cw, ch = grid.cell_rect(cell)
    iw = min(cx + cw, box.x + box.w) - max(cx, box.x)
    ih = min(cy + ch, box.y + box.h) - max(cy, box.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return (iw * ih) / (cw * ch)


def overlap_map(grid: GridSpec, box: BoundingBox) -> np.ndarray:
    """``cell_overlap`` for every cell, row-major, as a length k*k array."""
    k, pw, ph = grid.k, grid.patch_w, grid.patch_h
    edges_x = np.arange(k) * pw
    edges_y = np.arange(k) * ph
    iw = np.clip(np.minimum(edges_x + pw, box.x + box.w) - np.maximum(edges_x, box.x), 0, None)
    ih = np.clip(np.minimum(edges_y + ph, box.y + box.h) - np.maximum(edges_y, box.y), 0, None)
    return (np.outer(ih, iw) / (pw * ph)).ravel()


# -- file formats -----------------------------------------------------------


def save_pgm(frame: Frame | np.ndarray, path: str | os.PathLike) -> None:
    """Write a binary (P5, maxval 255) PGM."""
    pixels = frame.pixels if isinstance(frame, Frame) else check_gray_frame(frame)
    Image.fromarray(np.ascontiguousarray(pixels), mode="L").save(path, format="PPM")


def load_pgm(path: str | os.PathLike, index: int = 0) -> Frame:
    with Image.open(path) as im:
        if im.mode != "L":
            raise InvalidGeometryError(f"{path}: expected an 8-bit grayscale PGM, got mode {im.mode}")
        return Frame(index, np.asarray(im, dtype=np.uint8))


def load_annotations(path: str | os.PathLike, width: int, height: int) -> dict[int, BoundingBox]:
    """Read ``frame_index,x,y,w,h`` lines; a non-numeric first line is treated as a header."""
    boxes: dict[int, BoundingBox] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
                continue
            if len(row) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            idx, x, y, w, h = (float(v) for v in row)
            boxes[int(idx)] = BoundingBox.clipped(x, y, w, h, width, height)
    return boxes


def save_annotations(boxes: Sequence[BoundingBox], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, b in enumerate(boxes):
            writer.writerow([i, b.x, b.y, b.w, b.h])


def load_sequence(
    frame_dir: str | os.PathLike, annotations: str | os.PathLike, k: int
) -> tuple[list[Frame], list[BoundingBox]]:
    """Load sorted ``*.pgm`` frames plus their boxes, padding frames to the grid.

    Frames without an annotation are skipped, since the evaluation is single-object.
    """
    names = sorted(n for n in os.listdir(frame_dir) if n.lower().endswith(".pgm"))
    if not names:
        raise FileNotFoundError(f"no .pgm frames in {frame_dir}")
    first = load_pgm(os.path.join(frame_dir, names[0]))
    boxes = load_annotations(annotations, first.width, first.height)
    frames: list[Frame] = []
    kept: list[BoundingBox] = []
    for i, name in enumerate(names):
        if i not in boxes:
            continue
        f = load_pgm(os.path.join(frame_dir, name), index=len(frames))
        frames.append(pad_to_grid(f, k))
        kept.append(boxes[i])
    return frames, kept
