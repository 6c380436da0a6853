"""Receiver-side completion of frames with missing cells."""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidGeometryError
from .frame_grid import BoundingBox, Frame, GridSpec
from .mask import Mask


def interpolate(
    assembled: Frame, mask: Mask, previous: Frame | None = None, grid: GridSpec | None = None
) -> Frame:
    """Fill the cells ``mask`` marks absent; received cells are left untouched.

    A missing cell is copied from ``previous`` when one is given. Otherwise it
    is interpolated from the nearest received cell on each side within its row
    and column: linear between the facing boundary pixel lines on each axis,
    constant if only one side exists, averaged over the axes that have data.
    Cells with no received neighbour in their row or column keep the filler.
    """
    if grid is None:
        grid = GridSpec(mask.k, assembled.width, assembled.height)
    if grid.k != mask.k or (grid.width, grid.height) != (assembled.width, assembled.height):
        raise ValueError("mask, grid and frame geometry disagree")
    if previous is not None and previous.pixels.shape != assembled.pixels.shape:
        raise ValueError("previous frame has a different size")

    bits = mask.bits.reshape(grid.k, grid.k)
    if bits.all():
        return assembled
    out = assembled.pixels.copy()
    k, pw, ph = grid.k, grid.patch_w, grid.patch_h

    if previous is not None:
        missing = np.repeat(np.repeat(~bits, ph, axis=0), pw, axis=1)
        out[missing] = previous.pixels[missing]
        return Frame(assembled.index, out)

    src = assembled.pixels.astype(float)
    xs = np.arange(pw, dtype=float)
    ys = np.arange(ph, dtype=float)
    for r in range(k):
        for c in range(k):
            if bits[r, c]:
                continue
            x0, y0 = c * pw, r * ph
            left = next((j for j in range(c - 1, -1, -1) if bits[r, j]), None)
            right = next((j for j in range(c + 1, k) if bits[r, j]), None)
            up = next((i for i in range(r - 1, -1, -1) if bits[i, c]), None)
            down = next((i for i in range(r + 1, k) if bits[i, c]), None)

            estimates = []
            rows = slice(y0, y0 + ph)
            cols = slice(x0, x0 + pw)
            if left is not None or right is not None:
                lv = src[rows, (left + 1) * pw - 1] if left is not None else None
                rv = src[rows, right * pw] if right is not None else None
                if lv is not None and rv is not None:
                    xl, xr = (left + 1) * pw - 1, right * pw
                    t = (x0 + xs - xl) / (xr - xl)
                    estimates.append(lv[:, None] + (rv - lv)[:, None] * t[None, :])
                else:
                    v = lv if lv is not None else rv
                    estimates.append(np.repeat(v[:, None], pw, axis=1))
            if up is not None or down is not None:
                uv = src[(up + 1) * ph - 1, cols] if up is not None else None
                dv = src[down * ph, cols] if down is not None else None
                if uv is not None and dv is not None:
                    yu, yd = (up + 1) * ph - 1, down * ph
                    t = (y0 + ys - yu) / (yd - yu)
                    estimates.append(uv[None, :] + (dv - uv)[None, :] * t[:, None])
                else:
                    v = uv if uv is not None else dv
                    estimates.append(np.repeat(v[None, :], ph, axis=0))
            if estimates:
                est = sum(estimates) / len(estimates)
                out[rows, cols] = np.clip(np.rint(est), 0, 255).astype(np.uint8)
    return Frame(assembled.index, out)


def reconstruction_error(
    reconstructed: Frame, original: Frame, region: BoundingBox | None = None
) -> float:
    """Mean absolute pixel error over ``region`` (whole frame if None), scaled to [0, 1]."""
    a, b = reconstructed.pixels, original.pixels
    if a.shape != b.shape:
        raise InvalidGeometryError(f"frame sizes differ: {a.shape} vs {b.shape}")
    if region is not None:
        ys, xs = region.slices()
        a, b = a[ys, xs], b[ys, xs]
        if a.size == 0:
            raise InvalidGeometryError(f"region {region} lies outside the frame")
    diff = np.abs(a.astype(np.int16) - b.astype(np.int16))
    return float(diff.mean()) / 255.0
