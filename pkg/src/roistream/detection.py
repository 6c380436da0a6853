"""Synthetic scenes, the detector interface, and detection/bandwidth metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from ._validation import check_unit_interval
from .frame_grid import BoundingBox, Frame, GridSpec
from .mask import Mask
from .reconstruct import reconstruction_error
from .transport import PACKET_OVERHEAD_BYTES, feedback_size


@dataclass(frozen=True)
class SceneConfig:
    """A textured square target moving over a static textured background.

    The target bounces off the frame edges. ``start`` of None draws a start
    position from ``object_seed``.
    """

    width: int = 64
    height: int = 64
    frame_count: int = 200
    object_size: int = 12
    velocity: tuple[float, float] = (1.0, 1.0)
    jitter: float = 0.0
    start: tuple[int, int] | None = None
    background_seed: int = 0
    object_seed: int = 1
    background_range: tuple[int, int] = (30, 100)
    object_range: tuple[int, int] = (170, 250)
    bootstrap_frames: int = 4

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("frame dimensions must be positive")
        if not 0 < self.object_size <= min(self.width, self.height):
            raise ValueError("object must fit inside the frame")
        if self.frame_count < self.bootstrap_frames + 1:
            raise ValueError("frame_count must exceed bootstrap_frames")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        for lo, hi in (self.background_range, self.object_range):
            if not 0 <= lo <= hi <= 255:
                raise ValueError("intensity ranges must lie within [0, 255]")


def _reflect(pos: float, span: float) -> float:
    if span <= 0:
        return 0.0
    q = pos % (2 * span)
    return q if q <= span else 2 * span - q


def _smooth_texture(rng: np.random.Generator, h: int, w: int, lo: int, hi: int) -> np.ndarray:
    coarse = rng.random((max(2, h // 8 + 2), max(2, w // 8 + 2)))
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    smooth = (
        c[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + c[np.ix_(y0 + 1, x0)] * fy * (1 - fx)
        + c[np.ix_(y0, x0 + 1)] * (1 - fy) * fx
        + c[np.ix_(y0 + 1, x0 + 1)] * fy * fx
    )
    grain = rng.random((h, w))
    tex = 0.75 * smooth + 0.25 * grain
    return np.rint(lo + (hi - lo) * tex).astype(np.uint8)


def scene_generate(cfg: SceneConfig) -> tuple[list[Frame], list[BoundingBox]]:
    """Render the frames and their ground-truth boxes."""
    bg_rng = np.random.default_rng(cfg.background_seed)
    obj_rng = np.random.default_rng(cfg.object_seed)
    background = _smooth_texture(bg_rng, cfg.height, cfg.width, *cfg.background_range)
    s = cfg.object_size
    sprite = _smooth_texture(obj_rng, s, s, *cfg.object_range)
    span_x, span_y = cfg.width - s, cfg.height - s
    if cfg.start is None:
        x0 = float(obj_rng.integers(0, span_x + 1))
        y0 = float(obj_rng.integers(0, span_y + 1))
    else:
        x0, y0 = map(float, cfg.start)

    frames: list[Frame] = []
    boxes: list[BoundingBox] = []
    for n in range(cfg.frame_count):
        x = _reflect(x0 + cfg.velocity[0] * n, span_x)
        y = _reflect(y0 + cfg.velocity[1] * n, span_y)
        if cfg.jitter:
            x = float(np.clip(x + obj_rng.normal(0, cfg.jitter), 0, span_x))
            y = float(np.clip(y + obj_rng.normal(0, cfg.jitter), 0, span_y))
        xi, yi = int(round(x)), int(round(y))
        img = background.copy()
        img[yi : yi + s, xi : xi + s] = sprite
        frames.append(Frame(n, img))
        boxes.append(BoundingBox(xi, yi, s, s))
    return frames, boxes


class Detector(Protocol):
    def detect(self, reconstructed: Frame, original: Frame, gt: BoundingBox) -> bool: ...


def detect(reconstructed: Frame, original: Frame, gt: BoundingBox, theta: float = 0.8) -> bool:
    """True when the target region is reconstructed with fidelity at least ``theta``."""
    theta = check_unit_interval(theta, "theta", open_low=True)
    return 1.0 - reconstruction_error(reconstructed, original, gt) >= theta


@dataclass(frozen=True)
class FidelityDetector:
    """Presence detector that thresholds reconstruction fidelity inside the true box."""

    theta: float = 0.8

    def detect(self, reconstructed: Frame, original: Frame, gt: BoundingBox) -> bool:
        return detect(reconstructed, original, gt, self.theta)


class DetectionOutcome(NamedTuple):
    frame_index: int
    detected: bool
    gt_present: bool = True


def evaluate(outcomes: Iterable[DetectionOutcome]) -> tuple[float, float, float]:
    """``(f1, precision, recall)`` over per-frame single-object outcomes."""
    tp = fp = fn = 0
    count = 0
    for o in outcomes:
        count += 1
        if o.gt_present:
            if o.detected:
                tp += 1
            else:
                fn += 1
        elif o.detected:
            fp += 1
    if count == 0:
        raise ValueError("evaluate needs at least one outcome")
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return f1, precision, recall


def bits_transmitted(
    masks: Sequence[Mask],
    grid: GridSpec,
    header_bytes: int = PACKET_OVERHEAD_BYTES,
    feedback_period: int | None = None,
) -> int:
    """Uplink patch bits for ``masks``; with ``feedback_period`` also the feedback bits."""
    per_patch = (header_bytes + grid.patch_w * grid.patch_h) * 8
    total = sum(m.popcount for m in masks) * per_patch
    if feedback_period is not None:
        total += math.ceil(len(masks) / feedback_period) * feedback_size(grid.k) * 8
    return total
