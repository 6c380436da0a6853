"""Sender-side patch selection."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_cell_vector, check_k, check_rate
from .mask import Mask

METHODS = ("random", "dqn")


def budget(rate: float, k: int) -> int:
    """Number of cells to send at ``rate``: ceil(rate * k^2), at least one."""
    rate = check_rate(rate)
    k = check_k(k)
    # round first so 0.07 * 100 style float noise does not bump the ceiling
    return max(1, math.ceil(round(rate * k * k, 9)))


def select_top(probs, rate: float, k: int | None = None, frame_index: int = 0) -> Mask:
    """Mark the ``budget(rate, k)`` most probable cells.

    Ties go to the lower row-major index.
    """
    p = check_cell_vector(probs, name="probability map")
    if k is None:
        k = math.isqrt(p.size)
    if k * k != p.size:
        raise ValueError(f"probability map of length {p.size} is not a square grid")
    n = budget(rate, k)
    order = np.lexsort((np.arange(p.size), -p))
    return Mask.from_cells(k, order[:n], frame_index)


def random_mask(rate: float, k: int, seed, frame_index: int = 0) -> Mask:
    """``budget(rate, k)`` distinct cells drawn uniformly, reproducible per seed."""
    n = budget(rate, k)
    rng = np.random.default_rng(seed)
    return Mask.from_cells(k, rng.choice(k * k, size=n, replace=False), frame_index)


@dataclass(frozen=True)
class ScheduleConfig:
    rate: float = 0.5
    k: int = 8
    bootstrap_frames: int = 4
    method: str = "dqn"
    seed: int = 0
    feedback_period: int = 1

    def __post_init__(self):
        check_rate(self.rate)
        check_k(self.k)
        if self.bootstrap_frames < 1:
            raise ValueError("bootstrap_frames must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.feedback_period < 1:
            raise ValueError("feedback_period must be at least 1")


def schedule(frame_index: int, cfg: ScheduleConfig, latest_feedback: Mask | None = None) -> Mask:
    """Mask for ``frame_index``.

    Bootstrap frames go out whole. After that the dqn method replays the
    feedback mask, sending everything when there is none, and the random method
    draws a fresh mask seeded by ``(cfg.seed, frame_index)``.
    """
    if frame_index < cfg.bootstrap_frames:
        return Mask.full(cfg.k, frame_index)
    if cfg.method == "random":
        return random_mask(cfg.rate, cfg.k, (cfg.seed, frame_index), frame_index)
    if latest_feedback is None:
        return Mask.full(cfg.k, frame_index)
    if latest_feedback.k != cfg.k:
        raise ValueError(f"feedback is for k={latest_feedback.k}, sender uses k={cfg.k}")
    return latest_feedback.with_frame_index(frame_index)


class PatchScheduler:
    """Stateful sender wrapper around :func:`schedule`.

    Remembers the newest feedback and drops it once it is older than
    ``feedback_period`` frames, so a lost feedback message fails open.
    """

    def __init__(self, cfg: ScheduleConfig):
        self.cfg = cfg
        self._feedback: Mask | None = None

    def on_feedback(self, mask: Mask) -> None:
        if self._feedback is None or mask.frame_index >= self._feedback.frame_index:
            self._feedback = mask

    def next_mask(self, frame_index: int, feedback: Mask | None = None) -> Mask:
        if feedback is not None:
            self.on_feedback(feedback)
        fb = self._feedback
        if fb is not None and not 0 <= frame_index - fb.frame_index < self.cfg.feedback_period:
            fb = None
        return schedule(frame_index, self.cfg, fb)
