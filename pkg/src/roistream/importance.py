"""Receiver-side tabular Q-learning importance model.

Each cell is described by a small discrete state (its linear index plus a
binned overlap feature and a binned motion feature). Q-values for the two
actions {skip, transmit} are kept in a dict. The per-cell value
``max(max_a Q(s, a), 0)`` is normalised into a weight map, which in turn gives
the transmission probability map the sender's mask is built from.

The smoothness penalty ``lam * sum((P_n - P_{n-1})**2)`` enters twice: as a
term in the reported training loss and as the proximal step that produces the
emitted map, ``P_n = (raw + lam * P_{n-1}) / (1 + lam)``, which is the exact
minimiser of ``||P - raw||^2 + lam * ||P - P_{n-1}||^2``.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import os
from typing import Hashable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_cell_vector
from .frame_grid import BoundingBox, CellId, GridSpec, cell_overlap, overlap_map, save_pgm

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "roistream-qtable"
CHECKPOINT_VERSION = 1


class Action(enum.IntEnum):
    SKIP = 0
    TRANSMIT = 1


N_ACTIONS = len(Action)


class CellState(NamedTuple):
    cell: int
    overlap_bin: int
    motion_bin: int


class Transition(NamedTuple):
    state: Hashable
    action: int
    reward: float
    next_state: Hashable


class RewardInput(NamedTuple):
    """Ground-truth or detected target box plus per-cell motion in [0, 1]."""

    target_box: BoundingBox | None
    motion: np.ndarray


def to_bin(value: float, n_bins: int) -> int:
    """Index of ``value`` among ``n_bins`` equal bins over [0, 1]."""
    return min(int(value * n_bins), n_bins - 1) if value > 0 else 0


def cell_states(overlap: np.ndarray, motion: np.ndarray, n_bins: int = 4) -> list[CellState]:
    ob = np.minimum((np.asarray(overlap) * n_bins).astype(int), n_bins - 1)
    mb = np.minimum((np.asarray(motion) * n_bins).astype(int), n_bins - 1)
    return [CellState(i, int(o), int(m)) for i, (o, m) in enumerate(zip(ob, mb))]


def reward(
    cell: CellId,
    inp: RewardInput,
    grid: GridSpec,
    overlap_coef: float = 1.0,
    motion_coef: float = 0.5,
) -> float:
    """Weighted sum of the cell's box overlap and its motion."""
    lin = cell.linear(grid.k)
    ov = cell_overlap(cell, grid, inp.target_box) if inp.target_box is not None else 0.0
    return overlap_coef * ov + motion_coef * float(inp.motion[lin])


def reward_map(
    inp: RewardInput, grid: GridSpec, overlap_coef: float = 1.0, motion_coef: float = 0.5
) -> np.ndarray:
    """Vectorised :func:`reward` for every cell, row-major."""
    ov = overlap_map(grid, inp.target_box) if inp.target_box is not None else np.zeros(grid.n_cells)
    return overlap_coef * ov + motion_coef * np.asarray(inp.motion, dtype=float)


def bellman_target(r: float, gamma: float, q_next: float) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    return r + gamma * q_next


class QImportanceModel(BaseEstimator):
    """Tabular Q-function over cell states.

    Parameters
    ----------
    gamma : float
        Discount factor in [0, 1).
    lam : float
        Weight of the inter-frame probability-change penalty.
    alpha : float
        Learning rate of the tabular update.
    n_bins : int
        Bins for the overlap and motion features.
    per_cell : bool
        Key the table by cell index too. When False, cells with equal feature
        bins share Q-values.
    """

    def __init__(self, gamma=0.9, lam=1.0, alpha=0.1, n_bins=4, per_cell=True):
        self.gamma = gamma
        self.lam = lam
        self.alpha = alpha
        self.n_bins = n_bins
        self.per_cell = per_cell

    def _check_params(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.lam < 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.n_bins < 1:
            raise ValueError(f"n_bins must be at least 1, got {self.n_bins}")

    def _ensure_table(self):
        if not hasattr(self, "q_"):
            self._check_params()
            self.q_: dict[Hashable, np.ndarray] = {}
            self.n_updates_ = 0
            self.loss_ = None

    def key(self, state: Hashable) -> Hashable:
        if not self.per_cell and isinstance(state, CellState):
            return (state.overlap_bin, state.motion_bin)
        return state

    def q_values(self, state: Hashable) -> np.ndarray:
        self._ensure_table()
        row = self.q_.get(self.key(state))
        return row.copy() if row is not None else np.zeros(N_ACTIONS)

    def state_value(self, state: Hashable) -> float:
        """Best action value, used as the Bellman bootstrap."""
        row = self.q_.get(self.key(state)) if hasattr(self, "q_") else None
        return float(row.max()) if row is not None else 0.0

    def importance(self, states: Sequence[Hashable]) -> np.ndarray:
        """Per-state value clamped below at zero."""
        return np.array([max(self.state_value(s), 0.0) for s in states])

    def partial_fit(self, transitions: Sequence[Transition], prev_probs=None):
        self.loss_ = train_step(self, transitions, prev_probs)
        return self

    def fit(self, transitions: Sequence[Transition], n_sweeps: int = 1):
        """Reset the table and run ``n_sweeps`` passes over ``transitions``."""
        for attr in ("q_", "n_updates_", "loss_"):
            if hasattr(self, attr):
                delattr(self, attr)
        for _ in range(n_sweeps):
            self.partial_fit(transitions)
        return self

    def weight_map(self, states: Sequence[Hashable]) -> np.ndarray:
        return weight_map(self, states)

    def predict_proba(self, states: Sequence[Hashable], prev_probs=None) -> np.ndarray:
        """Transmission probabilities for ``states``, smoothed toward ``prev_probs``."""
        raw = probability_map(weight_map(self, states))
        if prev_probs is None:
            return raw
        return smooth_probabilities(raw, prev_probs, self.lam)

    def save(self, path: str | os.PathLike) -> None:
        check_is_fitted(self, "q_")
        entries = [
            [list(k) if isinstance(k, tuple) else k, row.tolist()] for k, row in sorted(
                self.q_.items(), key=lambda kv: repr(kv[0])
            )
        ]
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "params": self.get_params(),
            "n_updates": self.n_updates_,
            "entries": entries,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "QImportanceModel":
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path} is not a Q-table checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        model = cls(**doc["params"])
        model._ensure_table()
        for key, row in doc["entries"]:
            if isinstance(key, list):
                key = CellState(*key) if len(key) == 3 else tuple(key)
            model.q_[key] = np.asarray(row, dtype=float)
        model.n_updates_ = doc.get("n_updates", 0)
        return model


def train_step(model: QImportanceModel, transitions: Sequence[Transition], prev_probs=None) -> float:
    """One tabular Q-learning pass over ``transitions``; returns the pre-update loss.

    Loss = mean squared Bellman residual + ``lam * sum((P - prev_probs)**2)``
    where ``P`` is the model's smoothed map over the batch's start states.
    The regulariser term needs one transition per cell, in row-major order.
    """
    if not transitions:
        raise ValueError("train_step needs at least one transition")
    model._ensure_table()
    gamma, alpha = model.gamma, model.alpha

    residuals = np.empty(len(transitions))
    for i, t in enumerate(transitions):
        target = t.reward + gamma * model.state_value(t.next_state)
        residuals[i] = model.q_values(t.state)[int(t.action)] - target
    loss = float(np.mean(residuals**2))

    if prev_probs is not None and model.lam > 0:
        prev = check_cell_vector(prev_probs, len(transitions), name="prev_probs")
        probs = model.predict_proba([t.state for t in transitions], prev)
        loss += model.lam * float(np.sum((probs - prev) ** 2))

    q = model.q_
    for t in transitions:
        key = model.key(t.state)
        row = q.get(key)
        if row is None:
            row = q[key] = np.zeros(N_ACTIONS)
        target = t.reward + gamma * model.state_value(t.next_state)
        row[int(t.action)] += alpha * (target - row[int(t.action)])
        if not math.isfinite(row[int(t.action)]):
            raise FloatingPointError(f"Q-value for {key} diverged")
    model.n_updates_ += len(transitions)
    return loss


def weight_map(model: QImportanceModel, states: Sequence[Hashable]) -> np.ndarray:
    """Normalised clamped state values; uniform when every value is zero."""
    values = model.importance(states)
    total = values.sum()
    if total <= 0:
        log.info("all cell values are zero; falling back to a uniform weight map")
        return np.full(len(values), 1.0 / len(values))
    return values / total


def probability_map(weights) -> np.ndarray:
    """Renormalise ``weights`` so they sum to one."""
    w = check_cell_vector(weights, name="weights")
    total = w.sum()
    if total <= 0:
        return np.full(w.size, 1.0 / w.size)
    return w / total


def smooth_probabilities(raw, prev, lam: float) -> np.ndarray:
    """Minimiser of ``||P - raw||^2 + lam * ||P - prev||^2``."""
    raw = np.asarray(raw, dtype=float)
    prev = np.asarray(prev, dtype=float)
    if raw.shape != prev.shape:
        raise ValueError(f"map shapes differ: {raw.shape} vs {prev.shape}")
    return (raw + lam * prev) / (1.0 + lam)


def heatmap_pixels(probs) -> np.ndarray:
    """k x k uint8 image with the most probable cell at 255."""
    p = check_cell_vector(probs, name="probability map")
    k = math.isqrt(p.size)
    if k * k != p.size:
        raise ValueError(f"map of length {p.size} is not a square grid")
    peak = p.max()
    scaled = np.zeros_like(p) if peak <= 0 else np.round(255.0 * p / peak)
    return scaled.astype(np.uint8).reshape(k, k)


def export_heatmap(probs, path: str | os.PathLike) -> np.ndarray:
    img = heatmap_pixels(probs)
    save_pgm(img, path)
    return img
