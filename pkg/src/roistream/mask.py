"""Binary per-cell transmission mask."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ._validation import check_k


@dataclass(frozen=True, eq=False)
class Mask:
    """k*k booleans in row-major cell order; True means the cell is transmitted."""

    k: int
    bits: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        check_k(self.k)
        bits = np.array(self.bits, dtype=bool).ravel()
        if bits.size != self.k * self.k:
            raise ValueError(f"mask needs {self.k * self.k} bits, got {bits.size}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        if self.frame_index < 0:
            raise ValueError("frame_index must be non-negative")

    @classmethod
    def full(cls, k: int, frame_index: int = 0) -> "Mask":
        return cls(k, np.ones(k * k, dtype=bool), frame_index)

    @classmethod
    def empty(cls, k: int, frame_index: int = 0) -> "Mask":
        return cls(k, np.zeros(k * k, dtype=bool), frame_index)

    @classmethod
    def from_cells(cls, k: int, cells: Iterable[int], frame_index: int = 0) -> "Mask":
        bits = np.zeros(k * k, dtype=bool)
        for c in cells:
            bits[int(c)] = True
        return cls(k, bits, frame_index)

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())

    def cells(self) -> list[int]:
        """Linear indices of the set cells, ascending."""
        return np.flatnonzero(self.bits).tolist()

    def __contains__(self, linear_index: int) -> bool:
        return bool(self.bits[linear_index])

    def with_frame_index(self, frame_index: int) -> "Mask":
        return Mask(self.k, self.bits, frame_index)

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return (
            self.k == other.k
            and self.frame_index == other.frame_index
            and bool(np.array_equal(self.bits, other.bits))
        )

    def __hash__(self):
        return hash((self.k, self.frame_index, self.bits.tobytes()))

    def __repr__(self):
        return f"Mask(k={self.k}, frame_index={self.frame_index}, popcount={self.popcount})"
