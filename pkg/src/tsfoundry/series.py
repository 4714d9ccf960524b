"""Core time-series carrier type."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TimeSeries:
    """One instance: a channels x length float32 matrix.

    `lengths` keeps the per-channel valid length; by default every channel
    spans the full matrix width.
    """

    values: np.ndarray  # (channels, length) float32
    lengths: list[int] = field(default_factory=list)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2:
            raise ValueError(f"series must be 1-D or 2-D, got shape {arr.shape}")
        self.values = arr
        if not self.lengths:
            self.lengths = [arr.shape[1]] * arr.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]

    def channel(self, i: int) -> np.ndarray:
        return self.values[i, : self.lengths[i]]
