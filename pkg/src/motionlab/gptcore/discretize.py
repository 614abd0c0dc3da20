"""Per-dimension uniform discretization of continuous outputs.

Each output dimension gets K equal bins spanning mean +- 5 std of the
training split. Out-of-range values clamp to the edge bins; decoding maps a
probability vector to the probability-weighted average of bin centers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from motionlab.errors import MotionLabError

RANGE_STDS = 5.0


@dataclass(frozen=True)
class Discretizer:
    lo: np.ndarray       # (D,)
    hi: np.ndarray       # (D,)
    n_bins: int

    def __post_init__(self):
        if self.n_bins < 2:
            raise MotionLabError("discretizer needs at least 2 bins")
        if not np.all(self.lo < self.hi):
            raise MotionLabError("discretizer ranges must satisfy lo < hi")

    @staticmethod
    def from_stats(mean, std, n_bins: int) -> "Discretizer":
        mean = np.asarray(mean, dtype=float)
        std = np.asarray(std, dtype=float)
        return Discretizer(lo=mean - RANGE_STDS * std, hi=mean + RANGE_STDS * std, n_bins=n_bins)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def width(self) -> np.ndarray:
        return (self.hi - self.lo) / self.n_bins

    def centers(self) -> np.ndarray:
        """(D, K) bin centers."""
        k = np.arange(self.n_bins) + 0.5
        return self.lo[:, None] + k[None, :] * self.width[:, None]

    def bin_index(self, values) -> np.ndarray:
        """Bin index of values (..., D); out-of-range values clamp to the
        edge bins, and value == hi lands in bin K-1."""
        values = np.asarray(values, dtype=float)
        idx = np.floor((values - self.lo) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.n_bins - 1)

    def decode(self, probs) -> np.ndarray:
        """Probability-weighted average of bin centers; probs (..., D, K)."""
        probs = np.asarray(probs, dtype=float)
        return np.sum(probs * self.centers(), axis=-1)

    def decode_greedy(self, logits) -> np.ndarray:
        """Center of the argmax bin; logits (..., D, K)."""
        idx = np.argmax(np.asarray(logits), axis=-1)
        return self.centers()[np.arange(self.dim), idx]

    def to_doc(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "n_bins": self.n_bins}

    @staticmethod
    def from_doc(doc: dict) -> "Discretizer":
        return Discretizer(lo=np.asarray(doc["lo"]), hi=np.asarray(doc["hi"]),
                           n_bins=int(doc["n_bins"]))
