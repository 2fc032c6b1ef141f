"""Log-spaced binning with mergeable accumulators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def log_edges(lo: float = 1e-6, hi: float = 1.0, per_decade: int = 4) -> np.ndarray:
    """Log-spaced edges from ``lo`` to ``hi`` (both powers of ten)."""
    n = int(round(np.log10(hi / lo) * per_decade))
    return np.logspace(np.log10(lo), np.log10(hi), n + 1)


@dataclass
class BinAccumulator:
    """Per-bin count, sum and sum of squares; merging is order independent.

    ``sum_x`` and ``sum_logx`` track the abscissa so that each bin can
    report the arithmetic or geometric mean of its members.
    """

    edges: np.ndarray
    count: np.ndarray = None
    sum_y: np.ndarray = None
    sum_y2: np.ndarray = None
    sum_logx: np.ndarray = None

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        nb = len(self.edges) - 1
        if self.count is None:
            self.count = np.zeros(nb, dtype=np.int64)
            self.sum_y = np.zeros(nb)
            self.sum_y2 = np.zeros(nb)
            self.sum_logx = np.zeros(nb)

    def add(self, x, y) -> "BinAccumulator":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & (x > 0)
        x, y = x[ok], y[ok]
        k = np.searchsorted(self.edges, x, side="right") - 1
        inside = (k >= 0) & (k < len(self.count))
        # The top edge is closed.
        top = x == self.edges[-1]
        k[top] = len(self.count) - 1
        inside |= top
        k, x, y = k[inside], x[inside], y[inside]
        nb = len(self.count)
        self.count += np.bincount(k, minlength=nb)
        self.sum_y += np.bincount(k, weights=y, minlength=nb)
        self.sum_y2 += np.bincount(k, weights=y * y, minlength=nb)
        self.sum_logx += np.bincount(k, weights=np.log(x), minlength=nb)
        return self

    def merge(self, other: "BinAccumulator") -> "BinAccumulator":
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("cannot merge accumulators with different edges")
        return BinAccumulator(self.edges, self.count + other.count,
                              self.sum_y + other.sum_y,
                              self.sum_y2 + other.sum_y2,
                              self.sum_logx + other.sum_logx)

    def stats(self):
        """``(x_center, mean, std, se, count)``; empty bins give NaN."""
        n = self.count.astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = self.sum_y / n
            var = (self.sum_y2 - n * mean ** 2) / (n - 1)
            std = np.sqrt(np.maximum(var, 0.0))
            se = std / np.sqrt(n)
            center = np.exp(self.sum_logx / n)
        return center, mean, std, se, self.count.copy()


def binned_stats(x, y, edges):
    return BinAccumulator(edges).add(x, y).stats()
