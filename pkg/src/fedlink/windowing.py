"""Sliding (history, target) windows and chronological train/val/test splits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .traffic_data import DataError, NodeSeries


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac_of_train: float = 0.20

    def __post_init__(self):
        for name in ("train_frac", "val_frac_of_train"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie strictly between 0 and 1, got {value}")


@dataclass
class WindowedDataset:
    node_id: int
    h: int
    p: int
    inputs: np.ndarray  # (n_windows, h)
    targets: np.ndarray  # (n_windows, p)
    # index of each window's first input sample in the source series
    offsets: np.ndarray

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, start: int, stop: int) -> "WindowedDataset":
        return WindowedDataset(
            self.node_id, self.h, self.p,
            self.inputs[start:stop], self.targets[start:stop], self.offsets[start:stop],
        )


def window_count(n: int, h: int, p: int) -> int:
    return n - (h + p) + 1


def make_windows(series: NodeSeries, h: int, p: int) -> WindowedDataset:
    if h < 1 or p < 1:
        raise ValueError("h and p must be positive")
    n = len(series)
    if n < h + p:
        raise DataError(f"node {series.node_id}: series of length {n} too short for h={h}, p={p} (needs {h + p})")
    frames = sliding_window_view(series.values, h + p)
    return WindowedDataset(
        series.node_id, h, p,
        np.ascontiguousarray(frames[:, :h]),
        np.ascontiguousarray(frames[:, h:]),
        np.arange(frames.shape[0]),
    )


def split_counts(n_windows: int, spec: SplitSpec = SplitSpec()) -> tuple[int, int, int]:
    """(train, val, test) counts.

    The earlier partition of each cut gets floor(frac * n); the later one takes
    the remainder. 100 windows -> (56, 14, 30); 10 windows -> (5, 2, 3).
    """
    pool = math.floor(spec.train_frac * n_windows + 1e-9)
    train = math.floor((1.0 - spec.val_frac_of_train) * pool + 1e-9)
    return train, pool - train, n_windows - pool


def split_chronological(ds: WindowedDataset, spec: SplitSpec = SplitSpec()):
    if len(ds) == 0:
        raise DataError(f"node {ds.node_id}: empty windowed dataset")
    n_train, n_val, n_test = split_counts(len(ds), spec)
    if min(n_train, n_val, n_test) < 1:
        raise DataError(
            f"node {ds.node_id}: {len(ds)} windows give an empty partition "
            f"(train={n_train}, val={n_val}, test={n_test})"
        )
    return (
        ds.subset(0, n_train),
        ds.subset(n_train, n_train + n_val),
        ds.subset(n_train + n_val, len(ds)),
    )


def training_span(n_samples: int, h: int, p: int, spec: SplitSpec = SplitSpec()) -> int:
    """Number of leading series samples touched by the training windows."""
    n_train, _, _ = split_counts(window_count(n_samples, h, p), spec)
    return n_train + h + p - 1
