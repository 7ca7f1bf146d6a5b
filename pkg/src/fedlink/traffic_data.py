"""Per-node traffic series: ingestion, synthetic generation and preprocessing.

The preprocessing chain is resample -> IQR outlier repair -> trailing moving
average -> z-score standardization, always in that order.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import lfilter

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for unreadable, malformed or degenerate traffic data."""


class ZeroVarianceError(DataError):
    pass


@dataclass(frozen=True)
class NodeSeries:
    node_id: int
    values: np.ndarray
    sample_interval_hours: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DataError(f"node {self.node_id}: series must be a non-empty 1-D sequence")
        if not self.sample_interval_hours > 0:
            raise DataError("sample_interval_hours must be positive")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def with_values(self, values, sample_interval_hours: float | None = None) -> "NodeSeries":
        if sample_interval_hours is None:
            sample_interval_hours = self.sample_interval_hours
        return NodeSeries(self.node_id, values, sample_interval_hours)


@dataclass(frozen=True)
class Scaler:
    mean: float
    std_dev: float

    def __post_init__(self):
        if not self.std_dev > 0:
            raise ZeroVarianceError("scaler std_dev must be positive")

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std_dev

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.std_dev + self.mean


@dataclass(frozen=True)
class SyntheticSpec:
    length: int
    base_level: float = 100.0
    diurnal_amplitude: float = 30.0
    diurnal_period_samples: int = 24
    trend_per_sample: float = 0.0
    noise_std: float = 10.0
    spike_probability: float = 0.005
    spike_magnitude: float = 200.0
    seed: int = 0
    # slow AR(1) component; 0 disables it
    wander_std: float = 0.0
    wander_timescale: float = 240.0

    def __post_init__(self):
        if self.length < 1:
            raise DataError("synthetic length must be >= 1")
        if self.diurnal_period_samples < 1:
            raise DataError("diurnal_period_samples must be >= 1")
        if self.noise_std < 0:
            raise DataError("noise_std must be non-negative")
        if not 0.0 <= self.spike_probability <= 1.0:
            raise DataError("spike_probability must lie in [0, 1]")
        if self.wander_std < 0 or not self.wander_timescale > 0:
            raise DataError("wander_std must be non-negative and wander_timescale positive")


@dataclass(frozen=True)
class PreprocessConfig:
    resample_window: int = 6
    q_low: float = 0.20
    q_high: float = 0.80
    iqr_k: float = 1.5
    smoothing_window: int = 28


def ingest_series(path, node_id: int) -> NodeSeries:
    """Read one value per line.

    A non-numeric first line is skipped as a column header, but only when data
    lines follow it.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing traffic file: {path}")
    lines = [(n, raw.split(",")[0].strip()) for n, raw in enumerate(path.read_text().splitlines(), start=1)]
    lines = [(n, text) for n, text in lines if text]
    if not lines:
        raise DataError(f"{path}: empty traffic file")
    if len(lines) > 1 and lines[0][0] == 1 and not _is_number(lines[0][1]):
        lines = lines[1:]
    values = []
    for lineno, text in lines:
        try:
            value = float(text)
        except ValueError:
            raise DataError(f"{path}: line {lineno}: cannot parse {text!r} as a number") from None
        if not math.isfinite(value) or value < 0:
            raise DataError(f"{path}: line {lineno}: value {text!r} is not a finite non-negative number")
        values.append(value)
    return NodeSeries(node_id, np.array(values), 1.0)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def write_series(series: NodeSeries, path, header: str | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        if header:
            fh.write(header + "\n")
        for v in series.values:
            fh.write(f"{float(v)!r}\n")


def generate_synthetic(spec: SyntheticSpec, node_id: int = 1) -> NodeSeries:
    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.length, dtype=np.float64)
    values = (
        spec.base_level
        + spec.diurnal_amplitude * np.sin(2.0 * np.pi * t / spec.diurnal_period_samples)
        + spec.trend_per_sample * t
    )
    # every stream is drawn unconditionally so outputs do not depend on which knobs are zero
    noise = rng.normal(0.0, 1.0, spec.length) * spec.noise_std
    spikes = (rng.random(spec.length) < spec.spike_probability) * spec.spike_magnitude
    shocks = rng.normal(0.0, 1.0, spec.length)
    if spec.wander_std > 0:
        # stationary AR(1) with marginal std wander_std
        phi = math.exp(-1.0 / spec.wander_timescale)
        drive = shocks * math.sqrt(1.0 - phi * phi)
        drive[0] = shocks[0]
        wander = lfilter([1.0], [1.0, -phi], drive)
        values = values + spec.wander_std * wander
    values = np.maximum(values + noise + spikes, 0.0)
    return NodeSeries(node_id, values, 1.0)


def resample_mean(series: NodeSeries, window_samples: int = 6) -> NodeSeries:
    if window_samples < 1:
        raise DataError("window_samples must be positive")
    n_blocks = len(series) // window_samples
    if n_blocks == 0:
        raise DataError(
            f"node {series.node_id}: series of length {len(series)} is shorter than one {window_samples}-sample window"
        )
    blocks = series.values[: n_blocks * window_samples].reshape(n_blocks, window_samples)
    return series.with_values(blocks.mean(axis=1), series.sample_interval_hours * window_samples)


def iqr_bounds(values, q_low: float = 0.20, q_high: float = 0.80, k: float = 1.5) -> tuple[float, float]:
    q1, q3 = np.quantile(np.asarray(values, dtype=np.float64), [q_low, q_high], method="linear")
    spread = q3 - q1
    return float(q1 - k * spread), float(q3 + k * spread)


def replace_outliers_iqr(series: NodeSeries, q_low: float = 0.20, q_high: float = 0.80, k: float = 1.5) -> NodeSeries:
    """Replace values outside the IQR fences by the mean of the in-range values.

    If every value is flagged the input is returned unchanged and a warning is
    logged.
    """
    if len(series) < 5:
        raise DataError(f"node {series.node_id}: need at least 5 samples for outlier repair")
    lo, hi = iqr_bounds(series.values, q_low, q_high, k)
    inside = (series.values >= lo) & (series.values <= hi)
    if not inside.any():
        log.warning("node %s: every value flagged as outlier; series left unchanged", series.node_id)
        return series
    if inside.all():
        return series
    repaired = np.where(inside, series.values, series.values[inside].mean())
    return series.with_values(repaired)


def moving_average(series: NodeSeries, window: int = 28) -> NodeSeries:
    """Trailing moving average; the first window-1 outputs average the partial prefix."""
    if window < 1:
        raise DataError("window must be positive")
    values = series.values
    n = values.size
    out = np.empty(n)
    warm = min(window - 1, n)
    out[:warm] = np.cumsum(values[:warm]) / np.arange(1, warm + 1)
    if n >= window:
        out[window - 1 :] = sliding_window_view(values, window).mean(axis=1)
    return series.with_values(out)


def fit_scaler(series: NodeSeries) -> Scaler:
    if len(series) < 2:
        raise DataError(f"node {series.node_id}: need at least 2 samples to fit a scaler")
    mean = float(series.values.mean())
    std = float(series.values.std())
    # rounding in the mean leaves ~1e-16 spread on constant input
    if not std > 1e-12 * max(1.0, abs(mean)):
        raise ZeroVarianceError(f"node {series.node_id}: zero-variance series cannot be standardized")
    return Scaler(mean, std)


def apply_scaler(series: NodeSeries, scaler: Scaler) -> NodeSeries:
    return series.with_values(scaler.transform(series.values))


def invert_scaler(series: NodeSeries, scaler: Scaler) -> NodeSeries:
    return series.with_values(scaler.inverse(series.values))


def smooth_stages(series: NodeSeries, config: PreprocessConfig = PreprocessConfig()) -> NodeSeries:
    """The three unscaled stages of the pipeline."""
    out = resample_mean(series, config.resample_window)
    out = replace_outliers_iqr(out, config.q_low, config.q_high, config.iqr_k)
    return moving_average(out, config.smoothing_window)


def preprocess_pipeline(
    series: NodeSeries,
    config: PreprocessConfig = PreprocessConfig(),
    fit_length: int | None = None,
) -> tuple[NodeSeries, Scaler]:
    """Run all four stages and return the standardized series with its scaler.

    ``fit_length`` restricts scaler fitting to the leading samples (the
    training span); ``None`` fits on the whole smoothed series.
    """
    smoothed = smooth_stages(series, config)
    fit_on = smoothed if fit_length is None else smoothed.with_values(smoothed.values[:fit_length])
    scaler = fit_scaler(fit_on)
    return apply_scaler(smoothed, scaler), scaler

