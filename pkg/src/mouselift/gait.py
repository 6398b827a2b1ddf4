"""Stride analytics from a foot-position time series.

The aggregate stride duration is the period of the strongest spectral peak
of the (Hann-windowed) trace; individual strides are peak-to-peak gaps.
Durations become lengths by multiplying with the treadmill belt speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks

from .errors import InsufficientDataError, NoPeriodicityError, NonFiniteError

MIN_SAMPLES = 64
MIN_FREQUENCY = 0.5


@dataclass(frozen=True)
class FootTrace:
    """Uniformly sampled foot coordinate (arbitrary units).

    ``belt_speed`` is in cm/s, so stride lengths come out in cm.
    """

    values: np.ndarray
    sample_rate: float
    joint: str = "left_ankle"
    belt_speed: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).ravel())
        if not self.sample_rate > 0:
            raise InsufficientDataError("sample rate must be positive")


@dataclass(frozen=True)
class StrideReport:
    dominant_duration: float
    aggregate_length: float
    peaks: np.ndarray
    durations: np.ndarray
    lengths: np.ndarray
    outliers: np.ndarray
    inlier_mean: float
    inlier_std: float
    belt_speed: float
    outlier_sigma: float


def _checked(trace: FootTrace, min_samples: int) -> np.ndarray:
    x = trace.values
    if len(x) < min_samples:
        raise InsufficientDataError(f"trace has {len(x)} samples; need at least {min_samples}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("trace contains non-finite values")
    if np.var(x) < 1e-12:
        raise NoPeriodicityError("trace is flat")
    return x


def spectrum(trace: FootTrace) -> tuple[np.ndarray, np.ndarray]:
    """Frequencies (Hz) and magnitudes of the mean-removed, Hann-windowed trace."""
    x = trace.values - trace.values.mean()
    mag = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.fft.rfftfreq(len(x), 1.0 / trace.sample_rate), mag


def _peak_frequency(trace: FootTrace) -> float:
    freqs, mag = spectrum(trace)
    band = np.flatnonzero((freqs >= MIN_FREQUENCY) & (freqs < trace.sample_rate / 2.0))
    if len(band) == 0:
        raise NoPeriodicityError("no frequency bins between 0.5 Hz and Nyquist")
    k = int(band[np.argmax(mag[band])])
    if mag[k] <= 0:
        raise NoPeriodicityError("spectrum is empty in the analysis band")
    offset = 0.0
    if 0 < k < len(mag) - 1:
        a, b, c = mag[k - 1], mag[k], mag[k + 1]
        denom = a - 2.0 * b + c
        if denom < 0:
            offset = 0.5 * (a - c) / denom
    return (k + offset) * trace.sample_rate / len(trace.values)


def dominant_stride_duration(trace: FootTrace) -> float:
    """Period (s) of the dominant spectral peak, refined by parabolic interpolation."""
    _checked(trace, MIN_SAMPLES)
    return 1.0 / _peak_frequency(trace)


def stride_peaks(trace: FootTrace) -> np.ndarray:
    """Stride peak indices.

    Peaks need a prominence of half the trace standard deviation and must be
    at least half a dominant stride apart. Short traces (under 64 samples)
    are accepted here; the spectral estimate is then coarser.
    """
    x = _checked(trace, 8)
    period = 1.0 / _peak_frequency(trace)
    distance = max(1.0, 0.5 * period * trace.sample_rate)
    peaks, _ = find_peaks(x, distance=distance, prominence=0.5 * np.std(x))
    return peaks


def flag_outliers(lengths: np.ndarray, sigma: float) -> np.ndarray:
    """Single pass: ``|l - mean| > sigma * std`` with mean/std over all lengths."""
    lengths = np.asarray(lengths, dtype=float)
    if len(lengths) == 0:
        return np.zeros(0, bool)
    return np.abs(lengths - lengths.mean()) > sigma * lengths.std()


def stride_report(trace: FootTrace, outlier_sigma: float = 2.3) -> StrideReport:
    """Aggregate and individual stride durations/lengths with outlier flags.

    Outliers are flagged once against the mean and (population) standard
    deviation of all strides; the reported mean/std are then recomputed on
    the inliers. With fewer than three strides only the aggregate is filled.
    """
    dominant = dominant_stride_duration(trace)
    aggregate = dominant * trace.belt_speed
    peaks = stride_peaks(trace)
    durations = np.diff(peaks) / trace.sample_rate
    if len(durations) < 3:
        empty = np.zeros(0)
        return StrideReport(dominant, aggregate, peaks, empty, empty, np.zeros(0, bool),
                            float("nan"), float("nan"), trace.belt_speed, outlier_sigma)
    lengths = durations * trace.belt_speed
    outliers = flag_outliers(lengths, outlier_sigma)
    inliers = lengths[~outliers]
    return StrideReport(dominant, aggregate, peaks, durations, lengths, outliers,
                        float(inliers.mean()), float(inliers.std()), trace.belt_speed, outlier_sigma)
