"""Single-channel signal container, resampling, FIR band-pass and z-scoring.

All functions are pure: they return new :class:`Signal` objects and never
mutate their inputs.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .errors import (
    EmptyRanges,
    EmptySignal,
    InvalidBand,
    NonPositiveRate,
    SignalShorterThanFilter,
    ZeroVariance,
)

# Hamming main-lobe width is ~3.3/N cycles per sample.
HAMMING_TRANSITION_FACTOR = 3.3
MAX_RESAMPLE_DENOMINATOR = 20000


@dataclass(frozen=True)
class Signal:
    samples: np.ndarray
    sample_rate_hz: float
    subject_id: str = ""
    recording_id: str = ""
    # Samples at each end whose filter state is still settling.
    transient_samples: int = 0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise EmptySignal("signal has no samples")
        if not self.sample_rate_hz > 0:
            raise NonPositiveRate(f"sample rate must be > 0, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def __len__(self):
        return self.samples.size

    def with_samples(self, samples, **changes) -> "Signal":
        return replace(self, samples=samples, **changes)


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float
    # Set when the requested prefix was longer than the signal.
    prefix_truncated: bool = field(default=False, compare=False)

    def __post_init__(self):
        if not self.std > 0:
            raise ZeroVariance(f"normalisation std must be > 0, got {self.std}")


@dataclass(frozen=True)
class TimeRange:
    start_s: float
    end_s: float

    def __post_init__(self):
        if self.start_s < 0:
            raise ValueError(f"start_s must be >= 0, got {self.start_s}")
        if not self.end_s > self.start_s:
            raise ValueError(f"end_s ({self.end_s}) must exceed start_s ({self.start_s})")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


def rational_ratio(source_rate_hz: float, target_rate_hz: float,
                   max_denominator: int = MAX_RESAMPLE_DENOMINATOR) -> tuple[int, int]:
    """Return ``(up, down)`` with ``up/down`` closest to ``target/source``."""
    if not source_rate_hz > 0 or not target_rate_hz > 0:
        raise NonPositiveRate("sample rates must be > 0")
    ratio = Fraction(target_rate_hz / source_rate_hz).limit_denominator(max_denominator)
    # limit_denominator works on the float repr; snap back to exact decimal input
    exact = Fraction(str(target_rate_hz)) / Fraction(str(source_rate_hz))
    if exact.denominator <= max_denominator:
        ratio = exact
    return ratio.numerator, ratio.denominator


@lru_cache(maxsize=16)
def _antialias_taps(up: int, down: int) -> np.ndarray:
    # Same design as scipy's resample_poly default; cached because the
    # 173.61 -> 100 Hz filter has ~350k taps.
    max_rate = max(up, down)
    half_len = 10 * max_rate
    h = sps.firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", 5.0))
    h.setflags(write=False)
    return h


def resample(sig: Signal, target_rate_hz: float) -> Signal:
    """Polyphase rational resampling with a unity-DC-gain anti-alias filter.

    Non-rational ratios are approximated by the closest fraction whose
    denominator is at most 20000; the returned signal carries the exact
    ``target_rate_hz``.
    """
    if not target_rate_hz > 0:
        raise NonPositiveRate(f"target rate must be > 0, got {target_rate_hz}")
    up, down = rational_ratio(sig.sample_rate_hz, target_rate_hz)
    if up == down:
        return sig.with_samples(sig.samples.copy(), sample_rate_hz=float(target_rate_hz))
    window = _antialias_taps(up, down)
    out = sps.resample_poly(sig.samples, up, down, window=window, padtype="line")
    return sig.with_samples(out, sample_rate_hz=float(target_rate_hz), transient_samples=0)


def bandpass_taps(sample_rate_hz: float, low_hz: float, high_hz: float,
                  transition_hz: float = 1.0) -> np.ndarray:
    """Hamming windowed-sinc band-pass with an odd tap count."""
    if not 0 < low_hz < high_hz < sample_rate_hz / 2:
        raise InvalidBand(
            f"need 0 < low < high < nyquist, got low={low_hz}, high={high_hz}, "
            f"fs={sample_rate_hz}")
    numtaps = math.ceil(HAMMING_TRANSITION_FACTOR * sample_rate_hz / transition_hz)
    numtaps += 1 - numtaps % 2
    return sps.firwin(numtaps, [low_hz, high_hz], pass_zero=False,
                      fs=sample_rate_hz, window="hamming")


def fir_bandpass(sig: Signal, low_hz: float = 1.0, high_hz: float = 20.0) -> Signal:
    """Zero-delay linear-phase band-pass filter.

    The output has the same length as the input and sample ``k`` of the
    output is aligned with sample ``k`` of the input. The first and last
    ``numtaps // 2`` samples are recorded in ``transient_samples``.
    """
    taps = bandpass_taps(sig.sample_rate_hz, low_hz, high_hz)
    if len(sig) < taps.size:
        raise SignalShorterThanFilter(
            f"signal has {len(sig)} samples, filter needs at least {taps.size}")
    # odd tap count + mode="same" == group-delay compensated convolution
    out = np.convolve(sig.samples, taps, mode="same")
    transient = max(sig.transient_samples, taps.size // 2)
    return sig.with_samples(out, transient_samples=transient)


def _stats(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    std = float(np.std(values))
    if not std > 0:
        raise ZeroVariance("selected samples have zero variance")
    return mean, std


def range_mask(sig: Signal, ranges: Sequence[TimeRange]) -> np.ndarray:
    """Boolean mask selecting samples whose time stamp falls in any range."""
    t = np.arange(len(sig)) / sig.sample_rate_hz
    mask = np.zeros(len(sig), dtype=bool)
    tol = 1e-9
    for r in ranges:
        if r.end_s > sig.duration_s + tol:
            raise ValueError(f"range {r} exceeds signal duration {sig.duration_s}")
        mask |= (t >= r.start_s - tol) & (t < r.end_s - tol)
    return mask


def stats_from_ranges(sig: Signal, ranges: Sequence[TimeRange]) -> NormStats:
    """Mean/std over the concatenation of samples inside ``ranges``."""
    if not ranges:
        raise EmptyRanges("no ranges given")
    mask = range_mask(sig, ranges)
    if not mask.any():
        raise EmptyRanges("ranges select no samples")
    return NormStats(*_stats(sig.samples[mask]))


def stats_from_prefix(sig: Signal, prefix_s: float = 300.0) -> NormStats:
    """Mean/std over the first ``prefix_s`` seconds.

    Signals shorter than the prefix fall back to the whole signal and the
    result is flagged with ``prefix_truncated``.
    """
    if not prefix_s > 0:
        raise ValueError(f"prefix_s must be > 0, got {prefix_s}")
    n = int(round(prefix_s * sig.sample_rate_hz))
    truncated = n > len(sig)
    if truncated:
        warnings.warn(
            f"signal {sig.recording_id!r} is {sig.duration_s:.1f} s, shorter than the "
            f"{prefix_s:.1f} s normalisation prefix; using the whole signal",
            stacklevel=2)
    mean, std = _stats(sig.samples[:n])
    return NormStats(mean, std, prefix_truncated=truncated)


def zscore(sig: Signal, stats: NormStats) -> Signal:
    if not stats.std > 0:
        raise ZeroVariance("stats.std must be > 0")
    return sig.with_samples((sig.samples - stats.mean) / stats.std)
