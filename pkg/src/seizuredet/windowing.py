"""Cutting a normalised signal into fixed-length model inputs.

Two regimes are provided:

* :func:`segment_by_activity` cuts every seizure / background run on its
  own, so no window ever mixes the two classes (idealised classification
  setting).
* :func:`segment_sliding` runs one label-blind sliding window from t=0,
  as would happen on an unannotated recording.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import OverlappingLabels, UnsortedLabels
from .labels import BACKGROUND, SEIZURE, EventLabel, check_event_list, seizure_events
from .signal_core import Signal


@dataclass(frozen=True)
class SegmentationConfig:
    window_s: float = 4.0
    shift_s: float = 2.0

    def __post_init__(self):
        if not self.window_s > 0:
            raise ValueError(f"window_s must be > 0, got {self.window_s}")
        if not 0 < self.shift_s <= self.window_s:
            raise ValueError(
                f"shift_s must be in (0, window_s], got {self.shift_s} with window {self.window_s}")

    def n_window(self, sample_rate_hz: float) -> int:
        return int(round(self.window_s * sample_rate_hz))

    def n_shift(self, sample_rate_hz: float) -> int:
        n = int(round(self.shift_s * sample_rate_hz))
        if n < 1:
            raise ValueError(f"shift of {self.shift_s} s is below one sample at {sample_rate_hz} Hz")
        return n


@dataclass(frozen=True)
class Window:
    start_s: float
    samples: np.ndarray
    sample_rate_hz: float
    label: Optional[str] = None
    recording_id: str = ""

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s


def window_count(length: int, window: int, shift: int) -> int:
    """Number of full windows: ``max(0, floor((L - W) / S) + 1)``."""
    if length < window:
        return 0
    return (length - window) // shift + 1


def _cut(sig: Signal, lo: int, hi: int, n_win: int, n_shift: int, label) -> list[Window]:
    fs = sig.sample_rate_hz
    out = []
    for k in range(window_count(hi - lo, n_win, n_shift)):
        a = lo + k * n_shift
        out.append(Window(start_s=a / fs, samples=sig.samples[a:a + n_win],
                          sample_rate_hz=fs, label=label, recording_id=sig.recording_id))
    return out


def activity_runs(duration_s: float, events: Sequence[EventLabel]) -> list[tuple[float, float, str]]:
    """Partition ``[0, duration_s)`` into alternating background/seizure runs."""
    check_event_list(events, UnsortedLabels, OverlappingLabels)
    runs = []
    t = 0.0
    for ev in seizure_events(events):
        on, off = max(ev.onset_s, 0.0), min(ev.offset_s, duration_s)
        if off <= on:
            continue
        if on > t:
            runs.append((t, on, BACKGROUND))
        runs.append((on, off, SEIZURE))
        t = off
    if t < duration_s:
        runs.append((t, duration_s, BACKGROUND))
    return runs


def segment_by_activity(sig: Signal, events: Sequence[EventLabel],
                        cfg: SegmentationConfig) -> list[Window]:
    """Segment each activity run independently, re-anchoring at the run onset.

    Runs shorter than one window produce nothing; trailing partial windows
    are dropped.
    """
    fs = sig.sample_rate_hz
    n_win, n_shift = cfg.n_window(fs), cfg.n_shift(fs)
    windows = []
    for start, end, label in activity_runs(sig.duration_s, events):
        lo = int(round(start * fs))
        hi = min(int(round(end * fs)), len(sig))
        windows.extend(_cut(sig, lo, hi, n_win, n_shift, label))
    return windows


def segment_sliding(sig: Signal, cfg: SegmentationConfig) -> list[Window]:
    """Label-blind sliding windows starting at t=0.

    A signal shorter than one window yields an empty list.
    """
    fs = sig.sample_rate_hz
    return _cut(sig, 0, len(sig), cfg.n_window(fs), cfg.n_shift(fs), None)


def seizure_overlap_s(start_s: float, end_s: float, events: Sequence[EventLabel]) -> float:
    total = 0.0
    for ev in seizure_events(events):
        total += max(0.0, min(end_s, ev.offset_s) - max(start_s, ev.onset_s))
    return total


def assign_window_labels(windows: Sequence[Window], events: Sequence[EventLabel]) -> list[Window]:
    """Label a window ``seizure`` when at least half of it overlaps seizure events."""
    out = []
    for w in windows:
        frac = seizure_overlap_s(w.start_s, w.end_s, events) / w.duration_s
        label = SEIZURE if frac >= 0.5 - 1e-9 else BACKGROUND
        out.append(Window(w.start_s, w.samples, w.sample_rate_hz, label, w.recording_id))
    return out


def stack(windows: Sequence[Window]) -> np.ndarray:
    """Windows as an ``(N, L)`` array."""
    if not windows:
        return np.zeros((0, 0))
    return np.stack([w.samples for w in windows])
