"""Reassembling overlapping window predictions into seizure events.

Every time bin gets the majority class among the windows covering it
(ties and uncovered bins are background); maximal seizure runs then become
events.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyPredictions, MixedRecordings
from .labels import BACKGROUND, MODEL, SEIZURE, EventLabel
from .windowing import Window

DEFAULT_THRESHOLD = 0.5
_ALIGN_TOL = 1e-6


@dataclass(frozen=True)
class Prediction:
    window: Window
    predicted_class: str
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.predicted_class not in (SEIZURE, BACKGROUND):
            raise ValueError(f"unknown class {self.predicted_class!r}")

    @classmethod
    def from_score(cls, window: Window, score: float, threshold: float = DEFAULT_THRESHOLD):
        score = float(score)
        return cls(window, SEIZURE if score >= threshold else BACKGROUND, score)


@dataclass(frozen=True)
class LabelTrack:
    bin_s: float
    is_seizure: np.ndarray
    origin_s: float = 0.0

    def __post_init__(self):
        if not self.bin_s > 0:
            raise ValueError(f"bin_s must be > 0, got {self.bin_s}")
        bins = np.asarray(self.is_seizure, dtype=bool)
        if bins.size == 0:
            raise ValueError("track has no bins")
        object.__setattr__(self, "is_seizure", bins)

    @property
    def bins(self) -> list[str]:
        return [SEIZURE if s else BACKGROUND for s in self.is_seizure]

    @property
    def end_s(self) -> float:
        return self.origin_s + self.is_seizure.size * self.bin_s

    def seizure_duration_s(self) -> float:
        return float(self.is_seizure.sum()) * self.bin_s


def _bin_index(t: float, origin: float, bin_s: float) -> int:
    x = (t - origin) / bin_s
    i = int(round(x))
    if abs(x - i) > _ALIGN_TOL * max(1.0, abs(x)):
        raise ValueError(
            f"time {t} s is not on the {bin_s} s bin grid from {origin} s; "
            "bin_s must divide the window shift and length")
    return i


def vote_counts(preds: Sequence[Prediction], bin_s: float, origin_s: float, n_bins: int):
    """Per-bin (seizure votes, total votes) using difference arrays."""
    seiz = np.zeros(n_bins + 1, dtype=np.int64)
    total = np.zeros(n_bins + 1, dtype=np.int64)
    for p in preds:
        a = _bin_index(p.window.start_s, origin_s, bin_s)
        b = _bin_index(p.window.end_s, origin_s, bin_s)
        total[a] += 1
        total[b] -= 1
        if p.predicted_class == SEIZURE:
            seiz[a] += 1
            seiz[b] -= 1
    return np.cumsum(seiz)[:n_bins], np.cumsum(total)[:n_bins]


def reconstruct_track(preds: Sequence[Prediction], bin_s: float) -> LabelTrack:
    """Majority vote of overlapping window predictions on a regular bin grid.

    The grid starts at the earliest window start and ends at the latest
    window end. Strict majority is needed for seizure, so ties go to
    background, as do bins no window covers.
    """
    if not preds:
        raise EmptyPredictions("no predictions to reconstruct")
    recordings = {p.window.recording_id for p in preds}
    if len(recordings) > 1:
        raise MixedRecordings(f"predictions come from several recordings: {sorted(recordings)}")
    origin = min(p.window.start_s for p in preds)
    end = max(p.window.end_s for p in preds)
    n_bins = _bin_index(end, origin, bin_s)
    seiz, total = vote_counts(preds, bin_s, origin, n_bins)
    return LabelTrack(bin_s=bin_s, is_seizure=2 * seiz > total, origin_s=origin)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def extract_events(track: LabelTrack, min_duration_s: float = 0.0,
                   merge_gap_s: float = 0.0) -> list[EventLabel]:
    """Seizure runs of ``track`` as events, merging short gaps then dropping short events."""
    eps = 1e-9 * track.bin_s
    merged: list[list[float]] = []
    for a, b in _runs(track.is_seizure):
        on = track.origin_s + a * track.bin_s
        off = track.origin_s + b * track.bin_s
        if merged and on - merged[-1][1] < merge_gap_s - eps:
            merged[-1][1] = off
        else:
            merged.append([on, off])
    return [EventLabel(on, off, SEIZURE, MODEL) for on, off in merged
            if off - on >= min_duration_s - eps]


def track_from_events(events: Sequence[EventLabel], bin_s: float, origin_s: float,
                      n_bins: int) -> LabelTrack:
    """Rasterise events onto a bin grid (bins whose centre lies inside an event)."""
    centres = origin_s + (np.arange(n_bins) + 0.5) * bin_s
    mask = np.zeros(n_bins, dtype=bool)
    for ev in events:
        if ev.label == SEIZURE:
            mask |= (centres >= ev.onset_s) & (centres < ev.offset_s)
    return LabelTrack(bin_s=bin_s, is_seizure=mask, origin_s=origin_s)
