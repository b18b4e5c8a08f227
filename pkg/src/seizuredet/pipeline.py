"""End-to-end composition of the classification and detection pipelines.

classification: resample -> band-pass -> z-score on background ranges ->
activity-pure windows -> model -> segment scoring.

detection: resample -> band-pass -> z-score on the first 5 minutes ->
sliding windows -> model -> majority-vote track -> events -> event scoring.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .events import LabelTrack, Prediction, extract_events, reconstruct_track
from .labels import BACKGROUND, EventLabel
from .neural.models import Detector
from .scoring import ConfusionCounts, EvalConfig, evaluate_segments, match_events
from .signal_core import (
    Signal,
    TimeRange,
    fir_bandpass,
    resample,
    stats_from_prefix,
    stats_from_ranges,
    zscore,
)
from .windowing import (
    SegmentationConfig,
    Window,
    activity_runs,
    segment_by_activity,
    segment_sliding,
    stack,
)

MODEL_RATE_HZ = 100.0
BAND_HZ = (1.0, 20.0)
NORM_PREFIX_S = 300.0


def condition(sig: Signal, target_rate_hz: float = MODEL_RATE_HZ,
              band_hz: tuple[float, float] = BAND_HZ) -> Signal:
    """Resample to the model rate, then band-pass."""
    if sig.sample_rate_hz != target_rate_hz:
        sig = resample(sig, target_rate_hz)
    return fir_bandpass(sig, *band_hz)


def background_ranges(duration_s: float, events: Sequence[EventLabel]) -> list[TimeRange]:
    return [TimeRange(a, b) for a, b, label in activity_runs(duration_s, events)
            if label == BACKGROUND and b > a]


def preprocess_classification(sig: Signal, events: Sequence[EventLabel],
                              cfg: SegmentationConfig) -> list[Window]:
    """Labelled, activity-pure windows; normalised on the background ranges."""
    sig = condition(sig)
    stats = stats_from_ranges(sig, background_ranges(sig.duration_s, events))
    return segment_by_activity(zscore(sig, stats), events, cfg)


def preprocess_detection(sig: Signal, cfg: SegmentationConfig,
                         prefix_s: float = NORM_PREFIX_S) -> list[Window]:
    """Unlabelled sliding windows; normalised on the first ``prefix_s`` seconds."""
    sig = condition(sig)
    return segment_sliding(zscore(sig, stats_from_prefix(sig, prefix_s)), cfg)


def predict(model: Detector, windows: Sequence[Window], threshold: float = 0.5,
            batch_size: int = 256) -> list[Prediction]:
    if not windows:
        return []
    probs = model.predict_proba(stack(windows), batch_size=batch_size)[:, 1]
    probs = np.clip(probs.astype(np.float64), 0.0, 1.0)
    return [Prediction.from_score(w, p, threshold) for w, p in zip(windows, probs)]


@dataclass
class Detection:
    events: list[EventLabel]
    track: Optional[LabelTrack]
    predictions: list[Prediction]


def detect(model: Detector, sig: Signal, cfg: SegmentationConfig,
           bin_s: Optional[float] = None, min_duration_s: float = 0.0,
           merge_gap_s: float = 0.0, threshold: float = 0.5) -> Detection:
    """Run the detection pipeline on one recording.

    ``bin_s`` defaults to the window shift. A recording shorter than one
    window yields no events.
    """
    if sig.duration_s < cfg.window_s:
        return Detection([], None, [])
    windows = preprocess_detection(sig, cfg)
    preds = predict(model, windows, threshold)
    if not preds:
        return Detection([], None, [])
    track = reconstruct_track(preds, bin_s or cfg.shift_s)
    return Detection(extract_events(track, min_duration_s, merge_gap_s), track, preds)


def score_detection(model: Detector, recordings, cfg: SegmentationConfig,
                    eval_cfg: EvalConfig = EvalConfig(), **detect_kwargs) -> ConfusionCounts:
    """Summed event-based counts over ``(signal, events)`` pairs."""
    total = ConfusionCounts()
    for sig, truth in recordings:
        hyp = detect(model, sig, cfg, **detect_kwargs).events
        total = total + match_events(truth, hyp, eval_cfg)
    return total


def score_classification(model: Detector, recordings, cfg: SegmentationConfig,
                         threshold: float = 0.5) -> ConfusionCounts:
    """Summed segment-based counts over ``(signal, events)`` pairs."""
    total = ConfusionCounts()
    for sig, truth in recordings:
        windows = preprocess_classification(sig, truth, cfg)
        preds = predict(model, windows, threshold)
        total = total + evaluate_segments(preds, [w.label for w in windows])
    return total


def training_windows(recordings, cfg: SegmentationConfig, balance: bool = True,
                     seed: int = 0) -> list[Window]:
    """Pre-processing C windows pooled over ``(signal, events)`` pairs.

    With ``balance`` the majority class is randomly subsampled (by ``seed``)
    down to the minority count; the original order is kept.
    """
    windows: list[Window] = []
    for sig, truth in recordings:
        windows += preprocess_classification(sig, truth, cfg)
    if not balance:
        return windows
    labels = np.array([w.label for w in windows])
    idx = {c: np.flatnonzero(labels == c) for c in np.unique(labels)}
    if len(idx) < 2:
        return windows
    n = min(len(v) for v in idx.values())
    rng = np.random.default_rng(seed)
    keep = np.sort(np.concatenate([v if len(v) == n else rng.choice(v, n, replace=False)
                                   for v in idx.values()]))
    return [windows[i] for i in keep]
