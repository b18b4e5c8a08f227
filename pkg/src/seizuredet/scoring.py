"""Segment-level and event-level scoring.

Seizure is the positive class throughout. Event matching requires both the
onset and the offset of a detection to be within ``tolerance_s`` of an
annotated event, and pairs are one-to-one.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, Optional, Sequence

from .errors import LengthMismatch, OverlapWithinList, UnsortedEvents
from .labels import SEIZURE, EventLabel, check_event_list


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EvalConfig:
    tolerance_s: float = 1.0

    def __post_init__(self):
        if self.tolerance_s < 0:
            raise ValueError(f"tolerance_s must be >= 0, got {self.tolerance_s}")


@dataclass(frozen=True)
class MetricsReport:
    recall: float
    precision: float
    f1: float
    accuracy: Optional[float] = None

    def as_dict(self) -> dict:
        d = {"recall": self.recall, "precision": self.precision, "f1": self.f1}
        if self.accuracy is not None:
            d["accuracy"] = self.accuracy
        return d


def _is_seizure(x) -> bool:
    """Accept class names, 0/1 ints or bools."""
    if isinstance(x, str):
        return x == SEIZURE
    return bool(x)


def evaluate_segments(preds: Sequence, truths: Sequence) -> ConfusionCounts:
    """Binary confusion tally of per-segment predictions.

    ``preds`` may hold :class:`~seizuredet.events.Prediction` objects or
    plain labels; ``truths`` holds labels.
    """
    if len(preds) != len(truths):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(truths)} truths")
    tp = tn = fp = fn = 0
    for p, t in zip(preds, truths):
        p = _is_seizure(getattr(p, "predicted_class", p))
        t = _is_seizure(t)
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, tn, fp, fn)


def events_match(truth: EventLabel, hyp: EventLabel, tolerance_s: float) -> bool:
    # tiny slack so that e.g. 10.0 vs 11.0 counts as exactly 1 s
    tol = tolerance_s + 1e-9
    return abs(truth.onset_s - hyp.onset_s) <= tol and abs(truth.offset_s - hyp.offset_s) <= tol


def match_pairs(truth: Sequence[EventLabel], hyp: Sequence[EventLabel],
                cfg: EvalConfig = EvalConfig()) -> list[tuple[int, int]]:
    """Greedy one-to-one matching; returns ``(truth_index, hyp_index)`` pairs.

    Truths are visited in onset order and each takes the earliest unmatched
    compatible hypothesis. Because both lists are sorted and internally
    non-overlapping, every truth's compatible set is a contiguous run of
    hypotheses whose bounds only move forward, which makes this greedy
    choice a maximum matching.
    """
    check_event_list(truth, UnsortedEvents, OverlapWithinList)
    check_event_list(hyp, UnsortedEvents, OverlapWithinList)
    used = [False] * len(hyp)
    pairs = []
    lo = 0
    for i, t in enumerate(truth):
        # hypotheses ending too early can never match this or any later truth
        while lo < len(hyp) and hyp[lo].offset_s < t.offset_s - cfg.tolerance_s - 1e-9:
            lo += 1
        for j in range(lo, len(hyp)):
            h = hyp[j]
            if h.onset_s > t.onset_s + cfg.tolerance_s + 1e-9:
                break
            if not used[j] and events_match(t, h, cfg.tolerance_s):
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def match_events(truth: Sequence[EventLabel], hyp: Sequence[EventLabel],
                 cfg: EvalConfig = EvalConfig()) -> ConfusionCounts:
    """Event-based counts; ``tn`` is always 0."""
    tp = len(match_pairs(truth, hyp, cfg))
    return ConfusionCounts(tp=tp, tn=0, fp=len(hyp) - tp, fn=len(truth) - tp)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def compute_metrics(c: ConfusionCounts, event_based: bool = False) -> MetricsReport:
    """Recall, precision, F1 and (segment scoring only) accuracy; 0/0 -> 0."""
    recall = _ratio(c.tp, c.tp + c.fn)
    precision = _ratio(c.tp, c.tp + c.fp)
    f1 = _ratio(2 * precision * recall, precision + recall)
    accuracy = None if event_based else _ratio(c.tp + c.tn, c.total)
    return MetricsReport(recall=recall, precision=precision, f1=f1, accuracy=accuracy)


def sum_counts(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    total = ConfusionCounts()
    for c in counts:
        total = total + c
    return total


def metrics_document(task: str, counts: ConfusionCounts, config: dict) -> dict:
    """JSON-ready ``{task, counts, metrics, config}`` record."""
    if task not in ("classification", "detection"):
        raise ValueError(f"task must be 'classification' or 'detection', got {task!r}")
    report = compute_metrics(counts, event_based=(task == "detection"))
    return {"task": task, "counts": counts.as_dict(), "metrics": report.as_dict(),
            "config": dict(config)}
