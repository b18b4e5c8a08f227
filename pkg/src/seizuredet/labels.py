"""Class names and the annotated-interval type shared by every stage."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

SEIZURE = "seizure"
BACKGROUND = "background"
CLASSES = (BACKGROUND, SEIZURE)  # index == integer label used by the models

EXPERT = "expert"
MODEL = "model"


def class_index(label: str) -> int:
    try:
        return CLASSES.index(label)
    except ValueError:
        raise ValueError(f"unknown class {label!r}; expected one of {CLASSES}") from None


@dataclass(frozen=True, order=True)
class EventLabel:
    onset_s: float
    offset_s: float
    label: str = SEIZURE
    source: str = EXPERT

    def __post_init__(self):
        if not self.offset_s > self.onset_s:
            raise ValueError(f"offset ({self.offset_s}) must exceed onset ({self.onset_s})")
        if self.label not in CLASSES:
            raise ValueError(f"unknown class {self.label!r}")

    @property
    def duration_s(self) -> float:
        return self.offset_s - self.onset_s


def check_event_list(events: Sequence[EventLabel], unsorted_exc, overlap_exc) -> None:
    """Raise if ``events`` is not sorted by onset or if neighbours overlap.

    Touching intervals (``next.onset == prev.offset``) are allowed.
    """
    for prev, cur in zip(events, events[1:]):
        if cur.onset_s < prev.onset_s:
            raise unsorted_exc(f"events not sorted by onset: {prev} before {cur}")
        if cur.onset_s < prev.offset_s:
            raise overlap_exc(f"events overlap: {prev} and {cur}")


def seizure_events(events: Iterable[EventLabel]) -> list[EventLabel]:
    return [e for e in events if e.label == SEIZURE]
