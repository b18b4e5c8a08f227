import numpy as np
import pytest

from seizuredet.labels import EventLabel
from seizuredet.signal_core import Signal


def make_signal(samples, fs=100.0, rec="rec-0", subject="subj-0"):
    return Signal(np.asarray(samples, dtype=np.float64), fs, subject_id=subject, recording_id=rec)


def sine(freq_hz, duration_s, fs, amp=1.0, phase=0.0):
    t = np.arange(int(round(duration_s * fs))) / fs
    return amp * np.sin(2 * np.pi * freq_hz * t + phase)


def ev(onset, offset, **kw):
    return EventLabel(float(onset), float(offset), **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def report(criterion, status, text):
    line = f"[{status}] criterion {criterion}: {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
