"""Subject-exclusive splitting, background balancing, Bonn loading and synthetic recordings."""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import MalformedFile, MissingSet, SeizuresDoNotFit, TooFewSubjects
from .labels import BACKGROUND, EXPERT, SEIZURE, EventLabel
from .signal_core import NormStats, Signal, resample, zscore
from .windowing import SegmentationConfig, Window, segment_sliding


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str
    subject_id: str
    duration_s: float
    seizure_s: float = 0.0
    background_s: float = 0.0

    def __post_init__(self):
        if self.seizure_s < 0 or self.background_s < 0:
            raise ValueError("seizure_s and background_s must be >= 0")
        if self.seizure_s + self.background_s > self.duration_s + 1e-6:
            raise ValueError(
                f"{self.recording_id}: seizure + background ({self.seizure_s + self.background_s}) "
                f"exceeds duration ({self.duration_s})")


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != 3 or any(not f > 0 for f in self.fractions):
            raise ValueError(f"need three positive fractions, got {self.fractions}")
        if not math.isclose(sum(self.fractions), 1.0, abs_tol=1e-9):
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer sizes summing to ``n``; ties in the remainder go to the later part."""
    quotas = [n * f for f in fractions]
    sizes = [math.floor(q + 1e-9) for q in quotas]
    rema = [q - s for q, s in zip(quotas, sizes)]
    order = sorted(range(len(fractions)), key=lambda i: (-round(rema[i], 9), -i))
    for i in order[:n - sum(sizes)]:
        sizes[i] += 1
    return sizes


@dataclass(frozen=True)
class Split:
    train: list[RecordingMeta]
    val: list[RecordingMeta]
    test: list[RecordingMeta]
    seed: int

    def manifest(self) -> dict:
        return {"train": [m.recording_id for m in self.train],
                "val": [m.recording_id for m in self.val],
                "test": [m.recording_id for m in self.test],
                "seed": self.seed}

    def subjects(self) -> tuple[set, set, set]:
        return tuple({m.subject_id for m in part} for part in (self.train, self.val, self.test))


def subject_split(metas: Sequence[RecordingMeta], spec: SplitSpec = SplitSpec()) -> Split:
    """Partition recordings so that every subject lands in exactly one split.

    Subjects are sorted, shuffled with ``spec.seed`` and cut by largest
    remainder rounding of the fractions. Each split keeps at least one
    subject.
    """
    subjects = sorted({m.subject_id for m in metas})
    if len(subjects) < 3:
        raise TooFewSubjects(f"need at least 3 subjects, got {len(subjects)}")
    sizes = largest_remainder(len(subjects), spec.fractions)
    for i in range(3):
        while sizes[i] == 0:
            donor = max(range(3), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] += 1
    rng = np.random.default_rng(spec.seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    owner = {}
    start = 0
    for part, size in enumerate(sizes):
        for s in order[start:start + size]:
            owner[s] = part
        start += size
    parts: list[list[RecordingMeta]] = [[], [], []]
    for m in sorted(metas, key=lambda m: m.recording_id):
        parts[owner[m.subject_id]].append(m)
    return Split(*parts, seed=spec.seed)


def balance_select(metas: Sequence[RecordingMeta], target_hours: float,
                   seed: int = 0) -> list[RecordingMeta]:
    """Randomly pick whole recordings until their background time reaches ``target_hours``.

    The overshoot is at most one recording. If the target exceeds what is
    available every recording is returned and a warning is issued.
    """
    target_s = target_hours * 3600.0
    available = sum(m.background_s for m in metas)
    ordered = sorted(metas, key=lambda m: m.recording_id)
    if target_s >= available:
        warnings.warn(f"requested {target_hours} h of background but only "
                      f"{available / 3600:.2f} h available; returning all recordings", stacklevel=2)
        return list(ordered)
    rng = np.random.default_rng(seed)
    chosen, acc = [], 0.0
    for i in rng.permutation(len(ordered)):
        if acc >= target_s:
            break
        chosen.append(ordered[i])
        acc += ordered[i].background_s
    return chosen


# --------------------------------------------------------------------- Bonn

BONN_RATE_HZ = 173.61
BONN_SAMPLES = 4097
BONN_SETS = "ABCDE"
# set letter -> letter prefix used by the distributed archive
BONN_PREFIX = {"A": "Z", "B": "O", "C": "N", "D": "F", "E": "S"}
BONN_SUBSETS = {1: "ABCDE", 2: "ABE", 3: "CE"}


@dataclass(frozen=True)
class BonnSegment:
    set_name: str
    segment_id: str
    signal: Signal
    label: str


def _find_set_dir(root: Path, letter: str) -> Path:
    names = {letter, letter.lower(), BONN_PREFIX[letter], BONN_PREFIX[letter].lower(),
             f"set{letter}", f"set_{letter}", f"Set {letter}", f"set {letter}"}
    for child in sorted(root.iterdir()):
        if child.is_dir() and child.name in names:
            return child
    raise MissingSet(f"no directory for Bonn set {letter} (or {BONN_PREFIX[letter]}) under {root}")


def _read_bonn_file(path: Path) -> np.ndarray:
    values = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if not re.fullmatch(r"[+-]?\d+", line):
            raise MalformedFile(f"{path}:{lineno}: not an integer: {line!r}")
        values.append(int(line))
    if len(values) != BONN_SAMPLES:
        raise MalformedFile(f"{path}: expected {BONN_SAMPLES} samples, found {len(values)}")
    return np.asarray(values, dtype=np.float64)


def load_bonn(root, sets: Iterable[str] = BONN_SETS) -> list[BonnSegment]:
    """Load the five-set Bonn archive (100 text files per set).

    Set E is seizure, A-D background. Segments are ordered by set then
    file name.
    """
    root = Path(root)
    out = []
    for letter in sets:
        d = _find_set_dir(root, letter)
        files = sorted(p for p in d.iterdir() if p.suffix.lower() == ".txt")
        if not files:
            raise MissingSet(f"set {letter} directory {d} has no .txt files")
        label = SEIZURE if letter == "E" else BACKGROUND
        for f in files:
            sig = Signal(_read_bonn_file(f), BONN_RATE_HZ, subject_id=f"bonn-{letter}",
                         recording_id=f"{letter}/{f.stem}")
            out.append(BonnSegment(letter, f.stem, sig, label))
    return out


def bonn_subset(segments: Sequence[BonnSegment], subset: int) -> list[BonnSegment]:
    if subset not in BONN_SUBSETS:
        raise ValueError(f"subset must be one of {sorted(BONN_SUBSETS)}, got {subset}")
    keep = BONN_SUBSETS[subset]
    return [s for s in segments if s.set_name in keep]


def bonn_pipeline(segments: Sequence[BonnSegment], subset: int,
                  norm_sets: Optional[str] = None, target_rate_hz: float = 100.0,
                  cfg: SegmentationConfig = SegmentationConfig(4.0, 2.0)) -> list[Window]:
    """Resample, z-score with pooled background statistics and cut 4 s / 2 s windows.

    ``norm_sets`` defaults to every background set present in the subset.
    Windows inherit their segment's label.
    """
    chosen = bonn_subset(segments, subset)
    if norm_sets is None:
        norm_sets = "".join(c for c in BONN_SUBSETS[subset] if c != "E")
    resampled = [(seg, resample(seg.signal, target_rate_hz)) for seg in chosen]
    pool = [sig.samples for seg, sig in resampled if seg.set_name in norm_sets]
    if not pool:
        raise ValueError(f"no segments from normalisation sets {norm_sets!r} in subset {subset}")
    pooled = np.concatenate(pool)
    stats = NormStats(float(pooled.mean()), float(pooled.std()))
    windows = []
    for seg, sig in resampled:
        for w in segment_sliding(zscore(sig, stats), cfg):
            windows.append(Window(w.start_s, w.samples, w.sample_rate_hz, seg.label,
                                  w.recording_id))
    return windows


# ---------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SynthConfig:
    duration_s: float = 600.0
    sample_rate_hz: float = 512.0
    n_seizures: int = 3
    seizure_duration_range_s: tuple[float, float] = (15.0, 40.0)
    seizure_freq_hz: tuple[float, float] = (5.0, 8.0)
    amplitude_ratio: float = 4.0
    # minimum background between seizures and before the first/after the last
    min_gap_s: float = 20.0
    # seizure-free stretch at the start, e.g. to keep a normalisation prefix clean
    lead_in_s: float = 0.0
    seed: int = 0
    subject_id: str = "synth"
    recording_id: str = "synth-000"

    def __post_init__(self):
        if not self.amplitude_ratio > 1:
            raise ValueError("amplitude_ratio must be > 1")
        lo, hi = self.seizure_duration_range_s
        if not 0 < lo <= hi:
            raise ValueError(f"bad seizure duration range {self.seizure_duration_range_s}")
        flo, fhi = self.seizure_freq_hz
        if not 0 < flo <= fhi:
            raise ValueError(f"bad seizure frequency range {self.seizure_freq_hz}")
        if self.n_seizures < 0:
            raise ValueError("n_seizures must be >= 0")


def band_limited_noise(n: int, fs: float, low_hz: float, high_hz: float, rng) -> np.ndarray:
    """Gaussian noise with a flat spectrum on ``[low_hz, high_hz]``, unit RMS."""
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    spec[(freqs < low_hz) | (freqs > high_hz)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x ** 2))


def spike_wave(n: int, fs: float, freq_hz: float, rng) -> np.ndarray:
    """Zero-mean, unit-RMS spike-and-wave train: a sharp spike then a slow negative wave."""
    phase = (np.arange(n) / fs * freq_hz + rng.uniform()) % 1.0
    spike = np.exp(-0.5 * ((phase - 0.1) / 0.035) ** 2)
    wave = -0.45 * np.sin(np.pi * np.clip((phase - 0.2) / 0.8, 0.0, 1.0))
    x = spike + wave
    x -= x.mean()
    return x / np.sqrt(np.mean(x ** 2))


def _place_seizures(cfg: SynthConfig, rng) -> list[tuple[float, float]]:
    lo, hi = cfg.seizure_duration_range_s
    durs = rng.uniform(lo, hi, size=cfg.n_seizures)
    lead = max(cfg.lead_in_s - cfg.min_gap_s, 0.0)
    slack = cfg.duration_s - lead - durs.sum() - (cfg.n_seizures + 1) * cfg.min_gap_s
    if slack < 0:
        raise SeizuresDoNotFit(
            f"{cfg.n_seizures} seizures of up to {hi} s with {cfg.min_gap_s} s gaps "
            f"do not fit in {cfg.duration_s} s")
    # random split of the slack into n+1 extra gaps
    extra = np.diff(np.concatenate([[0.0], np.sort(rng.uniform(0, slack, cfg.n_seizures)), [slack]]))
    out, t = [], lead
    for d, e in zip(durs, extra[:-1]):
        t += cfg.min_gap_s + e
        out.append((t, t + d))
        t += d
    return out


def synth_generate(cfg: SynthConfig) -> tuple[Signal, list[EventLabel]]:
    """Band-limited background at unit RMS with planted spike-wave seizures.

    Inside each seizure the burst is scaled so that the RMS of background
    plus burst equals ``amplitude_ratio``. Event boundaries are snapped to
    the sample grid so the returned labels match the planted samples
    exactly.
    """
    rng = np.random.default_rng(cfg.seed)
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_s * fs))
    x = band_limited_noise(n, fs, 1.0, 20.0, rng)
    burst_rms = math.sqrt(cfg.amplitude_ratio ** 2 - 1.0)
    events = []
    for on, off in _place_seizures(cfg, rng):
        a, b = int(round(on * fs)), int(round(off * fs))
        f = rng.uniform(*cfg.seizure_freq_hz)
        x[a:b] += burst_rms * spike_wave(b - a, fs, f, rng)
        events.append(EventLabel(a / fs, b / fs, SEIZURE, EXPERT))
    sig = Signal(x, fs, subject_id=cfg.subject_id, recording_id=cfg.recording_id)
    return sig, events
