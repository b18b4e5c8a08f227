import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bonn_fixture import write_fake_bonn
from seizuredet.datasets import (
    BONN_RATE_HZ,
    BONN_SAMPLES,
    RecordingMeta,
    SplitSpec,
    SynthConfig,
    balance_select,
    bonn_pipeline,
    bonn_subset,
    largest_remainder,
    load_bonn,
    subject_split,
    synth_generate,
)
from seizuredet.errors import MalformedFile, MissingSet, SeizuresDoNotFit, TooFewSubjects
from seizuredet.labels import BACKGROUND, SEIZURE


def metas_for(n_subjects, per_subject=2):
    return [RecordingMeta(f"r{s:02d}-{k}", f"s{s:02d}", 3600.0)
            for s in range(n_subjects) for k in range(per_subject)]


# ----------------------------------------------------------------- splits

def test_split_sizes_ten_subjects():
    split = subject_split(metas_for(10), SplitSpec((0.7, 0.15, 0.15), seed=0))
    assert [len(s) for s in split.subjects()] == [7, 1, 2]
    assert largest_remainder(10, (0.7, 0.15, 0.15)) == [7, 1, 2]


def test_split_union_and_disjoint():
    metas = metas_for(10, 3)
    split = subject_split(metas, SplitSpec(seed=4))
    ids = [m.recording_id for part in (split.train, split.val, split.test) for m in part]
    assert sorted(ids) == sorted(m.recording_id for m in metas)
    a, b, c = split.subjects()
    assert not (a & b or a & c or b & c)


def test_split_deterministic_and_seed_dependent():
    metas = metas_for(20)
    assert subject_split(metas, SplitSpec(seed=3)).manifest() == subject_split(metas, SplitSpec(seed=3)).manifest()
    manifests = {str(subject_split(metas, SplitSpec(seed=s)).manifest()["test"]) for s in range(10)}
    assert len(manifests) > 1


def test_split_errors():
    with pytest.raises(TooFewSubjects):
        subject_split(metas_for(2))
    with pytest.raises(ValueError):
        SplitSpec((0.5, 0.5, 0.1))
    with pytest.raises(ValueError):
        SplitSpec((1.0, 0.0, 0.0))


def test_split_small_population_keeps_every_split_nonempty():
    split = subject_split(metas_for(3), SplitSpec((0.8, 0.1, 0.1)))
    assert [len(s) for s in split.subjects()] == [1, 1, 1]


def test_recording_meta_invariant():
    with pytest.raises(ValueError):
        RecordingMeta("r", "s", 10.0, seizure_s=6.0, background_s=5.0)


@st.composite
def metadata_sets(draw):
    n_sub = draw(st.integers(3, 40))
    counts = draw(st.lists(st.integers(1, 5), min_size=n_sub, max_size=n_sub))
    a = draw(st.floats(0.05, 0.9))
    b = draw(st.floats(0.05, 0.9))
    c = draw(st.floats(0.05, 0.9))
    total = a + b + c
    fr = (a / total, b / total, 1 - a / total - b / total)
    metas = [RecordingMeta(f"rec{s}-{k}", f"subj{s}", 100.0) for s, n in enumerate(counts) for k in range(n)]
    return metas, fr, draw(st.integers(0, 2**31 - 1))


@settings(max_examples=200, deadline=None)
@given(metadata_sets())
def test_split_property(case):
    metas, fractions, seed = case
    split = subject_split(metas, SplitSpec(fractions, seed))
    a, b, c = split.subjects()
    assert not (a & b or a & c or b & c)
    assert all(len(s) >= 1 for s in (a, b, c))
    assert sum(map(len, (split.train, split.val, split.test))) == len(metas)


# -------------------------------------------------------------- balancing

def test_balance_select_greedy_overshoot():
    metas = [RecordingMeta(f"r{i}", f"s{i}", 4 * 3600.0, 600.0, 3 * 3600.0) for i in range(6)]
    chosen = balance_select(metas, 7.0, seed=1)
    assert len(chosen) == 3
    assert sum(m.background_s for m in chosen) == 9 * 3600.0
    assert chosen == balance_select(metas, 7.0, seed=1)


def test_balance_select_target_too_large_warns():
    metas = [RecordingMeta(f"r{i}", f"s{i}", 3600.0, 0.0, 3600.0) for i in range(3)]
    with pytest.warns(UserWarning):
        chosen = balance_select(metas, 10.0)
    assert len(chosen) == 3


# ------------------------------------------------------------------- Bonn

@pytest.fixture(scope="module")
def bonn_root(tmp_path_factory):
    return write_fake_bonn(tmp_path_factory.mktemp("bonn"))


@pytest.fixture(scope="module")
def bonn_segments(bonn_root):
    return load_bonn(bonn_root)


def test_bonn_load_counts(bonn_segments):
    assert len(bonn_segments) == 500
    assert all(len(s.signal) == BONN_SAMPLES and s.signal.sample_rate_hz == BONN_RATE_HZ
               for s in bonn_segments)
    assert sum(s.label == SEIZURE for s in bonn_segments) == 100
    assert all((s.label == SEIZURE) == (s.set_name == "E") for s in bonn_segments)


@pytest.mark.parametrize("subset,n,bg_share", [(1, 500, 0.8), (2, 300, 2 / 3), (3, 200, 0.5)])
def test_bonn_subset_ratios(bonn_segments, subset, n, bg_share):
    seg = bonn_subset(bonn_segments, subset)
    assert len(seg) == n
    assert sum(s.label == BACKGROUND for s in seg) / n == pytest.approx(bg_share)


def test_bonn_pipeline_windows(bonn_segments):
    chosen = [s for s in bonn_segments if s.segment_id.endswith(("001", "002"))]
    windows = bonn_pipeline(chosen, 3)
    assert len(windows) == 2 * 2 * 10
    assert sorted({w.start_s for w in windows}) == [2.0 * k for k in range(10)]
    assert all(w.samples.size == 400 for w in windows)
    bg = np.concatenate([w.samples for w in windows if w.label == BACKGROUND])
    assert abs(bg.mean()) < 0.1


def test_bonn_plain_letter_directories(tmp_path):
    write_fake_bonn(tmp_path, n_per_set=2, use_prefix_dirs=False)
    assert len(load_bonn(tmp_path)) == 10


def test_bonn_errors(tmp_path):
    root = write_fake_bonn(tmp_path / "a", n_per_set=1)
    bad = next((root / "S").iterdir())
    bad.write_text("\n".join(["1"] * 4096))
    with pytest.raises(MalformedFile):
        load_bonn(root)
    bad.write_text("\n".join(["1"] * 4096 + ["x"]))
    with pytest.raises(MalformedFile):
        load_bonn(root)
    root2 = write_fake_bonn(tmp_path / "b", n_per_set=1)
    for f in (root2 / "F").iterdir():
        f.unlink()
    (root2 / "F").rmdir()
    with pytest.raises(MissingSet):
        load_bonn(root2)


# -------------------------------------------------------------- synthetic

def test_synth_event_count_and_bounds():
    sig, events = synth_generate(SynthConfig(duration_s=300, n_seizures=2, seed=1))
    assert len(events) == 2
    assert all(0 <= e.onset_s < e.offset_s <= sig.duration_s for e in events)


def test_synth_same_seed_identical():
    a = synth_generate(SynthConfig(duration_s=120, n_seizures=1, seed=5))
    b = synth_generate(SynthConfig(duration_s=120, n_seizures=1, seed=5))
    assert np.array_equal(a[0].samples, b[0].samples) and a[1] == b[1]


def test_synth_rms_ratio():
    cfg = SynthConfig(duration_s=600, n_seizures=3, seed=2)
    sig, events = synth_generate(cfg)
    fs = sig.sample_rate_hz
    inside = np.zeros(len(sig), dtype=bool)
    for e in events:
        inside[int(round(e.onset_s * fs)):int(round(e.offset_s * fs))] = True
    # windowed RMS, 2 s windows wholly inside one activity
    n = int(2 * fs)
    seiz_rms, bg_rms = [], []
    for a in range(0, len(sig) - n, n):
        seg = sig.samples[a:a + n]
        if inside[a:a + n].all():
            seiz_rms.append(np.sqrt(np.mean(seg ** 2)))
        elif not inside[a:a + n].any():
            bg_rms.append(np.sqrt(np.mean(seg ** 2)))
    ratio = np.mean(seiz_rms) / np.mean(bg_rms)
    assert abs(ratio - cfg.amplitude_ratio) / cfg.amplitude_ratio < 0.10


def test_synth_lead_in_and_errors():
    _, events = synth_generate(SynthConfig(duration_s=600, lead_in_s=300, seed=3))
    assert events[0].onset_s >= 300
    with pytest.raises(SeizuresDoNotFit):
        synth_generate(SynthConfig(duration_s=60, n_seizures=3))
    with pytest.raises(ValueError):
        SynthConfig(amplitude_ratio=1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 5))
def test_synth_events_sorted_disjoint(seed, n):
    sig, events = synth_generate(SynthConfig(duration_s=400, sample_rate_hz=100.0, n_seizures=n, seed=seed))
    assert len(events) == n
    for a, b in zip(events, events[1:]):
        assert a.offset_s <= b.onset_s
