import json
import subprocess
import sys

import numpy as np
import pytest

from seizuredet import io as sio
from seizuredet.cli import main
from seizuredet.datasets import SynthConfig, synth_generate
from seizuredet.labels import BACKGROUND, SEIZURE
from seizuredet.pipeline import preprocess_classification
from seizuredet.windowing import SegmentationConfig


def run(*argv):
    return main([str(a) for a in argv])


def write_labels(path, rows):
    path.write_text("recording_id,onset_s,offset_s,label\n"
                    + "".join(f"{r},{a},{b},{lab}\n" for r, a, b, lab in rows))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Small CNN-6 trained through the CLI on two synthetic recordings."""
    d = tmp_path_factory.mktemp("cli")
    for i in range(3):
        assert run("synth", "--out", d / f"r{i}", "--seed", 20 + i, "--duration-s", 600,
                   "--lead-in-s", 300, "--recording-id", f"r{i}") == 0
    labels = d / "labels.csv"
    rows = []
    for i in range(3):
        rows += (d / f"r{i}.labels.csv").read_text().splitlines()[1:]
    labels.write_text("recording_id,onset_s,offset_s,label,source\n" + "\n".join(rows) + "\n")
    cfg = d / "train.cfg"
    cfg.write_text("model = cnn6\nepochs = 8\nshift_s = 1\n")
    assert run("train", "--config", cfg, "--signal", d / "r0", d / "r1", "--labels", labels,
               "--out", d / "m.ck") == 0
    return d, labels


def test_synth_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--out", tmp_path / name, "--seed", 7, "--duration-s", 200, "--n-seizures", 2) == 0
    for ext in (".f32", ".json", ".labels.csv"):
        assert (tmp_path / f"a{ext}").read_bytes() == (tmp_path / f"b{ext}").read_bytes()
    events = sio.read_events(tmp_path / "a.labels.csv")
    assert len(next(iter(events.values()))) == 2


def test_split_manifest(tmp_path):
    meta = tmp_path / "m.csv"
    meta.write_text("recording_id,subject_id,duration_s\n"
                    + "".join(f"rec{i},subj{i // 2},100\n" for i in range(20)))
    assert run("split", "--metadata", meta, "--out", tmp_path / "split.json", "--seed", 1) == 0
    man = json.loads((tmp_path / "split.json").read_text())
    assert set(man) == {"train", "val", "test", "seed"}
    subj = [{f"subj{int(r[3:]) // 2}" for r in man[k]} for k in ("train", "val", "test")]
    assert not (subj[0] & subj[1] or subj[0] & subj[2] or subj[1] & subj[2])
    assert [len(s) for s in subj] == [7, 1, 2]


def test_train_overfit_fixture(tmp_path):
    sig, events = synth_generate(SynthConfig(duration_s=150, n_seizures=2, seed=4,
                                             seizure_duration_range_s=(30, 35)))
    w = preprocess_classification(sig, events, SegmentationConfig(4.0, 1.0))
    batch = [x for x in w if x.label == SEIZURE][:16] + [x for x in w if x.label == BACKGROUND][:16]
    (tmp_path / "w.bin").write_bytes(sio.encode_windows(batch, 4.0, 1.0))
    assert run("train", "--windows", tmp_path / "w.bin", "--model", "cnn6", "--epochs", 500,
               "--stop-loss", 0.05, "--out", tmp_path / "m.ck") == 0
    lines = (tmp_path / "m.ck.loss.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_f1"
    assert float(lines[-1].split(",")[1]) < 0.05


def test_detect_with_labels(trained, tmp_path):
    d, labels = trained
    out, met = tmp_path / "ev.csv", tmp_path / "met.json"
    assert run("detect", "--signal", d / "r2", "--checkpoint", d / "m.ck", "--labels", labels,
               "--out", out, "--metrics", met) == 0
    hyp = sio.read_events(out).get("r2", [])
    assert 2 <= len(hyp) <= 4
    doc = json.loads(met.read_text())
    assert doc["task"] == "detection" and doc["counts"]["tn"] == 0
    assert doc["counts"]["tp"] + doc["counts"]["fn"] == 3
    assert "accuracy" not in doc["metrics"]
    # identical inputs give identical outputs
    assert run("detect", "--signal", d / "r2", "--checkpoint", d / "m.ck", "--labels", labels,
               "--out", tmp_path / "ev2.csv", "--metrics", tmp_path / "met2.json") == 0
    assert out.read_bytes() == (tmp_path / "ev2.csv").read_bytes()
    assert met.read_bytes() == (tmp_path / "met2.json").read_bytes()


def test_detect_without_labels_writes_no_metrics(trained, tmp_path, capsys):
    d, _ = trained
    assert run("detect", "--signal", d / "r2", "--checkpoint", d / "m.ck", "--out", tmp_path / "e.csv") == 0
    assert capsys.readouterr().out == ""
    assert (tmp_path / "e.csv").read_text().startswith("recording_id,onset_s,offset_s,label")


def test_classification_f1_at_least_detection_f1(trained, tmp_path):
    d, labels = trained
    f1 = {}
    for task, shift in (("classification", 2.0), ("detection", 0.5)):
        met = tmp_path / f"{task}.json"
        assert run("detect", "--task", task, "--shift-s", shift, "--signal", d / "r2",
                   "--checkpoint", d / "m.ck", "--labels", labels, "--out", tmp_path / f"{task}.csv",
                   "--metrics", met) == 0
        f1[task] = json.loads(met.read_text())["metrics"]["f1"]
    assert f1["classification"] >= f1["detection"]


def test_detect_short_signal(trained, tmp_path):
    d, _ = trained
    sio.write_signal(tmp_path / "short", sio.Signal(np.random.default_rng(0).standard_normal(1000), 512.0, "s", "short"))
    with pytest.warns(UserWarning, match="shorter than one window"):
        assert run("detect", "--signal", tmp_path / "short", "--checkpoint", d / "m.ck",
                   "--out", tmp_path / "e.csv") == 0
    assert (tmp_path / "e.csv").read_text().strip() == "recording_id,onset_s,offset_s,label,source"


def test_detect_incompatible_checkpoint(trained, tmp_path):
    d, _ = trained
    assert run("detect", "--signal", d / "r2", "--checkpoint", d / "m.ck", "--window-s", 2,
               "--out", tmp_path / "e.csv") == 3


def test_input_errors_exit_2(trained, tmp_path):
    d, _ = trained
    bad = tmp_path / "bad.csv"
    bad.write_text("recording_id,onset_s,offset_s,label\nr2,5,x,seizure\n")
    assert run("detect", "--signal", d / "r2", "--checkpoint", d / "m.ck", "--labels", bad,
               "--out", tmp_path / "e.csv") == 2
    assert run("detect", "--signal", d / "r2", "--checkpoint", tmp_path / "missing.ck",
               "--out", tmp_path / "e.csv") == 2
    assert run("evaluate", "--truth", bad, "--hyp", bad) == 2
    assert run("synth", "--bogus") == 2
    assert run("synth", "--out", tmp_path / "s", "--duration-s", 30) == 2  # seizures do not fit
    cfg = tmp_path / "c.cfg"
    cfg.write_text("no_such_key = 1\n")
    assert run("synth", "--config", cfg, "--out", tmp_path / "s") == 2
    assert run("detect", "--out", tmp_path / "e.csv") == 2


def test_config_supplies_required_and_flags_win(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"out = {tmp_path / 'fromcfg'}\nduration_s = 100\nn_seizures = 1\nseed = 3\n")
    assert run("synth", "--config", cfg) == 0
    assert sio.read_signal(tmp_path / "fromcfg").duration_s == 100.0
    assert run("synth", "--config", cfg, "--duration-s", 150) == 0
    assert sio.read_signal(tmp_path / "fromcfg").duration_s == 150.0


def _metrics(capsys, *argv):
    assert run(*argv) == 0
    return json.loads(capsys.readouterr().out)


def test_evaluate_events(tmp_path, capsys):
    truth, hyp, empty = tmp_path / "t.csv", tmp_path / "h.csv", tmp_path / "e.csv"
    write_labels(truth, [("r", 10.5, 24.3, "seizure"), ("r", 40, 50, "seizure")])
    write_labels(hyp, [("r", 10.0, 25.0, "seizure"), ("r", 42, 50, "seizure")])
    write_labels(empty, [])
    doc = _metrics(capsys, "evaluate", "--truth", truth, "--hyp", truth)
    assert doc["counts"]["fp"] == doc["counts"]["fn"] == 0 and doc["metrics"]["f1"] == 1.0
    doc = _metrics(capsys, "evaluate", "--truth", truth, "--hyp", hyp)
    assert doc["counts"] == {"tp": 1, "tn": 0, "fp": 1, "fn": 1}
    doc = _metrics(capsys, "evaluate", "--truth", truth, "--hyp", hyp, "--tolerance-s", 2)
    assert doc["counts"]["tp"] == 2
    doc = _metrics(capsys, "evaluate", "--truth", truth, "--hyp", empty)
    assert doc["metrics"]["recall"] == 0 and doc["metrics"]["f1"] == 0


def test_evaluate_segments_and_csv_format(tmp_path, capsys):
    truth, hyp = tmp_path / "t.csv", tmp_path / "h.csv"
    write_labels(truth, [("r", 0, 4, "seizure"), ("r", 4, 8, "background"), ("r", 8, 12, "seizure")])
    write_labels(hyp, [("r", 8, 12, "background"), ("r", 0, 4, "seizure"), ("r", 4, 8, "seizure")])
    assert run("evaluate", "--mode", "segments", "--truth", truth, "--hyp", hyp, "--format", "csv") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "task,tp,tn,fp,fn,recall,precision,f1,accuracy"
    assert lines[1].startswith("classification,1,0,1,1,")
    write_labels(hyp, [("r", 0, 4, "seizure")])
    assert run("evaluate", "--mode", "segments", "--truth", truth, "--hyp", hyp) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "seizuredet.cli", "evaluate", "--truth",
                           str(tmp_path / "none.csv"), "--hyp", str(tmp_path / "none.csv")],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "cannot read" in proc.stderr
