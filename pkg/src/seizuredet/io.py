"""On-disk formats.

* signal: raw little-endian float32 ``<name>.f32`` + JSON sidecar ``<name>.json``
* labels / events: CSV ``recording_id,onset_s,offset_s,label[,source]``
* recording metadata: CSV ``recording_id,subject_id,duration_s[,seizure_s,background_s]``
* window batch and checkpoint: magic, uint32 header length, JSON header,
  little-endian float32 payload
* configs: ``key = value`` lines, ``#`` comments

Every writer goes through :func:`atomic_write`.
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import IncompatibleCheckpoint, MalformedFile
from .datasets import RecordingMeta
from .labels import CLASSES, EXPERT, MODEL, SEIZURE, EventLabel
from .neural.models import Detector, build_model, config_hash, normalise_kind
from .signal_core import Signal
from .windowing import Window

WINDOWS_MAGIC = b"SZWB"
CHECKPOINT_MAGIC = b"SZCK"
FORMAT_VERSION = 1


def atomic_write(path, data: bytes | str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _signal_paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".f32", ".json"):
        p = p.with_suffix("")
    return p.with_suffix(".f32"), p.with_suffix(".json")


def write_signal(path, sig: Signal):
    raw, meta = _signal_paths(path)
    atomic_write(raw, sig.samples.astype("<f4").tobytes())
    header = {"sample_rate_hz": sig.sample_rate_hz, "n_samples": len(sig),
              "subject_id": sig.subject_id, "recording_id": sig.recording_id}
    atomic_write(meta, json.dumps(header, indent=2, sort_keys=True) + "\n")


def read_signal(path) -> Signal:
    raw, meta = _signal_paths(path)
    try:
        header = json.loads(meta.read_text())
        rate = float(header["sample_rate_hz"])
        n = int(header["n_samples"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise MalformedFile(f"bad signal header {meta}: {exc}") from exc
    data = np.fromfile(raw, dtype="<f4")
    if data.size != n:
        raise MalformedFile(f"{raw}: header says {n} samples, file has {data.size}")
    return Signal(data.astype(np.float64), rate, str(header.get("subject_id", "")),
                  str(header.get("recording_id", "")))


def format_events(rows: Iterable[tuple[str, EventLabel]], with_source: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["recording_id", "onset_s", "offset_s", "label"] + (["source"] if with_source else []))
    for rec, ev in rows:
        row = [rec, f"{ev.onset_s:.6f}", f"{ev.offset_s:.6f}", ev.label]
        w.writerow(row + ([ev.source] if with_source else []))
    return buf.getvalue()


def write_events(path, recording_id: str, events: Sequence[EventLabel]):
    atomic_write(path, format_events((recording_id, e) for e in events))


def read_label_rows(path, default_source: str = EXPERT) -> list[tuple[str, EventLabel]]:
    """Every row of a label/event CSV, in file order, as ``(recording_id, event)``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    need = {"recording_id", "onset_s", "offset_s", "label"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise MalformedFile(f"{path}: header must contain {sorted(need)}")
    rows = []
    for lineno, row in enumerate(reader, 2):
        try:
            label = (row["label"] or "").strip()
            if label not in CLASSES:
                raise ValueError(f"unknown label {label!r}")
            source = (row.get("source") or default_source).strip()
            if source not in (EXPERT, MODEL):
                raise ValueError(f"unknown source {source!r}")
            ev = EventLabel(float(row["onset_s"]), float(row["offset_s"]), label, source)
        except (ValueError, TypeError) as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
        rows.append(((row["recording_id"] or "").strip(), ev))
    return rows


def read_events(path, recording_id: str | None = None,
                default_source: str = EXPERT) -> dict[str, list[EventLabel]]:
    """Parse a label/event CSV into ``{recording_id: sorted seizure events}``.

    Background rows are skipped, but their recording still gets an entry.
    """
    out: dict[str, list[EventLabel]] = {}
    for rec, ev in read_label_rows(path, default_source):
        if recording_id is not None and rec != recording_id:
            continue
        out.setdefault(rec, [])
        if ev.label == SEIZURE:
            out[rec].append(ev)
    return {k: sorted(v) for k, v in out.items()}


def read_metadata(path) -> list[RecordingMeta]:
    """CSV ``recording_id,subject_id,duration_s[,seizure_s,background_s]``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MalformedFile(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    need = {"recording_id", "subject_id", "duration_s"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise MalformedFile(f"{path}: header must contain {sorted(need)}")
    out = []
    for lineno, row in enumerate(reader, 2):
        try:
            out.append(RecordingMeta(row["recording_id"].strip(), row["subject_id"].strip(),
                                     float(row["duration_s"]),
                                     float(row.get("seizure_s") or 0.0),
                                     float(row.get("background_s") or 0.0)))
        except (ValueError, TypeError, AttributeError) as exc:
            raise MalformedFile(f"{path}:{lineno}: {exc}") from exc
    return out


def _pack(magic: bytes, header: dict, payload: bytes) -> bytes:
    blob = json.dumps(header, sort_keys=True).encode()
    return magic + struct.pack("<I", len(blob)) + blob + payload


def _unpack(magic: bytes, data: bytes, what: str) -> tuple[dict, memoryview]:
    if data[:4] != magic or len(data) < 8:
        raise MalformedFile(f"not a {what} file")
    (n,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8:8 + n])
    except ValueError as exc:
        raise MalformedFile(f"corrupt {what} header: {exc}") from exc
    return header, memoryview(data)[8 + n:]


def encode_windows(windows: Sequence[Window], window_s: float, shift_s: float) -> bytes:
    """Batch of equal-length windows; one label byte per window (255 = none)."""
    rate = windows[0].sample_rate_hz if windows else 100.0
    length = windows[0].samples.size if windows else 0
    if any(w.samples.size != length for w in windows):
        raise ValueError("windows must share one length")
    header = {"version": FORMAT_VERSION, "window_s": window_s, "shift_s": shift_s,
              "sample_rate_hz": rate, "count": len(windows), "length": length,
              "starts": [w.start_s for w in windows],
              "recording_ids": [w.recording_id for w in windows]}
    samples = np.stack([w.samples for w in windows]).astype("<f4") if windows else np.zeros(0, "<f4")
    labels = bytes(255 if w.label is None else CLASSES.index(w.label) for w in windows)
    return _pack(WINDOWS_MAGIC, header, samples.tobytes() + labels)


def decode_windows(data: bytes) -> tuple[dict, list[Window]]:
    header, body = _unpack(WINDOWS_MAGIC, data, "window batch")
    n, length = header["count"], header["length"]
    nbytes = n * length * 4
    if len(body) != nbytes + n:
        raise MalformedFile(f"window batch payload is {len(body)} bytes, expected {nbytes + n}")
    samples = np.frombuffer(body[:nbytes], dtype="<f4").reshape(n, length).astype(np.float64)
    labels = bytes(body[nbytes:])
    windows = [Window(header["starts"][i], samples[i], header["sample_rate_hz"],
                      None if labels[i] == 255 else CLASSES[labels[i]], header["recording_ids"][i])
               for i in range(n)]
    return header, windows


def encode_checkpoint(model: Detector, extra: dict | None = None) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in model.state().items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = {"version": FORMAT_VERSION, "kind": model.kind, "config": model.config,
              "config_hash": model.config_hash(), "tensors": manifest, "extra": extra or {}}
    return _pack(CHECKPOINT_MAGIC, header, b"".join(chunks))


def decode_checkpoint(data: bytes, dtype=np.float32) -> tuple[Detector, dict]:
    header, body = _unpack(CHECKPOINT_MAGIC, data, "checkpoint")
    try:
        kind = normalise_kind(header["kind"])
        if config_hash(kind, header["config"]) != header["config_hash"]:
            raise IncompatibleCheckpoint("checkpoint config hash mismatch")
        model = build_model(kind, header["config"], dtype=dtype)
        tensors = {}
        for t in header["tensors"]:
            count = int(np.prod(t["shape"])) if t["shape"] else 1
            raw = body[t["offset"]:t["offset"] + 4 * count]
            tensors[t["name"]] = np.frombuffer(raw, dtype="<f4").reshape(t["shape"])
        model.load_state(tensors)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"corrupt checkpoint: {exc}") from exc
    return model, header


def save_checkpoint(path, model: Detector, extra: dict | None = None):
    atomic_write(path, encode_checkpoint(model, extra))


def load_checkpoint(path, dtype=np.float32) -> tuple[Detector, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedFile(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data, dtype)


def format_train_log(rows: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_loss", "val_loss", "val_f1"])
    for epoch, tl, vl, vf in rows:
        w.writerow([epoch, f"{tl:.8f}", f"{vl:.8f}", f"{vf:.6f}"])
    return buf.getvalue()


def read_kv_config(path) -> dict[str, str]:
    """``key = value`` file (``#``/``;`` comments) as a dict of strings."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise MalformedFile(f"cannot parse config {path}: {exc}") from exc
    return {k.replace("-", "_"): v.strip() for k, v in parser["config"].items()}


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
