"""On-disk formats.

Dataset directory (one simulated session)::

    meta.json    schema, size, fps, frame count, schedule, seed and every
                 scene parameter needed to rebuild the face
    frames.bin   float32 little-endian degC, frame-major (n, h, w)
    truth.bin    float32 little-endian degC: baseline map, then n bias maps
    events.csv   ``frame,calib_event``

Text tables: transient traces ``time_s,temp_c,weight``, plain series
``time_s,temp_c`` and error tables ``subject_id,mi,error_c,phase``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .scene import FaceModel, GroundTruth, Schedule, SensorNoise, Sequence, SunConfig, face_from_config
from .transient import TransientTrace

DATASET_SCHEMA = "solarload.dataset/1"
FLOAT = "<f4"


class FormatError(ValueError):
    pass


def _dumps(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_dataset(path, face: FaceModel, seq: Sequence, truth: GroundTruth, *, schedule: Schedule,
                  sun: SunConfig, noise: SensorNoise, seed: int, radiometry: dict | None = None,
                  extra: dict | None = None):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    n, h, w = seq.temps.shape
    meta = {
        "schema": DATASET_SCHEMA,
        "width": w, "height": h, "fps": schedule.fps, "count": n, "seed": int(seed),
        "schedule": asdict(schedule),
        "face": face.config,
        "sun": asdict(sun),
        "noise": asdict(noise),
        "radiometry": radiometry or {},
        "truth": {
            "beta_f_c": [float(x) for x in truth.beta_f],
            "fraction": [float(x) for x in truth.fraction],
            "peak_bias_max_c": float(truth.peak_map.max()),
            "phases": [str(p) for p in seq.phases],
        },
    }
    if extra:
        meta.update(extra)
    (out / "meta.json").write_text(_dumps(meta))
    seq.temps.astype(FLOAT).tofile(out / "frames.bin")
    np.concatenate([truth.baseline[None], truth.bias]).astype(FLOAT).tofile(out / "truth.bin")
    with open(out / "events.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["frame", "calib_event"])
        for k, e in enumerate(seq.calib_events):
            wr.writerow([k, int(bool(e))])
    return out


class Dataset:
    """Lazy view of a dataset directory."""

    def __init__(self, path):
        self.path = Path(path)
        meta_path = self.path / "meta.json"
        if not meta_path.is_file():
            raise FormatError(f"{self.path}: no meta.json (not a dataset directory)")
        self.meta = json.loads(meta_path.read_text())
        if self.meta.get("schema") != DATASET_SCHEMA:
            raise FormatError(f"{self.path}: unsupported schema {self.meta.get('schema')!r}")
        self.shape = (self.meta["count"], self.meta["height"], self.meta["width"])

    def _map(self, name, frames):
        arr = np.fromfile(self.path / name, dtype=FLOAT)
        expected = frames * self.shape[1] * self.shape[2]
        if arr.size != expected:
            raise FormatError(f"{self.path / name}: {arr.size} values, expected {expected}")
        return arr.reshape(frames, *self.shape[1:]).astype(float)

    @property
    def frames(self):
        return self._map("frames.bin", self.shape[0])

    def frame(self, k):
        n, h, w = self.shape
        if not 0 <= k < n:
            raise IndexError(f"frame {k} out of range 0..{n - 1}")
        arr = np.fromfile(self.path / "frames.bin", dtype=FLOAT, count=h * w, offset=4 * h * w * k)
        return arr.reshape(h, w).astype(float)

    @property
    def truth(self):
        t = self._map("truth.bin", self.shape[0] + 1)
        return t[0], t[1:]

    @property
    def calib_events(self):
        rows = read_csv(self.path / "events.csv", ["frame", "calib_event"])
        return np.array([bool(int(r[1])) for r in rows])

    @property
    def times(self):
        return np.arange(self.shape[0]) / self.meta["fps"]

    @property
    def beta_f(self):
        return np.array(self.meta["truth"]["beta_f_c"])

    @property
    def phases(self):
        return np.array(self.meta["truth"]["phases"])

    def face(self) -> FaceModel:
        return face_from_config(self.meta["face"])


def read_csv(path, header):
    """Rows (lists of stripped strings) of a CSV with an exact header."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != list(header):
        raise FormatError(f"{path}:1: expected header {','.join(header)}")
    out = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        out.append([c.strip() for c in row])
    return out


def _floats(path, header):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != list(header):
        raise FormatError(f"{path}:1: expected header {','.join(header)}")
    values = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values.append([float(c) for c in row])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
    if not values:
        raise FormatError(f"{path}: no data rows")
    return np.array(values)


def read_trace(path) -> TransientTrace:
    """Load ``time_s,temp_c,weight`` (the weight column may be omitted: ``time_s,temp_c``)."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
    header = [c.strip() for c in first.split(",")]
    if header == ["time_s", "temp_c"]:
        arr = _floats(path, header)
        return TransientTrace(arr[:, 0], arr[:, 1], np.ones(len(arr)))
    arr = _floats(path, ["time_s", "temp_c", "weight"])
    try:
        return TransientTrace(arr[:, 0], arr[:, 1], arr[:, 2])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_trace(path, trace: TransientTrace):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["time_s", "temp_c", "weight"])
        for t, y, w in zip(trace.times, trace.temps, trace.weights):
            wr.writerow([repr(float(t)), repr(float(y)), repr(float(w))])


def write_series(path, times, temps):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["time_s", "temp_c"])
        for t, y in zip(times, temps):
            wr.writerow([repr(float(t)), repr(float(y))])


ERROR_HEADER = ["subject_id", "mi", "error_c", "phase"]


def write_error_table(path, rows):
    """``rows`` are (subject_id, mi, error_c, phase) tuples."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(ERROR_HEADER)
        for sid, mi, err, phase in rows:
            wr.writerow([sid, repr(float(mi)), repr(float(err)), phase])


def read_error_table(path):
    """Return dict of arrays: subject_id (str), mi, error_c, phase (str)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ERROR_HEADER:
        raise FormatError(f"{path}:1: expected header {','.join(ERROR_HEADER)}")
    sid, mi, err, phase = [], [], [], []
    for lineno, row in enumerate(rows[1:], 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
        try:
            mi.append(float(row[1]))
            err.append(float(row[2]))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
        sid.append(row[0].strip())
        phase.append(row[3].strip())
    return {"subject_id": np.array(sid), "mi": np.array(mi), "error_c": np.array(err),
            "phase": np.array(phase)}


def write_frame(path, temps):
    """Single frame in the dataset's raw format (float32 LE, row-major)."""
    np.asarray(temps).astype(FLOAT).tofile(path)


def write_json(path, obj):
    Path(path).write_text(_dumps(obj))
