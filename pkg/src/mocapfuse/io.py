"""Plain-text file formats: sensor-stream datasets, estimates, optimized translations."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .body import SENSOR_NAMES, PoseSequence
from .errors import ConfigError
from .simulate import Dataset, MotionScript, NoiseModel

DATASET_FORMAT = "mocapfuse-streams/1"
ESTIMATES_FORMAT = "mocapfuse-estimates/1"
OPTIMIZED_FORMAT = "mocapfuse-optimized/1"


def _rows(a, width=None):
    a = np.asarray(a)
    a = a.reshape(len(a), -1) if width is None else a.reshape(len(a), width)
    if a.dtype == bool:
        return a.astype(int).tolist()
    return a.astype(float).tolist()


def _dump(doc, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def _load(path, fmt):
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if doc.get("format") != fmt:
        raise ConfigError(f"{path}: expected format {fmt!r}, found {doc.get('format')!r}")
    return doc


def write_dataset(ds, path):
    S = ds.persons[0]["A"].shape[1]
    doc = {
        "format": DATASET_FORMAT,
        "header": {
            "fps": ds.fps,
            "persons": ds.n_persons,
            "frames": ds.frames,
            "sensors": list(SENSOR_NAMES[:S]),
            "noise": ds.noise.to_dict(),
            "scripts": [s.to_dict() for s in ds.scripts],
        },
        "persons": [
            {
                "initial_position": [float(v) for v in p["initial_position"]],
                "theta": _rows(p["theta"]),
                "trans": _rows(p["trans"]),
                "A": _rows(p["A"]),
                "R": _rows(p["R"]),
                "D": _rows(p["D"]),
                "D_valid": _rows(p["D_valid"]),
            }
            for p in ds.persons
        ],
        "between": [
            {"pair": [i, j], "D": _rows(ds.between[(i, j)]), "valid": _rows(ds.between_valid[(i, j)])}
            for (i, j) in sorted(ds.between)
        ],
    }
    _dump(doc, path)


def read_dataset(path):
    doc = _load(path, DATASET_FORMAT)
    h = doc["header"]
    S = len(h["sensors"])
    persons = []
    for p in doc["persons"]:
        L = len(p["theta"])
        persons.append(
            {
                "initial_position": np.asarray(p["initial_position"], dtype=float),
                "theta": np.asarray(p["theta"], dtype=float),
                "trans": np.asarray(p["trans"], dtype=float),
                "A": np.asarray(p["A"], dtype=float).reshape(L, S, 3),
                "R": np.asarray(p["R"], dtype=float).reshape(L, S, 9),
                "D": np.asarray(p["D"], dtype=float).reshape(L, S, S),
                "D_valid": np.asarray(p["D_valid"], dtype=bool).reshape(L, S, S),
            }
        )
    between, valid = {}, {}
    for b in doc["between"]:
        key = tuple(b["pair"])
        L = len(b["D"])
        between[key] = np.asarray(b["D"], dtype=float).reshape(L, S, S)
        valid[key] = np.asarray(b["valid"], dtype=bool).reshape(L, S, S)
    return Dataset(
        h["fps"], persons, between, valid, NoiseModel(**h["noise"]), [MotionScript(**s) for s in h["scripts"]]
    )


def write_estimates(poses, path, mode):
    doc = {
        "format": ESTIMATES_FORMAT,
        "mode": mode,
        "fps": poses[0].fps,
        "persons": [{"theta": _rows(p.theta), "trans": _rows(p.trans)} for p in poses],
    }
    _dump(doc, path)


def read_estimates(path):
    doc = _load(path, ESTIMATES_FORMAT)
    return [PoseSequence(p["theta"], p["trans"], doc["fps"]) for p in doc["persons"]], doc["mode"]


def write_optimized(trans, initial_positions, path, flags=None):
    doc = {
        "format": OPTIMIZED_FORMAT,
        "flags": flags or {},
        "persons": [
            {"initial_position": [float(v) for v in p], "trans": _rows(t)} for t, p in zip(trans, initial_positions)
        ],
    }
    _dump(doc, path)


def read_optimized(path):
    doc = _load(path, OPTIMIZED_FORMAT)
    trans = [np.asarray(p["trans"], dtype=float) for p in doc["persons"]]
    pos = [np.asarray(p["initial_position"], dtype=float) for p in doc["persons"]]
    return trans, pos, doc.get("flags", {})


def write_report(report, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(report.to_dict(), indent=1) + "\n")


def write_series(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def write_pose_csv(pose, path):
    """Pose sequence as CSV: a ``# fps=`` header line, then theta and trans columns per frame."""
    J3 = pose.theta.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(f"# fps={pose.fps!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"theta_{k}" for k in range(J3)] + ["tx", "ty", "tz"])
        for th, tr in zip(pose.theta, pose.trans):
            w.writerow([repr(float(v)) for v in th] + [repr(float(v)) for v in tr])


def read_pose_csv(path):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# fps="):
            raise ConfigError(f"{path}: line 1: expected '# fps=<value>' header")
        fps = float(first[len("# fps="):])
        rows = list(csv.reader(fh))
    data = np.asarray(rows[1:], dtype=float)
    return PoseSequence(data[:, :-3], data[:, -3:], fps)
