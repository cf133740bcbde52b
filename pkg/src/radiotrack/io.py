"""Readers and writers for the CSV and JSON files used by the CLI.

All numbers are written with 17 significant digits in a locale-independent
format so files round-trip exactly and diff cleanly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DataError
from .measurement import AntennaConfig, Calibration, CosineLobePattern, Detection

DETECTION_HEADER = ["t", "antenna_id", "Z"]
TRUTH_HEADER = ["t", "px", "vx", "py", "vy", "pz"]
TRACK_HEADER = ["t", "px", "vx", "py", "vy", "pz", "var_px", "var_py", "var_pz"]
DIAG_HEADER = ["t", "Ybar", "F", "v", "gain_norm", "saturated"]
TRACE_HEADER = ["iter", "best_nll", "phi_x", "phi_y", "phi_z"]


def fmt(x):
    """Locale-independent 17-significant-digit float text."""
    return format(float(x), ".17g")


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_rows(path, header):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {','.join(header)}") from None
        if [c.strip() for c in first] != header:
            raise DataError(f"{path}:1: header {first} does not match {header}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _float(text, path, line, name):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{path}:{line}: {name} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{path}:{line}: {name} is not finite: {text!r}")
    return value


def read_detections(path, z_range=(0, 255)):
    """Read ``t,antenna_id,Z`` records, validated and sorted by time."""
    records = []
    for line, (t_txt, ant, z_txt) in _read_rows(path, DETECTION_HEADER):
        t = _float(t_txt, path, line, "t")
        z = _float(z_txt, path, line, "Z")
        if z != int(z):
            raise DataError(f"{path}:{line}: Z must be an integer, got {z_txt!r}")
        if not z_range[0] <= z <= z_range[1]:
            raise DataError(f"{path}:{line}: Z={int(z)} outside [{z_range[0]}, {z_range[1]}]")
        if not ant:
            raise DataError(f"{path}:{line}: empty antenna_id")
        records.append((t, line, Detection(t, ant, int(z))))
    records.sort(key=lambda r: r[0])
    for (t0, l0, _), (t1, l1, _) in zip(records, records[1:]):
        if t0 == t1:
            raise DataError(f"{path}:{l1}: duplicate timestamp {t1!r} (also on line {l0})")
    return [r[2] for r in records]


def write_detections(path, detections):
    _write_rows(path, DETECTION_HEADER, ([fmt(d.t), d.antenna_id, str(int(d.Z))] for d in detections))


def write_truth(path, times, states):
    _write_rows(path, TRUTH_HEADER, ([fmt(t)] + [fmt(v) for v in s] for t, s in zip(times, states)))


def read_truth(path):
    """Return ``(times, states)`` arrays from a ``truth.csv`` file."""
    times, states = [], []
    for line, row in _read_rows(path, TRUTH_HEADER):
        values = [_float(v, path, line, name) for v, name in zip(row, TRUTH_HEADER)]
        times.append(values[0])
        states.append(values[1:])
    return np.array(times, dtype=float), np.array(states, dtype=float).reshape(-1, 5)


def write_track(path, run):
    rows = []
    for t, m, c in zip(run.t, run.means, run.covs):
        rows.append([fmt(t)] + [fmt(v) for v in m] + [fmt(c[0, 0]), fmt(c[2, 2]), fmt(c[4, 4])])
    _write_rows(path, TRACK_HEADER, rows)


def read_track(path):
    """Return ``(times, means)`` from a ``track.csv`` file."""
    times, means = [], []
    for line, row in _read_rows(path, TRACK_HEADER):
        values = [_float(v, path, line, name) for v, name in zip(row, TRACK_HEADER)]
        times.append(values[0])
        means.append(values[1:6])
    return np.array(times, dtype=float), np.array(means, dtype=float).reshape(-1, 5)


def write_diagnostics(path, run):
    rows = ([fmt(t), fmt(y), fmt(f), fmt(v), fmt(g), str(int(s))]
            for t, y, f, v, g, s in zip(run.t, run.Ybar, run.F, run.v, run.gain_norm, run.saturated))
    _write_rows(path, DIAG_HEADER, rows)


def write_trace(path, trace):
    _write_rows(path, TRACE_HEADER,
                ([str(k), fmt(best)] + [fmt(p) for p in phi] for k, best, phi in trace.iterations))


def read_trace(path):
    rows = [[_float(v, path, line, name) for v, name in zip(row, TRACE_HEADER)]
            for line, row in _read_rows(path, TRACE_HEADER)]
    return np.array(rows, dtype=float).reshape(-1, 5)


def antenna_from_dict(entry):
    try:
        pattern = entry.get("pattern", {})
        return AntennaConfig(
            id=str(entry["id"]),
            position=(entry["x"], entry["y"], entry["z"]),
            boresight_azimuth=math.radians(float(entry.get("boresight_azimuth_deg", 0.0))),
            pattern=CosineLobePattern(**{k: float(v) for k, v in pattern.items()}),
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"antenna entry {entry!r}: missing or invalid field {exc}") from None


def antenna_to_dict(ant):
    pattern = {"A": ant.pattern.A, "p": ant.pattern.p}
    if ant.pattern.floor != CosineLobePattern().floor:
        pattern["floor"] = ant.pattern.floor
    x, y, z = ant.position
    return {"id": ant.id, "x": x, "y": y, "z": z,
            "boresight_azimuth_deg": math.degrees(ant.boresight_azimuth), "pattern": pattern}


def towers_from_json(data):
    if not isinstance(data, list) or not data:
        raise DataError("towers must be a non-empty JSON array")
    towers = [antenna_from_dict(e) for e in data]
    ids = [a.id for a in towers]
    if len(set(ids)) != len(ids):
        raise DataError(f"duplicate antenna ids in {ids}")
    return towers


def load_towers(path):
    return towers_from_json(load_json(path))


def dump_towers(path, towers):
    dump_json(path, [antenna_to_dict(a) for a in towers])


def calibration_from_dict(data):
    data = data or {}
    unknown = set(data) - {"b", "P0", "Zm", "ZM"}
    if unknown:
        raise DataError(f"unknown calibration keys {sorted(unknown)}")
    return Calibration(**{k: float(v) for k, v in data.items()})


def calibration_to_dict(cal):
    return {"b": cal.b, "P0": cal.P0, "Zm": cal.Zm, "ZM": cal.ZM}


def load_calibration(path=None):
    return Calibration() if path is None else calibration_from_dict(load_json(path))


def load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def dump_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj
