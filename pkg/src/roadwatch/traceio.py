"""Line-delimited trace files (CSV with a fixed column order)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import TextIO

import numpy as np

from .sim import FLAG_BITS, VehicleSeries

TRACE_FIELDS = (
    "frame", "vehicle_id", "lane", "cell", "lateral_offset", "speed_mps", "accel_mps2",
    "steering_deg", "braking", "orientation_deg", "injected_flags", "label", "x_m", "y_m",
)
ESTIMATE_FIELDS = ("frame", "track_id") + TRACE_FIELDS[2:] + ("confident",)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    return str(v)


def write_series(series: dict[int, VehicleSeries], out: TextIO, estimated: bool = False) -> int:
    """Write records frame-major, then by vehicle/track id.  Returns the row count."""
    fields = ESTIMATE_FIELDS if estimated else TRACE_FIELDS
    w = csv.writer(out, lineterminator="\n")
    w.writerow(fields)
    rows = []
    for vid, s in sorted(series.items()):
        braking = s.braking
        conf = s.confident if s.confident is not None else np.ones(len(s), dtype=bool)
        for i in range(len(s)):
            row = [
                int(s.frame[i]), vid, int(s.lane[i]), int(s.cell[i]), s.lateral_offset[i], s.speed_mps[i],
                s.accel_mps2[i], s.steering_deg[i], braking[i], s.orientation_deg[i], int(s.flags[i]),
                s.label, s.x_m[i], s.y_m[i],
            ]
            if estimated:
                row.append(int(bool(conf[i])))
            rows.append(row)
    rows.sort(key=lambda r: (r[0], r[1]))
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return len(rows)


def read_series(path_or_file: str | Path | TextIO) -> dict[int, VehicleSeries]:
    """Read a trace or estimate file back into per-vehicle columns."""
    if isinstance(path_or_file, (str, Path)):
        with open(path_or_file, newline="", encoding="utf-8") as fh:
            return read_series(fh)
    reader = csv.DictReader(path_or_file)
    cols = reader.fieldnames or []
    id_col = "track_id" if "track_id" in cols else "vehicle_id"
    missing = {"frame", id_col, "lane", "lateral_offset", "speed_mps", "accel_mps2", "steering_deg"} - set(cols)
    if missing:
        raise ValueError(f"trace file lacks columns {sorted(missing)}")
    by_id: dict[int, list[dict]] = {}
    for row in reader:
        by_id.setdefault(int(row[id_col]), []).append(row)
    out = {}
    for vid, rows in sorted(by_id.items()):
        rows.sort(key=lambda r: int(r["frame"]))

        def col(name, dtype=float, default=0):
            if name not in cols:
                return np.full(len(rows), default, dtype=dtype)
            return np.array([dtype(r[name]) for r in rows], dtype=dtype)

        out[vid] = VehicleSeries(
            vehicle_id=vid,
            label=rows[0].get("label", ""),
            frame=col("frame", int),
            lane=col("lane", int, 1),
            cell=col("cell", int),
            lateral_offset=col("lateral_offset"),
            speed_mps=col("speed_mps"),
            accel_mps2=col("accel_mps2"),
            steering_deg=col("steering_deg"),
            orientation_deg=col("orientation_deg"),
            flags=col("injected_flags", int),
            x_m=col("x_m"),
            y_m=col("y_m"),
            confident=np.array([r["confident"] == "1" for r in rows]) if "confident" in cols else None,
        )
    return out


def flag_legend() -> str:
    return ", ".join(f"{bit}={name}" for name, bit in FLAG_BITS.items())
