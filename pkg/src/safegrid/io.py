"""CSV serialization of run logs and events."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .engine import DG_FIELDS, GLOBAL_FIELDS, Event, SimLog

FLOAT_FMT = "%.17g"  # round-trips every double


def timeseries_columns(n: int) -> list[str]:
    cols = ["time_s"]
    for i in range(1, n + 1):
        cols += [f"dg{i}_{f}" for f in DG_FIELDS]
    return cols + list(GLOBAL_FIELDS)


def log_matrix(log: SimLog) -> np.ndarray:
    parts = [log.time[:, None]]
    for i in range(log.n_dg):
        parts.append(np.column_stack([log.channels[f][:, i] for f in DG_FIELDS]))
    parts.append(np.column_stack([log.e_f_norm, log.e_v_norm, log.lyap_E]))
    return np.hstack(parts)


def write_timeseries(log: SimLog, path: str | Path) -> None:
    np.savetxt(path, log_matrix(log), fmt=FLOAT_FMT, delimiter=",", header=",".join(timeseries_columns(log.n_dg)), comments="")


def read_timeseries(path: str | Path, events_path: str | Path | None = None) -> SimLog:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    per = len(DG_FIELDS)
    n = (len(header) - 1 - len(GLOBAL_FIELDS)) // per
    if header != timeseries_columns(n):
        raise ValueError(f"{path}: unexpected column layout")
    channels = {f: np.ascontiguousarray(data[:, 1 + k : 1 + n * per : per]) for k, f in enumerate(DG_FIELDS)}
    tail = data[:, 1 + n * per :]
    events = read_events(events_path) if events_path is not None else []
    return SimLog(data[:, 0].copy(), channels, tail[:, 0].copy(), tail[:, 1].copy(), tail[:, 2].copy(), events)


def write_events(events: list[Event], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "dg", "channel", "kind"])
        for e in events:
            w.writerow([FLOAT_FMT % e.time, e.dg, e.channel, e.kind])


def read_events(path: str | Path) -> list[Event]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Event(float(r["time_s"]), int(r["dg"]), r["channel"], r["kind"]) for r in rows]


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
