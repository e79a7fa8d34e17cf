"""Experiment reports: an in-memory record plus JSON/CSV persistence.

A report is the complete, reproducible record of one recipe run: the
configuration and seeds that produced it, named tables (lists of same-keyed
row dicts), named plot-ready series (rows of series/x/y), free-form notes,
and the train/test id split.  Reports never contain timestamps or other
run-varying values, so rerunning a recipe with the same config writes
byte-identical files.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class ExperimentReport:
    recipe: str
    config: dict
    seeds: dict
    environment: dict
    tables: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    split: dict = field(default_factory=dict)

    def validate(self) -> None:
        """No NaN/Inf anywhere, and the id split must be disjoint."""
        bad = _find_nonfinite(self.tables) or _find_nonfinite(self.series)
        if bad:
            raise ValueError(f"report contains a non-finite value at {bad}")
        train = set(self.split.get("train_ids", []))
        test = set(self.split.get("test_ids", []))
        overlap = train & test
        if overlap:
            raise ValueError(f"train/test ids overlap: {sorted(overlap)[:5]}")


def _find_nonfinite(obj, path="") -> str | None:
    if isinstance(obj, dict):
        for key, value in obj.items():
            hit = _find_nonfinite(value, f"{path}.{key}")
            if hit:
                return hit
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            hit = _find_nonfinite(value, f"{path}[{i}]")
            if hit:
                return hit
    elif isinstance(obj, float) and not np.isfinite(obj):
        return path or "<root>"
    return None


def _jsonable(obj):
    """Convert numpy scalars/arrays and tuples so json output is canonical."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def save_report(report: ExperimentReport, out_dir) -> str:
    """Write report.json plus per-table and per-series CSVs; returns the dir."""
    report.validate()
    os.makedirs(out_dir, exist_ok=True)
    payload = _jsonable(asdict(report))
    json_path = os.path.join(out_dir, "report.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    tables_dir = os.path.join(out_dir, "tables")
    if payload["tables"]:
        os.makedirs(tables_dir, exist_ok=True)
        for name, rows in payload["tables"].items():
            with open(os.path.join(tables_dir, f"{name}.csv"), "w",
                      newline="", encoding="utf-8") as fh:
                if not rows:
                    continue
                writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
                writer.writeheader()
                writer.writerows(rows)
    series_dir = os.path.join(out_dir, "series")
    if payload["series"]:
        os.makedirs(series_dir, exist_ok=True)
        for name, points in payload["series"].items():
            with open(os.path.join(series_dir, f"{name}.csv"), "w",
                      newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["series", "x", "y"])
                for point in points:
                    writer.writerow([point["series"], repr(point["x"]),
                                     repr(point["y"])])
    return str(out_dir)


def load_report(out_dir) -> ExperimentReport:
    with open(os.path.join(out_dir, "report.json"), "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return ExperimentReport(**data)
