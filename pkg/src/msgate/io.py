"""Drive and table serialization.

Drive JSON stores SI values: boundaries in seconds, amplitudes in rad/s
and phases in rad, one list per addressed ion. CSV files carry a header
row whose column names include their units.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .controls import ConstraintError, DriveWaveform

DRIVE_FORMAT = "msgate-drive/1"


def drive_to_dict(drive: DriveWaveform) -> dict:
    return {
        "format": DRIVE_FORMAT,
        "boundaries_s": drive.boundaries.tolist(),
        "robust": drive.robust,
        "ions": [
            {"ion": ion, "omega_rad_s": drive.amplitudes[r].tolist(),
             "phi_rad": drive.phases[r].tolist()}
            for r, ion in enumerate(drive.ions)
        ],
    }


def drive_from_dict(data: dict) -> DriveWaveform:
    try:
        if data.get("format") != DRIVE_FORMAT:
            raise ConstraintError(f"unsupported drive format {data.get('format')!r}")
        rows = data["ions"]
        return DriveWaveform(
            np.array(data["boundaries_s"], dtype=float),
            tuple(int(r["ion"]) for r in rows),
            np.array([r["omega_rad_s"] for r in rows], dtype=float),
            np.array([r["phi_rad"] for r in rows], dtype=float),
            bool(data.get("robust", False)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConstraintError):
            raise
        raise ConstraintError(f"malformed drive file: {exc}") from None


def save_drive(drive: DriveWaveform, path) -> None:
    Path(path).write_text(json.dumps(drive_to_dict(drive), indent=1))


def load_drive(path) -> DriveWaveform:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConstraintError(f"drive file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConstraintError(f"drive file {path} is not valid JSON: {exc}") from None
    return drive_from_dict(data)


def write_csv(path, header: list[str], rows) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, list(reader)


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_plain(payload), indent=2, allow_nan=True))


def _plain(obj):
    """Convert numpy containers and scalars to JSON-ready Python values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
