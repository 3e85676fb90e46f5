"""Longitudinal dataset container and its on-disk CSV + JSON layout.

A dataset directory holds ``dataset.json`` plus three headerless CSV files:
``Y.csv`` (n rows x m cols), ``Z.csv`` (n*m rows x p0 cols) and ``X.csv``
(n*m rows x prod(dims) cols). Z and X rows are subject-major, row
(i-1)*m + j for subject i and time j, and each X row is vec(X_ij) in
column-major order.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MANIFEST = "dataset.json"
FLOAT_FMT = "%.17g"


class DataError(ValueError):
    """Raised for malformed dataset directories or files."""


@dataclass
class LongitudinalDataset:
    y: np.ndarray  # (n, m)
    z: np.ndarray  # (n, m, p0)
    x: np.ndarray  # (n, m, p_1, ..., p_D)
    family: str = "gaussian"

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        n, m = self.y.shape
        z = np.asarray(self.z, dtype=float)
        self.z = np.zeros((n, m, 0)) if z.size == 0 else z.reshape(n, m, -1)
        self.x = np.asarray(self.x, dtype=float)
        if self.x.shape[:2] != (n, m) or self.x.ndim < 3:
            raise DataError(f"X has shape {self.x.shape}, expected ({n}, {m}, p_1, ..., p_D)")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def m(self) -> int:
        return self.y.shape[1]

    @property
    def p0(self) -> int:
        return self.z.shape[2]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.x.shape[2:])

    def subset(self, subjects=None, times=None) -> "LongitudinalDataset":
        subjects = slice(None) if subjects is None else subjects
        times = slice(None) if times is None else times
        return LongitudinalDataset(self.y[subjects][:, times], self.z[subjects][:, times],
                                   self.x[subjects][:, times], self.family)


def x_rows(x: np.ndarray) -> np.ndarray:
    """(n, m, *dims) -> (n*m, prod dims) with column-major vec per row."""
    n, m = x.shape[:2]
    perm = (0, 1) + tuple(range(x.ndim - 1, 1, -1))
    return x.transpose(perm).reshape(n * m, -1)


def x_from_rows(rows: np.ndarray, n: int, m: int, dims) -> np.ndarray:
    dims = tuple(dims)
    arr = rows.reshape((n, m) + dims[::-1])
    perm = (0, 1) + tuple(range(arr.ndim - 1, 1, -1))
    return np.ascontiguousarray(arr.transpose(perm))


def write_csv(path, array) -> None:
    array = np.atleast_2d(np.asarray(array, dtype=float))
    np.savetxt(path, array, fmt=FLOAT_FMT, delimiter=",")


def read_csv(path, expected_shape: tuple[int, int] | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    except ValueError:
        _locate_bad_cell(path)
        raise
    if expected_shape is not None and arr.shape != expected_shape:
        if expected_shape[0] * expected_shape[1] == 0 and arr.size == 0:
            return np.zeros(expected_shape)
        raise DataError(f"{path.name}: expected {expected_shape[0]} rows x "
                        f"{expected_shape[1]} cols, found {arr.shape[0]} x {arr.shape[1]}")
    return arr


def _locate_bad_cell(path: Path) -> None:
    with open(path, newline="") as fh:
        for row_no, row in enumerate(csv.reader(fh), start=1):
            for col_no, cell in enumerate(row, start=1):
                try:
                    float(cell)
                except ValueError:
                    raise DataError(f"{path.name}: non-numeric cell {cell!r} at row {row_no}, "
                                    f"column {col_no}") from None
    raise DataError(f"{path.name}: ragged rows")


def save_dataset(data: LongitudinalDataset, directory, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n": data.n, "m": data.m, "p0": data.p0, "dims": list(data.dims),
        "family": data.family,
        "files": {"Y": "Y.csv", "Z": "Z.csv", "X": "X.csv"},
    }
    if extra:
        manifest.update(extra)
    write_csv(directory / "Y.csv", data.y)
    write_csv(directory / "Z.csv", data.z.reshape(data.n * data.m, data.p0))
    write_csv(directory / "X.csv", x_rows(data.x))
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2))
    return directory


def load_dataset(directory) -> LongitudinalDataset:
    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.exists():
        raise DataError(f"no {MANIFEST} in {directory}")
    try:
        manifest = json.loads(manifest_path.read_text())
        n, m, p0 = int(manifest["n"]), int(manifest["m"]), int(manifest["p0"])
        dims = [int(p) for p in manifest["dims"]]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"bad manifest {manifest_path}: {exc}") from None
    files = {"Y": "Y.csv", "Z": "Z.csv", "X": "X.csv", **manifest.get("files", {})}
    y = read_csv(directory / files["Y"], (n, m))
    if p0 > 0:
        z = read_csv(directory / files["Z"], (n * m, p0))
    else:
        z = np.zeros((n * m, 0))
    x = read_csv(directory / files["X"], (n * m, int(np.prod(dims))))
    return LongitudinalDataset(y, z.reshape(n, m, p0), x_from_rows(x, n, m, dims),
                               manifest.get("family", "gaussian"))
