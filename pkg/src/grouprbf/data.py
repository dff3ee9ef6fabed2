"""Dataset container and CSV I/O.

CSV layout: one header row with 1-based column names (``x1..xp`` or
``y1..yv``), ``NaN`` marks a missing response.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    """Predictors ``X`` (n, p) in [0, 1] and responses ``Y`` (n, v).

    Missing responses are NaN in ``Y``; ``mask`` is True where observed.
    """

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.Y = np.array(self.Y, dtype=float, ndmin=2)
        if self.Y.shape[0] != self.X.shape[0] and self.Y.shape[1] == self.X.shape[0]:
            self.Y = self.Y.T
        if self.X.ndim != 2 or self.Y.shape[0] != self.X.shape[0]:
            raise ValueError(f"X {self.X.shape} and Y {self.Y.shape} disagree on n")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("X must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def v(self) -> int:
        return self.Y.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.Y)

    def with_missing(self, drop: np.ndarray) -> Dataset:
        """Copy with the entries flagged by boolean ``drop`` set to NaN."""
        Y = self.Y.copy()
        Y[drop] = np.nan
        return Dataset(self.X, Y)


def write_matrix(path: str | Path, A: np.ndarray, prefix: str) -> None:
    A = np.atleast_2d(A)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}{j + 1}" for j in range(A.shape[1])])
        for row in A:
            w.writerow([format_float(x) for x in row])


def read_matrix(path: str | Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    body = rows[1:]
    if not body:
        return np.empty((0, len(rows[0])))
    return np.array([[float(x) for x in r] for r in body], dtype=float)


def format_float(x: float) -> str:
    x = float(x)
    if np.isnan(x):
        return "NaN"
    return f"{x:.17g}"


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    return Dataset(read_matrix(directory / "X.csv"), read_matrix(directory / "Y.csv"))
