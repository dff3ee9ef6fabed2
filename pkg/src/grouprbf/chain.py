"""Posterior draw storage and its on-disk layout.

A chain directory holds ``draws/<block>.csv`` (one row per stored draw,
flattened 1-based column names), ``fitted_mean.csv`` and ``meta.json``.
Floats are written with 17 significant digits so reloading is lossless.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import format_float
from .groups import GroupStructure
from .kernel import AngleSet, ImportanceVector, RbfState

BLOCKS = ("gamma", "rho", "beta", "d", "s2", "b", "lam", "mu", "theta",
          "Lambda", "sig1", "sig2", "phi", "delta", "y_imputed")


@dataclass
class Chain:
    """Thinned post-burn-in draws plus the bookkeeping needed to use them."""

    draws: dict[str, np.ndarray]
    groups: GroupStructure
    meta: dict = field(default_factory=dict)
    fitted_mean: np.ndarray | None = None   # posterior mean of f(x_i) + Lambda eta_i, centred scale

    @property
    def size(self) -> int:
        return int(self.draws["beta"].shape[0])

    @property
    def y_center(self) -> np.ndarray:
        return np.asarray(self.meta.get("y_center", np.zeros(self.draws["lam"].shape[1])))

    def rbf_state(self, s: int) -> RbfState:
        """The RBF half of stored draw ``s``."""
        dr = self.draws
        p = self.groups.p
        imp = ImportanceVector(self.groups, dr["gamma"][s], dr["rho"][s], dr["beta"][s],
                               dr["s2"][s], dr["b"][s])
        return RbfState(dr["lam"][s], dr["mu"][s], imp, AngleSet.from_flat(p, dr["theta"][s]))

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        (directory / "draws").mkdir(parents=True, exist_ok=True)
        for name in BLOCKS:
            if name in self.draws:
                _write_block(directory / "draws" / f"{name}.csv", name, self.draws[name])
        if self.fitted_mean is not None:
            from .data import write_matrix
            write_matrix(directory / "fitted_mean.csv", self.fitted_mean, "y")
        meta = dict(self.meta)
        meta["groups"] = self.groups.to_json()["groups"]
        meta["shapes"] = {k: list(v.shape) for k, v in self.draws.items()}
        with open(directory / "meta.json", "w") as fh:
            json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory: str | Path) -> Chain:
        directory = Path(directory)
        with open(directory / "meta.json") as fh:
            meta = json.load(fh)
        groups = GroupStructure.from_json({"groups": meta["groups"]})
        draws = {}
        for name, shape in meta["shapes"].items():
            path = directory / "draws" / f"{name}.csv"
            if int(np.prod(shape[1:])) == 0:
                draws[name] = np.zeros(shape)
                continue
            with open(path, newline="") as fh:
                rows = list(csv.reader(fh))[1:]
            arr = np.array([[float(x) for x in r] for r in rows], dtype=float)
            draws[name] = arr.reshape(shape)
        for name in ("gamma", "rho"):
            draws[name] = draws[name].astype(np.int64)
        fitted = None
        if (directory / "fitted_mean.csv").exists():
            from .data import read_matrix
            fitted = read_matrix(directory / "fitted_mean.csv")
        return cls(draws, groups, meta, fitted)


def _write_block(path: Path, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    inner = arr.shape[1:]
    header = [name + "[" + ",".join(str(i + 1) for i in idx) + "]"
              for idx in itertools.product(*(range(s) for s in inner))] if inner else [name]
    flat = arr.reshape(arr.shape[0], -1)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in flat:
            w.writerow([format_float(x) for x in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj
