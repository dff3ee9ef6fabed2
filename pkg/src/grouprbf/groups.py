"""Predictor grouping.

Groups are disjoint index sets that together cover ``0..p-1``. Indices are
0-based in memory; anything written to disk is 1-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class GroupStructure:
    """Partition of ``p`` predictors into ``M`` groups."""

    groups: tuple[tuple[int, ...], ...]
    group_of: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = tuple(tuple(int(j) for j in g) for g in self.groups)
        if len(groups) == 0:
            raise ValueError("at least one group is required")
        flat = [j for g in groups for j in g]
        if any(len(g) == 0 for g in groups):
            raise ValueError("every group needs at least one predictor")
        p = len(flat)
        if sorted(flat) != list(range(p)):
            raise ValueError("groups must be disjoint and cover 0..p-1 exactly")
        group_of = np.empty(p, dtype=np.int64)
        for g, members in enumerate(groups):
            group_of[list(members)] = g
        group_of.setflags(write=False)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "group_of", group_of)

    @property
    def M(self) -> int:
        return len(self.groups)

    @property
    def p(self) -> int:
        return int(self.group_of.size)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups], dtype=np.int64)

    def members(self, g: int) -> np.ndarray:
        return np.asarray(self.groups[g], dtype=np.int64)

    def subset(self, keep) -> tuple[GroupStructure, np.ndarray]:
        """Structure restricted to groups ``keep`` (in order) and the original columns it uses."""
        keep = [int(g) for g in keep]
        if not keep:
            raise ValueError("cannot keep zero groups")
        cols = np.concatenate([self.members(g) for g in keep])
        new, start = [], 0
        for g in keep:
            m = len(self.groups[g])
            new.append(tuple(range(start, start + m)))
            start += m
        return GroupStructure(tuple(new)), cols

    def to_json(self) -> dict:
        return {"groups": [[j + 1 for j in g] for g in self.groups]}

    @classmethod
    def from_json(cls, obj: dict) -> GroupStructure:
        """Build from ``{"groups": [[...], ...]}`` (1-based) or ``{"contiguous": {"M":, "size":}}``."""
        if "contiguous" in obj:
            spec = obj["contiguous"]
            return contiguous_groups(int(spec["M"]), int(spec["size"]))
        if "groups" in obj:
            return cls(tuple(tuple(int(j) - 1 for j in g) for g in obj["groups"]))
        raise ValueError("group definition needs a 'groups' or 'contiguous' key")


def contiguous_groups(M: int, group_size: int) -> GroupStructure:
    """Blocks ``[g*size, (g+1)*size)`` for ``g = 0..M-1``."""
    if M < 1 or group_size < 1:
        raise ValueError(f"M and group_size must be >= 1, got M={M}, size={group_size}")
    return GroupStructure(
        tuple(tuple(range(g * group_size, (g + 1) * group_size)) for g in range(M))
    )


def predictor_group(gs: GroupStructure, j: int) -> int:
    if not 0 <= j < gs.p:
        raise IndexError(f"predictor index {j} outside 0..{gs.p - 1}")
    return int(gs.group_of[j])


def load_groups(path: str | Path) -> GroupStructure:
    with open(path) as fh:
        return GroupStructure.from_json(json.load(fh))
