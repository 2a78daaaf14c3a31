"""Correspondence sets and their filtering stages.

A correspondence pairs a point ``p`` from the target (reference) cloud with
a point ``q`` from the source (moving) cloud. Sets move through three
stages: ``C1`` (raw putative matches), ``C2`` (post outlier-removal
consensus), ``C3`` (post-coarse inliers). Filtering preserves
``source_index`` so later stages remain traceable subsets of ``C1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_pair_array

_STAGE_ORDER = {"C1": 1, "C2": 2, "C3": 3}


@dataclass(frozen=True)
class CorrespondenceSet:
    p: np.ndarray  # (k, 3) target-side endpoints
    q: np.ndarray  # (k, 3) source-side endpoints
    source_index: np.ndarray = field(default=None)  # (k,) original row ids
    stage: str = "C1"

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        q = np.asarray(self.q, dtype=float).reshape(-1, 3)
        if p.shape != q.shape:
            raise ValueError(f"p/q shape mismatch: {p.shape} vs {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("correspondence coordinates must be finite")
        if self.stage not in _STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}")
        idx = self.source_index
        if idx is None:
            idx = np.arange(p.shape[0])
        idx = np.asarray(idx, dtype=int).reshape(-1)
        if idx.shape[0] != p.shape[0]:
            raise ValueError("source_index length mismatch")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "source_index", idx)

    def __len__(self) -> int:
        return self.p.shape[0]

    @classmethod
    def from_pairs(cls, pairs, stage="C1") -> "CorrespondenceSet":
        """Build from an ``(n, 6)`` array of (px py pz qx qy qz) rows."""
        arr = check_pair_array(pairs)
        return cls(arr[:, :3], arr[:, 3:], np.arange(arr.shape[0]), stage)

    def as_array(self) -> np.ndarray:
        return np.hstack([self.p, self.q])

    def subset(self, indices, stage=None) -> "CorrespondenceSet":
        """Select rows by position; the stage may only advance (C1->C2->C3)."""
        indices = np.asarray(indices)
        new_stage = self.stage if stage is None else stage
        if _STAGE_ORDER.get(new_stage, 0) < _STAGE_ORDER[self.stage]:
            raise ValueError(f"stage cannot move back from {self.stage} to {new_stage}")
        return CorrespondenceSet(
            self.p[indices], self.q[indices], self.source_index[indices], new_stage
        )
