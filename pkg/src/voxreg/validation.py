"""Input validation helpers shared by the estimator, pipeline, and I/O layers."""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidCloud


def check_points(points, name="points", allow_empty=False):
    """Coerce to a float64 ``(n, 3)`` array and reject non-finite entries."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 0:
        pts = pts.reshape(0, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"{name} must have shape (n, 3), got {pts.shape}")
    if not allow_empty and pts.shape[0] == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(pts)):
        raise InvalidCloud(f"{name} contains non-finite coordinates")
    return pts


def check_pair_array(pairs, name="correspondences"):
    """Coerce to a float64 ``(n, 6)`` array of (px py pz qx qy qz) rows."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 6:
        raise ValueError(f"{name} must have shape (n, 6), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value!r}")
    return value
