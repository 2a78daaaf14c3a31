"""Registration error metrics and success classification."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform

# Success profiles: (max rotation error in degrees, max translation error in
# meters); both comparisons are inclusive.
PROFILES = {
    "threedmatch": (15.0, 0.30),
    "eth": (5.0, 0.50),
}


@dataclass(frozen=True)
class EvalResult:
    re_deg: float
    te_m: float
    success: bool
    thresholds: tuple  # (re_max_deg, te_max_m)


def rotation_error(r_hat, r_gt):
    """Geodesic angle between two rotations, in degrees.

    The arccos argument is clamped to [-1, 1] so round-off near identity
    cannot produce NaN.
    """
    r_hat = np.asarray(r_hat, dtype=float)
    r_gt = np.asarray(r_gt, dtype=float)
    cos_angle = np.clip((np.trace(r_gt @ r_hat.T) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_angle)))


def translation_error(t_hat, t_gt):
    """Euclidean norm of the translation difference, in meters."""
    return float(np.linalg.norm(np.asarray(t_hat, dtype=float) - np.asarray(t_gt, dtype=float)))


def _thresholds(profile):
    if isinstance(profile, str):
        try:
            return PROFILES[profile]
        except KeyError:
            raise ValueError(f"unknown profile {profile!r}; use one of {sorted(PROFILES)}")
    re_max, te_max = profile
    return float(re_max), float(te_max)


def classify_success(re_deg, te_m, profile="threedmatch"):
    """Inclusive conjunction of both threshold tests for the given profile
    (a name from PROFILES or a custom ``(re_max_deg, te_max_m)`` pair)."""
    re_max, te_max = _thresholds(profile)
    return bool(re_deg <= re_max and te_m <= te_max)


def evaluate_transform(estimate: RigidTransform, truth: RigidTransform, profile="threedmatch") -> EvalResult:
    re_deg = rotation_error(estimate.rotation, truth.rotation)
    te_m = translation_error(estimate.translation, truth.translation)
    thresholds = _thresholds(profile)
    return EvalResult(re_deg, te_m, classify_success(re_deg, te_m, thresholds), thresholds)
