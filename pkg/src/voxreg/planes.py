"""Plane-based fine alignment inside correspondence voxel patches.

After the coarse pose, inlier pairs are re-selected at a doubled tolerance
and their voxel patches (widened by a capture radius) are searched for
shared planes with a recursive octree: a cube whose point covariance is
thin enough emits one plane feature group, otherwise it splits into eight.
The pose is then refined by driving the summed smallest covariance
eigenvalues of the groups to a minimum -- plane parameters are eliminated
in closed form by the eigendecomposition -- using Levenberg-Marquardt steps
extrapolated by Anderson acceleration (accepted only when they lower the
cost). Reference-side points are pinned at identity; only moving-side
points feel the pose, so gradients enumerate moving points alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anderson import AndersonState, anderson_accelerate
from .correspondences import CorrespondenceSet
from .exceptions import EmptyInliers, RepeatedEigenvalue
from .geometry import RigidTransform, exp_se3, log_se3
from .validation import check_positive

_EIGEN_GAP = 1e-10
_MAX_DEPTH = 32
_MAX_DAMPING_RETRIES = 8

STATUS_SINGULAR = "SingularNormalMatrix"
STATUS_NO_PLANES = "NoPlanesDetected"


@dataclass(frozen=True)
class PlaneDetectParams:
    """Octree plane-detection settings.

    A cube is accepted as planar when the smallest covariance eigenvalue is
    at most ``planarity_ratio`` of the eigenvalue sum and the RMS
    point-to-plane distance (``sqrt(lambda_min)``) is within ``rms_tol``.
    """

    min_points: int = 30
    planarity_ratio: float = 0.01
    rms_tol: float = 0.005
    capture_radius: float = 0.1

    def __post_init__(self):
        if self.min_points < 6:
            raise ValueError("min_points must be >= 6")
        if not 0.0 < self.planarity_ratio < 1.0:
            raise ValueError("planarity_ratio must be in (0, 1)")
        check_positive(self.rms_tol, "rms_tol")
        check_positive(self.capture_radius, "capture_radius")


@dataclass(frozen=True)
class PlaneFeatureGroup:
    """Feature points of one detected shared plane.

    ``points_ref`` come from the reference cloud (pose pinned to identity);
    ``points_mov`` come from the moving cloud and are stored already
    coarse-aligned, so the optimized twist acts on top of the coarse pose.
    Index arrays refer to the raw clouds and are used to deduplicate
    overlapping detections.
    """

    points_ref: np.ndarray
    points_mov: np.ndarray
    ref_indices: np.ndarray
    mov_indices: np.ndarray

    @property
    def n_ref(self) -> int:
        return self.points_ref.shape[0]

    @property
    def n_total(self) -> int:
        return self.points_ref.shape[0] + self.points_mov.shape[0]


@dataclass(frozen=True)
class PlaneStatistics:
    centroid: np.ndarray
    covariance: np.ndarray
    lambda_min: float
    u_min: np.ndarray
    eigenvalues: np.ndarray


@dataclass(frozen=True)
class FineResult:
    transform: RigidTransform
    n_groups: int
    cost_history: list
    iterations: int
    status: tuple


def refine_inliers(corr: CorrespondenceSet, transform: RigidTransform, epsilon):
    """Pairs whose post-alignment distance is strictly below ``2 * epsilon``."""
    check_positive(epsilon, "epsilon")
    residual = np.linalg.norm(corr.p - transform.apply(corr.q), axis=1)
    keep = np.nonzero(residual < 2.0 * epsilon)[0]
    if keep.size == 0:
        raise EmptyInliers("no correspondence within the refined tolerance")
    return corr.subset(keep, stage="C3")


def _canonical_sign(u):
    # Eigenvectors are sign-ambiguous; fix the first non-negligible
    # component positive so results are deterministic.
    for value in u:
        if abs(value) > 1e-12:
            return u if value > 0 else -u
    return u


def _stats_of(points):
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = (centered.T @ centered) / points.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    u = _canonical_sign(evecs[:, 0])
    return centroid, cov, evals, u


def plane_statistics(group: PlaneFeatureGroup, xi=None) -> PlaneStatistics:
    """Centroid, 1/N covariance, and the smallest eigenpair of the group
    with the twist applied to the moving points."""
    mov = group.points_mov
    if xi is not None and np.any(np.asarray(xi)):
        mov = exp_se3(xi).apply(mov)
    pts = np.vstack([group.points_ref, mov]) if group.n_ref else mov
    centroid, cov, evals, u = _stats_of(pts)
    return PlaneStatistics(centroid, cov, float(evals[0]), u, evals)


def pa_cost(groups, xi=None) -> float:
    """Sum over groups of the smallest covariance eigenvalue at ``xi``."""
    if not groups:
        raise ValueError("need at least one plane group")
    return float(sum(plane_statistics(g, xi).lambda_min for g in groups))


def lambda_min_gradient(group: PlaneFeatureGroup, xi=None):
    """Gradient of the group's smallest eigenvalue w.r.t. a left-perturbation
    twist acting on the moving points.

    Per moving point the eigenvalue derivative is
    ``(2/N) * (u . (y - centroid)) * u`` (reference points contribute
    nothing); chaining with the point derivative ``[I | -skew(y)]`` gives a
    6-vector. Raises RepeatedEigenvalue when the smallest eigenvalue is not
    simple (gap below 1e-10).
    """
    stats = plane_statistics(group, xi)
    if stats.eigenvalues[1] - stats.eigenvalues[0] < _EIGEN_GAP:
        raise RepeatedEigenvalue(
            f"eigenvalue gap {stats.eigenvalues[1] - stats.eigenvalues[0]:.3e}"
        )
    return _gradient_with_frame(group, xi, stats.u_min, stats.centroid)


def _moving_points(group, xi):
    mov = group.points_mov
    if xi is not None and np.any(np.asarray(xi)):
        mov = exp_se3(xi).apply(mov)
    return mov


def _gradient_with_frame(group, xi, u, centroid):
    mov = _moving_points(group, xi)
    if mov.shape[0] == 0:
        return np.zeros(6)
    n = group.n_total
    s = (mov - centroid) @ u  # signed plane distances of moving points
    grad = np.zeros(6)
    grad[:3] = (2.0 / n) * np.sum(s) * u
    grad[3:] = (2.0 / n) * np.sum(s[:, None] * np.cross(mov, u), axis=0)
    return grad


def _count_in_cube(points, lo, size):
    return np.all((points >= lo) & (points < lo + size), axis=1)


def detect_planes(
    points_ref,
    points_mov,
    transform: RigidTransform,
    params: PlaneDetectParams,
    ref_indices=None,
    mov_indices=None,
):
    """Recursive octree plane search over a merged reference/moving set.

    ``points_mov`` are given in the moving frame and aligned by
    ``transform`` before merging. Emitted groups carry at least three
    points from each side; one-sided cubes are uninformative and dropped.
    """
    ref = np.asarray(points_ref, dtype=float).reshape(-1, 3)
    mov_raw = np.asarray(points_mov, dtype=float).reshape(-1, 3)
    mov = transform.apply(mov_raw) if mov_raw.shape[0] else mov_raw
    if ref_indices is None:
        ref_indices = np.arange(ref.shape[0])
    if mov_indices is None:
        mov_indices = np.arange(mov_raw.shape[0])
    ref_indices = np.asarray(ref_indices, dtype=np.int64)
    mov_indices = np.asarray(mov_indices, dtype=np.int64)

    merged = np.vstack([ref, mov])
    is_ref = np.zeros(merged.shape[0], dtype=bool)
    is_ref[: ref.shape[0]] = True
    raw_index = np.concatenate([ref_indices, mov_indices])
    if merged.shape[0] < params.min_points:
        return []

    lo = merged.min(axis=0)
    extent = float((merged.max(axis=0) - lo).max())
    size = extent * (1.0 + 1e-9) + 1e-12

    groups = []

    def recurse(mask, lo, size, depth):
        count = int(np.count_nonzero(mask))
        if count < params.min_points:
            return
        pts = merged[mask]
        _, _, evals, _ = _stats_of(pts)
        total = float(evals.sum())
        planar = total > 0 and evals[0] / total <= params.planarity_ratio
        if planar and np.sqrt(evals[0]) <= params.rms_tol:
            ref_mask = mask & is_ref
            mov_mask = mask & ~is_ref
            n_ref = int(np.count_nonzero(ref_mask))
            if n_ref >= 3 and count - n_ref >= 3:
                groups.append(
                    PlaneFeatureGroup(
                        merged[ref_mask],
                        merged[mov_mask],
                        raw_index[ref_mask],
                        raw_index[mov_mask],
                    )
                )
            return
        if depth >= _MAX_DEPTH or size < 1e-9:
            return
        half = size / 2.0
        center = lo + half
        for octant in range(8):
            offset = np.array([octant >> 2 & 1, octant >> 1 & 1, octant & 1])
            child_lo = lo + offset * half
            child_mask = mask.copy()
            child_mask[mask] = np.all(
                (merged[mask] >= child_lo) & (merged[mask] < child_lo + half), axis=1
            )
            recurse(child_mask, child_lo, half, depth + 1)

    recurse(np.ones(merged.shape[0], dtype=bool), lo, size, 0)
    return groups


def _merge_two(a: PlaneFeatureGroup, b: PlaneFeatureGroup) -> PlaneFeatureGroup:
    def unite(idx_a, pts_a, idx_b, pts_b):
        idx = np.concatenate([idx_a, idx_b])
        pts = np.vstack([pts_a, pts_b])
        uniq, first = np.unique(idx, return_index=True)
        return pts[first], uniq

    ref_pts, ref_idx = unite(a.ref_indices, a.points_ref, b.ref_indices, b.points_ref)
    mov_pts, mov_idx = unite(a.mov_indices, a.points_mov, b.mov_indices, b.points_mov)
    return PlaneFeatureGroup(ref_pts, mov_pts, ref_idx, mov_idx)


def merge_plane_groups(groups, offset_tol, angle_tol_deg=2.0):
    """Merge groups describing the same plane (normals within the angle
    tolerance and plane offsets within ``offset_tol``), deduplicating raw
    points shared by overlapping capture regions."""
    cos_tol = np.cos(np.deg2rad(angle_tol_deg))
    merged: list[PlaneFeatureGroup] = []
    stats: list[PlaneStatistics] = []
    for group in groups:
        g_stats = plane_statistics(group)
        target = None
        for k, m_stats in enumerate(stats):
            if abs(float(g_stats.u_min @ m_stats.u_min)) < cos_tol:
                continue
            offset = float(m_stats.u_min @ (g_stats.centroid - m_stats.centroid))
            if abs(offset) <= offset_tol:
                target = k
                break
        if target is None:
            merged.append(group)
            stats.append(g_stats)
        else:
            merged[target] = _merge_two(merged[target], group)
            stats[target] = plane_statistics(merged[target])
    return merged


def collect_plane_groups(c3, graph_p, graph_q, transform, params: PlaneDetectParams):
    """Detect and merge plane groups around every refined inlier pair.

    The graphs must be the ones built on the correspondence set that ``c3``
    was refined from, so ``c3.source_index`` addresses graph nodes. Pairs
    whose widened patches coincide with an already-processed pair are
    detected once.
    """
    groups = []
    seen = set()
    for pos in c3.source_index:
        pos = int(pos)
        key = (graph_p.patches[pos].key, graph_q.patches[pos].key)
        if key in seen:
            continue
        seen.add(key)
        ref_members = graph_p.expand_patch(pos, params.capture_radius)
        mov_members = graph_q.expand_patch(pos, params.capture_radius)
        if ref_members.size == 0 or mov_members.size == 0:
            continue
        groups.extend(
            detect_planes(
                graph_p.cloud[ref_members],
                graph_q.cloud[mov_members],
                transform,
                params,
                ref_indices=ref_members,
                mov_indices=mov_members,
            )
        )
    return merge_plane_groups(groups, offset_tol=graph_p.resolution / 2.0)


def _assemble(groups, xi, normal_cache=None):
    """Gauss-Newton system of the frozen-frame residual form.

    Residuals are the signed plane distances scaled by 1/sqrt(N); summed
    over all points (reference rows are constants with zero Jacobian) the
    squared residuals equal the eigenvalue cost exactly at the
    linearization point. Groups whose smallest eigenvalue is repeated fall
    back to the cached frame from the previous iterate, or drop out.
    """
    normal = np.zeros((6, 6))
    gradient = np.zeros(6)
    cost = 0.0
    for k, group in enumerate(groups):
        stats = plane_statistics(group, xi)
        u, centroid = stats.u_min, stats.centroid
        if stats.eigenvalues[1] - stats.eigenvalues[0] < _EIGEN_GAP:
            cached = normal_cache[k] if normal_cache is not None else None
            if cached is None:
                continue
            u = cached
        elif normal_cache is not None:
            normal_cache[k] = u
        n = group.n_total
        scale = 1.0 / np.sqrt(n)
        mov = _moving_points(group, xi)
        s_mov = (mov - centroid) @ u
        s_ref = (group.points_ref - centroid) @ u if group.n_ref else np.zeros(0)
        rows = np.empty((mov.shape[0], 6))
        rows[:, :3] = u
        rows[:, 3:] = np.cross(mov, u)
        rows *= scale
        r = s_mov * scale
        normal += rows.T @ rows
        gradient += rows.T @ r
        cost += float(np.sum(r**2) + np.sum((s_ref * scale) ** 2))
    return normal, gradient, cost


def lm_step(groups, xi, damping):
    """One damped step on the frozen-frame residual form.

    Returns ``(dxi, predicted_cost, rank)``; rank below 6 means the plane
    normals do not constrain all six pose degrees of freedom (e.g. a single
    plane), in which case the damped pseudo-solution is still returned.
    """
    normal, gradient, cost = _assemble(groups, xi)
    rank = int(np.linalg.matrix_rank(normal))
    scale = max(float(np.trace(normal)) / 6.0, 1e-12)
    dxi = np.linalg.solve(normal + damping * scale * np.eye(6), -gradient)
    predicted = cost + 2.0 * float(gradient @ dxi) + float(dxi @ normal @ dxi)
    return dxi, predicted, rank


def optimize_alignment(
    groups,
    max_iterations=50,
    cost_tol=1e-9,
    window=5,
    use_anderson=True,
):
    """Minimize the summed smallest eigenvalues over the pose twist.

    Levenberg-Marquardt with multiplicative damping adaptation; each
    accepted step is treated as one application of a fixed-point map and
    extrapolated by Anderson acceleration, the extrapolation being kept
    only when it lowers the cost. The accepted cost sequence is therefore
    non-increasing.
    """
    if not groups:
        raise ValueError("need at least one plane group")
    xi = np.zeros(6)
    cost = pa_cost(groups, xi)
    history = [cost]
    status = set()
    damping = 1e-6
    state = AndersonState(window=window)
    normal_cache = [None] * len(groups)
    iterations = 0

    for _ in range(max_iterations):
        normal, gradient, _ = _assemble(groups, xi, normal_cache)
        if int(np.linalg.matrix_rank(normal)) < 6:
            status.add(STATUS_SINGULAR)
        scale = max(float(np.trace(normal)) / 6.0, 1e-12)

        improved = False
        for _ in range(_MAX_DAMPING_RETRIES):
            dxi = np.linalg.solve(normal + damping * scale * np.eye(6), -gradient)
            xi_try = log_se3(exp_se3(dxi) @ exp_se3(xi))
            cost_try = pa_cost(groups, xi_try)
            if cost_try < cost:
                improved = True
                damping = max(damping / 10.0, 1e-12)
                break
            damping = min(damping * 10.0, 1e10)
        if not improved:
            break
        iterations += 1

        state.push(xi, xi_try)
        accepted_xi, accepted_cost = xi_try, cost_try
        if use_anderson and len(state) >= 2:
            xi_aa = anderson_accelerate(state, xi_try)
            cost_aa = pa_cost(groups, xi_aa)
            if cost_aa < cost_try:
                accepted_xi, accepted_cost = xi_aa, cost_aa

        previous = cost
        xi, cost = accepted_xi, accepted_cost
        history.append(cost)
        if cost == 0.0 or abs(previous - cost) / max(previous, 1e-300) < cost_tol:
            break

    return xi, history, iterations, status


def fine_register(
    c3,
    graph_p,
    graph_q,
    coarse: RigidTransform,
    params: PlaneDetectParams,
    max_iterations=50,
    cost_tol=1e-9,
    window=5,
    use_anderson=True,
) -> FineResult:
    """Plane-based refinement of a coarse pose.

    When no usable plane groups are found the coarse pose is returned
    unchanged with a status flag (scenes poor in planar structure degrade
    gracefully instead of failing).
    """
    groups = collect_plane_groups(c3, graph_p, graph_q, coarse, params)
    if not groups:
        return FineResult(coarse, 0, [], 0, (STATUS_NO_PLANES,))
    xi, history, iterations, status = optimize_alignment(
        groups,
        max_iterations=max_iterations,
        cost_tol=cost_tol,
        window=window,
        use_anderson=use_anderson,
    )
    return FineResult(
        exp_se3(xi) @ coarse, len(groups), history, iterations, tuple(sorted(status))
    )
