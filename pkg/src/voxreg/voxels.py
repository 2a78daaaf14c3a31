"""Voxel-grid downsampling and correspondence-anchored voxel patches.

The raw clouds are bucketed into an implicit cubic grid at resolution
``ell`` (keys are per-axis ``floor(x / ell)``, kept in first-occurrence
order so results are reproducible). Each correspondence endpoint becomes a
graph node whose *patch* is the set of raw points sharing its voxel; the
fine stage later widens patches with a capture radius. Pairwise edge
quantities are computed on demand, so edges are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .correspondences import CorrespondenceSet
from .exceptions import EmptyCorrespondences, NonPositiveResolution
from .validation import check_points


def voxel_indices(points, ell):
    """Integer grid coordinates ``floor(p / ell)`` per axis."""
    if ell <= 0:
        raise NonPositiveResolution(f"resolution must be > 0, got {ell!r}")
    return np.floor(np.asarray(points, dtype=float) / ell).astype(np.int64)


def octree_downsample(points, ell):
    """One representative point (member centroid) per occupied voxel.

    Returns ``(representatives, voxel_map)`` where ``voxel_map`` maps the
    integer voxel key to the array of member point indices; the map
    partitions all input indices.
    """
    pts = check_points(points, "cloud")
    if ell <= 0:
        raise NonPositiveResolution(f"resolution must be > 0, got {ell!r}")
    keys = voxel_indices(pts, ell)
    voxel_map: dict[tuple[int, int, int], list[int]] = {}
    slot = np.empty(pts.shape[0], dtype=np.int64)
    for i, key in enumerate(map(tuple, keys)):
        members = voxel_map.get(key)
        if members is None:
            voxel_map[key] = members = []
        members.append(i)
        slot[i] = len(voxel_map) - 1 if len(members) == 1 else slot[members[0]]
    out_map = {k: np.asarray(v, dtype=np.int64) for k, v in voxel_map.items()}
    sums = np.zeros((len(out_map), 3))
    np.add.at(sums, slot, pts)
    counts = np.bincount(slot, minlength=len(out_map)).astype(float)
    reps = sums / counts[:, None]
    return reps, out_map


@dataclass(frozen=True)
class VoxelPatch:
    """Raw points of one voxel, anchored at the voxel cube center."""

    key: tuple
    center: np.ndarray  # geometric center of the voxel cube
    members: np.ndarray  # indices into the raw cloud; may be empty


@dataclass(frozen=True)
class CorrespondenceGraph:
    """Graph over correspondence endpoints of one cloud.

    ``nodes[i]`` is the i-th correspondence endpoint and ``patches[i]`` its
    voxel-local neighborhood. The full pairwise edge structure is implied.
    """

    nodes: np.ndarray
    patches: list
    resolution: float
    cloud: np.ndarray
    voxel_map: dict

    def __post_init__(self):
        if len(self.patches) != self.nodes.shape[0]:
            raise ValueError("one patch per node required")

    def expand_patch(self, node_index, capture_radius):
        """Member indices of all voxels whose centers lie within
        ``capture_radius`` of this node's voxel center."""
        ell = self.resolution
        key = self.patches[node_index].key
        reach = int(np.floor(capture_radius / ell + 1e-9))
        chunks = []
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                for dk in range(-reach, reach + 1):
                    offset = np.array([di, dj, dk], dtype=float) * ell
                    if np.linalg.norm(offset) > capture_radius + 1e-12:
                        continue
                    members = self.voxel_map.get((key[0] + di, key[1] + dj, key[2] + dk))
                    if members is not None:
                        chunks.append(members)
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(chunks))


def _patch_for(point, ell, voxel_map):
    key = tuple(voxel_indices(point.reshape(1, 3), ell)[0])
    center = (np.asarray(key, dtype=float) + 0.5) * ell
    members = voxel_map.get(key)
    if members is None:
        members = np.empty(0, dtype=np.int64)
    return VoxelPatch(key, center, members)


def build_graphs(cloud_p, cloud_q, corr: CorrespondenceSet, ell):
    """Per-cloud correspondence graphs with voxel patches at resolution ``ell``.

    Every correspondence endpoint must lie inside its cloud's bounding box
    (tolerance ``ell``); endpoints normally coincide with cloud points, in
    which case every patch holds at least that raw point.
    """
    cloud_p = check_points(cloud_p, "cloud_p")
    cloud_q = check_points(cloud_q, "cloud_q")
    if ell <= 0:
        raise NonPositiveResolution(f"resolution must be > 0, got {ell!r}")
    ell = float(ell)
    if len(corr) == 0:
        raise EmptyCorrespondences("correspondence set is empty")
    for name, cloud, endpoints in (("p", cloud_p, corr.p), ("q", cloud_q, corr.q)):
        lo = cloud.min(axis=0) - ell
        hi = cloud.max(axis=0) + ell
        bad = np.nonzero(np.any((endpoints < lo) | (endpoints > hi), axis=1))[0]
        if bad.size:
            raise ValueError(
                f"correspondence {bad[0]} endpoint ({name} side) lies outside "
                f"the cloud bounding box (tolerance {ell})"
            )
    graphs = []
    for cloud, endpoints in ((cloud_p, corr.p), (cloud_q, corr.q)):
        _, voxel_map = octree_downsample(cloud, ell)
        patches = [_patch_for(pt, ell, voxel_map) for pt in endpoints]
        graphs.append(
            CorrespondenceGraph(endpoints.copy(), patches, ell, cloud, voxel_map)
        )
    return graphs[0], graphs[1]
