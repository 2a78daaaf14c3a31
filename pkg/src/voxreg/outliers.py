"""Hierarchical correspondence outlier rejection on the voxel graph.

Two tiers: a node-reliability pre-filter keeps the ``k_opt`` best-supported
correspondences (length-preservation weights over all pairs), then an
edge-reliability check anchors candidate edges at the most reliable node,
scores them with a loose projection constraint, and verifies the
top-scoring edges with a tight rotational constraint whose free angle is
found by interval stabbing; the edge with the largest consensus wins.
Survivors form the consensus set C2.

The pairwise node stage costs O(k^2); the documented near-linearithmic
profile refers to the edge stage, whose angle search sorts interval
endpoints once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .correspondences import CorrespondenceSet
from .exceptions import (
    ConsensusTooSmall,
    DegenerateEdge,
    NoFeasibleNode,
    TooFewCorrespondences,
)
from .geometry import rotation_about_axis
from .validation import check_positive

_EDGE_EPS = 1e-12  # edges shorter than this are degenerate
_ROW_CHUNK = 1024  # cap on pairwise-distance working memory
# The loose constraint is only a necessary condition and can rank a wrong
# edge first in structured scenes; this many top edges get the tight check.
_EDGE_CANDIDATES = 16


@dataclass(frozen=True)
class RemovalParams:
    """Settings of the hierarchical filter.

    ``epsilon`` (the inlier tolerance) is tied to the voxel resolution as
    ``2 * resolution`` by construction.
    """

    resolution: float
    k_opt: int

    def __post_init__(self):
        check_positive(self.resolution, "resolution")
        if self.k_opt < 3:
            raise ValueError(f"k_opt must be >= 3, got {self.k_opt}")

    @property
    def epsilon(self) -> float:
        return 2.0 * self.resolution


def node_weight(delta_d, ell):
    """Length-mismatch weight ``exp(-delta_d**2 / (0.6 * ell))`` in [0, 1].

    Callers zero the weight when ``delta_d`` exceeds the inlier tolerance.
    """
    delta_d = np.asarray(delta_d, dtype=float)
    return np.exp(-(delta_d**2) / (0.6 * ell))


def pairwise_distances(points):
    """Dense Euclidean distance matrix, row-chunked to bound memory.

    Each entry is computed as ``sqrt(sum((x_i - x_j)**2))`` so results are
    bit-reproducible against a per-pair loop.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    out = np.empty((n, n))
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        dx = x[start:stop, None] - x[None, :]
        dy = y[start:stop, None] - y[None, :]
        dz = z[start:stop, None] - z[None, :]
        sq = dx * dx + dy * dy + dz * dz
        np.sqrt(sq, out=out[start:stop])
    return out


@njit(cache=True)
def _reliability_kernel(p, q, ell, epsilon):
    # Fused pairwise loop; contributions reach each node in ascending
    # partner order, so a plain per-pair oracle reproduces it bit-exactly.
    k = p.shape[0]
    rel = np.zeros(k)
    for i in range(k):
        for j in range(i + 1, k):
            dx = p[i, 0] - p[j, 0]
            dy = p[i, 1] - p[j, 1]
            dz = p[i, 2] - p[j, 2]
            dp = np.sqrt(dx * dx + dy * dy + dz * dz)
            dx = q[i, 0] - q[j, 0]
            dy = q[i, 1] - q[j, 1]
            dz = q[i, 2] - q[j, 2]
            dq = np.sqrt(dx * dx + dy * dy + dz * dz)
            dd = abs(dp - dq)
            if dd <= epsilon:
                w = np.exp(-(dd * dd) / (0.6 * ell))
                rel[i] += w
                rel[j] += w
    return rel


def node_reliabilities(corr: CorrespondenceSet, params: RemovalParams):
    """Per-node reliability: sum of symmetric pairwise weights.

    For every pair (i, j) the edge-length mismatch
    ``|  ||p_i - p_j|| - ||q_i - q_j||  |`` feeds the weight when it is
    within epsilon, else the pair contributes zero.
    """
    if len(corr) < 2:
        raise TooFewCorrespondences(f"need >= 2 correspondences, got {len(corr)}")
    return _reliability_kernel(
        np.ascontiguousarray(corr.p),
        np.ascontiguousarray(corr.q),
        params.resolution,
        params.epsilon,
    )


def _top_positions(reliabilities, source_index, k):
    # Highest reliability first; ties broken by lower source index.
    order = np.lexsort((source_index, -np.asarray(reliabilities, dtype=float)))
    return np.sort(order[:k])


def select_top_nodes(corr: CorrespondenceSet, reliabilities, k_opt) -> CorrespondenceSet:
    """Keep the ``k_opt`` most reliable correspondences (stage stays C1)."""
    if k_opt > len(corr):
        raise ValueError(f"k_opt={k_opt} exceeds set size {len(corr)}")
    return corr.subset(_top_positions(reliabilities, corr.source_index, k_opt))


def _edge_frame(edge_p, edge_q):
    """Shared edge-aligned frame for the tight constraint.

    Both graphs are translated so node i sits at the origin, and the q side
    is rotated by the minimal rotation taking its edge direction onto the p
    edge direction. The residual degree of freedom is exactly the roll
    angle about the shared axis ``u``.
    """
    p_i, p_j = (np.asarray(v, dtype=float) for v in edge_p)
    q_i, q_j = (np.asarray(v, dtype=float) for v in edge_q)
    ep = p_j - p_i
    eq = q_j - q_i
    lp = np.linalg.norm(ep)
    lq = np.linalg.norm(eq)
    if lp < _EDGE_EPS or lq < _EDGE_EPS:
        raise DegenerateEdge(f"edge lengths {lp:.3e}/{lq:.3e} below {_EDGE_EPS:.0e}")
    u = ep / lp
    v = eq / lq
    cross = np.cross(v, u)
    dot = float(np.dot(v, u))
    sin_norm = np.linalg.norm(cross)
    if sin_norm < 1e-15:
        if dot > 0.0:
            align = np.eye(3)
        else:
            # Antiparallel: rotate by pi about any axis perpendicular to v.
            helper = np.array([1.0, 0.0, 0.0])
            if abs(v[0]) > 0.9:
                helper = np.array([0.0, 1.0, 0.0])
            axis = np.cross(v, helper)
            axis /= np.linalg.norm(axis)
            align = rotation_about_axis(np.pi, axis)
    else:
        axis = cross / sin_norm
        angle = np.arctan2(sin_norm, dot)
        align = rotation_about_axis(angle, axis)
    return p_i, q_i, u, align


def loose_constraint_f1(edge_p, edge_q, node_p, node_q, epsilon):
    """Projection-length agreement along the edge; negative means consistent."""
    p_i, p_j = (np.asarray(v, dtype=float) for v in edge_p)
    q_i, q_j = (np.asarray(v, dtype=float) for v in edge_q)
    ep = p_j - p_i
    eq = q_j - q_i
    lp = np.linalg.norm(ep)
    lq = np.linalg.norm(eq)
    if lp < _EDGE_EPS or lq < _EDGE_EPS:
        raise DegenerateEdge(f"edge lengths {lp:.3e}/{lq:.3e} below {_EDGE_EPS:.0e}")
    proj_p = abs(np.dot(np.asarray(node_p, dtype=float) - p_i, ep)) / lp
    proj_q = abs(np.dot(np.asarray(node_q, dtype=float) - q_i, eq)) / lq
    return abs(proj_p - proj_q) - epsilon


def tight_constraint_f2(edge_p, edge_q, node_p, node_q, theta, epsilon):
    """Full positional residual after rolling by ``theta`` about the edge axis;
    negative means consistent."""
    p_i, q_i, u, align = _edge_frame(edge_p, edge_q)
    a = np.asarray(node_p, dtype=float) - p_i
    b = align @ (np.asarray(node_q, dtype=float) - q_i)
    return np.linalg.norm(a - rotation_about_axis(theta, u) @ b) - epsilon


def _roll_geometry(edge_p, edge_q, nodes_p, nodes_q):
    """Cylindrical decomposition of every node in the edge-aligned frame.

    Returns (h, ra, rb, theta_k): axial mismatch, both radial distances and
    the roll angle at which node k's residual is minimal. The squared tight
    residual is ``h**2 + ra**2 + rb**2 - 2*ra*rb*cos(theta - theta_k)``.
    """
    p_i, q_i, u, align = _edge_frame(edge_p, edge_q)
    a = np.asarray(nodes_p, dtype=float) - p_i
    b = (align @ (np.asarray(nodes_q, dtype=float) - q_i).T).T
    a_ax = a @ u
    b_ax = b @ u
    h = a_ax - b_ax
    a_rad = a - np.outer(a_ax, u)
    b_rad = b - np.outer(b_ax, u)
    ra = np.linalg.norm(a_rad, axis=1)
    rb = np.linalg.norm(b_rad, axis=1)
    theta_k = np.arctan2(np.cross(b_rad, a_rad) @ u, np.sum(b_rad * a_rad, axis=1))
    return h, ra, rb, theta_k


def theta_consensus(edge_p, edge_q, nodes_p, nodes_q, epsilon):
    """Roll angle with maximal support and the nodes consistent at it.

    Each node's feasible angle interval follows in closed form from the
    cylindrical decomposition; interval stabbing over sorted endpoints
    yields the angle of maximum overlap. Nodes on the axis are feasible for
    every angle (or none) independently of theta.
    """
    nodes_p = np.asarray(nodes_p, dtype=float).reshape(-1, 3)
    nodes_q = np.asarray(nodes_q, dtype=float).reshape(-1, 3)
    if nodes_p.shape[0] == 0:
        raise NoFeasibleNode("no candidate nodes")
    h, ra, rb, theta_k = _roll_geometry(edge_p, edge_q, nodes_p, nodes_q)
    base = h**2 + ra**2 + rb**2
    denom = 2.0 * ra * rb
    eps2 = epsilon**2

    on_axis = denom < 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        cos_bound = np.where(on_axis, np.inf, (base - eps2) / denom)
    always = (on_axis & (base <= eps2)) | (~on_axis & (cos_bound <= -1.0))
    never = (on_axis & (base > eps2)) | (~on_axis & (cos_bound > 1.0))
    bounded = ~always & ~never

    events = []  # (angle, delta); close before open at equal angles
    for idx in np.nonzero(bounded)[0]:
        width = np.arccos(np.clip(cos_bound[idx], -1.0, 1.0))
        lo = theta_k[idx] - width
        hi = theta_k[idx] + width
        # Wrap into [-pi, pi); split intervals crossing the seam.
        lo = (lo + np.pi) % (2 * np.pi) - np.pi
        hi = (hi + np.pi) % (2 * np.pi) - np.pi
        if lo <= hi:
            events.append((lo, 1))
            events.append((hi, -1))
        else:
            events.append((-np.pi, 1))
            events.append((hi, -1))
            events.append((lo, 1))
            events.append((np.pi, -1))

    n_always = int(np.count_nonzero(always))
    if not events:
        if n_always == 0:
            raise NoFeasibleNode("every candidate interval is empty")
        theta_star = 0.0
    else:
        events.sort(key=lambda e: (e[0], e[1]))
        best_count = -1
        best_mid = 0.0
        count = n_always
        prev_angle = -np.pi
        for angle, delta in events:
            if angle > prev_angle and count > best_count:
                best_count = count
                best_mid = 0.5 * (prev_angle + angle)
            count += delta
            prev_angle = angle
        if np.pi > prev_angle and count > best_count:
            best_count = count
            best_mid = 0.5 * (prev_angle + np.pi)
        theta_star = best_mid

    residual_sq = base - denom * np.cos(theta_star - theta_k)
    consensus = np.nonzero(residual_sq < eps2)[0]
    if consensus.size == 0:
        raise NoFeasibleNode("no node is consistent at the selected angle")
    return float(theta_star), consensus


@njit(cache=True)
def _edge_affinity_kernel(p, q, anchor, epsilon, edge_eps):
    k = p.shape[0]
    counts = np.full(k, -1, dtype=np.int64)
    rel_p = p - p[anchor]
    rel_q = q - q[anchor]
    for j in range(k):
        if j == anchor:
            continue
        epx, epy, epz = rel_p[j, 0], rel_p[j, 1], rel_p[j, 2]
        eqx, eqy, eqz = rel_q[j, 0], rel_q[j, 1], rel_q[j, 2]
        dp = np.sqrt(epx * epx + epy * epy + epz * epz)
        dq = np.sqrt(eqx * eqx + eqy * eqy + eqz * eqz)
        if dp < edge_eps or dq < edge_eps:
            continue
        count = 0
        for node in range(k):
            if node == anchor or node == j:
                continue
            proj_p = abs(rel_p[node, 0] * epx + rel_p[node, 1] * epy + rel_p[node, 2] * epz) / dp
            proj_q = abs(rel_q[node, 0] * eqx + rel_q[node, 1] * eqy + rel_q[node, 2] * eqz) / dq
            if abs(proj_p - proj_q) - epsilon < 0:
                count += 1
        counts[j] = count
    return counts


def _edge_affinity_counts(p, q, anchor, epsilon):
    """Loose-constraint support count for every edge anchored at ``anchor``.

    ``counts[j]`` is the number of non-endpoint nodes k whose projection
    lengths onto edge (anchor, j) agree within epsilon in both graphs.
    Degenerate edges score -1 so they are never selected.
    """
    return _edge_affinity_kernel(
        np.ascontiguousarray(p), np.ascontiguousarray(q), anchor, epsilon, _EDGE_EPS
    )


def remove_outliers(corr: CorrespondenceSet, params: RemovalParams) -> CorrespondenceSet:
    """Run the full node-then-edge filter and return the consensus set C2."""
    if len(corr) < 3:
        raise TooFewCorrespondences(f"need >= 3 correspondences, got {len(corr)}")
    k_opt = min(params.k_opt, len(corr))

    reliabilities = node_reliabilities(corr, params)
    keep = _top_positions(reliabilities, corr.source_index, k_opt)
    selected = corr.subset(keep)
    rel_sel = reliabilities[keep]

    anchor = int(np.lexsort((selected.source_index, -rel_sel))[0])
    counts = _edge_affinity_counts(selected.p, selected.q, anchor, params.epsilon)
    if counts.max() < 0:
        raise ConsensusTooSmall("all candidate edges are degenerate")
    ranked = np.lexsort((selected.source_index, -counts))
    ranked = ranked[counts[ranked] >= 0][:_EDGE_CANDIDATES]

    best = None  # (consensus size, f1 count, -source_index) maximized
    best_consensus = None
    for j in ranked:
        try:
            _, consensus = theta_consensus(
                (selected.p[anchor], selected.p[j]),
                (selected.q[anchor], selected.q[j]),
                selected.p,
                selected.q,
                params.epsilon,
            )
        except (NoFeasibleNode, DegenerateEdge):
            continue
        key = (consensus.size, counts[j], -selected.source_index[j])
        if best is None or key > best:
            best = key
            best_consensus = consensus
    if best_consensus is None or best_consensus.size < 3:
        size = 0 if best_consensus is None else best_consensus.size
        raise ConsensusTooSmall(f"consensus has {size} correspondences, need >= 3")
    return selected.subset(best_consensus, stage="C2")
