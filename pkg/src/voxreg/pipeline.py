"""End-to-end registration driver: voxel graphs -> outlier removal ->
robust pose -> optional plane-based refinement."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .correspondences import CorrespondenceSet
from .exceptions import EmptyInliers
from .geometry import RigidTransform
from .io import ResultReport
from .metrics import EvalResult, evaluate_transform
from .outliers import RemovalParams, remove_outliers
from .planes import STATUS_NO_PLANES, PlaneDetectParams, fine_register, refine_inliers
from .robust import GncParams, estimate_pose
from .validation import check_points
from .voxels import build_graphs

STATUS_NON_CONVERGENCE = "NonConvergence"
STATUS_EMPTY_INLIERS = "EmptyInliers"


@dataclass(frozen=True)
class PipelineConfig:
    """All pipeline settings; ``None`` fields derive from the resolution.

    ``k_opt`` is an absolute node count when int, a fraction of the input
    size when float. ``capture_scale`` is the patch capture radius as a
    multiple of the resolution. ``seed`` and ``threads`` are carried for
    reproducibility bookkeeping; the pipeline itself is deterministic and
    single-threaded, honoring ``threads=1`` exactly.
    """

    resolution: float = 0.05
    k_opt: float | int = 0.7
    capture_scale: float = 2.0
    skip_fine: bool = False
    gnc: GncParams = field(default_factory=GncParams)
    planarity_ratio: float = 0.01
    rms_tol: float | None = None
    min_plane_points: int = 30
    fine_max_iterations: int = 50
    fine_cost_tol: float = 1e-9
    anderson_window: int = 5
    use_anderson: bool = True
    seed: int = 0
    threads: int = 1

    @classmethod
    def threedmatch(cls, **overrides) -> "PipelineConfig":
        base = dict(resolution=0.05, k_opt=0.7, capture_scale=5.0)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def eth(cls, **overrides) -> "PipelineConfig":
        base = dict(resolution=0.1, k_opt=800, capture_scale=2.0)
        base.update(overrides)
        return cls(**base)

    def with_overrides(self, **kwargs) -> "PipelineConfig":
        return replace(self, **kwargs)

    def resolve_k_opt(self, n_correspondences: int) -> int:
        if isinstance(self.k_opt, float) and not self.k_opt.is_integer():
            if not 0.0 < self.k_opt <= 1.0:
                raise ValueError(f"fractional k_opt must be in (0, 1], got {self.k_opt}")
            k = int(round(self.k_opt * n_correspondences))
        else:
            k = int(self.k_opt)
        return max(3, min(k, n_correspondences))

    def plane_params(self) -> PlaneDetectParams:
        rms = self.rms_tol if self.rms_tol is not None else self.resolution / 10.0
        return PlaneDetectParams(
            min_points=self.min_plane_points,
            planarity_ratio=self.planarity_ratio,
            rms_tol=rms,
            capture_radius=self.capture_scale * self.resolution,
        )


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform  # final pose (fine, or coarse when skipped)
    coarse: RigidTransform
    correspondences: CorrespondenceSet  # C1
    consensus: CorrespondenceSet  # C2
    inliers: CorrespondenceSet | None  # C3; None when the fine stage was skipped
    weights: np.ndarray  # final robust per-pair weights on C2
    n_planes: int
    status: tuple
    timings_ms: dict

    @property
    def counts(self) -> dict:
        return {
            "c1": len(self.correspondences),
            "k_opt": self._k_opt,
            "c2": len(self.consensus),
            "c3": 0 if self.inliers is None else len(self.inliers),
            "planes": self.n_planes,
        }

    _k_opt: int = 0

    def to_report(self, eval_result: EvalResult | None = None) -> ResultReport:
        return ResultReport(
            transform_coarse=self.coarse.matrix(),
            transform_fine=self.transform.matrix(),
            timings_ms=dict(self.timings_ms),
            counts=self.counts,
            eval=eval_result,
            status=list(self.status),
        )


def register_pair(
    source_cloud,
    target_cloud,
    correspondences: CorrespondenceSet,
    config: PipelineConfig | None = None,
) -> RegistrationResult:
    """Register the source (moving) cloud onto the target (reference) cloud.

    Correspondence rows pair a target-side point ``p`` with a source-side
    point ``q``; the returned transform maps q-space onto p-space.
    Degradations (no planes, iteration cap, rank-deficient plane system,
    empty refined inliers) surface as status flags, not exceptions.
    """
    config = config or PipelineConfig()
    source_cloud = check_points(source_cloud, "source_cloud")
    target_cloud = check_points(target_cloud, "target_cloud")

    t0 = time.perf_counter()
    graph_p, graph_q = build_graphs(
        target_cloud, source_cloud, correspondences, config.resolution
    )
    removal = RemovalParams(
        resolution=config.resolution,
        k_opt=config.resolve_k_opt(len(correspondences)),
    )
    consensus = remove_outliers(correspondences, removal)
    gnc = estimate_pose(consensus.p, consensus.q, config.resolution, config.gnc)
    t_coarse = time.perf_counter()

    status = []
    if not gnc.converged:
        status.append(STATUS_NON_CONVERGENCE)

    transform = gnc.transform
    inliers = None
    n_planes = 0
    if not config.skip_fine:
        try:
            inliers = refine_inliers(correspondences, gnc.transform, removal.epsilon)
        except EmptyInliers:
            status.append(STATUS_EMPTY_INLIERS)
            status.append(STATUS_NO_PLANES)
        else:
            fine = fine_register(
                inliers,
                graph_p,
                graph_q,
                gnc.transform,
                config.plane_params(),
                max_iterations=config.fine_max_iterations,
                cost_tol=config.fine_cost_tol,
                window=config.anderson_window,
                use_anderson=config.use_anderson,
            )
            transform = fine.transform
            n_planes = fine.n_groups
            status.extend(fine.status)
    t_end = time.perf_counter()

    timings = {
        "coarse": (t_coarse - t0) * 1000.0,
        "fine": (t_end - t_coarse) * 1000.0,
        "total": (t_end - t0) * 1000.0,
    }
    return RegistrationResult(
        transform=transform,
        coarse=gnc.transform,
        correspondences=correspondences,
        consensus=consensus,
        inliers=inliers,
        weights=gnc.weights,
        n_planes=n_planes,
        status=tuple(status),
        timings_ms=timings,
        _k_opt=removal.k_opt,
    )


def evaluate_result(
    result: RegistrationResult, truth: RigidTransform, profile="threedmatch"
) -> EvalResult:
    return evaluate_transform(result.transform, truth, profile)
