"""Coarse-to-fine rigid point cloud registration.

Correspondence outliers are rejected hierarchically on a voxel graph, a
graduated robust estimator solves the coarse pose in twist coordinates,
and shared planes inside the correspondence voxel patches refine it.
"""

from . import exceptions
from .anderson import AndersonState, anderson_accelerate
from .correspondences import CorrespondenceSet
from .estimator import VoxelGraphRegistration
from .geometry import (
    RigidTransform,
    apply_left_perturbation,
    exp_se3,
    log_se3,
    rotation_about_axis,
)
from .io import (
    ResultReport,
    read_correspondences,
    read_ply,
    read_report,
    read_transform,
    write_correspondences,
    write_ply,
    write_report,
    write_transform,
)
from .metrics import (
    PROFILES,
    EvalResult,
    classify_success,
    evaluate_transform,
    rotation_error,
    translation_error,
)
from .outliers import (
    RemovalParams,
    loose_constraint_f1,
    node_reliabilities,
    node_weight,
    remove_outliers,
    select_top_nodes,
    theta_consensus,
    tight_constraint_f2,
)
from .pipeline import PipelineConfig, RegistrationResult, evaluate_result, register_pair
from .planes import (
    FineResult,
    PlaneDetectParams,
    PlaneFeatureGroup,
    PlaneStatistics,
    detect_planes,
    fine_register,
    lambda_min_gradient,
    lm_step,
    pa_cost,
    plane_statistics,
    refine_inliers,
)
from .robust import (
    GncParams,
    GncResult,
    estimate_pose,
    outlier_process_z,
    psi,
    residual_jacobian,
    welsch_rho,
)
from .synthetic import SyntheticScene, SyntheticSpec, generate, random_transform
from .voxels import CorrespondenceGraph, VoxelPatch, build_graphs, octree_downsample

__version__ = "0.1.0"

__all__ = [
    "AndersonState",
    "CorrespondenceGraph",
    "CorrespondenceSet",
    "EvalResult",
    "FineResult",
    "GncParams",
    "GncResult",
    "PROFILES",
    "PipelineConfig",
    "PlaneDetectParams",
    "PlaneFeatureGroup",
    "PlaneStatistics",
    "RegistrationResult",
    "RemovalParams",
    "ResultReport",
    "RigidTransform",
    "SyntheticScene",
    "SyntheticSpec",
    "VoxelGraphRegistration",
    "VoxelPatch",
    "anderson_accelerate",
    "apply_left_perturbation",
    "build_graphs",
    "classify_success",
    "detect_planes",
    "estimate_pose",
    "evaluate_result",
    "evaluate_transform",
    "exceptions",
    "exp_se3",
    "fine_register",
    "generate",
    "lambda_min_gradient",
    "lm_step",
    "log_se3",
    "loose_constraint_f1",
    "node_reliabilities",
    "node_weight",
    "octree_downsample",
    "outlier_process_z",
    "pa_cost",
    "plane_statistics",
    "psi",
    "random_transform",
    "read_correspondences",
    "read_ply",
    "read_report",
    "read_transform",
    "refine_inliers",
    "register_pair",
    "remove_outliers",
    "residual_jacobian",
    "rotation_about_axis",
    "rotation_error",
    "select_top_nodes",
    "theta_consensus",
    "tight_constraint_f2",
    "translation_error",
    "welsch_rho",
    "write_correspondences",
    "write_ply",
    "write_report",
    "write_transform",
]
