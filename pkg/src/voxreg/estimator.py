"""Scikit-learn style estimator wrapping the registration pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .correspondences import CorrespondenceSet
from .pipeline import PipelineConfig, register_pair
from .robust import GncParams
from .validation import check_pair_array, check_points


class VoxelGraphRegistration(BaseEstimator):
    """Rigid registration of a moving point cloud onto a reference cloud.

    The estimator consumes putative point correspondences, rejects outliers
    on a voxel graph, solves a graduated robust pose, and optionally
    refines it against shared planes. Hyperparameters follow scikit-learn
    conventions (``get_params`` / ``set_params`` / ``clone`` all work);
    fitted state lives in trailing-underscore attributes.

    Example
    -------
    >>> reg = VoxelGraphRegistration(resolution=0.05)
    >>> reg.fit(source_points, target_points, correspondences)
    >>> aligned = reg.transform(source_points)
    """

    def __init__(
        self,
        resolution=0.05,
        k_opt=0.7,
        capture_scale=2.0,
        skip_fine=False,
        sigma_init_scale=10.0,
        sigma_min=None,
        mu=None,
        gnc_max_iterations=100,
        planarity_ratio=0.01,
        rms_tol=None,
        min_plane_points=30,
        fine_max_iterations=50,
        use_anderson=True,
    ):
        self.resolution = resolution
        self.k_opt = k_opt
        self.capture_scale = capture_scale
        self.skip_fine = skip_fine
        self.sigma_init_scale = sigma_init_scale
        self.sigma_min = sigma_min
        self.mu = mu
        self.gnc_max_iterations = gnc_max_iterations
        self.planarity_ratio = planarity_ratio
        self.rms_tol = rms_tol
        self.min_plane_points = min_plane_points
        self.fine_max_iterations = fine_max_iterations
        self.use_anderson = use_anderson

    def _config(self) -> PipelineConfig:
        return PipelineConfig(
            resolution=self.resolution,
            k_opt=self.k_opt,
            capture_scale=self.capture_scale,
            skip_fine=self.skip_fine,
            gnc=GncParams(
                sigma_init_scale=self.sigma_init_scale,
                sigma_min=self.sigma_min,
                mu=self.mu,
                max_iterations=self.gnc_max_iterations,
            ),
            planarity_ratio=self.planarity_ratio,
            rms_tol=self.rms_tol,
            min_plane_points=self.min_plane_points,
            fine_max_iterations=self.fine_max_iterations,
            use_anderson=self.use_anderson,
        )

    def fit(self, X, y=None, correspondences=None):
        """Estimate the pose mapping the source cloud onto the target cloud.

        Parameters
        ----------
        X : (n, 3) array
            Source (moving) cloud.
        y : (m, 3) array
            Target (reference) cloud.
        correspondences : (k, 6) array or CorrespondenceSet
            Putative matches as ``(px py pz qx qy qz)`` rows, p from the
            target cloud and q from the source cloud.
        """
        if y is None or correspondences is None:
            raise ValueError("fit requires a target cloud and correspondences")
        source = check_points(X, "source cloud")
        target = check_points(y, "target cloud")
        if not isinstance(correspondences, CorrespondenceSet):
            correspondences = CorrespondenceSet.from_pairs(
                check_pair_array(correspondences)
            )
        result = register_pair(source, target, correspondences, self._config())
        self.result_ = result
        self.transform_ = result.transform.matrix()
        self.rotation_ = result.transform.rotation
        self.translation_ = result.transform.translation
        self.coarse_transform_ = result.coarse.matrix()
        self.consensus_indices_ = result.consensus.source_index.copy()
        self.inlier_indices_ = (
            None if result.inliers is None else result.inliers.source_index.copy()
        )
        self.weights_ = result.weights.copy()
        self.n_planes_ = result.n_planes
        self.status_ = list(result.status)
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before transform")

    def transform(self, X):
        """Apply the fitted pose to points given in the source frame."""
        self._check_fitted()
        return self.result_.transform.apply(check_points(X, "points"))

    def inverse_transform(self, X):
        """Map points from the target frame back into the source frame."""
        self._check_fitted()
        return self.result_.transform.inverse().apply(check_points(X, "points"))

    def fit_transform(self, X, y=None, correspondences=None):
        return self.fit(X, y, correspondences=correspondences).transform(X)

    def residuals(self, correspondences=None):
        """Post-alignment distances for the fitted correspondences (or any
        other ``(k, 6)`` pair array)."""
        self._check_fitted()
        if correspondences is None:
            corr = self.result_.correspondences
        elif isinstance(correspondences, CorrespondenceSet):
            corr = correspondences
        else:
            corr = CorrespondenceSet.from_pairs(check_pair_array(correspondences))
        return np.linalg.norm(corr.p - self.result_.transform.apply(corr.q), axis=1)
