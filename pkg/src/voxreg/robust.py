"""Robust pose estimation: Welsch loss, its outlier-process dual, and a
graduated Gauss-Newton solver in twist coordinates.

The bounded-influence loss ``rho(r) = 1 - exp(-r^2 / (2 sigma^2))`` is
minimized by alternating a closed-form per-pair weight
``z = exp(-r^2 / (2 sigma^2))`` with one weighted Gauss-Newton step, while
the shape parameter sigma anneals from a deliberately over-wide start
(near-convex) down to half the voxel resolution (the target non-convex
form). The pose is updated by left perturbation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import RankDeficient
from .geometry import RigidTransform, exp_se3, skew_batch
from .validation import check_points, check_positive

# Annealing slower than this would stall; the auto rate sigma/20 is clamped
# up to it when the initial sigma is small.
_MIN_ANNEAL_RATE = 1.1
_MAX_STEP_HALVINGS = 8
_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class GncParams:
    """Solver settings; ``None`` fields are derived at solve time.

    sigma_init is ``sigma_init_scale`` times the mean pair distance,
    sigma_min defaults to half the voxel resolution, and the annealing rate
    defaults to ``sigma_init / 20`` (clamped to >= 1.1).
    """

    sigma_init_scale: float = 10.0
    sigma_min: float | None = None
    mu: float | None = None
    max_iterations: int = 100
    convergence_tol: float = 1e-8


@dataclass(frozen=True)
class GncResult:
    transform: RigidTransform
    weights: np.ndarray  # final per-pair outlier-process weight z
    iterations: int
    converged: bool  # False means the iteration cap was hit
    sigma_final: float


def welsch_rho(r, sigma):
    """Bounded robust loss in [0, 1); monotone nondecreasing in ``r``."""
    r = np.asarray(r, dtype=float)
    return 1.0 - np.exp(-(r**2) / (2.0 * sigma**2))


def outlier_process_z(r, sigma):
    """Closed-form minimizer of the per-pair dual energy, in (0, 1].

    Substituting it back into the dual energy recovers ``welsch_rho``
    exactly, which is what makes the alternation equivalent to minimizing
    the robust loss directly.
    """
    r = np.asarray(r, dtype=float)
    return np.exp(-(r**2) / (2.0 * sigma**2))


def psi(z):
    """Outlier-process penalty ``z*log(z) - z + 1``; convex, zero at z = 1."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0) or np.any(z > 1.0):
        raise ValueError("psi is defined on (0, 1]")
    return z * np.log(z) - z + 1.0


def residual_jacobian(transform: RigidTransform, q_point):
    """3x6 Jacobian of the residual ``p - T q`` w.r.t. a left-perturbation
    twist in (rho, phi) ordering: ``[-I | (T q)^]``."""
    y = transform.apply(np.asarray(q_point, dtype=float))
    jac = np.zeros((3, 6))
    jac[:, :3] = -np.eye(3)
    jac[:, 3:] = skew_batch(y.reshape(1, 3))[0]
    return jac


def _weighted_objective(p, q, transform, z):
    residual = p - transform.apply(q)
    return float(np.sum(z * np.sum(residual**2, axis=1)))


def estimate_pose(p, q, resolution, params: GncParams | None = None) -> GncResult:
    """Estimate the rigid transform mapping q onto p from a consensus set.

    Args:
        p: (k, 3) target-side points.
        q: (k, 3) source-side points.
        resolution: voxel resolution; sets the default annealing floor.
        params: solver settings.

    Raises RankDeficient when the weighted normal matrix is numerically
    singular (condition number above 1e12, e.g. collinear points). Hitting
    the iteration cap is not an error; the result carries converged=False.
    """
    p = check_points(p, "p")
    q = check_points(q, "q")
    if p.shape != q.shape or p.shape[0] < 3:
        raise ValueError("need matching (k, 3) arrays with k >= 3")
    check_positive(resolution, "resolution")
    params = params or GncParams()

    sigma_min = params.sigma_min if params.sigma_min is not None else 0.5 * resolution
    mean_distance = float(np.mean(np.linalg.norm(p - q, axis=1)))
    sigma = max(params.sigma_init_scale * mean_distance, sigma_min)
    mu = params.mu if params.mu is not None else max(sigma / 20.0, _MIN_ANNEAL_RATE)
    if mu <= 1.0:
        raise ValueError(f"annealing rate must be > 1, got {mu}")

    transform = RigidTransform.identity()
    z = np.ones(p.shape[0])
    last_step = None
    converged = False
    iterations = 0

    for it in range(params.max_iterations):
        iterations = it + 1
        if sigma > sigma_min and it % 2 == 0:
            sigma /= mu

        y = transform.apply(q)
        residual = p - y
        r = np.linalg.norm(residual, axis=1)
        z = outlier_process_z(r, sigma)

        jac = np.zeros((p.shape[0], 3, 6))
        jac[:, :, :3] = -np.eye(3)
        jac[:, :, 3:] = skew_batch(y)
        normal = np.einsum("k,kij,kil->jl", z, jac, jac)
        gradient = np.einsum("k,kij,ki->j", z, jac, residual)
        if np.linalg.cond(normal) > _CONDITION_LIMIT:
            raise RankDeficient(
                "weighted normal matrix is numerically singular "
                "(collinear or degenerate correspondences)"
            )
        dxi = -np.linalg.solve(normal, gradient)

        # Plain Gauss-Newton can overshoot on ill-conditioned instances;
        # halving the step never alters runs where it already descends.
        objective = float(np.sum(z * r**2))
        step = dxi
        candidate = exp_se3(step)
        for _ in range(_MAX_STEP_HALVINGS):
            if _weighted_objective(p, q, candidate @ transform, z) <= objective:
                break
            step = step / 2.0
            candidate = exp_se3(step)
        transform = candidate @ transform

        step_matrix = candidate.matrix()
        if last_step is not None:
            if np.linalg.norm(step_matrix - last_step) < params.convergence_tol:
                converged = True
                break
        last_step = step_matrix

    drift = np.linalg.norm(transform.rotation.T @ transform.rotation - np.eye(3))
    if drift > 1e-9:
        transform = transform.orthonormalized()
    z = outlier_process_z(np.linalg.norm(p - transform.apply(q), axis=1), sigma)
    return GncResult(transform, z, iterations, converged, sigma)
