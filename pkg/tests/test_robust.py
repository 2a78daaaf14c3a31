import numpy as np
import pytest

from voxreg.exceptions import RankDeficient
from voxreg.geometry import RigidTransform, exp_se3
from voxreg.metrics import rotation_error, translation_error
from voxreg.robust import (
    GncParams,
    estimate_pose,
    outlier_process_z,
    psi,
    residual_jacobian,
    welsch_rho,
)
from voxreg.synthetic import random_transform

from oracles import central_difference_jacobian, golden_section_min, kabsch


def test_welsch_rho_values():
    assert welsch_rho(0.0, 1.0) == 0.0
    assert welsch_rho(np.sqrt(2.0), 1.0) == pytest.approx(1.0 - np.exp(-1.0))
    assert welsch_rho(1e6, 0.5) == pytest.approx(1.0)
    r = np.linspace(0, 5, 50)
    rho = welsch_rho(r, 0.7)
    assert np.all(np.diff(rho) >= 0) and np.all((rho >= 0) & (rho < 1))


def test_outlier_process_values_and_duality():
    assert outlier_process_z(0.0, 1.0) == 1.0
    assert outlier_process_z(np.sqrt(2.0), 1.0) == pytest.approx(np.exp(-1.0))
    # Substituting the closed-form weight into the dual energy recovers the
    # robust loss identically.
    rng = np.random.default_rng(0)
    r = rng.uniform(0.01, 5.0, size=200)
    sigma = rng.uniform(0.05, 5.0, size=200)
    z = outlier_process_z(r, sigma)
    energy = (r**2 / (2 * sigma**2)) * z + psi(z)
    np.testing.assert_allclose(energy, welsch_rho(r, sigma), atol=1e-12)


def test_outlier_process_matches_golden_section():
    rng = np.random.default_rng(1)
    r = rng.uniform(0.1, 3.0, size=64)
    sigma = rng.uniform(0.2, 3.0, size=64)
    w = r**2 / (2 * sigma**2)

    def energy(z):
        return w * z + z * np.log(z) - z + 1.0

    z_star = golden_section_min(energy, np.full_like(w, 1e-12), np.ones_like(w))
    np.testing.assert_allclose(z_star, outlier_process_z(r, sigma), atol=1e-9)


def test_z_monotonicity():
    r = np.linspace(0.01, 4.0, 100)
    z = outlier_process_z(r, 1.0)
    assert np.all(np.diff(z) < 0)
    sigmas = np.linspace(0.1, 4.0, 100)
    z = outlier_process_z(1.0, sigmas)
    assert np.all(np.diff(z) > 0)


def test_psi_values_and_domain():
    assert psi(1.0) == 0.0
    assert psi(np.exp(-1.0)) == pytest.approx(1.0 - 2.0 * np.exp(-1.0))
    assert psi(1e-300) == pytest.approx(1.0, abs=1e-12)  # z log z -> 0
    z = np.linspace(1e-6, 1.0, 100)
    vals = psi(z)
    assert np.all(vals >= 0)
    with pytest.raises(ValueError):
        psi(0.0)
    with pytest.raises(ValueError):
        psi(-0.5)


def test_residual_jacobian_trivial_cases():
    jac = residual_jacobian(RigidTransform.identity(), np.zeros(3))
    np.testing.assert_allclose(jac[:, :3], -np.eye(3))
    np.testing.assert_allclose(jac[:, 3:], np.zeros((3, 3)))
    jac = residual_jacobian(RigidTransform.identity(), [1.0, 0.0, 0.0])
    expected_rot = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    np.testing.assert_allclose(jac[:, 3:], expected_rot)


def test_residual_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        transform = random_transform(rng)
        p = rng.normal(size=3)
        q = rng.normal(size=3)

        def residual(dxi):
            return p - (exp_se3(dxi) @ transform).apply(q)

        analytic = residual_jacobian(transform, q)
        numeric = central_difference_jacobian(residual, np.zeros(6))
        scale = max(1.0, np.abs(analytic).max())
        worst = max(worst, np.abs(analytic - numeric).max() / scale)
    assert worst < 1e-6


def test_exact_recovery_from_three_points():
    rng = np.random.default_rng(3)
    truth = random_transform(rng)
    p = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.5]])
    q = truth.inverse().apply(p)
    result = estimate_pose(p, q, resolution=0.05)
    assert result.converged
    assert rotation_error(result.transform.rotation, truth.rotation) < 1e-6
    assert translation_error(result.transform.translation, truth.translation) < 1e-8


def test_outlier_weights_split():
    rng = np.random.default_rng(4)
    truth = random_transform(rng)
    inl = rng.uniform(0, 2, size=(100, 3))
    q_inl = truth.inverse().apply(inl) + rng.normal(scale=0.01, size=(100, 3))
    out_p = rng.uniform(0, 2, size=(100, 3))
    out_q = truth.inverse().apply(rng.uniform(0, 2, size=(100, 3))) + rng.uniform(
        0.5, 2.0, size=(100, 3)
    )
    p = np.vstack([inl, out_p])
    q = np.vstack([q_inl, out_q])
    result = estimate_pose(p, q, resolution=0.05)
    z = result.weights
    assert np.mean(z[100:] < 0.01) >= 0.95
    assert np.mean(z[:100] > 0.5) >= 0.95
    assert rotation_error(result.transform.rotation, truth.rotation) < 0.5


def test_clean_data_matches_svd_with_frozen_sigma():
    rng = np.random.default_rng(5)
    truth = random_transform(rng)
    p = rng.uniform(0, 2, size=(50, 3))
    q = truth.inverse().apply(p) + rng.normal(scale=0.01, size=(50, 3))
    # Freezing sigma at its (large) initial value makes the loss quadratic,
    # so the solution must match the closed-form least-squares fit.
    params = GncParams(sigma_min=1e9, max_iterations=200)
    result = estimate_pose(p, q, resolution=0.05, params=params)
    r_svd, t_svd = kabsch(p, q)
    assert rotation_error(result.transform.rotation, r_svd) < 1e-4
    assert translation_error(result.transform.translation, t_svd) < 1e-6


def test_rank_deficient_collinear_points():
    t = np.linspace(0, 1, 10)
    p = np.column_stack([t, t, t])
    with pytest.raises(RankDeficient):
        estimate_pose(p, p + 0.1, resolution=0.05)


def test_iteration_cap_flags_non_convergence():
    rng = np.random.default_rng(6)
    truth = random_transform(rng)
    p = rng.uniform(0, 2, size=(20, 3))
    q = truth.inverse().apply(p)
    result = estimate_pose(p, q, resolution=0.05, params=GncParams(max_iterations=2))
    assert not result.converged
    assert result.iterations == 2


def test_estimate_requires_three_points():
    with pytest.raises(ValueError):
        estimate_pose(np.zeros((2, 3)), np.zeros((2, 3)), resolution=0.05)


def test_result_rotation_is_orthonormal():
    rng = np.random.default_rng(7)
    truth = random_transform(rng)
    p = rng.uniform(0, 2, size=(30, 3))
    q = truth.inverse().apply(p) + rng.normal(scale=0.02, size=(30, 3))
    result = estimate_pose(p, q, resolution=0.05)
    result.transform.validate(atol=1e-9)
