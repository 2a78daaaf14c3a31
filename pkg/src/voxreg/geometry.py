"""SO(3)/SE(3) primitives: axis-angle rotations, twist exp/log, rigid transforms.

Conventions used throughout the package:

* A twist is a plain ``(6,)`` float array ordered ``(rho, phi)``: the
  translational part comes first, the rotational part last.
* Poses are updated by left perturbation, ``T <- exp(dxi) @ T``.
* Homogeneous points carry ``w = 1`` exactly; no projective scaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import AngleNearPi, NonRigidMatrix, NonUnitAxis

# Below this angle (radians) Rodrigues-style coefficients switch to their
# second-order Taylor expansions to avoid 0/0.
SMALL_ANGLE = 1e-8


def skew(v):
    """Cross-product matrix: ``skew(v) @ u == np.cross(v, u)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_batch(vs):
    """Stack of cross-product matrices for an ``(n, 3)`` array."""
    vs = np.asarray(vs, dtype=float)
    out = np.zeros(vs.shape[:-1] + (3, 3))
    x, y, z = vs[..., 0], vs[..., 1], vs[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def so3_exp(phi):
    """Rodrigues rotation for a rotation vector ``phi`` (radians)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    s = skew(phi)
    s2 = s @ s
    if theta < SMALL_ANGLE:
        return np.eye(3) + s + 0.5 * s2
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * s + b * s2


def so3_log(rotation):
    """Rotation vector of a rotation matrix.

    Raises AngleNearPi for angles >= pi - 1e-6 where the inverse map is
    ill-conditioned.
    """
    rotation = np.asarray(rotation, dtype=float)
    cos_angle = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle >= np.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {angle:.9f} rad is too close to pi")
    v = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    if angle < SMALL_ANGLE:
        return 0.5 * v
    return (angle / (2.0 * np.sin(angle))) * v


def left_jacobian(phi):
    """Left Jacobian of SO(3); maps twist translations into SE(3) translations."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    s = skew(phi)
    s2 = s @ s
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * s + s2 / 6.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * s + b * s2


def left_jacobian_inv(phi):
    """Inverse of the SO(3) left Jacobian."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    s = skew(phi)
    s2 = s @ s
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * s + s2 / 12.0
    t2 = theta * theta
    coeff = 1.0 / t2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) - 0.5 * s + coeff * s2


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation, also exposed as a 4x4 homogeneous matrix.

    ``rotation`` is 3x3 orthonormal with determinant +1 (within 1e-9 for
    validated inputs); ``translation`` is a 3-vector in meters.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, matrix, atol=1e-9) -> "RigidTransform":
        """Build from a 4x4 homogeneous matrix, validating rigidity at ``atol``."""
        m = np.asarray(matrix, dtype=float)
        if m.shape != (4, 4):
            raise NonRigidMatrix(f"expected a 4x4 matrix, got shape {m.shape}")
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=max(atol, 1e-9)):
            raise NonRigidMatrix("last row is not [0, 0, 0, 1]")
        out = cls(m[:3, :3], m[:3, 3])
        out.validate(atol=atol)
        return out

    def validate(self, atol=1e-9) -> None:
        r = self.rotation
        if not np.all(np.isfinite(r)) or not np.all(np.isfinite(self.translation)):
            raise NonRigidMatrix("non-finite entries")
        if not np.allclose(r.T @ r, np.eye(3), atol=atol):
            raise NonRigidMatrix(f"rotation block is not orthonormal at atol={atol}")
        if abs(np.linalg.det(r) - 1.0) > atol:
            raise NonRigidMatrix(f"rotation determinant is not +1 at atol={atol}")

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points):
        """Transform a single point or an ``(n, 3)`` array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def orthonormalized(self) -> "RigidTransform":
        """Project the rotation block back onto SO(3) via SVD."""
        u, _, vt = np.linalg.svd(self.rotation)
        d = np.sign(np.linalg.det(u @ vt))
        r = u @ np.diag([1.0, 1.0, d]) @ vt
        return RigidTransform(r, self.translation)


def exp_se3(xi) -> RigidTransform:
    """Exponential of a twist: rotation is Rodrigues of the phi part,
    translation is the SO(3) left Jacobian applied to the rho part."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    return RigidTransform(so3_exp(phi), left_jacobian(phi) @ rho)


def log_se3(transform: RigidTransform):
    """Twist such that ``exp_se3(log_se3(T)) == T`` (rotation angle < pi)."""
    phi = so3_log(transform.rotation)
    rho = left_jacobian_inv(phi) @ transform.translation
    return np.concatenate([rho, phi])


def apply_left_perturbation(transform: RigidTransform, dxi) -> RigidTransform:
    """Compose ``exp_se3(dxi)`` on the left of ``transform``."""
    return exp_se3(dxi) @ transform


def rotation_about_axis(theta, axis):
    """Rodrigues rotation by ``theta`` radians about a unit axis."""
    axis = np.asarray(axis, dtype=float).reshape(3)
    norm = np.linalg.norm(axis)
    if abs(norm - 1.0) > 1e-9:
        raise NonUnitAxis(f"axis norm is {norm!r}, expected 1 within 1e-9")
    return so3_exp(theta * axis)


def to_homogeneous(points):
    """Append w = 1 to a point or an ``(n, 3)`` array."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        return np.concatenate([pts, [1.0]])
    return np.hstack([pts, np.ones((pts.shape[0], 1))])


def from_homogeneous(points):
    pts = np.asarray(points, dtype=float)
    return pts[..., :3]
