"""Rotation-group and pose primitives.

Conventions used throughout the package:
  - rotations are 3x3 orthonormal numpy arrays, tangent vectors are radians
  - pose tangents are ordered (rotation, translation)
  - angles below SMALL_ANGLE use second-order Taylor expansions of the
    trigonometric coefficient functions
  - the log map refuses angles at pi, where the axis is not unique
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# below this angle the closed forms switch to their Taylor expansions
SMALL_ANGLE = 1e-6

# orthogonality defect above this warrants re-orthonormalization
ORTHO_TOL = 1e-9


class AngleAtPiError(ValueError):
    """Raised by log_so3 when the rotation angle is at pi (axis ambiguous)."""


def hat(w):
    """Map a 3-vector to its skew-symmetric matrix, so hat(w) @ v == cross(w, v)."""
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def vee(W):
    """Inverse of hat: extract the 3-vector from a skew-symmetric matrix."""
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def exp_so3(phi):
    """Rotation exponential, Rodrigues form."""
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    theta = np.sqrt(theta2)
    W = hat(phi)
    if theta < SMALL_ANGLE:
        a = 1.0 - theta2 / 6.0
        b = 0.5 - theta2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta2
    return np.eye(3) + a * W + b * (W @ W)


def log_so3(R):
    """Rotation logarithm.

    Raises AngleAtPiError when trace(R) <= -1 + 1e-9; the axis is not
    unique there and downstream error terms are undefined.
    """
    tr = np.trace(R)
    if tr <= -1.0 + 1e-9:
        raise AngleAtPiError("rotation angle at pi, axis ambiguous")
    # clamp for roundoff; tr can exceed 3 by ~1e-16 after long products
    c = min(1.0, max(-1.0, (tr - 1.0) / 2.0))
    theta = np.arccos(c)
    w = vee(R - R.T)
    if theta < SMALL_ANGLE:
        # theta/(2 sin theta) = 1/2 + theta^2/12 + O(theta^4)
        scale = 0.5 + theta * theta / 12.0
    else:
        scale = theta / (2.0 * np.sin(theta))
    return scale * w


def right_jacobian(phi):
    """Right Jacobian of the rotation exponential.

    Relates additive tangent increments to multiplicative ones:
    exp_so3(phi + d) ~= exp_so3(phi) @ exp_so3(right_jacobian(phi) @ d).
    """
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    theta = np.sqrt(theta2)
    W = hat(phi)
    if theta < SMALL_ANGLE:
        a = 0.5 - theta2 / 24.0
        b = 1.0 / 6.0 - theta2 / 120.0
    else:
        a = (1.0 - np.cos(theta)) / theta2
        b = (theta - np.sin(theta)) / (theta2 * theta)
    return np.eye(3) - a * W + b * (W @ W)


def right_jacobian_inv(phi):
    """Inverse of the right Jacobian (closed form, valid for |phi| < 2 pi)."""
    phi = np.asarray(phi, dtype=float)
    theta2 = phi @ phi
    theta = np.sqrt(theta2)
    W = hat(phi)
    if theta < SMALL_ANGLE:
        b = 1.0 / 12.0 + theta2 / 720.0
    else:
        b = 1.0 / theta2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + b * (W @ W)


def orthonormalize(R):
    """Project to the nearest rotation (SVD polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def ortho_defect(R):
    """Frobenius norm of R R^T - I."""
    return np.linalg.norm(R @ R.T - np.eye(3))


@dataclass
class Pose:
    """A rotation plus translation; tangent ordering is (rotation, translation)."""

    rotation: np.ndarray
    translation: np.ndarray


def retract_pose(pose, delta):
    """Apply a 6-dof tangent increment (rotation first, then translation).

    The translation increment is expressed in the pose's own frame:
    (R, p) -> (R exp(d_phi), p + R d_p).
    """
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (6,):
        raise ValueError(f"pose tangent must be a 6-vector, got {delta.shape}")
    R = pose.rotation
    return Pose(R @ exp_so3(delta[:3]), pose.translation + R @ delta[3:])


def sample_rotation_noise(cov, rng):
    """Draw exp_so3(eps) with eps ~ N(0, cov).

    cov is a 3x3 positive semidefinite matrix (a zero matrix is allowed and
    yields the identity). rng is a numpy Generator or a seed; the generator
    is advanced, so state is caller-owned.
    """
    cov = np.asarray(cov, dtype=float)
    rng = np.random.default_rng(rng)
    # eigh handles semidefinite cov where cholesky would fail
    lam, V = np.linalg.eigh(cov)
    if lam.min() < -1e-12:
        raise ValueError("covariance not positive semidefinite")
    eps = V @ (np.sqrt(np.clip(lam, 0.0, None)) * rng.standard_normal(3))
    return exp_so3(eps)


def random_rotation(rng, max_angle=np.pi - 0.1):
    """Uniform random axis, uniform angle in [0, max_angle). Test helper."""
    rng = np.random.default_rng(rng)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    return exp_so3(axis * rng.uniform(0.0, max_angle))
