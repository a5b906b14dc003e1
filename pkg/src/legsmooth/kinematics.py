"""Kinematic chains and encoder-noise propagation.

A chain is a serial list of links from the body frame to the contact frame.
Link n carries a fixed rotation A_n, a fixed translation t_n (expressed in
frame n, applied before the joint rotation), and a joint axis; the last link
is a fixed terminal block with no joint. Frames are numbered 1..N+1 in the
math convention, so a chain of N links has N-1 encoders.

All public functions take plain angle arrays; EncoderReading is the stream
record used by datasets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import exp_so3, hat

_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def dagger(angle, axis):
    """Place a scalar joint angle on its axis: returns the tangent 3-vector."""
    v = np.zeros(3)
    v[_AXIS_INDEX[axis]] = angle
    return v


@dataclass(frozen=True)
class LinkParam:
    """One link: fixed rotation, fixed offset, and joint axis (None = terminal)."""

    rotation: np.ndarray
    translation: np.ndarray
    axis: str | None

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        if self.rotation.shape != (3, 3):
            raise ValueError("link rotation must be 3x3")
        if np.linalg.norm(self.rotation @ self.rotation.T - np.eye(3)) > 1e-6:
            raise ValueError("link rotation is not orthonormal")
        if self.translation.shape != (3,):
            raise ValueError("link translation must be a 3-vector")
        if self.axis is not None and self.axis not in _AXIS_INDEX:
            raise ValueError(f"joint axis must be one of x/y/z, got {self.axis!r}")


@dataclass(frozen=True)
class KinematicChain:
    """Serial chain; every link but the last is actuated."""

    links: tuple[LinkParam, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        if len(self.links) < 2:
            raise ValueError("chain needs at least two links (one encoder)")
        if self.links[-1].axis is not None:
            raise ValueError("terminal link must not have a joint axis")
        for k, link in enumerate(self.links[:-1]):
            if link.axis is None:
                raise ValueError(f"non-terminal link {k} is missing a joint axis")

    @property
    def joint_count(self):
        return len(self.links) - 1


@dataclass(frozen=True)
class EncoderReading:
    """Joint angles of one leg at one instant."""

    timestamp: float
    angles: np.ndarray = field(repr=False)


def _check_alpha(chain, alpha):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (chain.joint_count,):
        raise ValueError(
            f"expected {chain.joint_count} joint angles, got shape {alpha.shape}"
        )
    return alpha


def _prefixes(chain, alpha):
    """prefix[m] rotates frame m+1 coordinates into frame 1, m = 0..N."""
    out = [np.eye(3)]
    for k, link in enumerate(chain.links[:-1]):
        out.append(out[-1] @ link.rotation @ exp_so3(dagger(alpha[k], link.axis)))
    out.append(out[-1] @ chain.links[-1].rotation)
    return out


def relative_rotation(chain, alpha, i, j):
    """Rotation from frame j to frame i, 1 <= i <= j <= N+1 (math indexing)."""
    alpha = _check_alpha(chain, alpha)
    n_frames = len(chain.links) + 1
    if not (1 <= i <= j <= n_frames):
        raise IndexError(f"frame indices must satisfy 1 <= i <= j <= {n_frames}")
    if i == j:
        return np.eye(3)
    prefix = _prefixes(chain, alpha)
    return prefix[i - 1].T @ prefix[j - 1]


def forward_kinematics(chain, alpha):
    """Body-to-contact rotation and contact position in the body frame."""
    alpha = _check_alpha(chain, alpha)
    prefix = _prefixes(chain, alpha)
    p = np.zeros(3)
    for n, link in enumerate(chain.links):
        p = p + prefix[n] @ link.translation
    return prefix[-1], p


def offset_rotation(chain, alpha, beta, i, j):
    """Relative rotation at offset angles, factored about the nominal.

    Equals relative_rotation(chain, alpha + beta, i, j) but written as the
    nominal rotation times a product of exponentials, one per joint in the
    subchain; offsets for joints at or beyond frame j are ignored.
    """
    alpha = _check_alpha(chain, alpha)
    beta = _check_alpha(chain, beta)
    n_frames = len(chain.links) + 1
    if not (1 <= i <= j <= n_frames):
        raise IndexError(f"frame indices must satisfy 1 <= i <= j <= {n_frames}")
    prefix = _prefixes(chain, alpha)
    out = prefix[i - 1].T @ prefix[j - 1]
    for k in range(i, j):  # joint k sits between frames k and k+1
        if k > chain.joint_count:
            continue  # terminal block, no joint
        a_kj = prefix[k].T @ prefix[j - 1]
        out = out @ exp_so3(a_kj.T @ dagger(beta[k - 1], chain.links[k - 1].axis))
    return out


def fk_noise_system(chain, alpha):
    """First-order maps from stacked joint-tangent noise to FK error.

    Returns (Q, S), each 3 x 3(N-1). With eta the stacked per-joint tangent
    noise, the FK rotation error is Q @ eta and the position error S @ eta,
    both to first order.
    """
    alpha = _check_alpha(chain, alpha)
    prefix = _prefixes(chain, alpha)
    n_joints = chain.joint_count
    Q = np.zeros((3, 3 * n_joints))
    S = np.zeros((3, 3 * n_joints))
    fk_r = prefix[-1]
    # suffix sum of rotated lever arms, accumulated from the far end
    M = np.zeros((3, 3))
    for k in range(n_joints, 0, -1):
        # lever arm of link k+1 (translation applied in frame k+1)
        t_next = chain.links[k].translation
        M = M + prefix[k] @ hat(t_next) @ prefix[k].T
        Q[:, 3 * (k - 1): 3 * k] = fk_r.T @ prefix[k]
        S[:, 3 * (k - 1): 3 * k] = -M @ prefix[k]
    return Q, S


def fk_covariance(chain, alpha, encoder_sigma):
    """6x6 covariance of the FK (rotation, position) error.

    encoder_sigma is a scalar or per-joint array of angle standard
    deviations; each joint contributes variance only along its own axis.
    """
    alpha = _check_alpha(chain, alpha)
    n_joints = chain.joint_count
    sigma = np.broadcast_to(np.asarray(encoder_sigma, dtype=float), (n_joints,))
    if (sigma < 0).any():
        raise ValueError("encoder sigma must be nonnegative")
    Q, S = fk_noise_system(chain, alpha)
    cov = np.zeros((6, 6))
    for k in range(n_joints):
        axis = dagger(1.0, chain.links[k].axis)
        u = np.concatenate([Q[:, 3 * k: 3 * k + 3] @ axis, S[:, 3 * k: 3 * k + 3] @ axis])
        cov += sigma[k] ** 2 * np.outer(u, u)
    return cov


def demo_chain():
    """Three-link planar leg used by tests: hip pitch, knee, fixed ankle."""
    return KinematicChain((
        LinkParam(np.eye(3), np.array([0.0, 0.0, -0.1]), "y"),
        LinkParam(np.eye(3), np.array([0.0, 0.0, -0.5]), "y"),
        LinkParam(np.eye(3), np.array([0.0, 0.0, -0.5]), None),
    ))
