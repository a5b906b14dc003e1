"""Preintegrated IMU and contact measurements.

Timing convention: every sample is held zero-order until the next sample's
timestamp; an explicit t_end closes the interval after the last sample.

Noise conventions:
  - imu_preintegrate takes continuous-time noise covariances (power spectral
    densities); the per-sample discrete covariance is psd / dt
  - rigid_contact_preintegrate takes continuous-time covariances (its closed
    form is blkdiag(cov_omega, cov_velocity) * interval)
  - point_contact_preintegrate takes the discrete per-step covariance, which
    its recursion multiplies by dt at every step
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import forward_kinematics
from .manifold import exp_so3, hat, log_so3, right_jacobian

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    accel: np.ndarray = field(repr=False)
    gyro: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ContactEvent:
    timestamp: float
    foot: int
    in_contact: bool


@dataclass
class ImuDelta:
    """Relative motion over one interval, linearized at bias_lin.

    covariance is 9x9 ordered (rotation, velocity, position). The d*_d*
    fields are first-order sensitivities to a bias change away from
    bias_lin (gyro bias first, accel bias second).
    """

    dt: float
    rotation: np.ndarray
    velocity: np.ndarray
    position: np.ndarray
    covariance: np.ndarray
    bias_lin: np.ndarray
    dr_dbg: np.ndarray
    dv_dbg: np.ndarray
    dv_dba: np.ndarray
    dp_dbg: np.ndarray
    dp_dba: np.ndarray


@dataclass
class ContactDelta:
    """Preintegrated contact constraint between two nodes.

    The motion model says the contact frame does not move, so the measured
    delta is always (identity, zero); what the interval determines is the
    covariance: 6x6 (rotation, position) for kind "rigid", 3x3 (position)
    for kind "point".
    """

    kind: str
    foot: int
    t_start: float
    t_end: float
    covariance: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _cov3(value, name):
    out = np.asarray(value, dtype=float)
    if out.shape == ():
        out = out * np.eye(3)
    if out.shape != (3, 3):
        raise ValueError(f"{name} must be a scalar variance or a 3x3 covariance")
    return out


def rigid_contact_preintegrate(t_start, t_end, cov_omega, cov_velocity,
                               dt_samples=None, foot=0):
    """Contact delta for a foot assumed rigidly planted over [t_start, t_end].

    With constant noise the covariance is blkdiag(cov_omega, cov_velocity)
    times the interval; pass dt_samples (per-step durations covering the
    interval) to accumulate iteratively instead, in which case cov_omega and
    cov_velocity may also be sequences of per-step 3x3 covariances.
    """
    span = t_end - t_start
    if span <= 0.0:
        raise ValueError(f"contact interval must be positive, got {span}")
    cov = np.zeros((6, 6))
    if dt_samples is None:
        cov[:3, :3] = _cov3(cov_omega, "cov_omega") * span
        cov[3:, 3:] = _cov3(cov_velocity, "cov_velocity") * span
    else:
        dt_samples = np.asarray(dt_samples, dtype=float)
        if abs(dt_samples.sum() - span) > 1e-9:
            raise ValueError("dt_samples must cover the interval")
        n = len(dt_samples)
        cw = cov_omega if isinstance(cov_omega, (list, tuple)) else [cov_omega] * n
        cv = cov_velocity if isinstance(cov_velocity, (list, tuple)) else [cov_velocity] * n
        for dt, w, v in zip(dt_samples, cw, cv):
            cov[:3, :3] += _cov3(w, "cov_omega") * dt
            cov[3:, 3:] += _cov3(v, "cov_velocity") * dt
    return ContactDelta("rigid", foot, t_start, t_end, cov)


def rigid_contact_residual(C_i, d_i, C_j, d_j):
    """How far the contact frame moved between the nodes, seen from node i."""
    return np.concatenate([log_so3(C_i.T @ C_j), C_i.T @ (d_j - d_i)])


def _check_stream(samples, t_end):
    if len(samples) == 0:
        raise ValueError("empty sample stream")
    times = [s.timestamp for s in samples]
    for a, b in zip(times, times[1:]):
        if b <= a:
            raise ValueError("sample timestamps must be strictly increasing")
    if t_end < times[-1]:
        raise ValueError("t_end precedes the last sample")
    return times


def imu_preintegrate(samples, t_end, bias_lin, psd_gyro, psd_accel):
    """Preintegrate IMU samples over [samples[0].timestamp, t_end].

    bias_lin is the 6-vector linearization bias (gyro, accel). psd_gyro and
    psd_accel are continuous-time noise covariances; scalars mean isotropic.
    """
    times = _check_stream(samples, t_end)
    bias_lin = np.asarray(bias_lin, dtype=float)
    bg, ba = bias_lin[:3], bias_lin[3:]
    Qg = _cov3(psd_gyro, "psd_gyro")
    Qa = _cov3(psd_accel, "psd_accel")

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    cov = np.zeros((9, 9))
    dr_dbg = np.zeros((3, 3))
    dv_dbg = np.zeros((3, 3))
    dv_dba = np.zeros((3, 3))
    dp_dbg = np.zeros((3, 3))
    dp_dba = np.zeros((3, 3))

    bounds = times[1:] + [t_end]
    for sample, t_next in zip(samples, bounds):
        dt = t_next - sample.timestamp
        if dt == 0.0:
            continue
        w = sample.gyro - bg
        a = sample.accel - ba
        inc = exp_so3(w * dt)
        Jr = right_jacobian(w * dt)
        dR_hat_a = dR @ hat(a)

        # covariance first (uses pre-update dR), state order (rot, vel, pos)
        A = np.eye(9)
        A[0:3, 0:3] = inc.T
        A[3:6, 0:3] = -dR_hat_a * dt
        A[6:9, 0:3] = -0.5 * dR_hat_a * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        cov = A @ cov @ A.T
        Bg = Jr * dt
        cov[0:3, 0:3] += Bg @ (Qg / dt) @ Bg.T
        Ba_v = dR * dt
        Ba_p = 0.5 * dR * dt * dt
        Qa_d = Qa / dt
        cov[3:6, 3:6] += Ba_v @ Qa_d @ Ba_v.T
        cov[3:6, 6:9] += Ba_v @ Qa_d @ Ba_p.T
        cov[6:9, 3:6] += Ba_p @ Qa_d @ Ba_v.T
        cov[6:9, 6:9] += Ba_p @ Qa_d @ Ba_p.T

        # bias sensitivities (pre-update values on the right-hand sides)
        dp_dbg = dp_dbg + dv_dbg * dt - 0.5 * dR_hat_a @ dr_dbg * dt * dt
        dp_dba = dp_dba + dv_dba * dt - 0.5 * dR * dt * dt
        dv_dbg = dv_dbg - dR_hat_a @ dr_dbg * dt
        dv_dba = dv_dba - dR * dt
        dr_dbg = inc.T @ dr_dbg - Jr * dt

        dp = dp + dv * dt + 0.5 * dR @ a * dt * dt
        dv = dv + dR @ a * dt
        dR = dR @ inc

    return ImuDelta(t_end - times[0], dR, dv, dp, cov, bias_lin,
                    dr_dbg, dv_dbg, dv_dba, dp_dbg, dp_dba)


def imu_delta_corrected(delta, bias):
    """Delta re-expressed at a new bias via the stored first-order terms."""
    db = np.asarray(bias, dtype=float) - delta.bias_lin
    dbg, dba = db[:3], db[3:]
    rot = delta.rotation @ exp_so3(delta.dr_dbg @ dbg)
    vel = delta.velocity + delta.dv_dbg @ dbg + delta.dv_dba @ dba
    pos = delta.position + delta.dp_dbg @ dbg + delta.dp_dba @ dba
    return rot, vel, pos


def imu_predict(rotation, position, velocity, delta, gravity=GRAVITY):
    """Dead-reckon one node forward through a preintegrated delta."""
    dt = delta.dt
    new_rot = rotation @ delta.rotation
    new_vel = velocity + gravity * dt + rotation @ delta.velocity
    new_pos = (position + velocity * dt + 0.5 * gravity * dt * dt
               + rotation @ delta.position)
    return new_rot, new_pos, new_vel


def point_contact_preintegrate(imu_samples, encoder_samples, t_end, chain,
                               rotation_start, contact_rotation_start,
                               gyro_bias, cov_step, foot=0):
    """Contact delta for a point foot over [samples[0].timestamp, t_end].

    The position-slip covariance is accumulated per step: the first step
    rotates the discrete velocity noise through the state estimate at the
    interval start (rotation_start, contact_rotation_start); later steps
    rotate through the gyro-propagated base rotation composed with forward
    kinematics at the current encoder angles. Streams must be aligned.
    The caller asserts the foot stays in contact over the interval.
    """
    times = _check_stream(imu_samples, t_end)
    if len(encoder_samples) != len(imu_samples):
        raise ValueError("encoder and IMU streams differ in length")
    for imu, enc in zip(imu_samples, encoder_samples):
        if abs(imu.timestamp - enc.timestamp) > 1e-9:
            raise ValueError("encoder and IMU streams are not time-aligned")
    if t_end <= times[0]:
        raise ValueError("contact interval must be positive")
    gyro_bias = np.asarray(gyro_bias, dtype=float)
    cov_step = _cov3(cov_step, "cov_step")

    cov = np.zeros((3, 3))
    dR = np.eye(3)
    bounds = times[1:] + [t_end]
    for k, (imu, enc, t_next) in enumerate(zip(imu_samples, encoder_samples, bounds)):
        dt = t_next - imu.timestamp
        if k == 0:
            B = rotation_start.T @ contact_rotation_start * dt
        else:
            fk_r, _ = forward_kinematics(chain, enc.angles)
            B = dR @ fk_r * dt
        cov += B @ cov_step @ B.T
        dR = dR @ exp_so3((imu.gyro - gyro_bias) * dt)
    return ContactDelta("point", foot, times[0], t_end, cov)


def point_contact_residual(R_i, d_i, d_j):
    """How far the contact point moved between the nodes, in body frame i."""
    return R_i.T @ (d_j - d_i)
