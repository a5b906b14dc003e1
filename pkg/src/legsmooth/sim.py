"""Synthetic legged-robot walking data with exact kinematic consistency.

A smooth template (curved path at constant speed, gentle height bob, small
roll/pitch sway) is sampled for angular velocity and specific force at the
IMU rate, and the ground-truth states are the exact zero-order-hold rollout
of those samples. Preintegrating the noiseless streams therefore reproduces
the truth states to machine precision, which is what the end-to-end
consistency tests rely on.

Feet alternate stances with overlap, so at least one foot is always down.
During a stance the foot's world pose is frozen (flat on the ground, yaw
taken from the base at stance midtime) and the leg's joint angles are
inverse-solved at every sample, so forward kinematics reproduces the
base-to-contact transform exactly. Swing-phase angles interpolate smoothly
between stances; nothing downstream consumes them.

The stock leg has six joints (hip roll, hip pitch, knee pitch, ankle yaw,
ankle pitch, ankle roll) so the contact pose is reachable for any nearby
base pose; three position joints plus a three-axis ankle keep the inverse
kinematics closed-form.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import EncoderReading, KinematicChain, LinkParam, forward_kinematics
from .manifold import exp_so3
from .preintegration import GRAVITY, ContactEvent, ImuSample


class InfeasibleChainError(ValueError):
    """Requested contact pose is unreachable by the leg chain."""


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement corruption levels; defaults are the stock benchmark set."""

    sigma_accel: float = 0.0307          # m/s^2, white
    sigma_gyro: float = 0.0014           # rad/s, white
    sigma_bias_accel: float = 0.005      # m/s^2 per sqrt(s), random walk
    sigma_bias_gyro: float = 0.0005      # rad/s per sqrt(s), random walk
    sigma_lc_trans: float = 0.1          # m
    sigma_lc_rot: float = 0.0873         # rad
    sigma_contact_velocity: float = 0.1  # m/s, contact slip model
    sigma_encoder: float = 0.00873       # rad

    def __post_init__(self):
        for name, value in dataclasses.asdict(self).items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0, got {value}")


def leg_chain(side=1):
    """Six-joint leg: hip roll/pitch, knee, and a yaw-pitch-roll ankle.

    side=+1 puts the hip on +y (left), side=-1 on -y (right).
    """
    down = np.array([0.0, 0.0, -0.4])
    zero = np.zeros(3)
    return KinematicChain((
        LinkParam(np.eye(3), np.array([0.0, 0.1 * side, -0.05]), "x"),
        LinkParam(np.eye(3), zero, "y"),
        LinkParam(np.eye(3), down, "y"),
        LinkParam(np.eye(3), down, "z"),
        LinkParam(np.eye(3), zero, "y"),
        LinkParam(np.eye(3), zero, "x"),
        LinkParam(np.eye(3), np.array([0.0, 0.0, -0.05]), None),
    ))


def default_chains():
    return {0: leg_chain(1), 1: leg_chain(-1)}


@dataclass(frozen=True)
class SimConfig:
    duration: float = 60.0
    imu_rate: float = 200.0
    speed: float = 0.5           # m/s along the path
    turn_rate: float = 0.1       # rad/s yaw rate (0 walks straight)
    base_height: float = 0.75
    bob_amplitude: float = 0.01
    sway_pitch: float = 0.02     # rad
    sway_roll: float = 0.03      # rad
    step_period: float = 2.0 / 3.0
    duty_factor: float = 0.6     # stance fraction of a gait cycle
    lc_stride: int = 2
    seed: int = 0
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    chains: dict = field(default_factory=default_chains)

    def __post_init__(self):
        if self.imu_rate <= 0 or self.step_period <= 0:
            raise ValueError("rates and periods must be positive")
        if self.duration <= self.step_period:
            raise ValueError("duration must exceed one step period")
        if not 0.5 < self.duty_factor < 1.0:
            raise ValueError("duty factor must lie in (0.5, 1) so stances overlap")
        if self.lc_stride < 1:
            raise ValueError("lc stride must be >= 1")


@dataclass(frozen=True)
class LoopClosure:
    """Relative pose of node at time_j seen from node at time_i."""

    time_i: float
    time_j: float
    rotation: np.ndarray
    position: np.ndarray
    covariance: np.ndarray  # 6x6, rotation block first


@dataclass(frozen=True)
class TruthRecord:
    timestamp: float
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class Dataset:
    imu: list                 # ImuSample, time-sorted
    encoders: dict            # foot -> list[EncoderReading], every IMU tick
    contacts: list            # ContactEvent at make/break times
    loop_closures: list       # LoopClosure records
    truth: list               # TruthRecord at node times


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class _Template:
    """C2 base trajectory with closed-form velocity/acceleration/rates."""

    def __init__(self, config):
        self.v0 = config.speed
        self.w = config.turn_rate
        self.z0 = config.base_height
        self.az = config.bob_amplitude
        self.wz = 2.0 * math.pi / config.step_period
        self.wc = math.pi / config.step_period  # gait cycle = two steps
        self.ap = config.sway_pitch
        self.ar = config.sway_roll

    def position(self, t):
        if abs(self.w) > 1e-12:
            rho = self.v0 / self.w
            x = rho * math.sin(self.w * t)
            y = rho * (1.0 - math.cos(self.w * t))
        else:
            x, y = self.v0 * t, 0.0
        return np.array([x, y, self.z0 + self.az * math.sin(self.wz * t)])

    def velocity(self, t):
        psi = self.w * t
        return np.array([self.v0 * math.cos(psi), self.v0 * math.sin(psi),
                         self.az * self.wz * math.cos(self.wz * t)])

    def acceleration(self, t):
        psi = self.w * t
        return np.array([-self.v0 * self.w * math.sin(psi),
                         self.v0 * self.w * math.cos(psi),
                         -self.az * self.wz ** 2 * math.sin(self.wz * t)])

    def _angles(self, t):
        return (self.w * t,
                self.ap * math.sin(self.wc * t),
                self.ar * math.sin(self.wc * t + 0.5 * math.pi))

    def rotation(self, t):
        psi, thp, thr = self._angles(t)
        return _rz(psi) @ _ry(thp) @ _rx(thr)

    def omega(self, t):
        # body rates of Rz(psi) Ry(thp) Rx(thr)
        psi, thp, thr = self._angles(t)
        dpsi = self.w
        dthp = self.ap * self.wc * math.cos(self.wc * t)
        dthr = self.ar * self.wc * math.cos(self.wc * t + 0.5 * math.pi)
        rx_t = _rx(thr).T
        return (dthr * np.array([1.0, 0.0, 0.0])
                + rx_t @ np.array([0.0, dthp, 0.0])
                + rx_t @ _ry(thp).T @ np.array([0.0, 0.0, dpsi]))


_LEG_AXES = ("x", "y", "y", "z", "y", "x")


def leg_inverse_kinematics(chain, target_rotation, target_position):
    """Joint angles reproducing the base-to-contact pose on the stock leg.

    Closed form: hip roll aligns the knee plane, hip pitch + knee solve the
    planar two-link reach, and the ankle wrist absorbs the residual rotation
    (yaw-pitch-roll order). Raises InfeasibleChainError when the target is
    out of reach or the ankle hits its gimbal singularity.
    """
    links = chain.links
    axes = tuple(l.axis for l in links[:-1])
    if axes != _LEG_AXES or len(links) != 7:
        raise ValueError("inverse kinematics supports the stock leg layout only")
    t1 = links[0].translation
    t7 = links[6].translation
    L1 = -links[2].translation[2]
    L2 = -links[3].translation[2]
    w = target_position - t1 - target_rotation @ t7
    r = math.hypot(w[1], w[2])
    q1 = math.atan2(w[1], -w[2]) if r > 1e-12 else 0.0
    u = _rx(q1).T @ w
    D = (u[0] ** 2 + u[2] ** 2 - L1 * L1 - L2 * L2) / (2.0 * L1 * L2)
    if abs(D) > 1.0 + 1e-9:
        raise InfeasibleChainError(f"contact point out of reach (D = {D:.6f})")
    q3 = math.acos(min(1.0, max(-1.0, D)))
    q2 = (math.atan2(-u[0], -u[2])
          - math.atan2(L2 * math.sin(q3), L1 + L2 * math.cos(q3)))
    wrist = (_rx(q1) @ _ry(q2 + q3)).T @ target_rotation
    s5 = -wrist[2, 0]
    if abs(s5) > 1.0 - 1e-9:
        raise InfeasibleChainError("ankle pitch at gimbal singularity")
    q5 = math.asin(s5)
    q4 = math.atan2(wrist[1, 0], wrist[0, 0])
    q6 = math.atan2(wrist[2, 1], wrist[2, 2])
    return np.array([q1, q2, q3, q4, q5, q6])


def _contact_schedule(config, total_ticks):
    """Stance spans per foot as closed IMU-grid index intervals [ka, kb]."""
    rate = config.imu_rate
    cycle = 2.0 * config.step_period
    stance = config.duty_factor * cycle
    spans = {}
    for foot, offset in ((0, 0.0), (1, config.step_period)):
        out = []
        m = -1
        while True:
            a = m * cycle + offset
            if a * rate > total_ticks:
                break
            b = a + stance
            ka = max(0, int(round(a * rate)))
            kb = min(total_ticks, int(round(b * rate)))
            if kb > ka:
                out.append((ka, kb))
            m += 1
        spans[foot] = out
    return spans


def _smoothstep(tau):
    return tau * tau * tau * (tau * (6.0 * tau - 15.0) + 10.0)


def generate_truth(config):
    """Noiseless dataset for the configured walk; deterministic and exact.

    Truth states at node times are the zero-order-hold rollout of the
    emitted IMU stream, stance feet are pinned to fixed world poses, and
    encoder angles inverse-solve the leg at every tick.
    """
    tpl = _Template(config)
    rate = config.imu_rate
    K = int(round(config.duration * rate))
    g = GRAVITY

    rots = np.empty((K + 1, 3, 3))
    poss = np.empty((K + 1, 3))
    vels = np.empty((K + 1, 3))
    rots[0] = tpl.rotation(0.0)
    poss[0] = tpl.position(0.0)
    vels[0] = tpl.velocity(0.0)
    imu = []
    for k in range(K):
        t0, t1 = k / rate, (k + 1) / rate
        dt = t1 - t0
        omega = tpl.omega(t0)
        force = rots[k].T @ (tpl.acceleration(t0) - g)
        imu.append(ImuSample(t0, force, omega))
        acc_w = rots[k] @ force + g
        rots[k + 1] = rots[k] @ exp_so3(omega * dt)
        poss[k + 1] = poss[k] + vels[k] * dt + 0.5 * acc_w * dt * dt
        vels[k + 1] = vels[k] + acc_w * dt

    spans = _contact_schedule(config, K)
    encoders = {}
    contacts = []
    for foot in sorted(config.chains):
        chain = config.chains[foot]
        hip = chain.links[0].translation
        n_joints = chain.joint_count
        angles = np.zeros((K + 1, n_joints))
        for ka, kb in spans[foot]:
            km = (ka + kb) // 2
            anchor = poss[km] + rots[km] @ hip
            point = np.array([anchor[0], anchor[1], 0.0])
            frame = _rz(math.atan2(rots[km][1, 0], rots[km][0, 0]))
            for k in range(ka, kb + 1):
                angles[k] = leg_inverse_kinematics(
                    chain, rots[k].T @ frame, rots[k].T @ (point - poss[k]))
            contacts.append(ContactEvent(ka / rate, foot, True))
            contacts.append(ContactEvent(kb / rate, foot, False))
        foot_spans = spans[foot]
        if foot_spans:
            angles[:foot_spans[0][0]] = angles[foot_spans[0][0]]
            for (_, kb), (ka2, _) in zip(foot_spans, foot_spans[1:]):
                for k in range(kb + 1, ka2):
                    s = _smoothstep((k - kb) / (ka2 - kb))
                    angles[k] = angles[kb] + s * (angles[ka2] - angles[kb])
            angles[foot_spans[-1][1] + 1:] = angles[foot_spans[-1][1]]
        encoders[foot] = [EncoderReading(k / rate, angles[k].copy())
                          for k in range(K + 1)]
    contacts.sort(key=lambda e: (e.timestamp, e.foot, e.in_contact))

    node_ticks = sorted({k for sp in spans.values() for ab in sp for k in ab})
    truth = [TruthRecord(k / rate, rots[k].copy(), poss[k].copy(), vels[k].copy())
             for k in node_ticks]

    dataset = Dataset(imu, encoders, contacts, [], truth)
    lcs = emit_loop_closures(dataset, config.lc_stride,
                             config.noise.sigma_lc_rot, config.noise.sigma_lc_trans)
    return dataclasses.replace(dataset, loop_closures=lcs)


def emit_loop_closures(dataset, stride=2, sigma_rot=0.0873, sigma_trans=0.1):
    """Noiseless relative-pose records from node k-stride to k, every other node.

    The stated sigmas only fill the records' covariance; corruption happens
    separately in corrupt().
    """
    cov = np.diag([sigma_rot ** 2] * 3 + [sigma_trans ** 2] * 3)
    records = []
    nodes = dataset.truth
    for j in range(stride, len(nodes), 2):
        a, b = nodes[j - stride], nodes[j]
        records.append(LoopClosure(
            a.timestamp, b.timestamp,
            a.rotation.T @ b.rotation,
            a.rotation.T @ (b.position - a.position),
            cov.copy()))
    return records


def corrupt(dataset, noise, seed):
    """Noisy copy of a dataset; timestamps, contacts, and truth untouched.

    IMU gets white noise plus a Brownian bias starting at zero (per-step
    std sigma_bias * sqrt(dt)); encoders get white noise per joint; loop
    closures get a right-multiplied rotation perturbation and a translation
    perturbation expressed in the measured frame. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    imu = dataset.imu
    K = len(imu)
    times = np.array([s.timestamp for s in imu])
    dts = np.diff(times)
    dts = np.append(dts, dts[-1] if K > 1 else 1.0)

    accel_white = noise.sigma_accel * rng.standard_normal((K, 3))
    gyro_white = noise.sigma_gyro * rng.standard_normal((K, 3))
    ba_inc = noise.sigma_bias_accel * np.sqrt(dts)[:, None] * rng.standard_normal((K, 3))
    bg_inc = noise.sigma_bias_gyro * np.sqrt(dts)[:, None] * rng.standard_normal((K, 3))
    ba = np.vstack([np.zeros(3), np.cumsum(ba_inc, axis=0)[:-1]])
    bg = np.vstack([np.zeros(3), np.cumsum(bg_inc, axis=0)[:-1]])
    new_imu = [ImuSample(s.timestamp,
                         s.accel + accel_white[k] + ba[k],
                         s.gyro + gyro_white[k] + bg[k])
               for k, s in enumerate(imu)]

    new_encoders = {}
    for foot in sorted(dataset.encoders):
        readings = dataset.encoders[foot]
        jitter = noise.sigma_encoder * rng.standard_normal(
            (len(readings), len(readings[0].angles)))
        new_encoders[foot] = [EncoderReading(r.timestamp, r.angles + jitter[k])
                              for k, r in enumerate(readings)]

    new_lcs = []
    for rec in dataset.loop_closures:
        eps = noise.sigma_lc_rot * rng.standard_normal(3)
        eta = noise.sigma_lc_trans * rng.standard_normal(3)
        new_lcs.append(dataclasses.replace(
            rec, rotation=rec.rotation @ exp_so3(eps),
            position=rec.position + rec.rotation @ eta))

    return dataclasses.replace(dataset, imu=new_imu, encoders=new_encoders,
                               loop_closures=new_lcs)
