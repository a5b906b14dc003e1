"""Estimator assembly: dataset in, optimized trajectory and error tables out.

Graph layout: one node per contact make/break event (the dataset's truth
record times). Consecutive nodes are linked by a preintegrated IMU factor
and a bias random-walk factor. A foot in contact over [make, break] gets a
contact-pose variable at every node in that closed interval, a kinematics
factor at each of those nodes, and a contact preintegration factor over
each consecutive node pair inside the stance. Loop closures become
relative-pose factors between the matching nodes. The first node carries
the anchor prior, with the dataset's first truth record as its mean.

Model covariances are built from the same noise settings the corruption
step uses. Variances are floored at a tiny value so deliberately noiseless
runs stay solvable; the kinematics factor has its own, larger floor because
its propagated covariance can be rank-deficient at special joint
configurations.

Initialization is dead reckoning: IMU prediction from the prior mean, with
contact poses placed by forward kinematics from the initial base pose.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .graph import (
    BiasRandomWalkFactor,
    ContactPose,
    FactorGraph,
    FkFactor,
    FkMeasurement,
    GraphValues,
    ImuFactor,
    LmConfig,
    NavState,
    PointContactFactor,
    PriorFactor,
    RelativePoseFactor,
    RigidContactFactor,
    add_node,
    optimize,
)
from .kinematics import fk_covariance, forward_kinematics
from .manifold import log_so3
from .preintegration import (
    imu_predict,
    imu_preintegrate,
    point_contact_preintegrate,
    rigid_contact_preintegrate,
)
from .sim import TruthRecord

PRESETS = ("ImuOnly", "ImuLc", "ImuContactFk", "All")

_VAR_FLOOR = 1e-14  # keeps zero-noise model covariances invertible


class TimestampMismatchError(ValueError):
    """A record refers to a time that is not a node time."""


class EmptyInputError(ValueError):
    """No data where at least one element is required."""


@dataclass(frozen=True)
class PriorConfig:
    sigma_rot: float = 1e-3
    sigma_pos: float = 1e-3
    sigma_vel: float = 1e-2
    sigma_bias: float = 1e-2


@dataclass(frozen=True)
class EstimatorConfig:
    contact_kind: str = "point"        # or "rigid"
    contact_sigma_omega: float = 0.05  # rad/s, rigid contact rotational slip
    fk_variance_floor: float = 1e-10
    lm: LmConfig = field(default_factory=LmConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)


@dataclass(frozen=True)
class ErrorRecord:
    node_index: int
    translation: float  # m
    rotation: float     # rad


def _var(sigma):
    return max(sigma * sigma, _VAR_FLOOR)


def stance_intervals(dataset):
    """Per-foot [make, break] intervals reconstructed from contact events."""
    spans = {}
    open_at = {}
    for e in dataset.contacts:
        if e.in_contact:
            if e.foot in open_at:
                raise ValueError(f"foot {e.foot} makes contact twice at {e.timestamp}")
            open_at[e.foot] = e.timestamp
        else:
            if e.foot not in open_at:
                raise ValueError(f"foot {e.foot} breaks contact it never made")
            spans.setdefault(e.foot, []).append((open_at.pop(e.foot), e.timestamp))
    last = dataset.truth[-1].timestamp if dataset.truth else None
    for foot, start in open_at.items():
        spans.setdefault(foot, []).append((start, last))
    return spans


def _node_index(node_times, t):
    i = bisect.bisect_left(node_times, t - 1e-9)
    if i == len(node_times) or abs(node_times[i] - t) > 1e-9:
        raise TimestampMismatchError(f"time {t!r} is not a node time")
    return i


@dataclass
class Measurements:
    """Preset-independent preprocessing of one dataset."""

    node_times: list
    imu_deltas: list          # one per consecutive node pair
    bias_covs: list
    contact_nodes: dict       # foot -> sorted node indices with contact state
    fk_means: dict            # (node, foot) -> (rotation, position)
    fk_covariances: dict      # (node, foot) -> 6x6
    contact_deltas: list      # (node_i, node_j, ContactDelta)
    lc_factors: list          # (node_i, node_j, LoopClosure)
    init_states: list         # dead-reckoned NavState per node, contacts included


def prepare_measurements(dataset, sim_config, est_config):
    if len(dataset.truth) < 2:
        raise EmptyInputError("dataset has fewer than two nodes")
    noise = sim_config.noise
    chains = sim_config.chains
    node_times = [rec.timestamp for rec in dataset.truth]
    dt_sample = 1.0 / sim_config.imu_rate
    psd_gyro = _var(noise.sigma_gyro) * dt_sample
    psd_accel = _var(noise.sigma_accel) * dt_sample

    imu_times = [s.timestamp for s in dataset.imu]
    zero6 = np.zeros(6)
    imu_deltas = []
    bias_covs = []
    for t_i, t_j in zip(node_times, node_times[1:]):
        lo = bisect.bisect_left(imu_times, t_i)
        hi = bisect.bisect_left(imu_times, t_j)
        imu_deltas.append(imu_preintegrate(dataset.imu[lo:hi], t_j, zero6,
                                           psd_gyro, psd_accel))
        span = t_j - t_i
        bias_covs.append(np.diag([_var(noise.sigma_bias_gyro)] * 3
                                 + [_var(noise.sigma_bias_accel)] * 3) * span)

    spans = stance_intervals(dataset)
    contact_nodes = {}
    fk_means = {}
    fk_covariances = {}
    enc_times = {f: [r.timestamp for r in dataset.encoders[f]] for f in dataset.encoders}
    for foot, intervals in sorted(spans.items()):
        if foot not in chains:
            raise ValueError(f"no kinematic chain configured for foot {foot}")
        chain = chains[foot]
        nodes = set()
        for t_a, t_b in intervals:
            i_a = _node_index(node_times, t_a)
            i_b = _node_index(node_times, t_b)
            nodes.update(range(i_a, i_b + 1))
        contact_nodes[foot] = sorted(nodes)
        times = enc_times[foot]
        for n in contact_nodes[foot]:
            k = bisect.bisect_left(times, node_times[n] - 1e-9)
            if k == len(times) or abs(times[k] - node_times[n]) > 1e-9:
                raise TimestampMismatchError(
                    f"no encoder reading for foot {foot} at node time {node_times[n]!r}")
            angles = dataset.encoders[foot][k].angles
            fk_means[(n, foot)] = forward_kinematics(chain, angles)
            cov = fk_covariance(chain, angles, noise.sigma_encoder)
            fk_covariances[(n, foot)] = cov + est_config.fk_variance_floor * np.eye(6)

    # dead-reckoned initial states, contact poses from kinematics
    first = dataset.truth[0]
    states = [NavState(first.rotation.copy(), first.position.copy(),
                       first.velocity.copy(), np.zeros(6), {})]
    for delta in imu_deltas:
        s = states[-1]
        rot, pos, vel = imu_predict(s.rotation, s.position, s.velocity, delta)
        states.append(NavState(rot, pos, vel, np.zeros(6), {}))
    for foot, nodes in contact_nodes.items():
        for n in nodes:
            fk_r, fk_p = fk_means[(n, foot)]
            s = states[n]
            s.contacts[foot] = ContactPose(s.rotation @ fk_r,
                                           s.position + s.rotation @ fk_p)

    contact_deltas = []
    sigma_v = noise.sigma_contact_velocity
    for foot, intervals in sorted(spans.items()):
        chain = chains[foot]
        times = enc_times[foot]
        for t_a, t_b in intervals:
            i_a = _node_index(node_times, t_a)
            i_b = _node_index(node_times, t_b)
            for n in range(i_a, i_b):
                t_i, t_j = node_times[n], node_times[n + 1]
                if est_config.contact_kind == "rigid":
                    delta = rigid_contact_preintegrate(
                        t_i, t_j,
                        _var(est_config.contact_sigma_omega) * np.eye(3),
                        _var(sigma_v) * np.eye(3), foot=foot)
                else:
                    lo = bisect.bisect_left(imu_times, t_i)
                    hi = bisect.bisect_left(imu_times, t_j)
                    e_lo = bisect.bisect_left(times, t_i)
                    e_hi = e_lo + (hi - lo)
                    s = states[n]
                    delta = point_contact_preintegrate(
                        dataset.imu[lo:hi], dataset.encoders[foot][e_lo:e_hi],
                        t_j, chain, s.rotation, s.contacts[foot].rotation,
                        np.zeros(3), _var(sigma_v) * np.eye(3),
                        foot=foot)
                contact_deltas.append((n, n + 1, delta))

    lc_factors = [(_node_index(node_times, rec.time_i),
                   _node_index(node_times, rec.time_j), rec)
                  for rec in dataset.loop_closures]

    return Measurements(node_times, imu_deltas, bias_covs, contact_nodes,
                        fk_means, fk_covariances, contact_deltas, lc_factors,
                        states)


def build_graph(dataset, sim_config, est_config, preset, measurements=None):
    """Factor graph and initial values for one preset."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; expected one of {PRESETS}")
    meas = measurements or prepare_measurements(dataset, sim_config, est_config)
    use_lc = preset in ("ImuLc", "All")
    use_contact = preset in ("ImuContactFk", "All")

    values = GraphValues()
    for n, (t, s) in enumerate(zip(meas.node_times, meas.init_states)):
        state = NavState(s.rotation.copy(), s.position.copy(), s.velocity.copy(),
                         s.bias.copy(), dict(s.contacts) if use_contact else {})
        add_node(values, t, state)

    graph = FactorGraph()
    prior = est_config.prior
    first = dataset.truth[0]
    prior_cov = np.diag([_var(prior.sigma_rot)] * 3 + [_var(prior.sigma_pos)] * 3
                        + [_var(prior.sigma_vel)] * 3 + [_var(prior.sigma_bias)] * 6)
    graph.add(PriorFactor(0, first.rotation, first.position, first.velocity,
                          np.zeros(6), prior_cov))
    for n, (delta, bias_cov) in enumerate(zip(meas.imu_deltas, meas.bias_covs)):
        graph.add(ImuFactor(n, n + 1, delta))
        graph.add(BiasRandomWalkFactor(n, n + 1, bias_cov))
    if use_contact:
        for foot in sorted(meas.contact_nodes):
            for n in meas.contact_nodes[foot]:
                rot, pos = meas.fk_means[(n, foot)]
                graph.add(FkFactor(n, foot, FkMeasurement(
                    rot, pos, meas.fk_covariances[(n, foot)])))
        for i, j, delta in meas.contact_deltas:
            if delta.kind == "rigid":
                graph.add(RigidContactFactor(i, j, delta))
            else:
                graph.add(PointContactFactor(i, j, delta))
    if use_lc:
        for i, j, rec in meas.lc_factors:
            graph.add(RelativePoseFactor(i, j, rec.rotation, rec.position,
                                         rec.covariance))
    return graph, values, meas


@dataclass
class RunOutput:
    preset: str
    trajectory: list    # TruthRecord per node (estimated)
    errors: list        # ErrorRecord per consecutive node pair
    result: object      # OptimizeResult
    factor_count: int


def run_estimate(dataset, sim_config, est_config, preset, measurements=None):
    graph, values, meas = build_graph(dataset, sim_config, est_config, preset,
                                      measurements)
    result = optimize(graph, values, est_config.lm)
    trajectory = [TruthRecord(t, s.rotation, s.position, s.velocity)
                  for t, s in zip(result.values.timestamps, result.values.states)]
    errors = compute_relative_errors(trajectory, dataset.truth)
    return RunOutput(preset, trajectory, errors, result, len(graph.factors))


def compute_relative_errors(estimate, truth):
    """Relative-pose errors between consecutive nodes, estimate vs truth."""
    if len(estimate) != len(truth):
        raise TimestampMismatchError(
            f"estimate has {len(estimate)} nodes, truth has {len(truth)}")
    for a, b in zip(estimate, truth):
        if abs(a.timestamp - b.timestamp) > 1e-9:
            raise TimestampMismatchError(
                f"node times differ: {a.timestamp!r} vs {b.timestamp!r}")
    records = []
    for j in range(1, len(truth)):
        ei, ej = estimate[j - 1], estimate[j]
        ti, tj = truth[j - 1], truth[j]
        dp_est = ei.rotation.T @ (ej.position - ei.position)
        dp_true = ti.rotation.T @ (tj.position - ti.position)
        dr_est = ei.rotation.T @ ej.rotation
        dr_true = ti.rotation.T @ tj.rotation
        records.append(ErrorRecord(
            j, float(np.linalg.norm(dp_est - dp_true)),
            float(np.linalg.norm(log_so3(dr_true.T @ dr_est)))))
    return records


def compute_cdf(errors):
    """(threshold, fraction <= threshold) at each distinct error value."""
    values = np.asarray(list(errors), dtype=float)
    if values.size == 0:
        raise EmptyInputError("cannot build a CDF from no errors")
    uniq, counts = np.unique(values, return_counts=True)
    fractions = np.cumsum(counts) / values.size
    return list(zip(uniq.tolist(), fractions.tolist()))
