"""Factor graph over navigation states and its batch optimizer.

State per node: base rotation/position/velocity, a 6-dim IMU bias (gyro
first), and one contact pose per foot currently on the ground. Tangent
blocks are ordered (rot, pos, vel, bias, then per-foot contact rot/pos with
feet sorted), so a node with one foot down has tangent dimension 21.

Retraction: rotations update multiplicatively on the right, base position
updates in the body frame (p + R dp), velocity/bias/contact position update
additively.

Every factor stores its covariance and whitens its own residual/Jacobian
rows with the inverse Cholesky factor. Jacobians are analytic; a central
finite-difference mode exists behind the same interface for verification
and as a configuration escape hatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .manifold import exp_so3, hat, log_so3, right_jacobian, right_jacobian_inv
from .preintegration import GRAVITY, imu_delta_corrected

FD_STEP = 1e-6


class NotAnchoredError(ValueError):
    """Optimization attempted on a graph with no prior factor."""


class LinearSolveFailure(RuntimeError):
    """Normal equations remained unsolvable after damping boosts."""


@dataclass(frozen=True)
class ContactPose:
    rotation: np.ndarray
    position: np.ndarray


@dataclass
class NavState:
    rotation: np.ndarray
    position: np.ndarray
    velocity: np.ndarray
    bias: np.ndarray
    contacts: dict[int, ContactPose] = field(default_factory=dict)

    def copy(self):
        return NavState(self.rotation.copy(), self.position.copy(),
                        self.velocity.copy(), self.bias.copy(),
                        dict(self.contacts))

    @property
    def tangent_dim(self):
        return 15 + 6 * len(self.contacts)


def node_blocks(state):
    """Tangent block layout of one node: (kind, foot, dim) triples in order."""
    blocks = [("rot", None, 3), ("pos", None, 3), ("vel", None, 3), ("bias", None, 6)]
    for foot in sorted(state.contacts):
        blocks.append(("crot", foot, 3))
        blocks.append(("cpos", foot, 3))
    return blocks


def retract_state(state, delta):
    """Apply a full node-tangent increment; see module docstring for order."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (state.tangent_dim,):
        raise ValueError(f"expected tangent dim {state.tangent_dim}, got {delta.shape}")
    R = state.rotation
    contacts = {}
    off = 15
    for foot in sorted(state.contacts):
        cp = state.contacts[foot]
        contacts[foot] = ContactPose(cp.rotation @ exp_so3(delta[off:off + 3]),
                                     cp.position + delta[off + 3:off + 6])
        off += 6
    return NavState(R @ exp_so3(delta[0:3]), state.position + R @ delta[3:6],
                    state.velocity + delta[6:9], state.bias + delta[9:15], contacts)


@dataclass
class GraphValues:
    """Node states and their timestamps, indexed by insertion order."""

    timestamps: list[float] = field(default_factory=list)
    states: list[NavState] = field(default_factory=list)

    def copy(self):
        return GraphValues(list(self.timestamps), [s.copy() for s in self.states])


def add_node(values, timestamp, initial):
    """Append a node; timestamps must be strictly increasing."""
    if values.timestamps and timestamp <= values.timestamps[-1]:
        raise ValueError(
            f"node timestamps must be strictly increasing "
            f"({timestamp} after {values.timestamps[-1]})")
    values.timestamps.append(float(timestamp))
    values.states.append(initial)
    return len(values.states) - 1


def build_layout(values):
    """Column offsets for every (node, kind, foot) block, plus total dim."""
    index = {}
    offset = 0
    for nid, state in enumerate(values.states):
        for kind, foot, dim in node_blocks(state):
            index[(nid, kind, foot)] = (offset, dim)
            offset += dim
    return index, offset


def retract_values(values, delta, layout=None):
    out = GraphValues(list(values.timestamps), [])
    offset = 0
    for state in values.states:
        dim = state.tangent_dim
        out.states.append(retract_state(state, delta[offset:offset + dim]))
        offset += dim
    return out


# ----------------------------------------------------------- residual functions

def fk_factor_residual(state, foot, measurement):
    """Leg-kinematics discrepancy at one node: (rotation, position), 6-vector."""
    if foot not in state.contacts:
        raise ValueError(f"node has no contact state for foot {foot}")
    cp = state.contacts[foot]
    R, p = state.rotation, state.position
    r_rot = log_so3(measurement.rotation.T @ R.T @ cp.rotation)
    r_pos = R.T @ (cp.position - p) - measurement.position
    return np.concatenate([r_rot, r_pos])


def imu_factor_residual(state_i, state_j, delta, gravity=GRAVITY):
    """Preintegrated-IMU discrepancy between two nodes, 9-vector (rot, vel, pos)."""
    rot, vel, pos = imu_delta_corrected(delta, state_i.bias)
    R_i = state_i.rotation
    dt = delta.dt
    r_rot = log_so3(rot.T @ R_i.T @ state_j.rotation)
    r_vel = R_i.T @ (state_j.velocity - state_i.velocity - gravity * dt) - vel
    r_pos = R_i.T @ (state_j.position - state_i.position - state_i.velocity * dt
                     - 0.5 * gravity * dt * dt) - pos
    return np.concatenate([r_rot, r_vel, r_pos])


def contact_factor_residual(state_i, state_j, delta):
    """Contact-frame slip between two nodes; 6-vector (rigid) or 3 (point)."""
    foot = delta.foot
    if foot not in state_i.contacts or foot not in state_j.contacts:
        raise ValueError(f"both nodes need contact state for foot {foot}")
    cp_i, cp_j = state_i.contacts[foot], state_j.contacts[foot]
    if delta.kind == "rigid":
        return np.concatenate([log_so3(cp_i.rotation.T @ cp_j.rotation),
                               cp_i.rotation.T @ (cp_j.position - cp_i.position)])
    if delta.kind == "point":
        return state_i.rotation.T @ (cp_j.position - cp_i.position)
    raise ValueError(f"unknown contact kind {delta.kind!r}")


def relative_pose_residual(state_i, state_j, rotation, position):
    """Relative-pose measurement discrepancy (loop closures), 6-vector."""
    R_i = state_i.rotation
    r_rot = log_so3(rotation.T @ R_i.T @ state_j.rotation)
    r_pos = R_i.T @ (state_j.position - state_i.position) - position
    return np.concatenate([r_rot, r_pos])


# ------------------------------------------------------------------- factors

def _sqrt_info(cov):
    cov = np.asarray(cov, dtype=float)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise ValueError(f"factor covariance is singular: {e}") from None
    return scipy.linalg.solve_triangular(L, np.eye(len(cov)), lower=True)


class Factor:
    """Base: subclasses set .blocks and implement residual/jacobian."""

    blocks: tuple

    def __init__(self, cov):
        self.covariance = np.asarray(cov, dtype=float)
        self.sqrt_info = _sqrt_info(self.covariance)

    def residual(self, states):
        raise NotImplementedError

    def jacobian(self, states):
        raise NotImplementedError


class PriorFactor(Factor):
    """Anchors one node's full base state (rot, pos, vel, bias), 15 rows."""

    def __init__(self, node, rotation, position, velocity, bias, cov):
        super().__init__(cov)
        self.node = node
        self.rotation = rotation
        self.position = np.asarray(position, dtype=float)
        self.velocity = np.asarray(velocity, dtype=float)
        self.bias = np.asarray(bias, dtype=float)
        self.blocks = ((node, "rot", None), (node, "pos", None),
                       (node, "vel", None), (node, "bias", None))

    def residual(self, states):
        s = states[self.node]
        return np.concatenate([log_so3(self.rotation.T @ s.rotation),
                               s.position - self.position,
                               s.velocity - self.velocity,
                               s.bias - self.bias])

    def jacobian(self, states):
        s = states[self.node]
        r_rot = log_so3(self.rotation.T @ s.rotation)
        J_rot = np.zeros((15, 3))
        J_rot[0:3] = right_jacobian_inv(r_rot)
        J_pos = np.zeros((15, 3))
        J_pos[3:6] = s.rotation
        J_vel = np.zeros((15, 3))
        J_vel[6:9] = np.eye(3)
        J_bias = np.zeros((15, 6))
        J_bias[9:15] = np.eye(6)
        return [J_rot, J_pos, J_vel, J_bias]


class ImuFactor(Factor):
    """Preintegrated IMU between consecutive nodes, 9 rows (rot, vel, pos)."""

    def __init__(self, node_i, node_j, delta, gravity=GRAVITY):
        super().__init__(delta.covariance)
        self.node_i = node_i
        self.node_j = node_j
        self.delta = delta
        self.gravity = np.asarray(gravity, dtype=float)
        self.blocks = ((node_i, "rot", None), (node_i, "pos", None),
                       (node_i, "vel", None), (node_i, "bias", None),
                       (node_j, "rot", None), (node_j, "pos", None),
                       (node_j, "vel", None))

    def residual(self, states):
        return imu_factor_residual(states[self.node_i], states[self.node_j],
                                   self.delta, self.gravity)

    def jacobian(self, states):
        si, sj = states[self.node_i], states[self.node_j]
        d = self.delta
        dt = d.dt
        g = self.gravity
        R_i, R_j = si.rotation, sj.rotation
        dbg = si.bias[:3] - d.bias_lin[:3]
        u = d.dr_dbg @ dbg
        rot_b = d.rotation @ exp_so3(u)
        r_rot = log_so3(rot_b.T @ R_i.T @ R_j)
        Jri = right_jacobian_inv(r_rot)
        E = exp_so3(r_rot)
        vel_arg = R_i.T @ (sj.velocity - si.velocity - g * dt)
        pos_arg = R_i.T @ (sj.position - si.position - si.velocity * dt
                           - 0.5 * g * dt * dt)

        J_rot_i = np.zeros((9, 3))
        J_rot_i[0:3] = -Jri @ R_j.T @ R_i
        J_rot_i[3:6] = hat(vel_arg)
        J_rot_i[6:9] = hat(pos_arg)
        J_pos_i = np.zeros((9, 3))
        J_pos_i[6:9] = -np.eye(3)
        J_vel_i = np.zeros((9, 3))
        J_vel_i[3:6] = -R_i.T
        J_vel_i[6:9] = -R_i.T * dt
        J_bias = np.zeros((9, 6))
        J_bias[0:3, 0:3] = -Jri @ E.T @ right_jacobian(u) @ d.dr_dbg
        J_bias[3:6, 0:3] = -d.dv_dbg
        J_bias[3:6, 3:6] = -d.dv_dba
        J_bias[6:9, 0:3] = -d.dp_dbg
        J_bias[6:9, 3:6] = -d.dp_dba
        J_rot_j = np.zeros((9, 3))
        J_rot_j[0:3] = Jri
        J_pos_j = np.zeros((9, 3))
        J_pos_j[6:9] = R_i.T @ R_j
        J_vel_j = np.zeros((9, 3))
        J_vel_j[3:6] = R_i.T
        return [J_rot_i, J_pos_i, J_vel_i, J_bias, J_rot_j, J_pos_j, J_vel_j]


class BiasRandomWalkFactor(Factor):
    """Bias evolution between consecutive nodes, 6 rows."""

    def __init__(self, node_i, node_j, cov):
        super().__init__(cov)
        self.node_i = node_i
        self.node_j = node_j
        self.blocks = ((node_i, "bias", None), (node_j, "bias", None))

    def residual(self, states):
        return states[self.node_j].bias - states[self.node_i].bias

    def jacobian(self, states):
        return [-np.eye(6), np.eye(6)]


@dataclass(frozen=True)
class FkMeasurement:
    """Body-to-contact pose from joint encoders, with its 6x6 covariance."""

    rotation: np.ndarray
    position: np.ndarray
    covariance: np.ndarray


class FkFactor(Factor):
    """Ties one node's contact pose to its base pose via leg kinematics."""

    def __init__(self, node, foot, measurement):
        super().__init__(measurement.covariance)
        self.node = node
        self.foot = foot
        self.measurement = measurement
        self.blocks = ((node, "rot", None), (node, "pos", None),
                       (node, "crot", foot), (node, "cpos", foot))

    def residual(self, states):
        return fk_factor_residual(states[self.node], self.foot, self.measurement)

    def jacobian(self, states):
        s = states[self.node]
        cp = s.contacts[self.foot]
        R, C = s.rotation, cp.rotation
        r_rot = log_so3(self.measurement.rotation.T @ R.T @ C)
        Jri = right_jacobian_inv(r_rot)
        lever = R.T @ (cp.position - s.position)
        J_rot = np.zeros((6, 3))
        J_rot[0:3] = -Jri @ C.T @ R
        J_rot[3:6] = hat(lever)
        J_pos = np.zeros((6, 3))
        J_pos[3:6] = -np.eye(3)
        J_crot = np.zeros((6, 3))
        J_crot[0:3] = Jri
        J_cpos = np.zeros((6, 3))
        J_cpos[3:6] = R.T
        return [J_rot, J_pos, J_crot, J_cpos]


class RigidContactFactor(Factor):
    """Planted 6-dof foot between consecutive nodes, 6 rows."""

    def __init__(self, node_i, node_j, delta):
        super().__init__(delta.covariance)
        self.node_i = node_i
        self.node_j = node_j
        self.delta = delta
        foot = delta.foot
        self.blocks = ((node_i, "crot", foot), (node_i, "cpos", foot),
                       (node_j, "crot", foot), (node_j, "cpos", foot))

    def residual(self, states):
        return contact_factor_residual(states[self.node_i], states[self.node_j],
                                       self.delta)

    def jacobian(self, states):
        foot = self.delta.foot
        cp_i = states[self.node_i].contacts[foot]
        cp_j = states[self.node_j].contacts[foot]
        dC = cp_i.rotation.T @ cp_j.rotation
        r_rot = log_so3(dC)
        Jri = right_jacobian_inv(r_rot)
        r_pos = cp_i.rotation.T @ (cp_j.position - cp_i.position)
        J_crot_i = np.zeros((6, 3))
        J_crot_i[0:3] = -Jri @ dC.T
        J_crot_i[3:6] = hat(r_pos)
        J_cpos_i = np.zeros((6, 3))
        J_cpos_i[3:6] = -cp_i.rotation.T
        J_crot_j = np.zeros((6, 3))
        J_crot_j[0:3] = Jri
        J_cpos_j = np.zeros((6, 3))
        J_cpos_j[3:6] = cp_i.rotation.T
        return [J_crot_i, J_cpos_i, J_crot_j, J_cpos_j]


class PointContactFactor(Factor):
    """Planted contact point between consecutive nodes, 3 rows."""

    def __init__(self, node_i, node_j, delta):
        super().__init__(delta.covariance)
        self.node_i = node_i
        self.node_j = node_j
        self.delta = delta
        foot = delta.foot
        self.blocks = ((node_i, "rot", None),
                       (node_i, "cpos", foot), (node_j, "cpos", foot))

    def residual(self, states):
        return contact_factor_residual(states[self.node_i], states[self.node_j],
                                       self.delta)

    def jacobian(self, states):
        foot = self.delta.foot
        R_i = states[self.node_i].rotation
        r = R_i.T @ (states[self.node_j].contacts[foot].position
                     - states[self.node_i].contacts[foot].position)
        return [hat(r), -R_i.T, R_i.T]


class RelativePoseFactor(Factor):
    """Loop closure: measured relative pose between two nodes, 6 rows."""

    def __init__(self, node_i, node_j, rotation, position, cov):
        super().__init__(cov)
        self.node_i = node_i
        self.node_j = node_j
        self.rotation = rotation
        self.position = np.asarray(position, dtype=float)
        self.blocks = ((node_i, "rot", None), (node_i, "pos", None),
                       (node_j, "rot", None), (node_j, "pos", None))

    def residual(self, states):
        return relative_pose_residual(states[self.node_i], states[self.node_j],
                                      self.rotation, self.position)

    def jacobian(self, states):
        si, sj = states[self.node_i], states[self.node_j]
        R_i, R_j = si.rotation, sj.rotation
        r_rot = log_so3(self.rotation.T @ R_i.T @ R_j)
        Jri = right_jacobian_inv(r_rot)
        rel = R_i.T @ (sj.position - si.position)
        J_rot_i = np.zeros((6, 3))
        J_rot_i[0:3] = -Jri @ R_j.T @ R_i
        J_rot_i[3:6] = hat(rel)
        J_pos_i = np.zeros((6, 3))
        J_pos_i[3:6] = -np.eye(3)
        J_rot_j = np.zeros((6, 3))
        J_rot_j[0:3] = Jri
        J_pos_j = np.zeros((6, 3))
        J_pos_j[3:6] = R_i.T @ R_j
        return [J_rot_i, J_pos_i, J_rot_j, J_pos_j]


class FactorGraph:
    def __init__(self):
        self.factors = []

    def add(self, factor):
        self.factors.append(factor)
        return factor

    @property
    def anchored(self):
        return any(isinstance(f, PriorFactor) for f in self.factors)


# ------------------------------------------------------- numeric differentiation

def _perturb_node(state, kind, foot, coord, step):
    out = state.copy()
    e = np.zeros(3 if kind != "bias" else 6)
    e[coord] = step
    if kind == "rot":
        out.rotation = state.rotation @ exp_so3(e)
    elif kind == "pos":
        out.position = state.position + state.rotation @ e
    elif kind == "vel":
        out.velocity = state.velocity + e
    elif kind == "bias":
        out.bias = state.bias + e
    elif kind == "crot":
        cp = state.contacts[foot]
        out.contacts[foot] = ContactPose(cp.rotation @ exp_so3(e), cp.position)
    elif kind == "cpos":
        cp = state.contacts[foot]
        out.contacts[foot] = ContactPose(cp.rotation, cp.position + e)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    return out


def numeric_jacobian(factor, states, step=FD_STEP):
    """Central-difference Jacobian blocks, same layout as factor.jacobian."""
    out = []
    for nid, kind, foot in factor.blocks:
        dim = 6 if kind == "bias" else 3
        rows = len(factor.residual(states))
        J = np.zeros((rows, dim))
        base = states[nid]
        for c in range(dim):
            states[nid] = _perturb_node(base, kind, foot, c, step)
            plus = factor.residual(states)
            states[nid] = _perturb_node(base, kind, foot, c, -step)
            minus = factor.residual(states)
            J[:, c] = (plus - minus) / (2.0 * step)
        states[nid] = base
        out.append(J)
    return out


# ------------------------------------------------------------------ linearize

def linearize(graph, values, layout=None, jacobian_mode="analytic", fd_step=FD_STEP):
    """Whitened sparse Jacobian and residual at the current values."""
    if layout is None:
        layout, total = build_layout(values)
    else:
        layout, total = layout
    states = values.states
    rows = sum(f.sqrt_info.shape[0] for f in graph.factors)
    r = np.empty(rows)
    data, ri, ci = [], [], []
    row0 = 0
    for f in graph.factors:
        W = f.sqrt_info
        m = W.shape[0]
        r[row0:row0 + m] = W @ f.residual(states)
        if jacobian_mode == "analytic":
            jac = f.jacobian(states)
        elif jacobian_mode == "numeric":
            jac = numeric_jacobian(f, states, fd_step)
        else:
            raise ValueError(f"unknown jacobian mode {jacobian_mode!r}")
        for (nid, kind, foot), Jb in zip(f.blocks, jac):
            col0, dim = layout[(nid, kind, foot)]
            Wj = W @ Jb
            data.append(Wj.ravel())
            ri.append(np.repeat(np.arange(row0, row0 + m), dim))
            ci.append(np.tile(np.arange(col0, col0 + dim), m))
        row0 += m
    J = scipy.sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))),
        shape=(rows, total)).tocsr()
    return J, r


def graph_cost(graph, values):
    """Sum of squared whitened residuals."""
    states = values.states
    total = 0.0
    for f in graph.factors:
        wr = f.sqrt_info @ f.residual(states)
        total += wr @ wr
    return total


# ------------------------------------------------------------------- optimizer

@dataclass
class LmConfig:
    lambda_init: float = 1e-4
    max_iterations: int = 100
    cost_tolerance: float = 1e-9
    gradient_tolerance: float = 1e-10
    jacobian_mode: str = "analytic"
    lambda_max: float = 1e16


@dataclass
class OptimizeResult:
    values: GraphValues
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str


def _solve_damped(H, g, lam):
    n = H.shape[0]
    damped = (H + lam * scipy.sparse.identity(n, format="csc")).tocsc()
    try:
        lu = scipy.sparse.linalg.splu(damped)
        step = lu.solve(-g)
    except RuntimeError:
        return None
    if not np.all(np.isfinite(step)):
        return None
    return step

def optimize(graph, values, config=None):
    """Levenberg-Marquardt to a local minimum of the whitened cost.

    Damping shrinks tenfold on accepted steps and grows tenfold on rejected
    ones or failed factorizations; terminates on relative cost decrease,
    vanishing gradient, or the iteration cap.
    """
    config = config or LmConfig()
    if not graph.anchored:
        raise NotAnchoredError("graph has no prior factor; gauge is free")
    layout = build_layout(values)
    current = values.copy()
    J, r = linearize(graph, current, layout, config.jacobian_mode)
    cost = float(r @ r)
    initial_cost = cost
    lam = config.lambda_init
    iterations = 0
    reason = "max_iterations"
    converged = False
    while iterations < config.max_iterations:
        iterations += 1
        H = (J.T @ J).tocsc()
        g = J.T @ r
        if np.linalg.norm(g, np.inf) < config.gradient_tolerance:
            converged, reason = True, "gradient"
            break
        step = _solve_damped(H, g, lam)
        boosts = 0
        while step is None and boosts < 40:
            lam *= 10.0
            boosts += 1
            step = _solve_damped(H, g, lam)
        if step is None:
            raise LinearSolveFailure("normal equations unsolvable at maximum damping")
        candidate = retract_values(current, step)
        new_cost = graph_cost(graph, candidate)
        if new_cost < cost:
            # relative decrease above cost 1, absolute below, so a run that
            # starts at numerically zero cost stops after one step
            decrease = (cost - new_cost) / max(cost, 1.0)
            current = candidate
            cost = new_cost
            lam = max(lam * 0.1, 1e-12)
            J, r = linearize(graph, current, layout, config.jacobian_mode)
            if decrease < config.cost_tolerance:
                converged, reason = True, "cost_decrease"
                break
        else:
            lam *= 10.0
            if lam > config.lambda_max:
                converged, reason = True, "damping_limit"
                break
    return OptimizeResult(current, cost, initial_cost, iterations, converged, reason)
