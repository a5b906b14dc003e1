"""Acceptance gate: nine release criteria, one verdict line each.

Each test prints "criterion N: PASS/FAIL - detail" so a full run gives a
one-line-per-criterion report (use pytest -rA to see the lines for passing
tests too). Tolerances and sample counts are part of the gate definition;
do not loosen them to make a run green.
"""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation as ScipyRot

from legsmooth.cli import main
from legsmooth.graph import (BiasRandomWalkFactor, ContactPose, FactorGraph,
                             FkFactor, FkMeasurement, GraphValues, ImuFactor,
                             NavState, PointContactFactor, PriorFactor,
                             RelativePoseFactor, RigidContactFactor, add_node,
                             numeric_jacobian)
from legsmooth.kinematics import (EncoderReading, KinematicChain, LinkParam,
                                  demo_chain, fk_noise_system,
                                  forward_kinematics, relative_rotation,
                                  offset_rotation)
from legsmooth.manifold import exp_so3, log_so3, random_rotation, right_jacobian
from legsmooth.pipeline import (EstimatorConfig, PRESETS,
                                prepare_measurements, run_estimate)
from legsmooth.preintegration import (GRAVITY, ContactDelta, ImuSample,
                                      imu_preintegrate,
                                      point_contact_preintegrate,
                                      rigid_contact_preintegrate)
from legsmooth.sim import SimConfig, corrupt, generate_truth


def _verdict(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(line, flush=True)
    return line


# --------------------------------------------------------------- criterion 1

def test_criterion_1_manifold_primitives():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    n = 10_000
    phi = rng.standard_normal((n, 3))
    phi *= (rng.uniform(0.0, np.pi - 0.1, n) /
            np.linalg.norm(phi, axis=1))[:, None]

    worst_round = 0.0
    worst_adjoint = 0.0
    for p in phi:
        R = exp_so3(p)
        worst_round = max(worst_round, float(np.linalg.norm(log_so3(R) - p)))
    for k, p in enumerate(phi[:2000]):
        W = exp_so3(p)
        R = exp_so3(phi[(k + 7) % n])
        worst_adjoint = max(worst_adjoint, float(np.linalg.norm(
            R @ W @ R.T - exp_so3(R @ p))))

    h = 1e-6
    worst_jr = 0.0
    for p in phi[:300]:
        J = right_jacobian(p)
        base = exp_so3(p)
        num = np.empty((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            num[:, i] = (log_so3(base.T @ exp_so3(p + e)) -
                         log_so3(base.T @ exp_so3(p - e))) / (2 * h)
        worst_jr = max(worst_jr, float(np.linalg.norm(J - num) /
                                       np.linalg.norm(num)))
    elapsed = time.perf_counter() - start

    ok = worst_round < 1e-9 and worst_adjoint < 1e-9 and worst_jr < 1e-5 \
        and elapsed < 5.0
    line = _verdict(1, ok, f"roundtrip {worst_round:.2e}, adjoint "
                    f"{worst_adjoint:.2e}, Jr {worst_jr:.2e}, {elapsed:.1f}s")
    assert ok, line


# --------------------------------------------------------------- criterion 2

def _random_chain(rng, n_links):
    links = []
    for k in range(n_links):
        axis = None if k == n_links - 1 else ("x", "y", "z")[rng.integers(0, 3)]
        links.append(LinkParam(ScipyRot.random(random_state=rng).as_matrix(),
                               rng.uniform(-0.5, 0.5, 3), axis))
    return KinematicChain(tuple(links))


def test_criterion_2_factored_offset_rotation():
    rng = np.random.default_rng(102)
    worst = 0.0
    for _ in range(1000):
        chain = _random_chain(rng, int(rng.integers(2, 8)))
        n = chain.joint_count
        alpha = rng.uniform(-1.5, 1.5, n)
        beta = rng.uniform(-1.0, 1.0, n)
        frames = len(chain.links) + 1
        i = int(rng.integers(1, frames + 1))
        j = int(rng.integers(i, frames + 1))
        diff = offset_rotation(chain, alpha, beta, i, j) - \
            relative_rotation(chain, alpha + beta, i, j)
        worst = max(worst, float(np.linalg.norm(diff)))
    ok = worst < 1e-12
    line = _verdict(2, ok, f"factored vs direct, max norm {worst:.2e} "
                    "over 1000 random chains")
    assert ok, line


# --------------------------------------------------------------- criterion 3

def test_criterion_3_fk_linearization_monte_carlo():
    chain = demo_chain()
    alpha = np.array([0.35, 0.8])
    sigma = 0.00873
    Q, S = fk_noise_system(chain, alpha)
    cov_rot = sigma**2 * Q @ Q.T
    cov_pos = sigma**2 * S @ S.T

    rng = np.random.default_rng(103)
    n = 10_000
    R0, p0 = forward_kinematics(chain, alpha)
    rot_err = np.empty((n, 3))
    pos_err = np.empty((n, 3))
    for k in range(n):
        eta = rng.normal(0.0, sigma, chain.joint_count)
        Rm, pm = forward_kinematics(chain, alpha - eta)
        rot_err[k] = -log_so3(R0.T @ Rm)
        pos_err[k] = p0 - pm
    est_rot = rot_err.T @ rot_err / n
    est_pos = pos_err.T @ pos_err / n
    err_rot = np.linalg.norm(est_rot - cov_rot) / np.linalg.norm(cov_rot)
    err_pos = np.linalg.norm(est_pos - cov_pos) / np.linalg.norm(cov_pos)
    ok = err_rot < 0.10 and err_pos < 0.10
    line = _verdict(3, ok, f"MC vs linearized covariance: rotation "
                    f"{err_rot:.3f}, position {err_pos:.3f} (limit 0.10)")
    assert ok, line


# --------------------------------------------------------------- criterion 4

def test_criterion_4_rigid_contact_covariance():
    sw, sv = 0.05, 0.1
    cov_w, cov_v = sw**2 * np.eye(3), sv**2 * np.eye(3)
    closed = rigid_contact_preintegrate(0.0, 0.4, cov_w, cov_v)
    iterative = rigid_contact_preintegrate(0.0, 0.4, cov_w, cov_v,
                                           dt_samples=[0.004] * 100)
    exact = float(np.max(np.abs(closed.covariance - iterative.covariance)))

    span, dt, trials = 0.5, 0.005, 10_000
    rng = np.random.default_rng(104)
    C = ScipyRot.identity(trials)
    d = np.zeros((trials, 3))
    for _ in range(round(span / dt)):
        d += C.apply(rng.normal(0.0, sv / np.sqrt(dt), (trials, 3)) * dt)
        C = C * ScipyRot.from_rotvec(rng.normal(0.0, sw / np.sqrt(dt),
                                                (trials, 3)) * dt)
    x = np.hstack([C.as_rotvec(), d])
    est = x.T @ x / trials
    ref = rigid_contact_preintegrate(0.0, span, cov_w, cov_v).covariance
    mc = float(np.linalg.norm(est - ref) / np.linalg.norm(ref))

    ok = exact < 1e-12 and mc < 0.10
    line = _verdict(4, ok, f"closed vs iterative {exact:.2e}, "
                    f"MC relative {mc:.3f} (limit 0.10)")
    assert ok, line


# --------------------------------------------------------------- criterion 5

def test_criterion_5_point_contact_recursion():
    rng = np.random.default_rng(105)
    chain = demo_chain()
    dt = 0.01
    times = np.arange(60) * dt
    imu = [ImuSample(t, rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
           for t in times]
    enc = [EncoderReading(t, rng.uniform(-0.8, 0.8, chain.joint_count))
           for t in times]
    t_end = times[-1] + dt
    R_i, C_i = random_rotation(rng), random_rotation(rng)
    bg = np.array([0.01, -0.02, 0.005])
    cov_step = np.array([[0.02, 0.005, 0.0],
                         [0.005, 0.01, 0.001],
                         [0.0, 0.001, 0.03]])
    delta = point_contact_preintegrate(imu, enc, t_end, chain, R_i, C_i,
                                       bg, cov_step)

    # oracle: every step's noise-to-slip map rebuilt from scratch
    bounds = list(times[1:]) + [t_end]
    total = np.zeros((3, 3))
    for k in range(len(imu)):
        step = bounds[k] - times[k]
        if k == 0:
            B = R_i.T @ C_i * step
        else:
            acc = np.eye(3)
            for m in range(k):
                acc = acc @ exp_so3((imu[m].gyro - bg) * (bounds[m] - times[m]))
            fk_r, _ = forward_kinematics(chain, enc[k].angles)
            B = acc @ fk_r * step
        total += B @ cov_step @ B.T
    oracle = float(np.linalg.norm(delta.covariance - total))

    G = random_rotation(rng)
    iso = 0.1**2 * np.eye(3)
    a = point_contact_preintegrate(imu, enc, t_end, chain, R_i, C_i,
                                   np.zeros(3), iso)
    b = point_contact_preintegrate(imu, enc, t_end, chain, G @ R_i, G @ C_i,
                                   np.zeros(3), iso)
    invariance = float(np.linalg.norm(a.covariance - b.covariance))

    ok = oracle < 1e-12 and invariance < 1e-12
    line = _verdict(5, ok, f"summation oracle {oracle:.2e}, global-rotation "
                    f"invariance {invariance:.2e}")
    assert ok, line


# --------------------------------------------------------------- criterion 6

def _spd(rng, n, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n))


def _random_state(rng, feet=(0,)):
    contacts = {f: ContactPose(random_rotation(rng), rng.standard_normal(3))
                for f in feet}
    return NavState(random_rotation(rng), rng.standard_normal(3),
                    rng.standard_normal(3), 0.05 * rng.standard_normal(6),
                    contacts)


def _random_imu_delta(rng, bias_lin, duration=0.3, rate=100.0):
    n = int(duration * rate)
    samples = [ImuSample(k / rate, 2.0 * rng.standard_normal(3) - GRAVITY,
                         1.5 * rng.standard_normal(3)) for k in range(n)]
    return imu_preintegrate(samples, n / rate, bias_lin, 1e-4, 1e-3)


def _factor_zoo(rng):
    bias = 0.02 * rng.standard_normal(6)
    values = GraphValues()
    add_node(values, 0.0, _random_state(rng, feet=(0, 1)))
    add_node(values, 0.3, _random_state(rng, feet=(0,)))
    add_node(values, 0.6, _random_state(rng, feet=(0, 1)))
    chain = demo_chain()
    fk_r, fk_p = forward_kinematics(chain, rng.uniform(-1, 1, 2))
    factors = [
        PriorFactor(0, random_rotation(rng), rng.standard_normal(3),
                    rng.standard_normal(3), 0.01 * rng.standard_normal(6),
                    _spd(rng, 15, 0.1)),
        ImuFactor(0, 1, _random_imu_delta(rng, bias)),
        BiasRandomWalkFactor(0, 1, _spd(rng, 6, 1e-4)),
        FkFactor(1, 0, FkMeasurement(fk_r, fk_p, _spd(rng, 6, 1e-3))),
        RigidContactFactor(0, 2, ContactDelta("rigid", 1, 0.0, 0.6,
                                              _spd(rng, 6, 1e-2))),
        PointContactFactor(0, 1, ContactDelta("point", 0, 0.0, 0.3,
                                              _spd(rng, 3, 1e-2))),
        RelativePoseFactor(0, 2, random_rotation(rng), rng.standard_normal(3),
                           _spd(rng, 6, 1e-2)),
    ]
    return factors, values


def test_criterion_6_jacobian_gate():
    rng = np.random.default_rng(106)
    worst_fd = 0.0
    worst_richardson = 0.0
    for trial in range(100):
        factors, values = _factor_zoo(rng)
        for f in factors:
            analytic = f.jacobian(values.states)
            numeric = numeric_jacobian(f, values.states)
            for Ja, Jn in zip(analytic, numeric):
                err = np.linalg.norm(Ja - Jn) / max(1.0, np.linalg.norm(Jn))
                worst_fd = max(worst_fd, float(err))
        if trial < 10:
            for f in factors:
                if not isinstance(f, (ImuFactor, FkFactor)):
                    continue
                coarse = numeric_jacobian(f, values.states, step=1e-5)
                fine = numeric_jacobian(f, values.states, step=5e-6)
                for Jc, Jf in zip(coarse, fine):
                    err = np.linalg.norm(Jc - Jf) / max(1.0, np.linalg.norm(Jf))
                    worst_richardson = max(worst_richardson, float(err))
    ok = worst_fd < 1e-5 and worst_richardson < 1e-4
    line = _verdict(6, ok, f"analytic vs central differences {worst_fd:.2e} "
                    f"over 100 states, step halving {worst_richardson:.2e}")
    assert ok, line


# --------------------------------------------------------------- criterion 7

def test_criterion_7_zero_noise_end_to_end():
    start = time.perf_counter()
    sim = SimConfig(duration=60.0)
    clean = generate_truth(sim)
    out = run_estimate(clean, sim, EstimatorConfig(), "All")
    elapsed = time.perf_counter() - start
    trans = max(r.translation for r in out.errors)
    rot = max(r.rotation for r in out.errors)
    ok = trans < 1e-6 and rot < 1e-8 and elapsed < 60.0
    line = _verdict(7, ok, f"noiseless recovery: translation {trans:.2e} m, "
                    f"rotation {rot:.2e} rad, {elapsed:.1f}s")
    assert ok, line


# --------------------------------------------------------------- criterion 8

@pytest.fixture(scope="module")
def benchmark_medians():
    start = time.perf_counter()
    sim = SimConfig(duration=60.0)
    est = EstimatorConfig()
    clean = generate_truth(sim)
    pooled = {p: ([], []) for p in PRESETS}
    for i in range(20):
        noisy = corrupt(clean, sim.noise, sim.seed + i)
        meas = prepare_measurements(noisy, sim, est)
        for preset in PRESETS:
            out = run_estimate(noisy, sim, est, preset, meas)
            pooled[preset][0].extend(r.translation for r in out.errors)
            pooled[preset][1].extend(r.rotation for r in out.errors)
    medians = {p: (float(np.median(pooled[p][0])),
                   float(np.median(pooled[p][1]))) for p in PRESETS}
    return medians, time.perf_counter() - start


def test_criterion_8_cross_preset_ordering(benchmark_medians):
    med, elapsed = benchmark_medians
    trans = {p: med[p][0] for p in PRESETS}
    rot = {p: med[p][1] for p in PRESETS}
    clauses = {
        "trans All<=ICF": trans["All"] <= trans["ImuContactFk"],
        "trans ICF<=ImuOnly": trans["ImuContactFk"] <= trans["ImuOnly"],
        "trans All<=ImuLc": trans["All"] <= trans["ImuLc"],
        "rot All<=ICF": rot["All"] <= rot["ImuContactFk"],
        "rot ICF<=ImuOnly": rot["ImuContactFk"] <= rot["ImuOnly"],
        "rot All<=ImuLc": rot["All"] <= rot["ImuLc"],
        "trans ICF 2x better": trans["ImuContactFk"] * 2.0 <= trans["ImuOnly"],
        "runtime<10min": elapsed < 600.0,
    }
    summary = "; ".join(f"{p}: {trans[p]*1e3:.3f}mm/{rot[p]*1e3:.4f}mrad"
                        for p in PRESETS)
    failed = [name for name, passed in clauses.items() if not passed]
    ok = not failed
    line = _verdict(8, ok, f"{summary}; {elapsed:.0f}s"
                    + ("" if ok else f"; failed: {', '.join(failed)}"))
    assert ok, line


# --------------------------------------------------------------- criterion 9

def test_criterion_9_determinism(tmp_path):
    paths = []
    for tag in ("a", "b"):
        data = tmp_path / f"walk_{tag}.txt"
        out = tmp_path / f"run_{tag}"
        assert main(["generate", "--output", str(data),
                     "--duration", "8", "--seed", "5"]) == 0
        assert main(["run", "--dataset", str(data), "--preset", "All",
                     "--out", str(out)]) == 0
        paths.append((data, out))
    (data_a, out_a), (data_b, out_b) = paths
    same = data_a.read_bytes() == data_b.read_bytes()
    files = ("trajectory.txt", "errors.txt", "cdf_trans.txt", "cdf_rot.txt",
             "summary.txt")
    same = same and all((out_a / f).read_bytes() == (out_b / f).read_bytes()
                        for f in files)
    ok = bool(same)
    line = _verdict(9, ok, "dataset and all run outputs byte-identical "
                    "across repeated seeded runs")
    assert ok, line
