import numpy as np
import pytest
from numpy.testing import assert_allclose

from legsmooth.manifold import (
    AngleAtPiError,
    Pose,
    exp_so3,
    hat,
    log_so3,
    orthonormalize,
    random_rotation,
    retract_pose,
    right_jacobian,
    right_jacobian_inv,
    sample_rotation_noise,
    vee,
)


def exp_series(phi, terms=40):
    # independent oracle: plain matrix power series, no trigonometry
    W = hat(phi)
    acc = np.eye(3)
    term = np.eye(3)
    for k in range(1, terms):
        term = term @ W / k
        acc = acc + term
    return acc


def test_hat_vee_roundtrip():
    w = np.array([0.3, -1.2, 2.5])
    W = hat(w)
    assert_allclose(W, -W.T, atol=0)
    assert_allclose(vee(W), w, atol=0)
    assert_allclose(W @ w, np.zeros(3), atol=1e-15)


def test_hat_is_cross_product():
    rng = np.random.default_rng(0)
    for _ in range(10):
        a, b = rng.standard_normal(3), rng.standard_normal(3)
        assert_allclose(hat(a) @ b, np.cross(a, b), atol=1e-15)


def test_exp_identity():
    assert_allclose(exp_so3(np.zeros(3)), np.eye(3), atol=0)


def test_exp_quarter_turn_x():
    R = exp_so3(np.array([np.pi / 2, 0.0, 0.0]))
    expected = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    assert_allclose(R, expected, atol=1e-15)


def test_exp_matches_power_series():
    rng = np.random.default_rng(1)
    for _ in range(50):
        phi = rng.uniform(-2.0, 2.0, 3)
        assert_allclose(exp_so3(phi), exp_series(phi), atol=1e-13)


def test_exp_small_angle_branch():
    for scale in (1e-7, 1e-9, 1e-12):
        phi = np.array([1.0, -2.0, 0.5]) * scale
        assert_allclose(exp_so3(phi), exp_series(phi), atol=1e-18)


def test_log_identity():
    assert_allclose(log_so3(np.eye(3)), np.zeros(3), atol=0)


def test_log_planar_oracle():
    # z-rotation by 3.0 rad written out directly from cos/sin
    c, s = np.cos(3.0), np.sin(3.0)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    assert_allclose(log_so3(R), [0.0, 0.0, 3.0], atol=1e-12)


def test_log_raises_at_pi():
    R = np.diag([1.0, -1.0, -1.0])  # half turn about x
    with pytest.raises(AngleAtPiError):
        log_so3(R)


def test_roundtrip_random():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        phi = axis * rng.uniform(0.0, np.pi - 0.1)
        assert np.linalg.norm(log_so3(exp_so3(phi)) - phi) < 1e-9


def test_adjoint_identity():
    rng = np.random.default_rng(3)
    for _ in range(100):
        R = random_rotation(rng)
        phi = rng.uniform(-2.0, 2.0, 3)
        lhs = exp_so3(phi) @ R
        rhs = R @ exp_so3(R.T @ phi)
        assert np.linalg.norm(lhs - rhs) < 1e-9


def test_right_jacobian_at_zero():
    assert_allclose(right_jacobian(np.zeros(3)), np.eye(3), atol=0)


def test_right_jacobian_vs_central_differences():
    rng = np.random.default_rng(4)
    h = 1e-5
    for _ in range(50):
        phi = rng.uniform(-1.0, 1.0, 3) * rng.uniform(0.1, 2.5)
        if np.linalg.norm(phi) > np.pi - 0.1:
            continue
        J = right_jacobian(phi)
        R = exp_so3(phi)
        fd = np.zeros((3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            plus = log_so3(R.T @ exp_so3(phi + e))
            minus = log_so3(R.T @ exp_so3(phi - e))
            fd[:, i] = (plus - minus) / (2.0 * h)
        assert np.linalg.norm(fd - J) / np.linalg.norm(J) < 1e-5


def test_right_jacobian_inverse_consistent():
    rng = np.random.default_rng(5)
    for _ in range(100):
        phi = rng.standard_normal(3)
        phi *= rng.uniform(0.0, 3.0) / max(np.linalg.norm(phi), 1e-12)
        assert_allclose(right_jacobian(phi) @ right_jacobian_inv(phi), np.eye(3), atol=1e-10)


def test_right_jacobian_invertible_below_pi():
    rng = np.random.default_rng(6)
    for _ in range(200):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        phi = axis * rng.uniform(0.0, np.pi - 1e-3)
        assert abs(np.linalg.det(right_jacobian(phi))) > 1e-6


def test_first_order_increment_error_decays_quadratically():
    # exp(phi + d) ~ exp(phi) exp(J_r d): halving d cuts the defect ~4x
    rng = np.random.default_rng(7)
    phi = rng.uniform(-1.0, 1.0, 3)
    d0 = rng.uniform(-1.0, 1.0, 3)
    errs = []
    for scale in (1e-3, 5e-4, 2.5e-4):
        d = d0 * scale
        lhs = exp_so3(phi + d)
        rhs = exp_so3(phi) @ exp_so3(right_jacobian(phi) @ d)
        errs.append(np.linalg.norm(lhs - rhs))
    assert errs[0] / errs[1] > 3.5
    assert errs[1] / errs[2] > 3.5


def test_retract_pose_zero():
    pose = Pose(random_rotation(np.random.default_rng(8)), np.array([1.0, 2.0, 3.0]))
    out = retract_pose(pose, np.zeros(6))
    assert_allclose(out.rotation, pose.rotation, atol=0)
    assert_allclose(out.translation, pose.translation, atol=0)


def test_retract_pose_pure_translation_at_identity():
    out = retract_pose(Pose(np.eye(3), np.zeros(3)), np.array([0, 0, 0, 1.0, 2.0, 3.0]))
    assert_allclose(out.rotation, np.eye(3), atol=0)
    assert_allclose(out.translation, [1.0, 2.0, 3.0], atol=0)


def test_retract_pose_translation_is_body_frame():
    quarter_z = exp_so3(np.array([0.0, 0.0, np.pi / 2]))
    out = retract_pose(Pose(quarter_z, np.zeros(3)), np.array([0, 0, 0, 1.0, 0.0, 0.0]))
    assert_allclose(out.translation, [0.0, 1.0, 0.0], atol=1e-15)


def test_retract_pose_rejects_bad_shape():
    with pytest.raises(ValueError):
        retract_pose(Pose(np.eye(3), np.zeros(3)), np.zeros(5))


def test_sample_rotation_noise_zero_cov():
    assert_allclose(sample_rotation_noise(np.zeros((3, 3)), 0), np.eye(3), atol=0)


def test_sample_rotation_noise_deterministic():
    cov = np.diag([0.01, 0.02, 0.03])
    a = sample_rotation_noise(cov, np.random.default_rng(9))
    b = sample_rotation_noise(cov, np.random.default_rng(9))
    assert_allclose(a, b, atol=0)


def test_sample_rotation_noise_covariance():
    sigma = 0.05
    cov = sigma * sigma * np.eye(3)
    rng = np.random.default_rng(10)
    n = 100_000
    samples = np.empty((n, 3))
    for k in range(n):
        samples[k] = log_so3(sample_rotation_noise(cov, rng))
    est = samples.T @ samples / n
    assert np.linalg.norm(est - cov) / np.linalg.norm(cov) < 0.05


def test_orthonormalize_restores_rotation():
    rng = np.random.default_rng(11)
    R = random_rotation(rng)
    noisy = R + 1e-6 * rng.standard_normal((3, 3))
    fixed = orthonormalize(noisy)
    assert np.linalg.norm(fixed @ fixed.T - np.eye(3)) < 1e-14
    assert np.linalg.norm(fixed - R) < 1e-5
