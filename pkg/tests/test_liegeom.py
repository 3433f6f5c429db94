import numpy as np
import pytest

from mmfp.errors import ShapeError, ValidationError
from mmfp.liegeom import hat, local_to_poses, pose, poses_to_local, se3_local_distance_sq, se3_traj_distance_sq, so3_exp, so3_log

from helpers import fd_gradient, max_rel_error, random_rotations

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_exp_identity_and_quarter_turn():
    assert np.array_equal(so3_exp(np.zeros(3)), np.eye(3))
    np.testing.assert_allclose(so3_exp([0.0, 0.0, np.pi / 2]), RZ90, atol=1e-15)


def test_exp_small_angle_taylor():
    w = np.array([3.0, -4.0, 12.0]) / 13.0 * 1e-9
    W = hat(w)
    np.testing.assert_allclose(so3_exp(w), np.eye(3) + W + 0.5 * W @ W, rtol=0, atol=1e-15)


def test_log_identity_and_quarter_turn():
    assert np.array_equal(so3_log(np.eye(3)), np.zeros(3))
    np.testing.assert_allclose(so3_log(RZ90), [0.0, 0.0, np.pi / 2], atol=1e-15)


def test_round_trip_random():
    R = random_rotations(np.random.default_rng(0), 2000)
    back = so3_exp(so3_log(R))
    assert np.abs(back - R).max() <= 1e-9


def test_round_trip_near_pi():
    rng = np.random.default_rng(1)
    axes = rng.normal(size=(500, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.pi - 10.0 ** rng.uniform(-12, -1, size=500)
    angles[:20] = np.pi
    R = so3_exp(axes * angles[:, None])
    w = so3_log(R)
    assert np.all(np.linalg.norm(w, axis=1) <= np.pi + 1e-12)
    assert np.abs(so3_exp(w) - R).max() <= 1e-9


def test_log_rejects_non_rotation():
    with pytest.raises(ValidationError):
        so3_log(np.diag([1.0, 1.0, 1.1]))
    with pytest.raises(ValidationError):
        so3_log(np.diag([1.0, 1.0, -1.0]))


def test_exp_is_orthonormal():
    R = so3_exp(np.random.default_rng(2).normal(scale=3.0, size=(100, 3)))
    np.testing.assert_allclose(np.swapaxes(R, 1, 2) @ R, np.broadcast_to(np.eye(3), R.shape), atol=1e-14)
    np.testing.assert_allclose(np.linalg.det(R), 1.0, atol=1e-14)


def test_distance_hand_cases():
    I = np.eye(4)[None]
    assert se3_traj_distance_sq(I, I) == 0.0
    moved = pose(np.eye(3), [1.0, 2.0, 2.0])[None]
    assert se3_traj_distance_sq(I, moved) == pytest.approx(9.0, abs=1e-15)
    turned = pose(RZ90, np.zeros(3))[None]
    assert abs(se3_traj_distance_sq(I, turned, lam=1.0) - (np.pi / 2) ** 2) <= 1e-12


def test_distance_symmetry_and_left_invariance():
    rng = np.random.default_rng(3)
    Ra, Rb = random_rotations(rng, 6), random_rotations(rng, 6)
    x = np.stack([pose(R, rng.normal(size=3)) for R in Ra])
    y = np.stack([pose(R, rng.normal(size=3)) for R in Rb])
    assert se3_traj_distance_sq(x, y) == se3_traj_distance_sq(y, x)
    G = random_rotations(rng, 1)[0]
    x2, y2 = x.copy(), y.copy()
    x2[:, :3, :3] = G @ x[:, :3, :3]
    y2[:, :3, :3] = G @ y[:, :3, :3]
    assert se3_traj_distance_sq(x2, y2) == pytest.approx(se3_traj_distance_sq(x, y), rel=1e-10)


def test_distance_length_mismatch():
    with pytest.raises(ShapeError):
        se3_traj_distance_sq(np.tile(np.eye(4), (2, 1, 1)), np.tile(np.eye(4), (3, 1, 1)))


def test_small_angle_matches_chordal():
    theta = 1e-3
    R = so3_exp([theta, 0.0, 0.0])
    d = se3_traj_distance_sq(np.eye(4)[None], pose(R, np.zeros(3))[None])
    chord = np.linalg.norm(R - np.eye(3)) ** 2 / 2.0
    assert abs(d - chord) <= theta**4


def test_local_round_trip():
    rng = np.random.default_rng(4)
    V = np.concatenate([rng.normal(size=(30, 3)), rng.normal(size=(30, 3))], axis=1)
    V[:, 3:] *= (np.pi - 0.1) / np.maximum(np.linalg.norm(V[:, 3:], axis=1, keepdims=True), np.pi)
    np.testing.assert_allclose(poses_to_local(local_to_poses(V)), V, atol=1e-9)


def test_local_distance_gradient():
    rng = np.random.default_rng(5)
    target = local_to_poses(rng.normal(size=(4, 6)))
    pred = rng.normal(size=(4, 6))
    val, g = se3_local_distance_sq(target, pred, lam=0.7)
    assert val == pytest.approx(se3_traj_distance_sq(target, local_to_poses(pred), lam=0.7), rel=1e-12)
    flat = pred.reshape(-1)
    num = fd_gradient(lambda: se3_local_distance_sq(target, flat.reshape(4, 6), 0.7)[0], flat)
    assert max_rel_error(g.reshape(-1), num) <= 1e-6
