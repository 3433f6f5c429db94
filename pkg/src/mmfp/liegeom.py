"""SO(3)/SE(3) exponential coordinates and pose-trajectory distances.

Pose sequences are ``(T, 4, 4)`` homogeneous matrices.  The local-coordinate
form of a pose is the 6-vector ``[tx, ty, tz, wx, wy, wz]``.
"""

import numpy as np

from . import _accel
from .errors import ShapeError, ValidationError

ORTHO_TOL = 1e-6


def hat(w):
    w = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(omega):
    """Rodrigues' formula; accepts a 3-vector or a ``(..., 3)`` batch."""
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape[-1:] != (3,):
        raise ShapeError(f"omega must end in dimension 3, got {omega.shape}")
    out = _accel.so3_exp_batch(omega)
    return out.reshape(omega.shape[:-1] + (3, 3))


def check_rotation(R, tol=ORTHO_TOL):
    R = np.asarray(R, dtype=np.float64)
    if R.shape[-2:] != (3, 3):
        raise ShapeError(f"rotation must end in 3x3, got {R.shape}")
    Rb = R.reshape(-1, 3, 3)
    err = np.abs(np.swapaxes(Rb, 1, 2) @ Rb - np.eye(3)).max(initial=0.0)
    if not err <= tol:
        raise ValidationError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3g})")
    if np.any(np.linalg.det(Rb) <= 0.0):
        raise ValidationError("rotation has non-positive determinant")
    return R


def so3_log(R):
    """Principal-branch log (norm <= pi) of a rotation or ``(..., 3, 3)`` batch."""
    R = check_rotation(R)
    out = _accel.so3_log_batch(R)
    return out.reshape(R.shape[:-2] + (3,))


def orthonormalize(R):
    """Nearest rotation matrix (polar projection through the SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.ones(U.shape[:-1])
    D[..., -1] = np.sign(np.linalg.det(U @ Vt))
    return (U * D[..., None, :]) @ Vt


def pose(R, p):
    out = np.eye(4)
    out[:3, :3] = R
    out[:3, 3] = p
    return out


def poses_to_local(X):
    """``(T, 4, 4)`` poses -> ``(T, 6)`` translation + exponential coordinates."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3 or X.shape[1:] != (4, 4):
        raise ShapeError(f"pose sequence must be (T, 4, 4), got {X.shape}")
    return np.concatenate([X[:, :3, 3], so3_log(X[:, :3, :3])], axis=1)


def local_to_poses(V):
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[1] != 6:
        raise ShapeError(f"local coordinates must be (T, 6), got {V.shape}")
    out = np.zeros((V.shape[0], 4, 4))
    out[:, :3, :3] = so3_exp(V[:, 3:])
    out[:, :3, 3] = V[:, :3]
    out[:, 3, 3] = 1.0
    return out


def se3_traj_distance_sq(x, y, lam=1.0):
    """Sum over time of squared translation distance plus ``lam`` times squared
    geodesic rotation angle between two ``(T, 4, 4)`` pose sequences."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 3 or x.shape[1:] != (4, 4):
        raise ShapeError(f"pose sequences must share shape (T, 4, 4): {x.shape} vs {y.shape}")
    dp = x[:, :3, 3] - y[:, :3, 3]
    # R_x^T R_y and R_y^T R_x are inverses; their log norms agree, so the
    # result is symmetric by construction only if we pick one canonical order.
    a, b = (x, y) if x.tobytes() <= y.tobytes() else (y, x)
    rel = np.swapaxes(a[:, :3, :3], 1, 2) @ b[:, :3, :3]
    w = _accel.so3_log_batch(rel)
    return float(np.sum(dp * dp) + lam * np.sum(w * w))


def se3_local_distance_sq(target_poses, pred_local, lam=1.0):
    """Squared distance between poses and a prediction in local coordinates.

    Returns ``(value, grad)`` with ``grad`` the derivative with respect to
    ``pred_local`` (shape ``(T, 6)``).  The rotation gradient is
    ``2 J_r(w)^T log(R^T exp(w))``.
    """
    pred_local = np.asarray(pred_local, dtype=np.float64)
    dp = pred_local[:, :3] - target_poses[:, :3, 3]
    sq, g_rot = _accel.geodesic_sq(target_poses[:, :3, :3], pred_local[:, 3:])
    grad = np.empty_like(pred_local)
    grad[:, :3] = 2.0 * dp
    grad[:, 3:] = lam * g_rot
    return float(np.sum(dp * dp) + lam * np.sum(sq)), grad
