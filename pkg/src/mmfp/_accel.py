"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``MMFP_NUMBA`` is not ``0``.
Both paths are always importable (``*_np`` / ``*_nb``) so they can be
cross-checked and benchmarked against each other.
"""

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MMFP_NUMBA", "1") != "0"

# Below these angles the closed forms lose precision; use series instead.
SMALL_ANGLE = 1e-6
JAC_SMALL_ANGLE = 1e-3
# Within this distance of pi, the log map extracts the axis from R + R^T.
NEAR_PI = 1e-6


def _njit(fn):
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _hat_np(w):
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def so3_exp_np(omega):
    omega = np.asarray(omega, dtype=np.float64).reshape(-1, 3)
    theta = np.sqrt(np.einsum("ij,ij->i", omega, omega))
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    th2 = theta * theta
    a = np.where(small, 1.0 - th2 / 6.0, np.sin(th) / th)
    half = np.sin(0.5 * th) / (0.5 * th)
    b = np.where(small, 0.5 - th2 / 24.0, 0.5 * half * half)
    W = _hat_np(omega)
    WW = W @ W
    return np.eye(3) + a[:, None, None] * W + b[:, None, None] * WW


def so3_log_np(R):
    R = np.asarray(R, dtype=np.float64).reshape(-1, 3, 3)
    c = np.clip(0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0), -1.0, 1.0)
    u = 0.5 * np.stack(
        [R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1
    )
    sn = np.sqrt(np.einsum("ij,ij->i", u, u))
    theta = np.arctan2(sn, c)
    out = np.empty_like(u)

    small = theta < SMALL_ANGLE
    near_pi = (np.pi - theta) < NEAR_PI
    mid = ~(small | near_pi)
    out[small] = u[small] * (1.0 + theta[small] ** 2 / 6.0)[:, None]
    out[mid] = u[mid] * (theta[mid] / sn[mid])[:, None]
    for i in np.flatnonzero(near_pi):
        S = 0.5 * (R[i] + R[i].T) - c[i] * np.eye(3)
        d = np.diag(S)
        k = int(np.argmax(d))
        axis = S[:, k] / np.sqrt(max(d[k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ u[i] < 0.0:
            axis = -axis
        out[i] = theta[i] * axis
    return out


def _right_jacobian_t_np(omega):
    theta = np.sqrt(np.einsum("ij,ij->i", omega, omega))
    small = theta < JAC_SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    th2 = theta * theta
    half = np.sin(0.5 * th) / (0.5 * th)
    b = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0, 0.5 * half * half)
    c = np.where(
        small,
        1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0,
        (th - np.sin(th)) / (th * th * th),
    )
    W = _hat_np(omega)
    return np.eye(3) + b[:, None, None] * W + c[:, None, None] * (W @ W)


def geodesic_sq_np(R_target, omega_hat):
    """Squared angle of ``R_target^T exp(omega_hat)`` and its gradient in ``omega_hat``."""
    R_target = np.asarray(R_target, dtype=np.float64).reshape(-1, 3, 3)
    omega_hat = np.asarray(omega_hat, dtype=np.float64).reshape(-1, 3)
    rel = np.swapaxes(R_target, 1, 2) @ so3_exp_np(omega_hat)
    e = so3_log_np(rel)
    sq = np.einsum("ij,ij->i", e, e)
    grad = 2.0 * np.einsum("nij,nj->ni", _right_jacobian_t_np(omega_hat), e)
    return sq, grad


def pairwise_sqdist_np(A, B):
    diff = A[:, None, :] - B[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def adam_update_np(params, grad, m, v, lr, beta1, beta2, eps, t):
    # lr * m_hat / (sqrt(v_hat) + eps) with the bias corrections folded into constants
    a = lr / (1.0 - beta1**t)
    isc = 1.0 / np.sqrt(1.0 - beta2**t)
    m_new = beta1 * m + (1.0 - beta1) * grad
    v_new = beta2 * v + (1.0 - beta2) * grad * grad
    return params - a * m_new / (np.sqrt(v_new) * isc + eps), m_new, v_new


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@_njit
def _exp_one(w, out):
    th2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
    theta = np.sqrt(th2)
    if theta < SMALL_ANGLE:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = np.sin(theta) / theta
        half = np.sin(0.5 * theta) / (0.5 * theta)
        b = 0.5 * half * half
    x, y, z = w[0], w[1], w[2]
    # W^2 = w w^T - |w|^2 I
    out[0, 0] = 1.0 + b * (x * x - th2)
    out[1, 1] = 1.0 + b * (y * y - th2)
    out[2, 2] = 1.0 + b * (z * z - th2)
    out[0, 1] = -a * z + b * x * y
    out[1, 0] = a * z + b * x * y
    out[0, 2] = a * y + b * x * z
    out[2, 0] = -a * y + b * x * z
    out[1, 2] = -a * x + b * y * z
    out[2, 1] = a * x + b * y * z


@_njit
def _log_one(R, out):
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    u0 = 0.5 * (R[2, 1] - R[1, 2])
    u1 = 0.5 * (R[0, 2] - R[2, 0])
    u2 = 0.5 * (R[1, 0] - R[0, 1])
    sn = np.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
    theta = np.arctan2(sn, c)
    if theta < SMALL_ANGLE:
        f = 1.0 + theta * theta / 6.0
        out[0] = u0 * f
        out[1] = u1 * f
        out[2] = u2 * f
    elif np.pi - theta < NEAR_PI:
        k = 0
        dk = R[0, 0] - c
        for j in range(1, 3):
            if R[j, j] - c > dk:
                dk = R[j, j] - c
                k = j
        if dk < 1e-300:
            dk = 1e-300
        inv = 1.0 / np.sqrt(dk)
        a0 = 0.5 * (R[0, k] + R[k, 0]) * inv
        a1 = 0.5 * (R[1, k] + R[k, 1]) * inv
        a2 = 0.5 * (R[2, k] + R[k, 2]) * inv
        if k == 0:
            a0 = (R[0, 0] - c) * inv
        elif k == 1:
            a1 = (R[1, 1] - c) * inv
        else:
            a2 = (R[2, 2] - c) * inv
        nrm = np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
        a0 /= nrm
        a1 /= nrm
        a2 /= nrm
        if a0 * u0 + a1 * u1 + a2 * u2 < 0.0:
            a0, a1, a2 = -a0, -a1, -a2
        out[0] = theta * a0
        out[1] = theta * a1
        out[2] = theta * a2
    else:
        f = theta / sn
        out[0] = u0 * f
        out[1] = u1 * f
        out[2] = u2 * f


@_njit
def so3_exp_nb(omega):
    n = omega.shape[0]
    out = np.empty((n, 3, 3))
    for i in range(n):
        _exp_one(omega[i], out[i])
    return out


@_njit
def so3_log_nb(R):
    n = R.shape[0]
    out = np.empty((n, 3))
    for i in range(n):
        _log_one(R[i], out[i])
    return out


@_njit
def geodesic_sq_nb(R_target, omega_hat):
    n = omega_hat.shape[0]
    sq = np.empty(n)
    grad = np.empty((n, 3))
    E = np.empty((3, 3))
    rel = np.empty((3, 3))
    e = np.empty(3)
    for i in range(n):
        _exp_one(omega_hat[i], E)
        for r in range(3):
            for s in range(3):
                acc = 0.0
                for k in range(3):
                    acc += R_target[i, k, r] * E[k, s]
                rel[r, s] = acc
        _log_one(rel, e)
        sq[i] = e[0] * e[0] + e[1] * e[1] + e[2] * e[2]
        x, y, z = omega_hat[i, 0], omega_hat[i, 1], omega_hat[i, 2]
        th2 = x * x + y * y + z * z
        theta = np.sqrt(th2)
        if theta < JAC_SMALL_ANGLE:
            b = 0.5 - th2 / 24.0 + th2 * th2 / 720.0
            c = 1.0 / 6.0 - th2 / 120.0 + th2 * th2 / 5040.0
        else:
            half = np.sin(0.5 * theta) / (0.5 * theta)
            b = 0.5 * half * half
            c = (theta - np.sin(theta)) / (th2 * theta)
        # J_r^T e = e + b (w x e) + c w x (w x e)
        wxe0 = y * e[2] - z * e[1]
        wxe1 = z * e[0] - x * e[2]
        wxe2 = x * e[1] - y * e[0]
        ww0 = y * wxe2 - z * wxe1
        ww1 = z * wxe0 - x * wxe2
        ww2 = x * wxe1 - y * wxe0
        grad[i, 0] = 2.0 * (e[0] + b * wxe0 + c * ww0)
        grad[i, 1] = 2.0 * (e[1] + b * wxe1 + c * ww1)
        grad[i, 2] = 2.0 * (e[2] + b * wxe2 + c * ww2)
    return sq, grad


@_njit
def pairwise_sqdist_nb(A, B):
    na, nb, d = A.shape[0], B.shape[0], A.shape[1]
    out = np.empty((na, nb))
    for i in range(na):
        for j in range(nb):
            acc = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                acc += t * t
            out[i, j] = acc
    return out


@_njit
def adam_update_nb(params, grad, m, v, lr, beta1, beta2, eps, t):
    n = params.size
    p_new = np.empty(n)
    m_new = np.empty(n)
    v_new = np.empty(n)
    a = lr / (1.0 - beta1**t)
    isc = 1.0 / np.sqrt(1.0 - beta2**t)
    b1c = 1.0 - beta1
    b2c = 1.0 - beta2
    for i in range(n):
        gi = grad[i]
        mi = beta1 * m[i] + b1c * gi
        vi = beta2 * v[i] + b2c * gi * gi
        m_new[i] = mi
        v_new[i] = vi
        p_new[i] = params[i] - a * mi / (np.sqrt(vi) * isc + eps)
    return p_new, m_new, v_new


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _c(a, shape):
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(shape))


def so3_exp_batch(omega):
    omega = _c(omega, (-1, 3))
    return so3_exp_nb(omega) if USE_NUMBA else so3_exp_np(omega)


def so3_log_batch(R):
    R = _c(R, (-1, 3, 3))
    return so3_log_nb(R) if USE_NUMBA else so3_log_np(R)


def geodesic_sq(R_target, omega_hat):
    R_target = _c(R_target, (-1, 3, 3))
    omega_hat = _c(omega_hat, (-1, 3))
    if USE_NUMBA:
        return geodesic_sq_nb(R_target, omega_hat)
    return geodesic_sq_np(R_target, omega_hat)


def pairwise_sqdist(A, B):
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    return pairwise_sqdist_nb(A, B) if USE_NUMBA else pairwise_sqdist_np(A, B)


def adam_update(params, grad, m, v, lr, beta1, beta2, eps, t):
    """Bias-corrected Adam step; returns ``(params, first_moment, second_moment)``."""
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (params, grad, m, v)]
    if USE_NUMBA:
        return adam_update_nb(*args, float(lr), float(beta1), float(beta2), float(eps), int(t))
    return adam_update_np(*args, lr, beta1, beta2, eps, t)
