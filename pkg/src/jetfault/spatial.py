"""Small SO(3) / spatial-vector helpers.

Spatial vectors are stored angular-first: a twist is ``(omega, v)`` and a
wrench is ``(moment, force)``.
"""

import numpy as np


def skew(v):
    """Matrix S(v) such that S(v) @ w == cross(v, w)."""
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def cross(a, b):
    """Cross product over the last axis; much cheaper than np.cross for tiny arrays."""
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1], axis=-1)


def cross3(a, b):
    """Cross product of two 3-vectors (scalar arithmetic, fastest for single vectors)."""
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def vee(S):
    return np.array([S[2, 1], S[0, 2], S[1, 0]])


def rodrigues(axis, angle):
    """Rotation of ``angle`` rad about the unit vector ``axis``."""
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def exp_so3(w):
    """Exponential map of a rotation vector."""
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    if theta < 1e-12:
        K = skew(w)
        return np.eye(3) + K + 0.5 * (K @ K)
    return rodrigues(w / theta, theta)


def log_so3(R):
    """Rotation vector of R (inverse of exp_so3 on angles below pi)."""
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(c)
    w = vee(R - R.T)
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: pick the axis from the symmetric part
        B = 0.5 * (R + np.eye(3))
        k = np.argmax(np.diag(B))
        axis = B[:, k] / np.sqrt(B[k, k])
        return theta * axis / np.linalg.norm(axis)
    return theta / (2.0 * np.sin(theta)) * w


def orthonormalize(R):
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_rot(rpy):
    """Z-Y-X convention: R = Rz(yaw) Ry(pitch) Rx(roll)."""
    return rot_z(rpy[2]) @ rot_y(rpy[1]) @ rot_x(rpy[0])


def rot_to_rpy(R):
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


def motion_cross(V):
    """6x6 operator (V x) acting on motion vectors."""
    w, v = V[:3], V[3:]
    X = np.zeros((6, 6))
    X[:3, :3] = skew(w)
    X[3:, 3:] = skew(w)
    X[3:, :3] = skew(v)
    return X


def force_cross(V):
    """6x6 operator (V x*) acting on force vectors; equals -motion_cross(V).T."""
    return -motion_cross(V).T


def force_cross_bar(h):
    """6x6 matrix Y with Y @ x == x x* h. Skew-symmetric."""
    n, f = h[:3], h[3:]
    Y = np.zeros((6, 6))
    Y[:3, :3] = -skew(n)
    Y[:3, 3:] = -skew(f)
    Y[3:, :3] = -skew(f)
    return Y


def spatial_inertia(mass, com, inertia_com):
    """Spatial inertia about the frame origin, from CoM offset and CoM inertia."""
    C = skew(com)
    I6 = np.zeros((6, 6))
    I6[:3, :3] = inertia_com + mass * C @ C.T
    I6[:3, 3:] = mass * C
    I6[3:, :3] = mass * C.T
    I6[3:, 3:] = mass * np.eye(3)
    return I6


def parent_to_child_transform(R_pc, p_pc):
    """Motion transform from parent coordinates to child coordinates.

    ``R_pc`` and ``p_pc`` give the child frame's orientation and origin in
    parent coordinates.
    """
    E = R_pc.T
    X = np.zeros((6, 6))
    X[:3, :3] = E
    X[3:, 3:] = E
    X[3:, :3] = -E @ skew(p_pc)
    return X
