"""Centroidal momentum rate and the input-to-momentum-acceleration map.

The momentum rate is affine in the thrust magnitudes,

    Ldot = A(q) T + F_G,

and its time derivative is affine in the QP input ``u = (Tdot, sdot)``:

    Lddot = Lambda(q, T) u + drift(q, nu, T).

The linear rows are expressed in inertial coordinates; the angular rows are the
derivative of the body-coordinate angular momentum rate ``R_B^T wdot``. That
rate is invariant to rigid motions of the base, so the base velocity only
contributes the linear drift ``omega_B x (sum_k a_k T_k)``.
"""

from dataclasses import dataclass

import numpy as np

from .multibody import _com_from_frames, _frames, integrate_configuration
from .spatial import cross

FD_STEP = 1e-6


@dataclass
class MomentumRate:
    linear: np.ndarray
    angular: np.ndarray
    gravity_wrench: np.ndarray

    @property
    def vector(self):
        return np.concatenate([self.linear, self.angular])


@dataclass
class MomentumAccelerationMap:
    Lambda: np.ndarray
    drift: np.ndarray

    def __call__(self, u):
        return self.Lambda @ u + self.drift


def _thrust_geometry(model, R, p):
    pts = np.array([p[th.link] + R[th.link] @ th.position for th in model.thrusters])
    axes = np.array([R[th.link] @ th.axis for th in model.thrusters])
    return pts, axes


def gravity_wrench(model):
    return np.concatenate([model.mass * model.gravity_vector, np.zeros(3)])


def thrust_matrix(model, q):
    """A(q) (6 x n_p) and the gravity wrench F_G, both at the CoM with inertial axes."""
    R, p, _ = _frames(model, q)
    com = _com_from_frames(model, R, p)
    pts, axes = _thrust_geometry(model, R, p)
    A = np.empty((6, model.n_thrusters))
    A[:3] = axes.T
    A[3:] = cross(pts - com, axes).T
    return A, gravity_wrench(model)


def momentum_rate(model, q, T):
    A, FG = thrust_matrix(model, q)
    Ld = A @ np.asarray(T, dtype=float) + FG
    return MomentumRate(Ld[:3], Ld[3:], FG)


def body_momentum_rate(model, q, T):
    """(ldot in inertial coordinates, wdot rotated to base coordinates)."""
    r = momentum_rate(model, q, T)
    return np.concatenate([r.linear, q.R.T @ r.angular])


def momentum_acceleration_map(model, q, nu, T, method="analytic"):
    """Lambda (6 x (n_p + n)) and drift such that Lddot = Lambda u + drift.

    ``method="fd"`` builds the joint columns and the drift from central
    directional differences of the momentum rate along the configuration
    motions generated by each velocity component.
    """
    if method == "fd":
        return _map_fd(model, q, nu, T)
    if method != "analytic":
        raise ValueError(f"unknown method {method!r}")
    T = np.asarray(T, dtype=float)
    n_p, n = model.n_thrusters, model.n_joints
    R, p, _ = _frames(model, q)
    com = _com_from_frames(model, R, p)
    pts, axes = _thrust_geometry(model, R, p)
    r = pts - com
    RBt = q.R.T

    Lam = np.zeros((6, n_p + n))
    Lam[:3, :n_p] = axes.T
    Lam[3:, :n_p] = RBt @ cross(r, axes).T

    host = [th.link for th in model.thrusters]
    for j, jt in enumerate(model.joints):
        sub = model.joint_subtree[j]
        z = R[jt.child] @ jt.axis
        o = p[jt.child]
        dcom = np.zeros(3)
        for i in sub:
            lk = model.links[i]
            dcom += lk.mass * cross(z, p[i] + R[i] @ lk.com - o)
        dcom /= model.mass
        dlin = np.zeros(3)
        dang = np.zeros(3)
        for k in range(n_p):
            if host[k] in sub:
                da = cross(z, axes[k])
                dr = cross(z, pts[k] - o) - dcom
                dlin += da * T[k]
                dang += (cross(dr, axes[k]) + cross(r[k], da)) * T[k]
            else:
                dang += cross(-dcom, axes[k]) * T[k]
        Lam[:3, n_p + j] = dlin
        Lam[3:, n_p + j] = RBt @ dang

    drift = np.zeros(6)
    drift[:3] = cross(nu[3:6], axes.T @ T)
    return MomentumAccelerationMap(Lam, drift)


def _map_fd(model, q, nu, T, h=FD_STEP):
    T = np.asarray(T, dtype=float)
    n_p, n = model.n_thrusters, model.n_joints
    A, _ = thrust_matrix(model, q)
    Lam = np.zeros((6, n_p + n))
    Lam[:3, :n_p] = A[:3]
    Lam[3:, :n_p] = q.R.T @ A[3:]

    def directional(direction):
        fp = body_momentum_rate(model, integrate_configuration(q, direction, h), T)
        fm = body_momentum_rate(model, integrate_configuration(q, direction, -h), T)
        return (fp - fm) / (2 * h)

    for j in range(n):
        e = np.zeros(6 + n)
        e[6 + j] = 1.0
        Lam[:, n_p + j] = directional(e)
    base = np.zeros(6 + n)
    base[:6] = nu[:6]
    return MomentumAccelerationMap(Lam, directional(base))


def manipulability(Lam):
    """det(Lambda Lambda^T): squared volume of the momentum manipulability ellipsoid."""
    return float(np.linalg.det(Lam @ Lam.T))

