"""Numerical self-checks of a loaded model, used by ``jetfault validate``."""

from dataclasses import dataclass

import numpy as np

from . import multibody as mb
from .spatial import exp_so3

FD_STEP = 1e-6


def random_state(model, rng, speed=1.0):
    """Random configuration inside the joint limits and a random velocity."""
    lo, hi = model.joint_limits
    lo = np.where(np.isfinite(lo), lo, -np.pi)
    hi = np.where(np.isfinite(hi), hi, np.pi)
    q = mb.Configuration(rng.uniform(-2, 2, 3), exp_so3(rng.normal(size=3)), rng.uniform(lo, hi))
    return q, speed * rng.normal(size=model.n_dof)


def mass_matrix_rate(model, q, nu, h=FD_STEP):
    return (mb.mass_matrix(model, mb.integrate_configuration(q, nu, h)) - mb.mass_matrix(model, mb.integrate_configuration(q, nu, -h))) / (2 * h)


def jacobian_fd_error(model, q, nu, h=FD_STEP):
    """Largest gap between J_k nu and the central difference of every thruster point."""
    qp, qm = mb.integrate_configuration(q, nu, h), mb.integrate_configuration(q, nu, -h)
    v_fd = (mb.forward_kinematics(model, qp).thruster_points - mb.forward_kinematics(model, qm).thruster_points) / (2 * h)
    v = mb.thruster_jacobians(model, q) @ nu
    return float(np.abs(v - v_fd).max())


def link_momentum_sum(model, q, nu):
    """Centroidal momentum summed link by link from link velocities."""
    kin = mb.forward_kinematics(model, q)
    J = mb.body_jacobians(model, q)
    com = mb.center_of_mass(model, q)
    l, k = np.zeros(3), np.zeros(3)
    for i, lk in enumerate(model.links):
        R = kin.link_R[i]
        w_body, v_body = (J[i] @ nu)[:3], (J[i] @ nu)[3:]
        v_com = R @ (v_body + np.cross(w_body, lk.com))
        c = kin.link_p[i] + R @ lk.com
        l += lk.mass * v_com
        k += R @ lk.inertia @ w_body + np.cross(c - com, lk.mass * v_com)
    return np.concatenate([l, k])


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def ok(self):
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


def dynamics_checks(model, samples=20, seed=0):
    """Worst-case values over random states; ``min_eig`` is reported negated so every check is 'value <= tol'."""
    rng = np.random.default_rng(seed)
    worst = dict(neg_min_eig=-np.inf, skew=0.0, jac=0.0, cmm=0.0)
    for _ in range(samples):
        q, nu = random_state(model, rng)
        M = mb.mass_matrix(model, q)
        worst["neg_min_eig"] = max(worst["neg_min_eig"], -np.linalg.eigvalsh(0.5 * (M + M.T)).min())
        N = mass_matrix_rate(model, q, nu) - 2 * mb.coriolis_matrix(model, q, nu)
        worst["skew"] = max(worst["skew"], float(np.abs(N + N.T).max()))
        worst["jac"] = max(worst["jac"], jacobian_fd_error(model, q, nu))
        h, _ = mb.centroidal_momentum(model, q, nu)
        ref = link_momentum_sum(model, q, nu)
        worst["cmm"] = max(worst["cmm"], float(np.linalg.norm(h - ref) / max(np.linalg.norm(ref), 1e-12)))
    return [
        CheckResult("mass matrix positive definite (-min eigenvalue)", worst["neg_min_eig"], -1e-9),
        CheckResult("Mdot - 2C skew symmetry", worst["skew"], 1e-6),
        CheckResult("thruster Jacobian vs finite differences", worst["jac"], 1e-5),
        CheckResult("centroidal momentum vs link sum (relative)", worst["cmm"], 1e-9),
    ]


def static_checks(model):
    out = [CheckResult("total mass > 0", -model.mass, 0.0)]
    m_g = model.mass * model.gravity
    out.append(CheckResult("max total thrust exceeds weight (margin)", m_g - float(model.max_thrusts.sum()), -1e-9))
    return out
