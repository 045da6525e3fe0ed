"""Momentum-based QP flight controller with turbine-fault awareness.

The controller picks ``u = (Tdot, sdot)`` by solving a box QP that tracks a
desired linear momentum acceleration (PID on the linear momentum), a desired
angular momentum acceleration (attitude law on SO(3)), and a postural task.
Bounds on ``u`` are derived from bounds on ``I_u = (T, s)`` through a tanh
parametrization; a detected fault drives the faulty thrust's upper bound to
zero, and the momentum weights are temporarily relaxed by a factor alpha.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import multibody as mb
from .fault_detection import FAULT
from .momentum import momentum_acceleration_map, thrust_matrix
from .qp import NonConvergence, solve_box_qp, stack_tasks
from .spatial import vee

log = logging.getLogger(__name__)


def _mat(value, size):
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(size)
    if a.ndim == 1:
        return np.diag(a)
    return a


@dataclass
class ControllerGains:
    K_P: np.ndarray = field(default_factory=lambda: 47.0 * np.eye(3))
    K_D: np.ndarray = field(default_factory=lambda: 12.0 * np.eye(3))
    K_I: np.ndarray = field(default_factory=lambda: 60.0 * np.eye(3))
    K_R: np.ndarray = field(default_factory=lambda: 60.0 * np.eye(3))
    K_omega: np.ndarray = field(default_factory=lambda: 47.0 * np.eye(3))
    K_wdot: np.ndarray = field(default_factory=lambda: 12.0 * np.eye(3))
    K_s: float = 1.0
    K_T: float = 1.0
    W_l: float = 1.0
    W_w: float = 30.0
    W_s: float = 0.01
    W_T: float = 1e-4
    alpha: float = 10.0
    transient: float = 2.0
    ramp: float = 0.5
    integral_limit: np.ndarray = field(default_factory=lambda: np.full(3, 20.0))

    def __post_init__(self):
        for name in ("K_P", "K_D", "K_I", "K_R", "K_omega", "K_wdot"):
            M = _mat(getattr(self, name), 3)
            if np.linalg.eigvalsh(0.5 * (M + M.T)).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
            setattr(self, name, M)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.transient <= 0 or not 0 < self.ramp <= 0.5 * self.transient:
            raise ValueError("need transient > 0 and 0 < ramp <= transient / 2")
        self.integral_limit = np.broadcast_to(np.asarray(self.integral_limit, dtype=float), (3,)).copy()

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class IntegralBoundSet:
    """Bounds on I_u = (T, s) and on its derivative u = (Tdot, sdot).

    With ``rpm_slew`` set, the thrust-rate entries of the u-bounds are not
    constant but follow from a turbine slew limit in RPM/s through the
    quadratic thrust map: |Tdot| <= rpm_slew * dT/dRPM at the current thrust.
    """

    lower: np.ndarray
    upper: np.ndarray
    rate_lower: np.ndarray
    rate_upper: np.ndarray
    eps_lower: float = 50.0
    eps_upper: float = 50.0
    scale: np.ndarray = None  # normalisation of the tanh argument
    rpm_slew: float = None
    max_rpm: np.ndarray = None
    min_thrust: float = 1.0  # thrust at which the slew-derived rate is evaluated near zero

    def __post_init__(self):
        for name in ("lower", "upper", "rate_lower", "rate_upper"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.lower > self.upper) or np.any(self.rate_lower > self.rate_upper):
            raise ValueError("bound set with lower > upper")
        if self.eps_lower <= 0 or self.eps_upper <= 0:
            raise ValueError("sharpness must be positive")
        if self.scale is None:
            self.scale = np.maximum(self.upper - self.lower, 1e-9)
        self.scale = np.asarray(self.scale, dtype=float)
        if self.rpm_slew is not None:
            if self.rpm_slew <= 0 or self.max_rpm is None:
                raise ValueError("rpm_slew needs a positive value and max_rpm")
            self.max_rpm = np.asarray(self.max_rpm, dtype=float)

    @classmethod
    def for_model(cls, model, thrust_rate=300.0, joint_rate=1.5, eps=50.0, rpm_slew=None):
        s_lo, s_hi = model.joint_limits
        n_p = model.n_thrusters
        lower = np.concatenate([np.zeros(n_p), s_lo])
        upper = np.concatenate([model.max_thrusts, s_hi])
        rate = np.concatenate([np.full(n_p, thrust_rate), np.full(model.n_joints, joint_rate)])
        max_rpm = np.array([th.max_rpm for th in model.thrusters])
        return cls(lower, upper, -rate, rate, eps, eps, rpm_slew=rpm_slew, max_rpm=max_rpm)

    def at_thrust(self, T):
        """Copy whose thrust-rate bounds are evaluated at the thrusts T (no-op without rpm_slew)."""
        if self.rpm_slew is None:
            return self
        n_p = len(self.max_rpm)
        T_max = self.upper[:n_p]  # call before fault saturation edits the upper bound
        T_eval = np.maximum(np.asarray(T, dtype=float), self.min_thrust)
        rate = self.rpm_slew * 2.0 * np.sqrt(T_eval * T_max) / self.max_rpm
        rate = np.minimum(rate, self.rate_upper[:n_p])
        lo, hi = self.rate_lower.copy(), self.rate_upper.copy()
        lo[:n_p], hi[:n_p] = -rate, rate
        return replace(self, rate_lower=lo, rate_upper=hi, scale=self.scale.copy())


def parametrized_bounds(I_u, bounds):
    """tanh(eps_l (I_u - lb)) lb_u <= u <= tanh(eps_u (ub - I_u)) ub_u, elementwise.

    Arguments of tanh are normalised by ``bounds.scale``. Where asymmetric rate
    limits would make the interval empty (I_u far outside its box), the bound
    that pushes I_u back inside is kept.
    """
    I_u = np.asarray(I_u, dtype=float)
    lo = np.tanh(bounds.eps_lower * (I_u - bounds.lower) / bounds.scale) * bounds.rate_lower
    hi = np.tanh(bounds.eps_upper * (bounds.upper - I_u) / bounds.scale) * bounds.rate_upper
    crossed = lo > hi
    if np.any(crossed):
        above = crossed & (I_u > bounds.upper)
        below = crossed & (I_u < bounds.lower)
        lo = np.where(above, hi, lo)
        hi = np.where(below, lo, hi)
        mid = crossed & ~above & ~below
        lo = np.where(mid, 0.5 * (lo + hi), lo)
        hi = np.where(mid, lo, hi)
    return lo, hi


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def apply_fault_saturation(bounds, status, t, ramp=0.2):
    """Drive the faulty thrusts' upper integral bound to zero with a smoothstep ramp."""
    if status is None or not status.any_fault:
        return bounds
    upper = bounds.upper.copy()
    for k, st in enumerate(status.states):
        if st >= FAULT:
            upper[k] = bounds.upper[k] * (1.0 - smoothstep((t - status.fault_time[k]) / ramp))
    return replace(bounds, upper=upper, scale=bounds.scale.copy())


def weight_scale(gains, t_detect, t):
    """Multiplier on W_l and W_w: 1 -> 1/alpha -> 1 around the detection time."""
    if t_detect is None or t < t_detect:
        return 1.0
    dt = t - t_detect
    low = 1.0 / gains.alpha
    if dt < gains.ramp:
        lam = dt / gains.ramp
    elif dt < gains.transient - gains.ramp:
        lam = 1.0
    elif dt < gains.transient:
        lam = (gains.transient - dt) / gains.ramp
    else:
        lam = 0.0
    return (1.0 - lam) + lam * low


def schedule_weights(gains, t_detect, t):
    c = weight_scale(gains, t_detect, t)
    return gains.W_l * c, gains.W_w * c


@dataclass
class ReferenceSet:
    """Instantaneous references for the controller."""

    l_d: np.ndarray
    l_d_dot: np.ndarray
    l_d_ddot: np.ndarray
    R_d: np.ndarray
    omega_d: np.ndarray  # world angular velocity of the attitude reference
    s_d: np.ndarray
    T_d: np.ndarray = None


def desired_linear_momentum_acceleration(l_err, l_err_dot, l_err_int, l_d_ddot, gains):
    return l_d_ddot - gains.K_D @ l_err_dot - gains.K_P @ l_err - gains.K_I @ l_err_int


def attitude_error(R_B, R_d):
    """e_R = 1/2 vee(R_d^T R_B - R_B^T R_d), body coordinates."""
    return 0.5 * vee(R_d.T @ R_B - R_B.T @ R_d)


def desired_angular_momentum_acceleration(R_B, R_d, w_body, wdot_body, I_body, omega_ref_body, gains):
    """Third-order attitude law on the body angular momentum.

    wddot* = -K_wdot wdot - K_omega (w - I omega_ref) - K_R I e_R
    """
    e_R = attitude_error(R_B, R_d)
    return -gains.K_wdot @ wdot_body - gains.K_omega @ (w_body - I_body @ omega_ref_body) - gains.K_R @ (I_body @ e_R)


@dataclass
class ControlDiagnostics:
    momentum_error: np.ndarray
    joint_error: np.ndarray
    qp_iterations: int
    qp_residual: float
    qp_failed: bool
    weight_scale: float
    lb: np.ndarray
    ub: np.ndarray


class FlightController:
    """Stateful 100 Hz controller; owns the integral error and the thrust state."""

    def __init__(self, model, gains, bounds, T0, dt=0.01, saturation_ramp=0.2):
        self.model = model
        self.gains = gains
        self.bounds = bounds
        self.dt = dt
        self.saturation_ramp = saturation_ramp
        self.T = np.array(T0, dtype=float)
        self.integral = np.zeros(3)
        self.t_detect = None
        self.last_u = np.zeros(model.n_thrusters + model.n_joints)

    def step(self, q, nu, refs, status=None, t=0.0, thrust_estimate=None):
        """One control tick; returns (u, diagnostics) and advances the thrust command.

        ``thrust_estimate`` (e.g. from measured RPM) replaces the integrated
        command in the momentum-rate feedback and in Lambda when given.
        """
        model, g = self.model, self.gains
        T_est = self.T if thrust_estimate is None else np.asarray(thrust_estimate, dtype=float)
        n_p, n = model.n_thrusters, model.n_joints
        if status is not None and status.any_fault and self.t_detect is None:
            self.t_detect = status.detection_time

        L, _ = mb.centroidal_momentum(model, q, nu)
        A, FG = thrust_matrix(model, q)
        l_err = L[:3] - refs.l_d
        ldot = A[:3] @ T_est + FG[:3]
        l_err_dot = ldot - refs.l_d_dot
        self.integral = np.clip(self.integral + self.dt * l_err, -g.integral_limit, g.integral_limit)
        lddot_star = desired_linear_momentum_acceleration(l_err, l_err_dot, self.integral, refs.l_d_ddot, g)

        RBt = q.R.T
        I_body = mb.locked_inertia(model, q.s)
        w_body = RBt @ L[3:]
        wdot_body = RBt @ (A[3:] @ T_est)
        omega_ref_body = RBt @ refs.omega_d
        wddot_star = desired_angular_momentum_acceleration(q.R, refs.R_d, w_body, wdot_body, I_body, omega_ref_body, g)

        amap = momentum_acceleration_map(model, q, nu, T_est)
        W_l, W_w = schedule_weights(g, self.t_detect, t)
        sdot_star = -g.K_s * (q.s - refs.s_d)
        T_ref = self.T if refs.T_d is None else refs.T_d
        Tdot_star = -g.K_T * (self.T - T_ref)
        sel_s = np.hstack([np.zeros((n, n_p)), np.eye(n)])
        sel_T = np.hstack([np.eye(n_p), np.zeros((n_p, n))])
        problem = stack_tasks(
            [
                (amap.Lambda[:3], lddot_star - amap.drift[:3], W_l),
                (amap.Lambda[3:], wddot_star - amap.drift[3:], W_w),
                (sel_s, sdot_star, g.W_s),
                (sel_T, Tdot_star, g.W_T),
            ]
        )
        bounds = apply_fault_saturation(self.bounds.at_thrust(self.T), status, t, self.saturation_ramp)
        lb, ub = parametrized_bounds(np.concatenate([self.T, q.s]), bounds)
        problem = problem.with_bounds(lb, ub)
        tol = 1e-9 * max(1.0, float(np.abs(problem.H).max()))
        failed = False
        try:
            res = solve_box_qp(problem, tol=tol, x0=np.clip(self.last_u, lb, ub))
            u, iters, resid = res.x, res.iterations, res.residual
        except NonConvergence as exc:
            log.warning("QP failed at t=%.3f: %s; holding previous command", t, exc)
            u, iters, resid, failed = np.clip(self.last_u, lb, ub), exc.iterations, exc.residual, True

        self.T = np.clip(self.T + self.dt * u[:n_p], 0.0, model.max_thrusts)
        self.last_u = u
        mom_err = np.concatenate([l_err, w_body - I_body @ omega_ref_body])
        diag = ControlDiagnostics(mom_err, q.s - refs.s_d, iters, resid, failed, W_l / g.W_l, lb, ub)
        return u, diag
