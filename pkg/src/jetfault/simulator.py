"""Fixed-step plant and the controller-in-the-loop scenario runner.

The plant integrates the floating-base dynamics with semi-implicit Euler at
1 ms: velocities first, then the configuration with the new velocity
(rotation through the exponential map, re-orthonormalised every step).
Turbines follow a first-order RPM lag toward the commanded RPM; a faulty
turbine ignores its command and spools down. Joints are driven by a stiff
velocity PI loop on top of an inverse-dynamics feedforward.

``run_scenario`` interleaves ten plant steps with one 100 Hz control tick.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import multibody as mb
from .controller import ControllerGains, FlightController, IntegralBoundSet, ReferenceSet, smoothstep
from .fault_detection import (
    FaultDetector,
    ReferenceRpm,
    ThrustRpmMap,
    TurbineHealthConfig,
    quantize,
    spool_down_time_constant,
)
from .refgen import load_reference
from .spatial import exp_so3, log_so3, orthonormalize, rot_to_rpy, rpy_to_rot

log = logging.getLogger(__name__)

CONTROL_DT = 0.01
PLANT_DT = 0.001


class NonFiniteState(RuntimeError):
    pass


# --------------------------------------------------------------------------
# configuration


@dataclass
class TurbineConfig:
    tau_jet: float = 0.15  # s, RPM lag toward the command (placeholder value)
    spool_crossing_time: float = 0.8  # s from fault onset to idle crossing
    # lead on the command path: the RPM command is RPM(T) + command_lead * dRPM/dt,
    # which cancels a first-order RPM lag with the same time constant
    command_lead: float = 0.15

    def __post_init__(self):
        if self.tau_jet <= 0 or self.spool_crossing_time <= 0:
            raise ValueError("turbine time constants must be positive")
        if self.command_lead < 0:
            raise ValueError("command_lead must be non-negative")

    def sent_command(self, maps, T_int, Tdot, dt=0.01):
        """Thrust command handed to the turbines (lead applied in RPM space).

        The RPM rate is the one-tick finite difference of the map along Tdot,
        which stays finite near zero thrust where the map's slope does not.
        """
        T_max = np.asarray(maps.max_thrust, dtype=float)
        T_int = np.clip(T_int, 0.0, T_max)
        if self.command_lead == 0.0:
            return T_int
        rpm = maps.thrust_to_rpm(T_int)
        rpm_rate = (maps.thrust_to_rpm(np.clip(T_int + dt * np.asarray(Tdot), 0.0, T_max)) - rpm) / dt
        rpm_sent = np.clip(rpm + self.command_lead * rpm_rate, 0.0, maps.max_rpm)
        return maps.rpm_to_thrust(rpm_sent)


@dataclass
class JointTrackerConfig:
    K_v: float = 100.0  # 1/s, on the joint velocity error
    K_i: float = 2500.0  # 1/s^2, on the integrated velocity error

    def __post_init__(self):
        if self.K_v <= 0 or self.K_i < 0:
            raise ValueError("tracker gains must be positive")


@dataclass
class NoiseConfig:
    rpm_sigma: float = 0.0
    nu_sigma: float = 0.0


@dataclass
class FaultSpec:
    time: float
    turbine: str


@dataclass
class Segment:
    """Quintic position move (``delta`` in m, world axes) or yaw ramp (``delta`` in rad)."""

    kind: str
    start: float
    end: float
    delta: object

    def __post_init__(self):
        if self.kind not in ("position", "yaw"):
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.end <= self.start:
            raise ValueError("segment must end after it starts")
        if self.kind == "position":
            self.delta = np.asarray(self.delta, dtype=float).reshape(3)
        else:
            self.delta = float(self.delta)


@dataclass
class ScenarioSpec:
    name: str
    duration: float = 40.0
    fault: FaultSpec = None
    segments: list = field(default_factory=list)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    repeats: int = 10
    seed: int = 0
    nominal_reference: str = "nofault"
    fault_reference: str = None
    reference_blend: float = 1.5  # s, smoothstep from nominal to fault references
    gains: dict = field(default_factory=dict)
    detector: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    turbine: TurbineConfig = field(default_factory=TurbineConfig)
    tracker: JointTrackerConfig = field(default_factory=JointTrackerConfig)
    thresholds: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.fault is not None and not 0.0 <= self.fault.time < self.duration:
            raise ValueError("fault time outside the scenario")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("fault"):
            d["fault"] = FaultSpec(**d["fault"])
        d["segments"] = [Segment(**s) for s in d.get("segments", [])]
        d["noise"] = NoiseConfig(**d.get("noise", {}))
        d["turbine"] = TurbineConfig(**d.get("turbine", {}))
        d["tracker"] = JointTrackerConfig(**d.get("tracker", {}))
        return cls(**d)

    def to_dict(self):
        return {
            "name": self.name,
            "duration": self.duration,
            "fault": None if self.fault is None else vars(self.fault),
            "segments": [
                {"kind": s.kind, "start": s.start, "end": s.end, "delta": np.asarray(s.delta).tolist()}
                for s in self.segments
            ],
            "noise": vars(self.noise),
            "repeats": self.repeats,
            "seed": self.seed,
            "nominal_reference": self.nominal_reference,
            "fault_reference": self.fault_reference,
            "reference_blend": self.reference_blend,
            "gains": self.gains,
            "detector": self.detector,
            "bounds": self.bounds,
            "turbine": vars(self.turbine),
            "tracker": vars(self.tracker),
            "thresholds": self.thresholds,
        }


def load_scenario(path):
    return ScenarioSpec.from_dict(json.loads(Path(path).read_text()))


def data_dir():
    return Path(__file__).resolve().parent / "data"


def resolve_reference(name_or_path, model):
    path = Path(name_or_path)
    if not path.suffix:
        path = data_dir() / "references" / f"{name_or_path}.json"
    return load_reference(path, model)


# --------------------------------------------------------------------------
# plant


@dataclass
class PlantState:
    q: mb.Configuration
    nu: np.ndarray
    rpm: np.ndarray
    t: float = 0.0
    faulted: np.ndarray = None
    tau_off: np.ndarray = None
    s_int: np.ndarray = None  # integrated joint velocity command

    def copy(self):
        return PlantState(
            self.q.copy(), self.nu.copy(), self.rpm.copy(), self.t, self.faulted.copy(), self.tau_off.copy(), self.s_int.copy()
        )


def turbine_maps(model):
    return ThrustRpmMap.for_model(model)


def initial_plant_state(model, q, T, nu=None):
    rpm = turbine_maps(model).thrust_to_rpm(T)
    n_p = model.n_thrusters
    return PlantState(
        q.copy(),
        np.zeros(model.n_dof) if nu is None else np.array(nu, dtype=float),
        rpm,
        0.0,
        np.zeros(n_p, dtype=bool),
        np.full(n_p, np.inf),
        q.s.copy(),
    )


def inject_fault(state, k, crossing_time=0.8, step=100.0):
    """From now on turbine k ignores commands and spools down to zero RPM."""
    if not 0 <= k < len(state.rpm):
        raise IndexError(f"turbine {k} does not exist")
    state.faulted[k] = True
    state.tau_off[k] = spool_down_time_constant(max(state.rpm[k], 2.0 * step), crossing_time, step)
    log.info("fault injected on turbine %d at t=%.3f s (tau_off=%.4f s)", k, state.t, state.tau_off[k])
    return state


_UNIT_WRENCH_CACHE = {}


def _unit_thrust_wrenches(model):
    """(n_links, n_thrusters, 6) map from thrust magnitudes to link wrenches."""
    key = id(model)
    hit = _UNIT_WRENCH_CACHE.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    U = np.zeros((len(model.links), model.n_thrusters, 6))
    for k, th in enumerate(model.thrusters):
        U[th.link, k, :3] = np.cross(th.position, th.axis)
        U[th.link, k, 3:] = th.axis
    _UNIT_WRENCH_CACHE[key] = (model, U)
    return U


def thrust_wrenches(model, thrust):
    """Per-link thrust wrenches (moment, force) about the link origins, link coordinates."""
    return np.einsum("lkj,k->lj", _unit_thrust_wrenches(model), np.asarray(thrust, dtype=float))


def forward_dynamics(model, q, nu, tau, thrust):
    """nudot for given joint torques and thrust magnitudes."""
    _, _, X = mb._frames(model, q)
    M = mb._crba(model, q, X)
    r = mb._rnea(model, q, nu, np.zeros(model.n_dof), X, True, thrust_wrenches(model, thrust))
    r[6:] -= tau
    return np.linalg.solve(M, -r)


def tracked_dynamics(model, q, nu, thrust, a_des):
    """nudot when the joints follow the acceleration a_des exactly.

    The joint torques that achieve it are left implicit: only the unactuated
    base rows of the dynamics have to be solved.
    """
    _, _, X = mb._frames(model, q)
    nudot = np.concatenate([np.zeros(6), a_des])
    r = mb._rnea(model, q, nu, nudot, X, True, thrust_wrenches(model, thrust))
    nudot[:6] = np.linalg.solve(mb._composite_base_inertia(model, q, X), -r[:6])
    return nudot


def plant_step(model, state, thrust_cmd, sdot_cmd, dt=PLANT_DT, turbine=None, tracker=None, maps=None):
    """Advance the plant by dt (semi-implicit Euler). Mutates and returns ``state``."""
    turbine = turbine or TurbineConfig()
    tracker = tracker or JointTrackerConfig()
    maps = maps or turbine_maps(model)
    n = model.n_joints
    rpm_cmd = maps.thrust_to_rpm(np.clip(thrust_cmd, 0.0, model.max_thrusts))
    target = np.where(state.faulted, 0.0, rpm_cmd)
    tau_turb = np.where(state.faulted, state.tau_off, turbine.tau_jet)
    state.rpm = state.rpm + (1.0 - np.exp(-dt / tau_turb)) * (target - state.rpm)
    thrust = maps.rpm_to_thrust(state.rpm)

    sdot = state.nu[6:]
    state.s_int = state.s_int + dt * sdot_cmd
    a_des = tracker.K_v * (sdot_cmd - sdot) + tracker.K_i * (state.s_int - state.q.s)
    nudot = tracked_dynamics(model, state.q, state.nu, thrust, a_des)
    nu = state.nu + dt * nudot
    q = mb.integrate_configuration(state.q, nu, dt)
    # the exponential update keeps R on SO(3) up to round-off; re-project only on drift
    if np.abs(q.R.T @ q.R - np.eye(3)).max() > 1e-10:
        q.R = orthonormalize(q.R)
    if not (np.all(np.isfinite(nu)) and np.all(np.isfinite(q.R)) and np.all(np.isfinite(q.p))):
        raise NonFiniteState(f"non-finite plant state at t={state.t:.4f}")
    state.q, state.nu, state.t = q, nu, state.t + dt
    return state


# --------------------------------------------------------------------------
# references along the scenario


def quintic(tau):
    """Normalised quintic 0 -> 1 with zero end velocity/acceleration; returns (x, dx, ddx, dddx)."""
    if tau <= 0.0:
        return 0.0, 0.0, 0.0, 0.0
    if tau >= 1.0:
        return 1.0, 0.0, 0.0, 0.0
    t2, t3 = tau * tau, tau**3
    return (
        10 * t3 - 15 * t3 * tau + 6 * t3 * t2,
        30 * t2 - 60 * t3 + 30 * t3 * tau,
        60 * tau - 180 * t2 + 120 * t3,
        60 - 360 * tau + 360 * t2,
    )


def _smoothstep_rate(x):
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return 6.0 * x * (1.0 - x)


class TrajectoryScript:
    """CoM position profile, yaw profile and the nominal/fault reference blend."""

    def __init__(self, model, spec, com0, nominal, fault=None):
        self.model = model
        self.spec = spec
        self.com0 = np.asarray(com0, dtype=float)
        self.nominal = nominal
        self.fault = fault
        self.swap_time = None

    def trigger_swap(self, t):
        if self.fault is not None and self.swap_time is None:
            self.swap_time = t

    def com(self, t):
        x, v, a, j = self.com0.copy(), np.zeros(3), np.zeros(3), np.zeros(3)
        for seg in self.spec.segments:
            if seg.kind != "position":
                continue
            L = seg.end - seg.start
            s0, s1, s2, s3 = quintic((t - seg.start) / L)
            x += seg.delta * s0
            v += seg.delta * s1 / L
            a += seg.delta * s2 / L**2
            j += seg.delta * s3 / L**3
        return x, v, a, j

    def yaw(self, t):
        psi, rate = 0.0, 0.0
        for seg in self.spec.segments:
            if seg.kind != "yaw":
                continue
            L = seg.end - seg.start
            s0, s1, _, _ = quintic((t - seg.start) / L)
            psi += seg.delta * s0
            rate += seg.delta * s1 / L
        return psi, rate

    def blend(self, t):
        if self.swap_time is None:
            return 0.0, 0.0
        x = (t - self.swap_time) / self.spec.reference_blend
        return float(smoothstep(x)), _smoothstep_rate(x) / self.spec.reference_blend

    def attitude(self, t):
        """R_d and its world angular velocity."""
        psi, psi_rate = self.yaw(t)
        lam, lam_rate = self.blend(t)
        R0 = self.nominal.R
        if self.fault is None or lam == 0.0:
            Ra, omega_a = R0, np.zeros(3)
        else:
            rel = log_so3(R0.T @ self.fault.R)
            Ra = R0 @ exp_so3(lam * rel)
            omega_a = Ra @ (lam_rate * rel)  # body rate of the geodesic, mapped to world
        Rz = rpy_to_rot([0.0, 0.0, psi])
        return Rz @ Ra, Rz @ omega_a + np.array([0.0, 0.0, psi_rate])

    def posture(self, t):
        lam, _ = self.blend(t)
        if self.fault is None or lam == 0.0:
            return self.nominal.s.copy()
        return (1.0 - lam) * self.nominal.s + lam * self.fault.s

    def thrust(self, t):
        if self.swap_time is None:
            return self.nominal.T.copy()
        if self.fault is None:
            return None
        lam, _ = self.blend(t)
        return (1.0 - lam) * self.nominal.T + lam * self.fault.T

    def references(self, t):
        m = self.model.mass
        x, v, a, j = self.com(t)
        R_d, omega_d = self.attitude(t)
        return ReferenceSet(m * v, m * a, m * j, R_d, omega_d, self.posture(t), self.thrust(t)), x


# --------------------------------------------------------------------------
# scenario runner

TELEMETRY_VERSION = 1


@dataclass
class TelemetryLog:
    header: dict
    columns: list
    rows: np.ndarray
    aborted: bool = False
    abort_reason: str = ""

    def column(self, name):
        return self.rows[:, self.columns.index(name)]

    def columns_matching(self, prefix):
        idx = [i for i, c in enumerate(self.columns) if c.startswith(prefix)]
        return self.rows[:, idx]


def telemetry_columns(model):
    jn = [j.name for j in model.joints]
    tn = [t.name for t in model.thrusters]
    cols = ["t"]
    cols += [f"p_{a}" for a in "xyz"] + [f"com_{a}" for a in "xyz"] + [f"com_ref_{a}" for a in "xyz"]
    cols += [f"rpy_{a}" for a in ("roll", "pitch", "yaw")]
    cols += [f"s_{n}" for n in jn] + [f"s_ref_{n}" for n in jn]
    cols += [f"thrust_cmd_{n}" for n in tn] + [f"thrust_{n}" for n in tn]
    cols += [f"rpm_ref_{n}" for n in tn] + [f"rpm_meas_{n}" for n in tn]
    cols += [f"state_{n}" for n in tn]
    cols += ["momentum_error_norm", "joint_error_norm", "weight_scale", "qp_iterations", "qp_residual", "qp_failed"]
    return cols


def build_controller(model, spec, T0):
    gains = ControllerGains.from_dict(spec.gains)
    bounds = IntegralBoundSet.for_model(model, **spec.bounds)
    return FlightController(model, gains, bounds, T0, dt=CONTROL_DT)


def run_scenario(model, spec, with_refgen=True, seed=None, references=None):
    """Run one repeat of ``spec`` and return its TelemetryLog."""
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    refs = references or {}
    nominal = refs.get("nominal") or resolve_reference(spec.nominal_reference, model)
    fault_ref = None
    if with_refgen and spec.fault is not None and spec.fault_reference:
        fault_ref = refs.get("fault") or resolve_reference(spec.fault_reference, model)

    n_p = model.n_thrusters
    maps = turbine_maps(model)
    q0 = mb.Configuration(np.zeros(3), nominal.R, nominal.s.copy())
    plant = initial_plant_state(model, q0, nominal.T)
    controller = build_controller(model, spec, nominal.T)
    detector = FaultDetector(TurbineHealthConfig.from_dict(spec.detector), n_p, CONTROL_DT)
    ref_rpm = ReferenceRpm(maps, nominal.T)
    script = TrajectoryScript(model, spec, mb.center_of_mass(model, q0), nominal, fault_ref)
    fault_k = None if spec.fault is None else model.thruster_index(spec.fault.turbine)

    columns = telemetry_columns(model)
    n_ticks = int(round(spec.duration / CONTROL_DT))
    rows = np.full((n_ticks + 1, len(columns)), np.nan)
    aborted, reason = False, ""
    u = np.zeros(n_p + model.n_joints)
    for tick in range(n_ticks + 1):
        t = tick * CONTROL_DT
        rpm_noisy = plant.rpm + (spec.noise.rpm_sigma * rng.standard_normal(n_p) if spec.noise.rpm_sigma else 0.0)
        rpm_meas = quantize(np.maximum(rpm_noisy, 0.0))
        nu_meas = plant.nu + (spec.noise.nu_sigma * rng.standard_normal(model.n_dof) if spec.noise.nu_sigma else 0.0)
        status = detector.step(rpm_meas, ref_rpm.rpm, t)
        if status.any_fault:
            script.trigger_swap(t)
        reference, com_ref = script.references(t)
        thrust_est = maps.rpm_to_thrust(rpm_meas)
        thrust_cmd_prev = controller.T.copy()
        try:
            u, diag = controller.step(plant.q, nu_meas, reference, status, t, thrust_est)
        except Exception as exc:  # noqa: BLE001 - any controller failure ends the run, logged
            aborted, reason = True, f"controller error at t={t:.2f}: {exc}"
            log.error(reason)
            break
        rpm_ref_now = ref_rpm.rpm
        ref_rpm.update(u[:n_p], CONTROL_DT)

        com = mb.center_of_mass(model, plant.q)
        rows[tick] = np.concatenate(
            [
                [t],
                plant.q.p,
                com,
                com_ref,
                rot_to_rpy(plant.q.R),
                plant.q.s,
                reference.s_d,
                thrust_cmd_prev,
                maps.rpm_to_thrust(plant.rpm),
                rpm_ref_now,
                rpm_meas,
                status.states,
                [
                    np.linalg.norm(diag.momentum_error),
                    np.linalg.norm(diag.joint_error),
                    diag.weight_scale,
                    diag.qp_iterations,
                    diag.qp_residual,
                    float(diag.qp_failed),
                ],
            ]
        )
        if tick == n_ticks:
            break
        sent = spec.turbine.sent_command(maps, controller.T, u[:n_p], CONTROL_DT)
        try:
            for _ in range(int(round(CONTROL_DT / PLANT_DT))):
                if fault_k is not None and not plant.faulted[fault_k] and plant.t >= spec.fault.time - 1e-9:
                    inject_fault(plant, fault_k, spec.turbine.spool_crossing_time)
                plant_step(model, plant, sent, u[n_p:], PLANT_DT, spec.turbine, spec.tracker, maps)
            # the plant clock is the tick count; avoid drift from summing dt
            plant.t = (tick + 1) * CONTROL_DT
        except NonFiniteState as exc:
            aborted, reason = True, str(exc)
            log.error(reason)
            break
        if np.linalg.norm(plant.q.p) > 1e3:
            aborted, reason = True, f"robot left the workspace at t={t:.2f}"
            log.error(reason)
            break

    if aborted:
        rows = rows[: tick + 1]
    header = {
        "format": "jetfault-telemetry",
        "version": TELEMETRY_VERSION,
        "scenario": spec.to_dict(),
        "seed": int(seed),
        "with_refgen": bool(with_refgen),
        "model": model.name,
        "model_sha256": model.source_hash,
        "control_dt": CONTROL_DT,
        "plant_dt": PLANT_DT,
        "aborted": aborted,
        "abort_reason": reason,
    }
    return TelemetryLog(header, columns, rows, aborted, reason)
