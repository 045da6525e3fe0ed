"""RPM-based turbine fault detector.

Each turbine runs a three-state machine: NOMINAL -> FAULT when the absolute
error between measured and reference RPM stays above a threshold for longer
than a hold time, FAULT -> OFF when the measured RPM reaches idle. States
never decrease (complete faults only).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

NOMINAL, FAULT, OFF = 0, 1, 2


@dataclass(frozen=True)
class ThrustRpmMap:
    """Static quadratic map T = T_max (RPM / RPM_max)^2.

    Fields may be arrays to map several turbines at once.
    """

    max_thrust: object
    max_rpm: object

    @classmethod
    def for_model(cls, model):
        return cls(model.max_thrusts, np.array([th.max_rpm for th in model.thrusters]))

    def thrust_to_rpm(self, T):
        T = np.asarray(T, dtype=float)
        clipped = np.clip(T, 0.0, self.max_thrust)
        if np.any(np.abs(clipped - T) > 1e-9):
            log.warning("thrust %s outside [0, %g] clamped", T, self.max_thrust)
        return self.max_rpm * np.sqrt(clipped / self.max_thrust)

    def rpm_to_thrust(self, rpm):
        rpm = np.asarray(rpm, dtype=float)
        clipped = np.clip(rpm, 0.0, self.max_rpm)
        if np.any(np.abs(clipped - rpm) > 1e-6):
            log.warning("rpm %s outside [0, %g] clamped", rpm, self.max_rpm)
        return self.max_thrust * (clipped / self.max_rpm) ** 2


@dataclass(frozen=True)
class TurbineHealthConfig:
    rpm_threshold: float = 10000.0
    hold_time: float = 0.3
    idle_rpm: float = 0.0
    quantization_step: float = 100.0

    def __post_init__(self):
        if self.rpm_threshold <= 0 or self.hold_time <= 0 or self.quantization_step <= 0 or self.idle_rpm < 0:
            raise ValueError(f"invalid detector configuration {self}")

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


def quantize(rpm, step=100.0):
    """Floor to the measurement grid."""
    return np.floor(np.asarray(rpm, dtype=float) / step) * step


def spool_down_time_constant(rpm0, crossing_time=0.8, step=100.0):
    """First-order decay constant so that RPM falls below one quantization step at ``crossing_time``."""
    return crossing_time / math.log(rpm0 / step)


class ReferenceRpm:
    """Integrates commanded thrust rates (trapezoidal rule) and maps them to RPM.

    ``rpm_map`` is a ThrustRpmMap holding one entry per turbine (array fields).
    """

    def __init__(self, rpm_map, T0):
        self.map = rpm_map
        self.T = np.array(T0, dtype=float)
        self._last_rate = np.zeros_like(self.T)
        self._T_max = np.broadcast_to(np.asarray(rpm_map.max_thrust, dtype=float), self.T.shape)

    def update(self, Tdot, dt):
        Tdot = np.asarray(Tdot, dtype=float)
        self.T = np.clip(self.T + 0.5 * dt * (self._last_rate + Tdot), 0.0, self._T_max)
        self._last_rate = Tdot.copy()
        return self.rpm

    @property
    def rpm(self):
        return self.map.thrust_to_rpm(self.T)


@dataclass
class FaultStatus:
    states: np.ndarray
    fault_time: np.ndarray
    off_time: np.ndarray
    hold: np.ndarray  # seconds spent above threshold

    @property
    def any_fault(self):
        return bool(np.any(self.states >= FAULT))

    @property
    def detection_time(self):
        times = self.fault_time[self.states >= FAULT]
        return float(times.min()) if len(times) else None

    def copy(self):
        return FaultStatus(self.states.copy(), self.fault_time.copy(), self.off_time.copy(), self.hold.copy())

    @classmethod
    def nominal(cls, n):
        return cls(np.zeros(n, dtype=int), np.full(n, np.nan), np.full(n, np.nan), np.zeros(n))


class FaultDetector:
    def __init__(self, config, n_turbines, dt=0.01):
        self.config = config
        self.dt = dt
        self._hold_limit = math.floor(config.hold_time / dt + 1e-9)
        self._ticks = np.zeros(n_turbines, dtype=int)
        self.status = FaultStatus.nominal(n_turbines)

    def step(self, rpm_measured, rpm_reference, t):
        """One detector tick. ``rpm_measured`` is already quantized."""
        cfg = self.config
        st = self.status
        err = np.abs(np.asarray(rpm_measured, dtype=float) - np.asarray(rpm_reference, dtype=float))
        above = err > cfg.rpm_threshold
        self._ticks = np.where(above, self._ticks + 1, 0)
        st.hold = self._ticks * self.dt
        for k in range(len(st.states)):
            if st.states[k] == NOMINAL and self._ticks[k] > self._hold_limit:
                st.states[k] = FAULT
                st.fault_time[k] = t
                log.info("turbine %d: fault detected at t=%.3f s", k, t)
            if st.states[k] == FAULT and rpm_measured[k] <= cfg.idle_rpm:
                st.states[k] = OFF
                st.off_time[k] = t
                log.info("turbine %d: off at t=%.3f s", k, t)
        return st.copy()
