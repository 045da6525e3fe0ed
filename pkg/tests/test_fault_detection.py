import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jetfault.fault_detection import (
    FAULT,
    NOMINAL,
    OFF,
    FaultDetector,
    ReferenceRpm,
    ThrustRpmMap,
    TurbineHealthConfig,
    quantize,
    spool_down_time_constant,
)

MAP = ThrustRpmMap(260.0, 245000.0)


def test_map_endpoints():
    assert MAP.thrust_to_rpm(0.0) == 0.0
    assert MAP.thrust_to_rpm(260.0) == pytest.approx(245000.0)
    assert MAP.thrust_to_rpm(65.0) == pytest.approx(122500.0)


@given(st.floats(0.0, 260.0))
def test_map_round_trip(T):
    assert MAP.rpm_to_thrust(MAP.thrust_to_rpm(T)) == pytest.approx(T, abs=1e-9)


@given(st.floats(0.0, 259.0), st.floats(1e-3, 1.0))
def test_map_strictly_monotone(T, dT):
    assert MAP.thrust_to_rpm(T + dT) > MAP.thrust_to_rpm(T)


def test_map_clamps_with_warning(caplog):
    with caplog.at_level("WARNING"):
        assert MAP.thrust_to_rpm(300.0) == pytest.approx(245000.0)
        assert MAP.rpm_to_thrust(-5.0) == 0.0
    assert "clamped" in caplog.text


def test_vector_map():
    m = ThrustRpmMap(np.array([100.0, 200.0]), np.array([1e5, 2e5]))
    assert np.allclose(m.thrust_to_rpm([25.0, 200.0]), [5e4, 2e5])


def test_quantize_floors():
    assert np.array_equal(quantize([0.0, 99.9, 100.0, 12345.6]), [0.0, 0.0, 100.0, 12300.0])


def test_invalid_config():
    with pytest.raises(ValueError):
        TurbineHealthConfig(rpm_threshold=-1.0)


# --------------------------------------------------------------------------
# reference RPM


def test_reference_rpm_constant_and_linear():
    ref = ReferenceRpm(MAP, [100.0])
    for _ in range(50):
        ref.update([0.0], 0.01)
    assert ref.rpm[0] == pytest.approx(MAP.thrust_to_rpm(100.0))
    ref = ReferenceRpm(MAP, [100.0])
    ref.update([0.0], 0.01)  # the trapezoid needs one sample of history
    for _ in range(100):
        ref.update([5.0], 0.01)
    # first ramp step averages 0 and 5
    assert ref.T[0] == pytest.approx(100.0 + 5.0 * 1.0 - 0.5 * 0.01 * 5.0)
    assert ref.rpm[0] == pytest.approx(MAP.thrust_to_rpm(ref.T[0]))


def test_reference_rpm_clamps():
    ref = ReferenceRpm(MAP, [1.0])
    for _ in range(10):
        ref.update([-100.0], 0.01)
    assert ref.T[0] == 0.0


# --------------------------------------------------------------------------
# state machine


def run_detector(rpm_meas, rpm_ref, cfg=None, dt=0.01):
    det = FaultDetector(cfg or TurbineHealthConfig(), len(rpm_meas[0]), dt)
    out = []
    for k, (m, r) in enumerate(zip(rpm_meas, rpm_ref)):
        out.append(det.step(np.asarray(m), np.asarray(r), k * dt))
    return out


def test_below_threshold_stays_nominal():
    ref = np.full((200, 1), 150000.0)
    meas = ref - 9000.0
    assert all(s.states[0] == NOMINAL for s in run_detector(meas, ref))


def test_step_to_zero_latency_is_hold_plus_one_tick():
    # onset right after the t = 0.10 sample, as in the plant: first seen at t = 0.11
    ref = np.full((100, 1), 150000.0)
    meas = ref.copy()
    meas[11:] = 0.0  # below idle too, so FAULT then OFF in the same tick
    hist = run_detector(meas, ref)
    first = next(k for k, s in enumerate(hist) if s.states[0] >= FAULT)
    assert first - 10 == 30 + 1
    assert hist[first].states[0] == OFF  # passed through FAULT in that tick
    assert hist[first].fault_time[0] == pytest.approx(0.41)


def test_hold_resets_when_error_drops():
    ref = np.full((100, 1), 150000.0)
    meas = ref.copy()
    meas[0:25] -= 20000.0
    meas[26:55] -= 20000.0
    assert all(s.states[0] == NOMINAL for s in run_detector(meas, ref))


@given(st.lists(st.floats(-3e4, 3e4), min_size=50, max_size=120))
def test_states_never_decrease(errs):
    ref = np.full((len(errs), 2), 120000.0)
    meas = np.clip(ref + np.array(errs)[:, None] * [1.0, -1.0], 0, None)
    hist = run_detector(quantize(meas), ref)
    st_ = np.array([h.states for h in hist])
    assert np.all(np.diff(st_, axis=0) >= 0)


@given(st.floats(-45.0, 45.0), st.integers(0, 2**31))
def test_quantization_invariance(delta, seed):
    """Perturbations under half a step, far from the threshold, leave the output unchanged."""
    rng = np.random.default_rng(seed)
    ref = np.full((80, 1), 150000.0)
    err = rng.choice([2000.0, 30000.0], size=(80, 1))
    meas = ref - err + 50.0  # mid-step, so +/-45 stays in the same bin
    a = run_detector(quantize(meas), ref)
    b = run_detector(quantize(meas + delta), ref)
    assert [tuple(x.states) for x in a] == [tuple(x.states) for x in b]


def test_no_false_positives_under_noise():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ref = 150000.0 + np.cumsum(rng.normal(0, 200, size=(300, 4)), axis=0)
        meas = quantize(ref + rng.normal(0, 100.0, size=ref.shape))
        assert all(s.states.max() == NOMINAL for s in run_detector(meas, ref))


def test_spool_down_timing():
    """Detection at onset + 0.3 s and idle at onset + 0.8 s with the spool-down law."""
    rpm0, onset, dt = 150000.0, 15.0, 0.01
    tau = spool_down_time_constant(rpm0, 0.8, 100.0)
    assert rpm0 * math.exp(-0.8 / tau) == pytest.approx(100.0)
    t = np.arange(0.0, 17.0, dt)
    rpm = np.where(t <= onset + 1e-9, rpm0, rpm0 * np.exp(-(t - onset) / tau))
    hist = run_detector(quantize(rpm)[:, None], np.full((len(t), 1), rpm0))
    t_fault = hist[-1].fault_time[0]
    t_off = hist[-1].off_time[0]
    assert abs(t_fault - (onset + 0.3)) <= dt + 1e-9
    assert abs(t_off - (onset + 0.8)) <= 0.02 + 1e-9
