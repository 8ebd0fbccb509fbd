import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ecodrive.pag import (EcoApproach, PagConfig, PassAccelerate, PassConstant, PassDecelerate,
                          SpeedAdvisory, advisory_profile, arrival_time, arrival_window,
                          classify_pass, eco_approach, speed_change)
from ecodrive.route import Phase, TrafficLight, spat_at
from ecodrive.vehicle import PowertrainLimits, VehicleState

from oracles import simulate_advisory, speed_change_accel, time_to_cover

LIM = PowertrainLimits()
CFG = PagConfig()
CYCLE = ((Phase.GREEN, 30.0), (Phase.YELLOW, 3.0), (Phase.RED, 27.0))
LIGHT = TrafficLight(150.0, CYCLE)


def _ego(v, t):
    return VehicleState(position_m=0.0, speed_m_s=v, time_s=t)


def _safe_at(light, t0, tau, cfg=CFG):
    """Oracle: green throughout [tau - start margin, tau + end margin] (clipped at now)."""
    lo = max(0.0, tau - cfg.green_start_margin_s)
    hi = tau + cfg.green_end_margin_s
    return all(light.phase_at(t0 + u) is Phase.GREEN for u in np.linspace(lo + 0.01, hi - 0.01, 60))


def _smooth_stop_fits(v, distance):
    return sum(s.duration_s for s in speed_change(v, 0.0, LIM)) * v / 2 < distance


# -- manoeuvre timing ------------------------------------------------------------

def test_arrival_window_matches_forward_simulation():
    ego = _ego(15.0, 0.0)
    early, late = arrival_window(ego, 150.0, LIM, 20.0, CFG)
    up, _ = speed_change_accel(15.0, 20.0, LIM.accel_max, LIM.decel_max, LIM.jerk_max)
    down, _ = speed_change_accel(15.0, 3.0, LIM.accel_max, LIM.decel_max, LIM.jerk_max)
    assert early == pytest.approx(time_to_cover(15.0, up, 150.0), abs=0.01)
    assert late == pytest.approx(time_to_cover(15.0, down, 150.0), abs=0.01)
    assert early < 150.0 / 15.0 < late


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 20), st.floats(0, 20), st.floats(5, 400))
def test_arrival_time_matches_oracle(v0, target, distance):
    assume(target > 0.5)
    acc, _ = speed_change_accel(v0, target, LIM.accel_max, LIM.decel_max, LIM.jerk_max)
    expect = time_to_cover(v0, acc, distance, dt=2e-3)
    got = arrival_time(v0, target, distance, LIM)
    assert got == pytest.approx(expect, abs=0.02)


# -- classification ----------------------------------------------------------------

def test_constant_when_green_holds():
    d = classify_pass(_ego(15.0, 0.0), spat_at(LIGHT, 0.0), 150.0, LIM, 20.0)
    assert d == PassConstant(10.0)


def test_decelerate_when_arriving_in_red():
    spat = spat_at(LIGHT, 45.0)  # red, green again in 15 s
    d = classify_pass(_ego(15.0, 45.0), spat, 150.0, LIM, 20.0)
    assert isinstance(d, PassDecelerate)
    assert d.arrival_time_s == pytest.approx(15.0 + CFG.green_start_margin_s)
    assert CFG.pass_speed_floor_m_s <= d.target_speed_m_s < 15.0


def test_accelerate_when_green_is_ending():
    spat = spat_at(LIGHT, 18.0)  # 12 s of green left
    d = classify_pass(_ego(12.0, 18.0), spat, 150.0, LIM, 20.0)
    assert isinstance(d, PassAccelerate)
    assert 12.0 < d.target_speed_m_s <= 20.0
    assert d.arrival_time_s <= 12.0 - CFG.green_end_margin_s + 1e-9


def test_eco_approach_when_nothing_fits():
    spat = spat_at(LIGHT, 33.0)  # red just began, 27 s to green
    d = classify_pass(_ego(15.0, 33.0), spat, 60.0, LIM, 20.0)
    assert d == EcoApproach(27.0)


def test_red_ahead_slows_into_later_green():
    # green runs from +20 to +50; holding speed would arrive at +10 in red
    light = TrafficLight(0.0, ((Phase.RED, 20.0), (Phase.GREEN, 30.0), (Phase.YELLOW, 3.0),
                               (Phase.RED, 17.0)))
    spat = spat_at(light, 0.0)
    d = classify_pass(_ego(10.0, 0.0), spat, 100.0, LIM, 20.0)  # constant arrival at 10 s
    assert isinstance(d, PassDecelerate)


@settings(max_examples=150, deadline=None)
@given(st.floats(0, 59.9), st.floats(0, 20), st.floats(20, 400))
def test_decision_matches_interval_oracle(t0, v, distance):
    spat = spat_at(LIGHT, t0)
    ego = _ego(v, t0)
    d = classify_pass(ego, spat, distance, LIM, 20.0)
    early, late = arrival_window(ego, distance, LIM, 20.0, CFG)
    horizon = CFG.horizon_cycles * LIGHT.cycle_length_s - CFG.green_end_margin_s - 0.1
    candidates = np.arange(0.0, horizon, 0.25)
    feasible = [tau for tau in candidates if early <= tau <= late and _safe_at(LIGHT, t0, tau)]
    if isinstance(d, EcoApproach):
        assert not feasible
    else:
        assert _safe_at(LIGHT, t0, d.arrival_time_s)
        if not isinstance(d, PassConstant):
            assert early - 1e-6 <= d.arrival_time_s <= late + 1e-6


# -- advisories ----------------------------------------------------------------------

def _check_limits(adv, t_end, step=0.1):
    times = np.arange(adv.time_s, adv.time_s + t_end + 1e-9, step)
    samples = [adv.sample(t) for t in times]
    acc = np.array([a for _, _, a in samples])
    vel = np.array([v for _, v, _ in samples])
    pos = np.array([s for s, _, _ in samples])
    assert np.all(acc <= LIM.accel_max + 1e-9) and np.all(acc >= -LIM.decel_max - 1e-9)
    assert np.all(np.abs(np.diff(acc)) <= LIM.jerk_max * step + 1e-9)
    assert np.all(np.abs(np.diff(vel)) <= max(LIM.accel_max, LIM.decel_max) * step + 1e-9)
    assert np.all(vel >= -1e-9) and np.all(np.diff(pos) >= -1e-9)


def test_decelerate_advisory_ends_at_target():
    t = arrival_time(20.0, 14.0, 300.0, LIM)
    adv = advisory_profile(PassDecelerate(14.0, t), _ego(20.0, 0.0), 300.0, LIM)
    assert adv.final_speed_m_s == pytest.approx(14.0, abs=0.01)
    assert adv.speed_at(adv.duration_s + 5.0) == pytest.approx(14.0, abs=0.01)
    _check_limits(adv, adv.duration_s + 1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 59.9), st.floats(0, 20), st.floats(20, 400))
def test_advisory_respects_limits_and_reaches_line_on_time(t0, v, distance):
    spat = spat_at(LIGHT, t0)
    ego = _ego(v, t0)
    d = classify_pass(ego, spat, distance, LIM, 20.0)
    adv = advisory_profile(d, ego, distance, LIM, spat)
    if isinstance(d, EcoApproach) or not isinstance(adv, SpeedAdvisory):
        return
    _check_limits(adv, d.arrival_time_s)
    _, ss, _ = simulate_advisory(adv, t0 + d.arrival_time_s, dt=2e-3)
    assert ss[-1] == pytest.approx(distance, abs=1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 59.9), st.floats(0, 20), st.floats(20, 400))
def test_passing_advisory_never_crosses_in_red(t0, v, distance):
    spat = spat_at(LIGHT, t0)
    ego = _ego(v, t0)
    d = classify_pass(ego, spat, distance, LIM, 20.0)
    adv = advisory_profile(d, ego, distance, LIM, spat)
    if isinstance(d, EcoApproach):
        assert adv.final_speed_m_s == 0.0
        return
    cross = adv.time_at_distance(distance)
    assert LIGHT.phase_at(t0 + cross) is Phase.GREEN


def test_eco_approach_arrives_as_green_starts():
    spat = spat_at(LIGHT, 40.0)  # red, 20 s to green
    ego = _ego(15.0, 40.0)
    adv = eco_approach(ego, spat, 200.0, LIM)
    assert adv.final_speed_m_s == 0.0
    idle = 20.0 - adv.duration_s
    assert 0.0 <= idle <= 0.1
    _, ss, _ = simulate_advisory(adv, 40.0 + adv.duration_s, dt=2e-3)
    assert ss[-1] == pytest.approx(200.0, abs=1.0)
    _check_limits(adv, adv.duration_s)


@settings(max_examples=60, deadline=None)
@given(st.floats(33.0, 59.0), st.floats(1, 20), st.floats(10, 300))
def test_eco_approach_stops_at_line_and_respects_limits(t0, v, distance):
    assume(_smooth_stop_fits(v, distance))
    adv = eco_approach(_ego(v, t0), spat_at(LIGHT, t0), distance, LIM)
    assert adv.final_speed_m_s == 0.0
    assert adv.sample(adv.time_s + adv.duration_s)[0] == pytest.approx(distance, abs=1e-6)
    # never later than the green start, unless even holding speed is later
    t_stop = sum(seg.duration_s for seg in speed_change(v, 0.0, LIM))
    hold_then_stop = (distance - 0.5 * v * t_stop) / v + t_stop
    assert adv.duration_s <= max(60.0 - t0, hold_then_stop) + 0.1
    _check_limits(adv, adv.duration_s)


def test_eco_approach_from_rest_and_too_close():
    adv = eco_approach(_ego(0.0, 40.0), spat_at(LIGHT, 40.0), 30.0, LIM)
    assert adv.final_speed_m_s == 0.0
    assert adv.sample(adv.time_s + adv.duration_s)[0] == pytest.approx(30.0, abs=1e-6)
    # cannot shed 20 m/s smoothly in 20 m: straight-line braking onto the line
    hard = eco_approach(_ego(20.0, 40.0), spat_at(LIGHT, 40.0), 20.0, LIM)
    assert hard.sample(hard.time_s + hard.duration_s)[0] == pytest.approx(20.0, abs=1e-6)
    assert math.isclose(hard.final_speed_m_s, 0.0, abs_tol=1e-9)
