import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecodrive.route import (Phase, RouteError, RouteProfile, StopSign, TrafficLight, bundled_route,
                            dump_route, grade_at, load_route, next_infrastructure, route_hash,
                            spat_at, speed_limit_at)

CYCLE = ((Phase.GREEN, 30.0), (Phase.YELLOW, 3.0), (Phase.RED, 27.0))


def _route(**kw):
    base = dict(length_m=1000.0, grade_table=((0, 0.0),), speed_limit_table=((0, 20.0),))
    base.update(kw)
    return RouteProfile(**base)


def test_grade_interpolation():
    flat = _route()
    assert grade_at(flat, 0) == grade_at(flat, 777.0) == 0.0
    r = _route(grade_table=((0, 0.0), (100, 0.04)))
    assert grade_at(r, 50) == pytest.approx(0.02)
    assert grade_at(r, 1000.0) == 0.04
    with pytest.raises(RouteError):
        grade_at(r, 1000.1)
    with pytest.raises(RouteError):
        grade_at(r, -1)


def test_speed_limit_steps():
    r = _route(speed_limit_table=((0, 20.0), (500, 15.0)))
    assert speed_limit_at(r, 0) == 20.0
    assert speed_limit_at(r, 499.9) == 20.0
    assert speed_limit_at(r, 500) == 15.0
    with pytest.raises(RouteError):
        speed_limit_at(r, 2000)


def test_spat_examples():
    light = TrafficLight(100.0, CYCLE)
    m0 = spat_at(light, 0.0)
    assert (m0.current_phase, m0.time_to_change_s, m0.next_phase) == (Phase.GREEN, 30.0, Phase.YELLOW)
    m31 = spat_at(light, 31.0)
    assert m31.current_phase is Phase.YELLOW and m31.time_to_change_s == pytest.approx(2.0)
    m60 = spat_at(light, 60.0)
    assert (m60.current_phase, m60.time_to_change_s) == (m0.current_phase, m0.time_to_change_s)


@given(st.floats(0, 1e4), st.floats(0, 59))
def test_spat_periodic(t, offset):
    light = TrafficLight(0.0, CYCLE, offset)
    a, b = spat_at(light, t), spat_at(light, t + light.cycle_length_s)
    assert a.current_phase is b.current_phase
    assert a.time_to_change_s == pytest.approx(b.time_to_change_s, abs=1e-6)
    phase_len = dict((p, d) for p, d in CYCLE)[a.current_phase]
    assert 0 < a.time_to_change_s <= phase_len + 1e-9


def test_time_to_change_sums_to_cycle():
    light = TrafficLight(0.0, CYCLE, 7.0)
    t, total = spat_at(light, 0.0).time_to_change_s, 0.0  # start on a phase boundary
    while total < light.cycle_length_s - 1e-9:
        m = spat_at(light, t)
        total += m.time_to_change_s
        t += m.time_to_change_s
    assert total == pytest.approx(light.cycle_length_s)


@settings(max_examples=80)
@given(st.floats(0, 500), st.floats(0, 59.9), st.floats(1, 150))
def test_green_windows_match_enumeration(t0, offset, horizon):
    # oracle: sample the phase on a fine grid and compare membership
    light = TrafficLight(0.0, CYCLE, offset)
    wins = light.green_windows(t0, horizon)
    step = 0.05
    k = 0
    while k * step < horizon:
        tau = k * step + 0.0125  # stay off exact boundaries
        inside = any(a <= tau < b for a, b in wins)
        assert inside == (light.phase_at(t0 + tau) is Phase.GREEN)
        k += 1


def test_next_infrastructure():
    r = _route(lights=(TrafficLight(300.0, CYCLE),), stop_signs=(StopSign(600.0),))
    assert next_infrastructure(r, 0).location_m == 300.0
    assert next_infrastructure(r, 300.0).kind == "stop"
    assert next_infrastructure(r, 700.0) is None


def test_bundled_route_layout():
    r = bundled_route()
    assert r.length_m == 6873.0
    assert len(r.lights) == 5 and len(r.stop_signs) == 1
    assert next_infrastructure(r, 0).location_m == min(e.location_m for e in r.infrastructure)
    assert all(abs(g) <= 0.02 + 1e-12 for _, g in r.grade_table)
    assert {v for _, v in r.speed_limit_table} == {15.0, 20.0}


@pytest.mark.parametrize("mutate, msg", [
    (lambda d: d.update(grade_table=[[0, 0], [50, 0.01], [40, 0.0]]), "strictly increasing"),
    (lambda d: d.update(speed_limit_table=[[10, 15]]), "first station"),
    (lambda d: d["speed_limit_table"].append([900, 0]), "speed limits"),
    (lambda d: d.update(stop_signs=[{"location_m": 2000}]), "outside"),
    (lambda d: d.update(stop_signs=[{"location_m": 300}]), "share a station"),
    (lambda d: d["lights"][0].update(cycle=[["G", 30], ["Y", 3]]), "Green and a Red"),
])
def test_validation_errors(mutate, msg):
    doc = dump_route(_route(lights=(TrafficLight(300.0, CYCLE),)))
    mutate(doc)
    with pytest.raises(RouteError, match=msg):
        load_route(doc)


def test_parse_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(RouteError, match="parse"):
        load_route(bad)
    with pytest.raises(RouteError):
        load_route({"length_m": 10})


def test_empty_lights_valid():
    assert load_route(dump_route(_route())).lights == ()


def test_roundtrip_and_hash(tmp_path):
    r = bundled_route()
    path = tmp_path / "r.json"
    path.write_text(json.dumps(dump_route(r)))
    again = load_route(path)
    assert again == r
    assert route_hash(again) == route_hash(r)
    assert route_hash(_route()) != route_hash(r)
