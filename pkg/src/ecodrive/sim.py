"""Fixed-step microscopic traffic simulation around one eco-driving ego car.

Background vehicles follow the Intelligent Driver Model, obey lights and
STOP signs with simple rules and change lanes by gap acceptance. The ego
car is driven by :class:`~ecodrive.hl.HLController` through the longitudinal
vehicle model. Everything is single-threaded and updated in ascending id
order, so identical scenarios give byte-identical traces.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .dp import SpeedProfile, plan_eco_cruise, template_problem
from .following import GapPolicy
from .hl import (AdjacentInfo, DrivingMode, HLConfig, HLController, LeadInfo, Observation)
from .route import Phase, RouteProfile, grade_at, route_hash, speed_limit_at
from .vehicle import (ControlInput, FuelModelParams, PowertrainLimits, VehicleParams,
                      VehicleState, input_for_accel, resistive_accel, step_dynamics)

EGO_ID = 0
EGO_LENGTH_M = 4.5
TRACE_FIELDS = ("t", "s", "v", "mode", "command", "gap", "active_light_phase")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DriverParams:
    time_headway_s: float = 1.4
    max_accel_m_s2: float = 1.5
    comfort_decel_m_s2: float = 2.0
    min_gap_m: float = 2.0
    accel_exponent: float = 4.0
    max_decel_m_s2: float = 4.0  # hard bound on IDM braking


@dataclass(frozen=True)
class TrafficVehicle:
    vehicle_id: int
    spawn_time_s: float
    spawn_station_m: float
    lane: int
    desired_speed_factor: float  # times the local speed limit
    driver: DriverParams = field(default_factory=DriverParams)
    length_m: float = 4.5
    erratic_amplitude_m_s2: float = 0.0


@dataclass(frozen=True)
class TrafficConfig:
    n_initial: int = 40
    n_later: int = 100
    later_window_s: tuple[float, float] = (5.0, 900.0)
    # share of later vehicles that join from a side street just past an intersection
    side_entry_share: float = 0.5
    side_entry_offset_m: float = 10.0
    initial_span_m: tuple[float, float] = (40.0, 6500.0)
    min_spacing_m: float = 25.0
    desired_factor_range: tuple[float, float] = (0.35, 1.0)
    erratic_share: float = 0.35
    erratic_amplitude_m_s2: tuple[float, float] = (1.0, 1.6)
    erratic_hold_s: tuple[float, float] = (0.5, 1.5)
    light_lookahead_m: float = 150.0
    stop_sign_dwell_s: float = 2.0
    lane_change_cooldown_s: float = 5.0
    lane_change_lookahead_m: float = 60.0
    slow_leader_ratio: float = 0.8
    speed_tolerance_m_s: float = 0.5
    driver: DriverParams = field(default_factory=DriverParams)


CASE_NAMES = {
    1: "Eco-Cruise + Eco-Stop/Departure, no V2I",
    2: "Case 1 + PaG (V2I)",
    3: "Case 2 + traffic, ACC",
    4: "Case 2 + traffic, CACC",
    5: "Case 2 + traffic, Eco-CACC",
}


@dataclass(frozen=True)
class Scenario:
    case_id: Union[int, str]
    route: RouteProfile
    name: str = ""
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    fuel: FuelModelParams = field(default_factory=FuelModelParams)
    limits: PowertrainLimits = field(default_factory=PowertrainLimits)
    seed: int = 42
    dt_s: float = 0.1
    duration_s: float = 3600.0
    traffic: bool = False
    v2v: bool = False
    hl: HLConfig = field(default_factory=HLConfig)
    traffic_config: TrafficConfig = field(default_factory=TrafficConfig)
    spawn_table: Optional[tuple[TrafficVehicle, ...]] = None
    eco_profile: Optional[SpeedProfile] = None
    distance_step_m: float = 10.0
    speed_step_m_s: float = 0.5
    dp_workers: int = 1

    def validate(self) -> None:
        if not self.dt_s > 0:
            raise ScenarioError("dt_s must be > 0")
        if not self.duration_s > 0:
            raise ScenarioError("duration_s must be > 0")
        if self.traffic and self.spawn_table is not None:
            for tv in self.spawn_table:
                if tv.lane not in (0, 1):
                    raise ScenarioError("only two lanes are modelled")
                if not 0 <= tv.spawn_station_m <= self.route.length_m:
                    raise ScenarioError(f"vehicle {tv.vehicle_id} spawns off the route")


def standard_case(case_id: int, route: RouteProfile, seed: int = 42, **overrides) -> Scenario:
    """One of the five reference configurations.

    Cases 1 and 2 run without traffic; 3, 4 and 5 share one spawn table and
    differ only in the ego's following capability.
    """
    if case_id not in CASE_NAMES:
        raise ScenarioError(f"unknown case id {case_id}; expected 1..5")
    follow = {1: "ACC", 2: "ACC", 3: "ACC", 4: "CACC", 5: "EcoCACC"}[case_id]
    hl = overrides.pop("hl", HLConfig())
    hl = replace(hl, v2i=case_id != 1, follow_capability=follow)
    return Scenario(case_id=case_id, route=route, name=CASE_NAMES[case_id], seed=seed,
                    traffic=case_id >= 3, v2v=case_id in (4, 5), hl=hl, **overrides)


# -- background traffic -------------------------------------------------------

def spawn_table(route: RouteProfile, seed: int,
                config: TrafficConfig = TrafficConfig()) -> tuple[TrafficVehicle, ...]:
    """Seeded spawn list: some cars already on the road ahead, some entering later."""
    rng = np.random.default_rng([seed, 7])
    out: list[TrafficVehicle] = []
    lo, hi = config.initial_span_m
    hi = min(hi, route.length_m - 10.0)
    placed: dict[int, list[float]] = {0: [], 1: []}
    vid = 1
    attempts = 0
    while len(out) < config.n_initial and attempts < 1000:
        attempts += 1
        lane = int(rng.integers(0, 2))
        station = float(np.round(rng.uniform(lo, hi), 1))
        if any(abs(station - x) < config.min_spacing_m for x in placed[lane]):
            continue
        if any(abs(station - e.location_m) < 30.0 for e in route.infrastructure):
            continue
        placed[lane].append(station)
        out.append(_draw_vehicle(rng, vid, 0.0, station, lane, config))
        vid += 1
    t_lo, t_hi = config.later_window_s
    times = np.sort(np.round(rng.uniform(t_lo, t_hi, config.n_later), 1))
    entries = [e.location_m + config.side_entry_offset_m for e in route.infrastructure
               if e.location_m + config.side_entry_offset_m < route.length_m - 10.0]
    for k, t in enumerate(times):
        station = 0.0
        if entries and rng.uniform() < config.side_entry_share:
            station = float(entries[int(rng.integers(0, len(entries)))])
        out.append(_draw_vehicle(rng, vid, float(t), station, k % 2, config))
        vid += 1
    return tuple(out)


def _draw_vehicle(rng, vid, t, station, lane, config: TrafficConfig) -> TrafficVehicle:
    factor = float(np.round(rng.uniform(*config.desired_factor_range), 3))
    erratic = rng.uniform() < config.erratic_share
    amp = float(np.round(rng.uniform(*config.erratic_amplitude_m_s2), 3)) if erratic else 0.0
    return TrafficVehicle(vid, t, station, lane, factor, config.driver, 4.5, amp)


def traffic_follow_accel(driver: DriverParams, speed: float, desired_speed: float,
                         leader_gap: Optional[float] = None,
                         leader_speed: Optional[float] = None) -> float:
    """Intelligent Driver Model acceleration, bounded by the driver's limits."""
    a_max, b = driver.max_accel_m_s2, driver.comfort_decel_m_s2
    free = 1.0 - (speed / desired_speed) ** driver.accel_exponent if desired_speed > 0 else -1.0
    inter = 0.0
    if leader_gap is not None:
        dv = speed - (leader_speed if leader_speed is not None else 0.0)
        s_star = driver.min_gap_m + max(0.0, speed * driver.time_headway_s
                                        + speed * dv / (2.0 * math.sqrt(a_max * b)))
        inter = (s_star / max(leader_gap, 1e-3)) ** 2
    a = a_max * (free - inter)
    return min(max(a, -driver.max_decel_m_s2), a_max)


@dataclass(frozen=True)
class LaneNeighbors:
    leader_gap_m: Optional[float]
    leader_speed_m_s: float
    target_front_gap_m: Optional[float]
    target_front_speed_m_s: float
    target_rear_gap_m: Optional[float]
    target_rear_speed_m_s: float


def traffic_lane_change(lane: int, speed: float, desired_speed: float, nb: LaneNeighbors,
                        policy: GapPolicy = GapPolicy(), slow_ratio: float = 0.8,
                        lookahead_m: float = 60.0) -> int:
    """Move to the other lane when stuck behind a slow car and the gaps are safe."""
    if nb.leader_gap_m is None or nb.leader_gap_m > lookahead_m:
        return lane
    if nb.leader_speed_m_s >= slow_ratio * desired_speed:
        return lane
    if nb.target_front_gap_m is not None and nb.target_front_gap_m <= lookahead_m \
            and nb.target_front_speed_m_s <= nb.leader_speed_m_s + 0.5:
        return lane  # no better off over there
    front_ok = nb.target_front_gap_m is None or nb.target_front_gap_m >= policy.desired_gap(speed)
    rear_ok = nb.target_rear_gap_m is None or nb.target_rear_gap_m >= 2.0 * nb.target_rear_speed_m_s
    return 1 - lane if front_ok and rear_ok else lane


@dataclass
class _Car:
    spec: TrafficVehicle
    position_m: float
    speed_m_s: float
    lane: int
    accel_m_s2: float = 0.0
    perturb: float = 0.0
    perturb_until: float = 0.0
    last_lane_change: float = -math.inf
    stop_served: set = field(default_factory=set)
    stop_dwell: float = 0.0
    rng: Optional[np.random.Generator] = None


def _desired_speed(route: RouteProfile, s: float, factor: float, decel: float) -> float:
    """Factor times the limit, eased down ahead of lower limits."""
    s = min(max(s, 0.0), route.length_m)
    v = factor * speed_limit_at(route, s)
    for station, limit in route.speed_limit_table:
        if station > s:
            v = min(v, math.sqrt((factor * limit) ** 2 + 2.0 * decel * (station - s)))
    return v


# -- traces and reports ---------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    t: float
    s: float
    v: float
    mode: str
    command: float
    gap: Optional[float]
    active_light_phase: str
    accel: float = 0.0
    fuel_g: float = 0.0
    lane: int = 0
    emergency: bool = False


@dataclass(frozen=True)
class SimTrace:
    dt_s: float
    records: tuple[TraceRecord, ...]

    def to_csv(self, fields: Sequence[str] = TRACE_FIELDS, every: int = 1) -> str:
        unknown = [f for f in fields if f not in TraceRecord.__dataclass_fields__]
        if unknown:
            raise ValueError(f"unknown trace field(s) {unknown}; valid: "
                             f"{', '.join(TraceRecord.__dataclass_fields__)}")
        if every < 1:
            raise ValueError("downsample factor must be >= 1")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(fields)
        for rec in self.records[::every]:
            w.writerow([_fmt(getattr(rec, f)) for f in fields])
        return buf.getvalue()


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def read_trace_csv(text: str) -> list[dict]:
    return list(csv.DictReader(io.StringIO(text)))


@dataclass(frozen=True)
class SimReport:
    case_id: Union[int, str]
    name: str
    seed: int
    route_hash: str
    total_fuel_g: float
    travel_time_s: float
    distance_m: float
    stop_count: int
    min_gap_m: Optional[float]
    red_violations: int
    collision: bool
    completed: bool
    stop_compliance: bool
    emergency_ticks: int = 0
    collision_detail: str = ""
    interacting_vehicles: int = 0  # distinct leaders seen inside the follow-engage distance

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SimReport":
        data = json.loads(text)
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


# -- event detection -------------------------------------------------------------

@dataclass(frozen=True)
class Events:
    collisions: list[float]
    red_violations: list[tuple[float, float]]  # (time, light station)
    stop_compliance: dict[float, float]  # sign station -> longest dwell [s]

    @property
    def compliant(self) -> bool:
        return all(d >= 5.0 - 1e-9 for d in self.stop_compliance.values())


def detect_events(trace: SimTrace, route: RouteProfile, dwell_required_s: float = 5.0) -> Events:
    """Collisions, red/yellow crossings and STOP-sign dwell from an ego trace."""
    recs = trace.records
    collisions = [r.t for r in recs if r.gap is not None and r.gap <= 0]
    collisions = collisions[:1]
    red = []
    for a, b in zip(recs, recs[1:]):
        for light in route.lights:
            if a.s <= light.location_m < b.s and light.phase_at(b.t) is not Phase.GREEN:
                red.append((b.t, light.location_m))
    dwell = {}
    for sign in route.stop_signs:
        best = run = 0
        for r in recs:
            if r.v < 0.1 and abs(r.s - sign.location_m) <= 1.0:
                run += 1
                best = max(best, run)
            else:
                run = 0
        dwell[sign.location_m] = best * trace.dt_s
    return Events(collisions, red, dwell)


def compare_cases(reports: Mapping[Union[int, str], SimReport], baseline=3,
                  required: Sequence = ()) -> list[dict]:
    """Fuel reduction of every case relative to ``baseline`` (positive = saves fuel)."""
    missing = sorted({c for c in (*required, baseline) if c not in reports}, key=str)
    if missing:
        raise ValueError(f"missing report(s) for case(s): {missing}")
    hashes = {r.route_hash for r in reports.values()}
    if len(hashes) > 1:
        raise ValueError(f"reports come from different routes: {sorted(hashes)}")
    f_base = reports[baseline].total_fuel_g
    rows = []
    for cid in sorted(reports, key=str):
        r = reports[cid]
        red = None if cid == baseline else round(100.0 * (f_base - r.total_fuel_g) / f_base, 2)
        rows.append({"case": cid, "scenario": r.name, "total_fuel_g": round(r.total_fuel_g, 2),
                     "reduction_pct": red})
    return rows


def reduction_pct(fuel_ref: float, fuel: float) -> float:
    return 100.0 * (fuel_ref - fuel) / fuel_ref


# -- the world loop ----------------------------------------------------------------

class _World:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.route = sc.route
        self.dt = sc.dt_s
        self.cfg = sc.traffic_config
        table = sc.spawn_table
        if sc.traffic and table is None:
            table = spawn_table(sc.route, sc.seed, sc.traffic_config)
        self.pending = sorted(table or (), key=lambda v: (v.spawn_time_s, v.vehicle_id))
        self.cars: dict[int, _Car] = {}

    def _rear(self, car: _Car) -> float:
        return car.position_m - car.spec.length_m

    def lane_members(self, ego_pos: float, ego_speed: float, ego_accel: float, ego_lane: int):
        """Per-lane lists of (front position, id, length, speed, accel) sorted by position."""
        lanes: dict[int, list] = {0: [], 1: []}
        lanes[ego_lane].append((ego_pos, EGO_ID, EGO_LENGTH_M, ego_speed, ego_accel))
        for vid in sorted(self.cars):
            c = self.cars[vid]
            lanes[c.lane].append((c.position_m, vid, c.spec.length_m, c.speed_m_s, c.accel_m_s2))
        for members in lanes.values():
            members.sort(key=lambda m: (m[0], m[1]))
        return lanes

    def spawn(self, t: float, lanes) -> None:
        while self.pending and self.pending[0].spawn_time_s <= t + 1e-9:
            tv = self.pending[0]
            ahead = [m for m in lanes[tv.lane] if m[0] - m[2] >= tv.spawn_station_m - 1e-9]
            v0 = _desired_speed(self.route, tv.spawn_station_m, tv.desired_speed_factor,
                                tv.driver.comfort_decel_m_s2)
            if ahead:
                lead = min(ahead, key=lambda m: m[0])
                gap = lead[0] - lead[2] - tv.spawn_station_m
                if gap < 15.0:
                    return  # entry blocked; retry next tick (keeps order)
                v0 = min(v0, lead[3] + math.sqrt(2.0 * tv.driver.comfort_decel_m_s2 * max(gap - 10.0, 0.0)))
            behind = [m for m in lanes[tv.lane] if m[0] - m[2] < tv.spawn_station_m - 1e-9]
            if behind and tv.spawn_time_s > 0:
                rear = max(behind, key=lambda m: m[0])
                if tv.spawn_station_m - tv.length_m - rear[0] < 2.0 * rear[3] + 5.0:
                    return
            self.pending.pop(0)
            rng = np.random.default_rng([self.sc.seed, tv.vehicle_id, 11])
            car = _Car(tv, tv.spawn_station_m, v0, tv.lane, rng=rng)
            self.cars[tv.vehicle_id] = car
            lanes[tv.lane].append((car.position_m, tv.vehicle_id, tv.length_m, v0, 0.0))
            lanes[tv.lane].sort(key=lambda m: (m[0], m[1]))

    @staticmethod
    def _leader(members, pos: float, vid: int):
        best = None
        for m in members:
            if m[1] != vid and (m[0] > pos or (m[0] == pos and m[1] > vid)):
                if best is None or m[0] < best[0]:
                    best = m
        return best

    @staticmethod
    def _follower(members, pos: float, vid: int):
        best = None
        for m in members:
            if m[1] != vid and m[0] <= pos:
                if best is None or m[0] > best[0]:
                    best = m
        return best

    def traffic_accels(self, t: float, lanes) -> dict[int, float]:
        out = {}
        cfg = self.cfg
        for vid in sorted(self.cars):
            car = self.cars[vid]
            d = car.spec.driver
            s, v = car.position_m, car.speed_m_s
            desired = _desired_speed(self.route, s, car.spec.desired_speed_factor, d.comfort_decel_m_s2)
            lead = self._leader(lanes[car.lane], s, vid)
            gap = lead_speed = None
            if lead is not None:
                gap, lead_speed = lead[0] - lead[2] - s, lead[3]
            obstacle = self._obstacle(car, t)
            if obstacle is not None and (gap is None or obstacle < gap):
                gap, lead_speed = obstacle, 0.0
            a = traffic_follow_accel(d, v, desired, gap, lead_speed)
            if car.spec.erratic_amplitude_m_s2 > 0:
                if t >= car.perturb_until:
                    lo, hi = cfg.erratic_hold_s
                    car.perturb = float(car.rng.choice([-1.0, 1.0])) * car.spec.erratic_amplitude_m_s2
                    car.perturb_until = t + float(car.rng.uniform(lo, hi))
                p = car.perturb
                close = gap is not None and gap < 1.5 * (d.min_gap_m + v * d.time_headway_s)
                if p < 0 or not close:
                    a = min(max(a + p, -d.max_decel_m_s2), d.max_accel_m_s2)
            out[vid] = a
        return out

    def _obstacle(self, car: _Car, t: float) -> Optional[float]:
        """Gap to a virtual stopped car at a red light or an unserved STOP sign."""
        s, v = car.position_m, car.speed_m_s
        best = None
        for light in self.route.lights:
            d = light.location_m - s
            if 0 < d <= self.cfg.light_lookahead_m:
                idx, remaining = light._locate(t)
                green = light.phase_cycle[idx][0] is Phase.GREEN
                clears = green and d / max(v, 3.0) < remaining
                can_stop = v * v / (2.0 * max(d - 1.0, 0.1)) <= car.spec.driver.max_decel_m_s2
                if not clears and can_stop:
                    best = d - 0.5 if best is None else min(best, d - 0.5)
                break
        for sign in self.route.stop_signs:
            d = sign.location_m - s
            if sign.location_m in car.stop_served or d < -1.0:
                continue
            if d <= self.cfg.light_lookahead_m:
                if v < 0.1 and d <= 4.0:
                    car.stop_dwell += self.dt
                    if car.stop_dwell >= self.cfg.stop_sign_dwell_s:
                        car.stop_served.add(sign.location_m)
                        car.stop_dwell = 0.0
                        continue
                best = d - 0.5 if best is None else min(best, d - 0.5)
            break
        return best

    def lane_changes(self, t: float, lanes, policy: GapPolicy) -> None:
        cfg = self.cfg
        for vid in sorted(self.cars):
            car = self.cars[vid]
            if t - car.last_lane_change < cfg.lane_change_cooldown_s:
                continue
            s, v = car.position_m, car.speed_m_s
            desired = _desired_speed(self.route, s, car.spec.desired_speed_factor,
                                     car.spec.driver.comfort_decel_m_s2)
            lead = self._leader(lanes[car.lane], s, vid)
            other = 1 - car.lane
            front = self._leader(lanes[other], s, vid)
            rear = self._follower(lanes[other], s, vid)
            nb = LaneNeighbors(
                None if lead is None else lead[0] - lead[2] - s, 0.0 if lead is None else lead[3],
                None if front is None else front[0] - front[2] - s, 0.0 if front is None else front[3],
                None if rear is None else s - car.spec.length_m - rear[0],
                0.0 if rear is None else rear[3])
            new = traffic_lane_change(car.lane, v, desired, nb, policy, cfg.slow_leader_ratio,
                                      cfg.lane_change_lookahead_m)
            if new != car.lane:
                entry = next(m for m in lanes[car.lane] if m[1] == vid)
                lanes[car.lane].remove(entry)
                lanes[new].append(entry)
                lanes[new].sort(key=lambda m: (m[0], m[1]))
                car.lane = new
                car.last_lane_change = t


def _ego_lead(lanes, ego_lane: int, ego_pos: float, sensing: float, connected: bool) -> Optional[LeadInfo]:
    lead = _World._leader(lanes[ego_lane], ego_pos, EGO_ID)
    if lead is None:
        return None
    rear = lead[0] - lead[2]
    if rear - ego_pos > sensing:
        return None
    return LeadInfo(lead[1], rear, lead[3], lead[4], connected)


def _ego_adjacent(lanes, ego_lane: int, ego_pos: float) -> AdjacentInfo:
    other = lanes[1 - ego_lane]
    front = _World._leader(other, ego_pos, EGO_ID)
    rear = _World._follower(other, ego_pos, EGO_ID)
    return AdjacentInfo(None if front is None else front[0] - front[2] - ego_pos,
                        None if rear is None else ego_pos - EGO_LENGTH_M - rear[0],
                        0.0 if rear is None else rear[3])


def eco_profile_for(sc: Scenario) -> SpeedProfile:
    template = template_problem(sc.route, sc.vehicle, sc.fuel, sc.limits,
                                sc.distance_step_m, sc.speed_step_m_s)
    return plan_eco_cruise(template, workers=sc.dp_workers)


def run_scenario(sc: Scenario, record_situations: bool = False):
    """Simulate one scenario; returns (SimTrace, SimReport[, controller])."""
    sc.validate()
    route, dt = sc.route, sc.dt_s
    template = template_problem(route, sc.vehicle, sc.fuel, sc.limits,
                                sc.distance_step_m, sc.speed_step_m_s)
    eco = sc.eco_profile if sc.eco_profile is not None else plan_eco_cruise(template, workers=sc.dp_workers)
    ctrl = HLController(route, eco, template, sc.limits, sc.hl, dt, sc.vehicle, sc.dp_workers)
    ctrl.record_situations = record_situations
    world = _World(sc)
    ego = VehicleState()
    ego_lane = 0
    records: list[TraceRecord] = []
    min_gap = None
    collision = False
    detail = ""
    emergencies = 0
    leaders: set[int] = set()
    stop_count = 0
    was_moving = False
    n_steps = int(round(sc.duration_s / dt))
    completed = False

    for k in range(n_steps + 1):
        t = round(k * dt, 9)
        ego = replace(ego, time_s=t)
        lanes = world.lane_members(ego.position_m, ego.speed_m_s, ego.accel_m_s2, ego_lane)
        if sc.traffic:
            world.spawn(t, lanes)
            world.lane_changes(t, lanes, sc.hl.policy)
        accels = world.traffic_accels(t, lanes) if sc.traffic else {}

        lead = _ego_lead(lanes, ego_lane, ego.position_m, sc.hl.sensing_range_m, sc.v2v)
        adjacent = _ego_adjacent(lanes, ego_lane, ego.position_m)
        dec = ctrl.tick(Observation(ego, lead, adjacent))
        gap = None if lead is None else lead.rear_position_m - ego.position_m
        if gap is not None:
            min_gap = gap if min_gap is None else min(min_gap, gap)
            if gap <= sc.hl.policy.follow_engage_distance_m:
                leaders.add(lead.vehicle_id)
        emergencies += dec.emergency
        light = ctrl._next_light(ego.position_m)
        phase = light.phase_at(t).value if light is not None else ""

        s_clamped = min(max(ego.position_m, 0.0), route.length_m)
        grade = grade_at(route, s_clamped)
        u = input_for_accel(sc.vehicle, sc.limits, ego.speed_m_s, grade, dec.accel_m_s2)
        if dec.accel_m_s2 < -sc.limits.decel_max:
            # emergency braking may use the full brake
            need = dec.accel_m_s2 + resistive_accel(sc.vehicle, ego.speed_m_s, grade)
            u = ControlInput(0.0, min(-need / sc.vehicle.brake_gain, sc.limits.brake_force_max_N))
        nxt = step_dynamics(ego, u, sc.vehicle, grade, dt, sc.fuel)
        records.append(TraceRecord(t, ego.position_m, ego.speed_m_s, dec.mode.value, dec.command,
                                   gap, phase, nxt.accel_m_s2, ego.fuel_used_g, ego_lane, dec.emergency))
        if gap is not None and gap <= 0:
            collision, detail = True, f"ego gap {gap:.3f} m at t={t:.1f}"
            break
        moving = ego.speed_m_s >= 0.1
        if was_moving and not moving:
            stop_count += 1
        was_moving = moving

        # integrate traffic (synchronous update from the same snapshot)
        for vid in sorted(world.cars):
            car = world.cars[vid]
            a = accels[vid]
            desired = _desired_speed(route, car.position_m, car.spec.desired_speed_factor,
                                     car.spec.driver.comfort_decel_m_s2)
            v_new = max(car.speed_m_s + a * dt, 0.0)
            # cruise governor: never more than the tolerance above the desired speed
            cap = desired + 0.9 * sc.traffic_config.speed_tolerance_m_s
            if v_new > cap:
                v_new = max(cap, car.speed_m_s - car.spec.driver.max_decel_m_s2 * dt)
            car.accel_m_s2 = (v_new - car.speed_m_s) / dt
            car.speed_m_s = v_new
            car.position_m += v_new * dt
        for vid in [v for v in sorted(world.cars) if world.cars[v].position_m >= route.length_m]:
            del world.cars[vid]
        if dec.change_lane:
            ego_lane = 1 - ego_lane
        ego = nxt

        bad = _traffic_collision(world, ego, ego_lane)
        if bad:
            collision, detail = True, bad + f" at t={t + dt:.1f}"
            records.append(TraceRecord(round(t + dt, 9), ego.position_m, ego.speed_m_s, dec.mode.value,
                                       dec.command, _ego_gap(world, ego, ego_lane), phase,
                                       ego.accel_m_s2, ego.fuel_used_g, ego_lane, dec.emergency))
            break
        if ego.position_m >= route.length_m - 1.0 and (ego.speed_m_s < 0.1 or ego.position_m >= route.length_m):
            completed = True
            records.append(TraceRecord(round(t + dt, 9), ego.position_m, ego.speed_m_s, dec.mode.value,
                                       dec.command, None, "", ego.accel_m_s2, ego.fuel_used_g,
                                       ego_lane, False))
            break

    trace = SimTrace(dt, tuple(records))
    events = detect_events(trace, route)
    report = SimReport(
        case_id=sc.case_id, name=sc.name, seed=sc.seed, route_hash=route_hash(route),
        total_fuel_g=ego.fuel_used_g, travel_time_s=records[-1].t,
        distance_m=min(ego.position_m, route.length_m), stop_count=stop_count,
        min_gap_m=min_gap, red_violations=len(events.red_violations),
        collision=collision or bool(events.collisions), completed=completed,
        stop_compliance=events.compliant, emergency_ticks=emergencies, collision_detail=detail,
        interacting_vehicles=len(leaders))
    if record_situations:
        return trace, report, ctrl
    return trace, report


def _ego_gap(world: _World, ego: VehicleState, lane: int) -> Optional[float]:
    lanes = world.lane_members(ego.position_m, ego.speed_m_s, ego.accel_m_s2, lane)
    lead = _World._leader(lanes[lane], ego.position_m, EGO_ID)
    return None if lead is None else lead[0] - lead[2] - ego.position_m


def _traffic_collision(world: _World, ego: VehicleState, ego_lane: int) -> str:
    lanes = world.lane_members(ego.position_m, ego.speed_m_s, ego.accel_m_s2, ego_lane)
    for lane, members in lanes.items():
        for back, front in zip(members, members[1:]):
            if front[0] - front[2] - back[0] <= 0:
                return f"vehicles {back[1]} and {front[1]} collided in lane {lane}"
    return ""


def run_cases(route: RouteProfile, cases: Sequence[int] = (1, 2, 3, 4, 5), seed: int = 42,
              eco_profile: Optional[SpeedProfile] = None, **overrides) -> dict:
    out = {}
    for cid in cases:
        sc = standard_case(cid, route, seed, eco_profile=eco_profile, **overrides)
        out[cid] = run_scenario(sc)
    return out
